"""Result tables and their CSV / JSON sidecar serialization."""

from dataclasses import dataclass, field
import csv
import hashlib
import io
import json
import math
import os
import subprocess

import numpy as np


@dataclass
class ResultTable:
    """Rows of (x, per-case mean, per-case standard error, trial count).

    ``means`` and ``ses`` are (rows, cases) arrays; ``counts`` is (rows,
    cases) holding the number of samples behind each mean.
    """

    x_name: str
    x: list
    cases: list
    means: np.ndarray
    ses: np.ndarray
    counts: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.ses = np.asarray(self.ses, dtype=float)
        self.counts = np.asarray(self.counts, dtype=int)
        shape = (len(self.x), len(self.cases))
        for name in ("means", "ses", "counts"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @staticmethod
    def label(case):
        return case if isinstance(case, str) and not case.isdigit() else f"case{case}"

    def column(self, case):
        return self.means[:, self.cases.index(case)]

    def se(self, case):
        return self.ses[:, self.cases.index(case)]

    @property
    def columns(self):
        cols = [self.x_name]
        for c in self.cases:
            lab = self.label(c)
            cols += [lab, f"{lab}_se", f"{lab}_n"]
        return cols

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for i, xv in enumerate(self.x):
            row = [_fmt(xv)]
            for j in range(len(self.cases)):
                row += [_fmt(self.means[i, j]), _fmt(self.ses[i, j]), str(int(self.counts[i, j]))]
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        head, body = rows[0], rows[1:]
        cases = [int(h[4:]) if h.startswith("case") and h[4:].isdigit() else h for h in head[1::3]]
        parsed = [[float(v) for v in r] for r in body]
        arr = np.array(parsed).reshape(len(body), -1)
        return cls(
            head[0],
            list(arr[:, 0]),
            cases,
            arr[:, 1::3],
            arr[:, 2::3],
            arr[:, 3::3].astype(int),
        )

    def summary_lines(self):
        """One key=value line per curve."""
        out = []
        for j, c in enumerate(self.cases):
            vals = ";".join(_fmt(v) for v in self.means[:, j])
            ses = ";".join(_fmt(v) for v in self.ses[:, j])
            xs = ";".join(_fmt(v) for v in self.x)
            out.append(f"curve={self.label(c)} {self.x_name}={xs} mean={vals} se={ses}")
        return out


def _fmt(v):
    v = float(v)
    if math.isnan(v):
        return "nan"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def summarize(samples, axis=-1):
    """Mean and standard error of the mean along ``axis`` (NaNs ignored)."""
    s = np.asarray(samples, dtype=float)
    n = np.sum(~np.isnan(s), axis=axis)
    mean = np.nanmean(s, axis=axis)
    var = np.nanvar(s, axis=axis, ddof=1) if s.shape[axis] > 1 else np.zeros_like(mean)
    se = np.sqrt(np.where(n > 1, var, 0.0) / np.maximum(n, 1))
    return mean, se, n


def git_describe():
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=10,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def config_hash(raw):
    text = json.dumps(raw, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def write_outputs(table, out_dir, name, raw_config, seed):
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{name}.csv")
    meta_path = os.path.join(out_dir, f"{name}.meta.json")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        f.write(table.to_csv())
    meta = {
        "config": raw_config,
        "config_hash": config_hash(raw_config),
        "seed": seed,
        "code_version": git_describe(),
        **table.metadata,
    }
    with open(meta_path, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return csv_path, meta_path
