"""Command-line entry point: ``irsotfs {run,check,bench,demo}``.

Exit codes:

* 0 success
* 1 a check (or demo self-test) failed
* 2 configuration error (missing file, unknown key, invalid value)
* 3 numeric failure while running a scenario

Every summary line on stdout is a space-separated list of ``key=value``
pairs.  The default worker count comes from ``IRSOTFS_WORKERS``.
"""

import argparse
import logging
from pathlib import Path
import sys
import time

import numpy as np

from . import ddcore
from .checks import run_checks
from .detect import AdmmConfig, AdmmSolver, QamAlphabet, mmse_estimate, op_count, qam_map
from .simkit.config import ConfigError, load_config
from .simkit.results import write_outputs
from .simkit.scenarios import run_experiment

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

FAULTS = {"isfft_scale": lambda: ddcore.set_fault_scale(1.01)}

log = logging.getLogger("irsotfs")


def _kv(**items):
    return " ".join(f"{k}={v}" for k, v in items.items())


def cmd_run(args):
    if args.config is None:
        print("error: config: run needs --config PATH", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.set or (), args.seed)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers is not None:
        cfg.workers = args.workers
    log.info("scenario=%s trials=%d workers=%d", cfg.scenario, cfg.trials, cfg.workers)
    t0 = time.perf_counter()
    try:
        with np.errstate(invalid="raise", divide="raise", over="raise"):
            table = run_experiment(cfg)
    except (FloatingPointError, np.linalg.LinAlgError, ValueError, AssertionError) as e:
        print(f"error: numeric failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    if not np.all(np.isfinite(table.means)):
        print("error: numeric failure: non-finite results", file=sys.stderr)
        return EXIT_NUMERIC
    out_dir = Path(args.out if args.out is not None else cfg.output)
    csv_path, meta_path = write_outputs(table, out_dir, cfg.name, cfg.raw, cfg.seed)
    for line in table.summary_lines():
        print(line)
    print(_kv(csv=csv_path, meta=meta_path, elapsed_s=f"{time.perf_counter() - t0:.2f}"))
    return EXIT_OK


def cmd_check(args):
    if args.inject_fault:
        FAULTS[args.inject_fault]()
    try:
        results = run_checks(args.filter)
    finally:
        ddcore.set_fault_scale(1.0)
    if not results:
        print(f"error: no check matches filter {args.filter!r}", file=sys.stderr)
        return EXIT_CHECK
    failed = 0
    for name, ok, detail in results:
        failed += not ok
        print(_kv(check=name, status="pass" if ok else "FAIL") + " " + detail)
    print(_kv(checks=len(results), failed=failed))
    return EXIT_OK if failed == 0 else EXIT_CHECK


def _best_time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_detectors(sizes, n_t=1, n_r=1, iters=20, frames=8, repeats=3, seed=0):
    """Time MMSE setup and ADMM iterations over a list of grids.

    Each entry of ``sizes`` is either s (meaning M = N = s) or a pair (M, N).

    Returns a list of dicts with measured times and the matching op_count
    predictions.
    """
    rng = np.random.default_rng(seed)
    rows = []
    al = QamAlphabet(1)
    for s in sizes:
        M, N = (s, s) if np.isscalar(s) else s
        d, r = n_t * M * N, n_r * M * N
        H = (rng.standard_normal((r, d)) + 1j * rng.standard_normal((r, d))) / np.sqrt(2)
        y = H @ qam_map(rng.integers(0, 2, (2 * d,)), al)
        Y = np.repeat(y[:, None], frames, axis=1)
        t_mmse = _best_time(lambda: mmse_estimate(H, y, 0.1), repeats)
        solver = AdmmSolver(H, AdmmConfig(max_iter=iters, tol=0.0), al)
        t_admm = _best_time(lambda: solver.run(Y, max_iter=iters, tol=0.0), repeats) / iters
        rows.append(
            {
                "M": M,
                "N": N,
                "dim": d,
                "mmse_s": t_mmse,
                "admm_iter_s": t_admm,
                "ops_mmse": op_count("mmse", n_t, n_r, N, M),
                "ops_admm": op_count("admm", n_t, n_r, N, M, iters),
            }
        )
    return rows


def parse_size(text):
    """'8' -> 8 (square grid), '32x16' -> (32, 16) as (M, N)."""
    if "x" in text:
        M, N = text.lower().split("x")
        return int(M), int(N)
    return int(text)


def quadratic_fit(dims, times):
    """Least-squares fit t = c0 + c2 d^2; returns (c0, c2, R^2)."""
    d = np.asarray(dims, float)
    t = np.asarray(times, float)
    A = np.stack([np.ones_like(d), d ** 2], axis=1)
    coef, *_ = np.linalg.lstsq(A, t, rcond=None)
    resid = t - A @ coef
    ss_tot = np.sum((t - t.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), float(r2)


def cmd_bench(args):
    try:
        sizes = [parse_size(s) for s in args.sizes.split(",")]
    except ValueError:
        print(f"error: sizes: cannot parse {args.sizes!r}", file=sys.stderr)
        return EXIT_CONFIG
    rows = bench_detectors(sizes, args.n_t, args.n_r, args.iters, args.frames, args.repeats, args.seed or 0)
    for row in rows:
        print(_kv(**{k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()}))
    c0, c2, r2 = quadratic_fit([r["dim"] for r in rows], [r["admm_iter_s"] for r in rows])
    print(_kv(fit="admm_iter_quadratic", c0=f"{c0:.3e}", c2=f"{c2:.3e}", r2=f"{r2:.4f}"))
    if len(rows) > 1:
        ratios = [b["mmse_s"] / a["mmse_s"] for a, b in zip(rows, rows[1:])]
        print(_kv(fit="mmse_step_ratio", ratios=";".join(f"{x:.2f}" for x in ratios)))
    return EXIT_OK


def cmd_demo(args):
    """Single-shot runs of one algorithm on a seeded instance, for debugging."""
    from . import checks

    rng = np.random.default_rng(args.seed or 0)
    if args.algo == "otfs":
        ok, detail = checks.check_roundtrip()
    elif args.algo == "admm":
        ok, detail = checks.check_admm_ml()
    elif args.algo == "als":
        ok, detail = checks.check_als_exact()
    elif args.algo == "ao":
        from .beamform import ao_beamform

        H = (rng.standard_normal((4, 4, 8)) + 1j * rng.standard_normal((4, 4, 8))) / np.sqrt(2)
        _, trace = ao_beamform(H, 1.0, 16.0, n_t=2)
        ok = bool(np.all(np.diff(trace) >= -1e-9))
        detail = _kv(iterations=len(trace) - 1, rate_start=f"{trace[0]:.4f}", rate_end=f"{trace[-1]:.4f}")
    else:  # argparse restricts the choices
        raise AssertionError(args.algo)
    print(_kv(demo=args.algo, status="pass" if ok else "FAIL") + " " + detail)
    return EXIT_OK if ok else EXIT_CHECK


def build_parser():
    p = argparse.ArgumentParser(prog="irsotfs", description="IRS-assisted OTFS link-level lab")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario from a TOML config")
    r.add_argument("--config", help="path to the experiment TOML file")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    r.add_argument("--seed", type=int, help="master seed (overrides the config)")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--workers", type=int, help="worker processes (default: config or IRSOTFS_WORKERS)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="run the fast invariant suite")
    c.add_argument("--filter", help="substring of the check names, or a group alias such as admm")
    c.add_argument("--inject-fault", choices=sorted(FAULTS), help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_check)

    b = sub.add_parser("bench", help="time ADMM and MMSE against the op-count polynomials")
    b.add_argument("--sizes", default="4,6,8,11,16", help="comma-separated grids: s for M = N = s, or MxN")
    b.add_argument("--n-t", type=int, default=1)
    b.add_argument("--n-r", type=int, default=1)
    b.add_argument("--iters", type=int, default=20)
    b.add_argument("--frames", type=int, default=8)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int)
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("demo", help="run one algorithm once on a seeded instance")
    d.add_argument("algo", choices=["otfs", "ao", "admm", "als"])
    d.add_argument("--seed", type=int)
    d.set_defaults(func=cmd_demo)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse uses 2 for usage errors, which matches the config-error code
        return e.code if isinstance(e.code, int) else EXIT_CONFIG
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
