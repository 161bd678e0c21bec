"""Experiment configuration: TOML loading, overrides and validation.

Every validation failure raises :class:`ConfigError` naming the offending
key, so the CLI can report field-level messages.
"""

import copy
from dataclasses import dataclass, field
import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..channel import ChannelProfile
from ..ddcore import GridDims
from ..detect import AdmmConfig
from .links import Geometry

SCENARIOS = ("sum_rate", "ber", "convergence", "irs_sweep", "distance_sweep", "mse")
SUM_RATE_CASES = (1, 2, 3, 4, 5, 6, 7, "ofdm")
BER_CASES = (1, 2, 3, 4, 5, 6, "ofdm")

DEFAULT_CASES = {
    "sum_rate": [1, 2, 3, 4, 5, 7],
    "ber": [1, 2, 3, 4, 5],
    "convergence": [1, 2, 3, 4],
    "irs_sweep": [1, 2],
    "distance_sweep": [1, 2, 5],
    "mse": [],
}


class ConfigError(ValueError):
    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


DEFAULTS = {
    "name": "experiment",
    "scenario": "sum_rate",
    "seed": 0,
    "trials": 100,
    "snr_db": [0.0],
    "cases": None,
    "workers": None,
    "output": "results",
    "grid": {"M": 16, "N": 16, "M_CP": 3},
    "antennas": {"n_t": 2, "n_r": 1},
    "irs": {"K": 16, "include_direct": True},
    "channel": {
        "model": "BPM",
        "max_delay_tap": 3,
        "max_doppler_tap": 3,
        "fractional_doppler": None,
        "ue_speed_kmh": 500.0,
        "delta_f": 15e3,
        "f_c": 4e9,
        "shared_paths": True,
    },
    "geometry": {
        "gain_mode": "pathloss",
        "bs": [0.0, -30.0, 2.0],
        "irs": [30.0, 10.0, 4.0],
        "ue": [30.0, 0.0, 1.0],
        "reference_ue": None,
        "d0": 1.0,
        "eta_direct": 3.5,
        "eta_bs_irs": 2.2,
        "eta_irs_ue": 2.2,
    },
    "beamforming": {"enabled": None, "max_iter": 100, "tol": 1e-4, "init": "identity", "power": None},
    "detector": {"rho": 2.0, "alpha": 0.5, "max_iter": 40, "tol": 1e-6, "Q": 1},
    "ber": {"frames_per_channel": 20, "max_frames": 10000, "min_frames": 0, "target_errors": 200, "batch_channels": 8},
    "convergence": {"iterations": 100},
    "sweep": {"K_values": [4, 8, 16], "distances": [float(x) for x in range(0, 61, 5)]},
    "als": {"L": None, "T": None, "max_sweeps": 50, "tol": 1e-9},
    "mse": {"configs": []},
}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(key, "unknown key")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(key, "expected a table")
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = v
    return out


def parse_override(text):
    """Parse ``key.path=value`` with a TOML value (bare words fall back to strings)."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, val = text.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {val.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = val.strip()
    return key, value


def apply_overrides(raw, overrides):
    raw = copy.deepcopy(raw)
    for text in overrides:
        key, value = parse_override(text)
        parts = key.split(".")
        node, ref = raw, DEFAULTS
        for i, p in enumerate(parts[:-1]):
            if p not in ref or not isinstance(ref[p], dict):
                raise ConfigError(".".join(parts[: i + 1]), "unknown table")
            node = node.setdefault(p, {})
            ref = ref[p]
        if parts[-1] not in ref:
            raise ConfigError(key, "unknown key")
        node[parts[-1]] = value
    return raw


@dataclass
class BeamformingConfig:
    enabled: bool = True
    max_iter: int = 100
    tol: float = 1e-4
    init: str = "identity"
    power: float = None


@dataclass
class BerConfig:
    frames_per_channel: int = 20
    max_frames: int = 10000
    min_frames: int = 0
    target_errors: int = 200
    batch_channels: int = 8


@dataclass
class AlsConfig:
    L: int = None
    T: int = None
    max_sweeps: int = 50
    tol: float = 1e-9


@dataclass
class MseCase:
    label: str
    model: str = "BPM"
    n_t: int = 1
    n_r: int = 1
    N: int = None
    fractional_doppler: bool = None


@dataclass
class ExperimentConfig:
    name: str
    scenario: str
    seed: int
    trials: int
    snr_db: list
    cases: list
    grid: GridDims
    n_t: int
    n_r: int
    K: int
    include_direct: bool
    channel: ChannelProfile
    shared_paths: bool
    geometry: Geometry
    gain_mode: str
    beamforming: BeamformingConfig
    detector: AdmmConfig
    Q: int
    ber: BerConfig
    iterations: int
    K_values: list
    distances: list
    als: AlsConfig
    mse_configs: list
    output: str
    workers: int
    raw: dict = field(repr=False, default_factory=dict)


def _typed(raw, key, kind, positive=False, nonneg=False):
    node = raw
    for p in key.split("."):
        node = node[p]
    v = node
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(key, f"expected an integer, got {v!r}")
    elif kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(key, f"expected a number, got {v!r}")
        v = float(v)
    elif kind is bool:
        if not isinstance(v, bool):
            raise ConfigError(key, f"expected true or false, got {v!r}")
    elif kind is str:
        if not isinstance(v, str):
            raise ConfigError(key, f"expected a string, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(key, f"must be positive, got {v!r}")
    if nonneg and v < 0:
        raise ConfigError(key, f"must be non-negative, got {v!r}")
    return v


def _float_list(raw, key, nonempty=True):
    v = raw
    for p in key.split("."):
        v = v[p]
    if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise ConfigError(key, f"expected a list of numbers, got {v!r}")
    if nonempty and not v:
        raise ConfigError(key, "must not be empty")
    return [float(x) for x in v]


def _vec3(raw, key):
    v = _float_list(raw, key)
    if len(v) != 3:
        raise ConfigError(key, "expected [x, y, z]")
    return tuple(v)


def build_config(raw):
    """Validate a raw mapping (already merged with overrides) into an ExperimentConfig."""
    raw = _merge(DEFAULTS, raw)
    scenario = _typed(raw, "scenario", str)
    if scenario not in SCENARIOS:
        raise ConfigError("scenario", f"must be one of {', '.join(SCENARIOS)}, got {scenario!r}")
    name = _typed(raw, "name", str)
    seed = _typed(raw, "seed", int, nonneg=True)
    trials = _typed(raw, "trials", int, positive=True)
    snr_db = _float_list(raw, "snr_db")

    try:
        grid = GridDims(_typed(raw, "grid.M", int), _typed(raw, "grid.N", int), _typed(raw, "grid.M_CP", int))
    except (TypeError, ValueError) as e:
        raise ConfigError("grid", str(e)) from None
    n_t = _typed(raw, "antennas.n_t", int, positive=True)
    n_r = _typed(raw, "antennas.n_r", int, positive=True)
    K = _typed(raw, "irs.K", int, positive=True)
    include_direct = _typed(raw, "irs.include_direct", bool)

    ch = raw["channel"]
    frac = ch["fractional_doppler"]
    if frac is not None and not isinstance(frac, bool):
        raise ConfigError("channel.fractional_doppler", "expected true or false")
    try:
        profile = ChannelProfile(
            model=_typed(raw, "channel.model", str),
            max_delay_tap=_typed(raw, "channel.max_delay_tap", int, nonneg=True),
            max_doppler_tap=_typed(raw, "channel.max_doppler_tap", int, nonneg=True),
            fractional_doppler=frac,
            delta_f=_typed(raw, "channel.delta_f", float, positive=True),
            f_c=_typed(raw, "channel.f_c", float, positive=True),
            ue_speed=_typed(raw, "channel.ue_speed_kmh", float, nonneg=True) / 3.6,
        )
    except ValueError as e:
        raise ConfigError("channel", str(e)) from None
    if profile.model == "BPM" and profile.max_delay_tap >= grid.M:
        raise ConfigError("channel.max_delay_tap", f"must be below grid.M={grid.M}")
    if profile.model == "EVA":
        try:
            profile.eva_delay_taps(grid.M)
        except ValueError as e:
            raise ConfigError("grid.M", str(e)) from None
    shared = _typed(raw, "channel.shared_paths", bool)

    g = raw["geometry"]
    gain_mode = _typed(raw, "geometry.gain_mode", str)
    if gain_mode not in ("pathloss", "unit"):
        raise ConfigError("geometry.gain_mode", "must be 'pathloss' or 'unit'")
    geometry = Geometry(
        bs=_vec3(raw, "geometry.bs"),
        irs=_vec3(raw, "geometry.irs"),
        ue=_vec3(raw, "geometry.ue"),
        reference_ue=None if g["reference_ue"] is None else _vec3(raw, "geometry.reference_ue"),
        d0=_typed(raw, "geometry.d0", float, positive=True),
        eta_direct=_typed(raw, "geometry.eta_direct", float, nonneg=True),
        eta_bs_irs=_typed(raw, "geometry.eta_bs_irs", float, nonneg=True),
        eta_irs_ue=_typed(raw, "geometry.eta_irs_ue", float, nonneg=True),
    )

    bfr = raw["beamforming"]
    enabled = bfr["enabled"]
    if enabled is None:
        # rate scenarios optimize W; detection scenarios default to identity precoding
        enabled = scenario in ("sum_rate", "irs_sweep", "distance_sweep")
    elif not isinstance(enabled, bool):
        raise ConfigError("beamforming.enabled", "expected true or false")
    init = _typed(raw, "beamforming.init", str)
    if init not in ("identity", "random"):
        raise ConfigError("beamforming.init", "must be 'identity' or 'random'")
    power = bfr["power"]
    if power is not None:
        power = _typed(raw, "beamforming.power", float, positive=True)
    beam = BeamformingConfig(
        enabled,
        _typed(raw, "beamforming.max_iter", int, positive=True),
        _typed(raw, "beamforming.tol", float, nonneg=True),
        init,
        power,
    )

    try:
        detector = AdmmConfig(
            _typed(raw, "detector.rho", float),
            _typed(raw, "detector.alpha", float),
            _typed(raw, "detector.max_iter", int),
            _typed(raw, "detector.tol", float, nonneg=True),
        )
    except ValueError as e:
        raise ConfigError("detector", str(e)) from None
    Q = _typed(raw, "detector.Q", int, positive=True)

    ber = BerConfig(
        _typed(raw, "ber.frames_per_channel", int, positive=True),
        _typed(raw, "ber.max_frames", int, positive=True),
        _typed(raw, "ber.min_frames", int, nonneg=True),
        _typed(raw, "ber.target_errors", int, positive=True),
        _typed(raw, "ber.batch_channels", int, positive=True),
    )
    iterations = _typed(raw, "convergence.iterations", int, positive=True)
    K_values = raw["sweep"]["K_values"]
    if not isinstance(K_values, list) or not K_values or any(
        isinstance(k, bool) or not isinstance(k, int) or k < 1 for k in K_values
    ):
        raise ConfigError("sweep.K_values", "expected a non-empty list of positive integers")
    distances = _float_list(raw, "sweep.distances")

    a = raw["als"]
    als = AlsConfig(
        None if a["L"] is None else _typed(raw, "als.L", int, positive=True),
        None if a["T"] is None else _typed(raw, "als.T", int, positive=True),
        _typed(raw, "als.max_sweeps", int, positive=True),
        _typed(raw, "als.tol", float, nonneg=True),
    )
    mse_configs = []
    for i, c in enumerate(raw["mse"]["configs"]):
        key = f"mse.configs[{i}]"
        if not isinstance(c, dict) or "label" not in c:
            raise ConfigError(key, "each entry needs at least a label")
        unknown = set(c) - {"label", "model", "n_t", "n_r", "N", "fractional_doppler"}
        if unknown:
            raise ConfigError(key, f"unknown keys {sorted(unknown)}")
        mc = MseCase(**c)
        if str(mc.model).upper() not in ("BPM", "EVA"):
            raise ConfigError(key + ".model", "must be BPM or EVA")
        mse_configs.append(mc)
    if scenario == "mse" and not mse_configs:
        mse_configs = [MseCase("default", profile.model, n_t, n_r)]

    cases = raw["cases"]
    if cases is None:
        cases = list(DEFAULT_CASES[scenario])
    if not isinstance(cases, list):
        raise ConfigError("cases", "expected a list")
    allowed = SUM_RATE_CASES if scenario in ("sum_rate", "irs_sweep", "distance_sweep") else BER_CASES
    for c in cases:
        if c not in allowed or isinstance(c, bool):
            raise ConfigError("cases", f"case {c!r} is not valid for scenario {scenario}")
    if scenario != "mse" and not cases:
        raise ConfigError("cases", "must not be empty")
    if len(set(map(str, cases))) != len(cases):
        raise ConfigError("cases", "duplicate case")

    workers = raw["workers"]
    if workers is None:
        workers = int(os.environ.get("IRSOTFS_WORKERS", "1") or 1)
    elif isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers", "expected a positive integer")

    return ExperimentConfig(
        name=name,
        scenario=scenario,
        seed=seed,
        trials=trials,
        snr_db=snr_db,
        cases=cases,
        grid=grid,
        n_t=n_t,
        n_r=n_r,
        K=K,
        include_direct=include_direct,
        channel=profile,
        shared_paths=shared,
        geometry=geometry,
        gain_mode=gain_mode,
        beamforming=beam,
        detector=detector,
        Q=Q,
        ber=ber,
        iterations=iterations,
        K_values=K_values,
        distances=distances,
        als=als,
        mse_configs=mse_configs,
        output=_typed(raw, "output", str),
        workers=workers,
        raw=raw,
    )


def load_raw(path):
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("config", f"invalid TOML in {path}: {e}") from None


def load_config(path=None, overrides=(), seed=None):
    raw = load_raw(path) if path is not None else {}
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw["seed"] = seed
    return build_config(raw)
