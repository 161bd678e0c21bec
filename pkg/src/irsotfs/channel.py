"""Delay-Doppler path synthesis and per-symbol time-domain channel matrices.

A path with gain h, delay tap l and Doppler ``nu = k + kappa`` (in units of
1/(N T)) acts on OFDM symbol n as ``h * Delta_n * Pi^l``, where ``Pi`` is the
forward cyclic shift and ``Delta_n`` is the phase ramp over the absolute
sample index ``n (M + M_CP) + M_CP + m`` shifted back by the path delay.
"""

from dataclasses import dataclass, field

import numpy as np

from .ddcore import GridDims, TimeFrame

EVA_DELAYS_NS = np.array([0, 30, 150, 310, 370, 710, 1090, 1730, 2510], dtype=float)
EVA_PDP_DB = np.array([0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9])
SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class PathTap:
    gain: complex
    delay_tap: int
    doppler_tap: int = 0
    frac_doppler: float = 0.0

    def __post_init__(self):
        if self.delay_tap < 0:
            raise ValueError(f"delay_tap must be non-negative, got {self.delay_tap}")
        if abs(self.frac_doppler) > 0.5:
            raise ValueError(f"frac_doppler must lie in [-0.5, 0.5], got {self.frac_doppler}")

    @property
    def doppler(self):
        return self.doppler_tap + self.frac_doppler


@dataclass
class TapList:
    paths: list
    dims: GridDims

    def __post_init__(self):
        self.paths = list(self.paths)
        if not self.paths:
            raise ValueError("a TapList needs at least one path")
        for p in self.paths:
            if p.delay_tap >= self.dims.M:
                raise ValueError(f"delay tap {p.delay_tap} does not fit a grid with M={self.dims.M}")

    @property
    def gains(self):
        return np.array([p.gain for p in self.paths], dtype=complex)

    @property
    def delays(self):
        return np.array([p.delay_tap for p in self.paths], dtype=int)

    @property
    def dopplers(self):
        return np.array([p.doppler for p in self.paths], dtype=float)

    def scaled(self, c):
        return TapList([PathTap(c * p.gain, p.delay_tap, p.doppler_tap, p.frac_doppler) for p in self.paths], self.dims)


@dataclass
class ChannelProfile:
    """Statistical description of one link's taps.

    ``model`` is "BPM" (uniform integer taps, equal path powers) or "EVA"
    (fixed 9-tap power-delay profile, uniform Doppler up to f_c v / c).
    """

    model: str = "BPM"
    num_paths: int = 4
    max_delay_tap: int = 3
    max_doppler_tap: int = 3
    fractional_doppler: bool = None
    delays_ns: list = field(default_factory=lambda: list(EVA_DELAYS_NS))
    pdp_db: list = field(default_factory=lambda: list(EVA_PDP_DB))
    delta_f: float = 15e3
    f_c: float = 4e9
    ue_speed: float = 500 / 3.6

    def __post_init__(self):
        self.model = str(self.model).upper()
        if self.model not in ("BPM", "EVA"):
            raise ValueError(f"unknown channel model {self.model!r}; expected BPM or EVA")
        if self.fractional_doppler is None:
            # BPM taps are integer; EVA Doppler is continuous unless disabled
            self.fractional_doppler = self.model == "EVA"
        if self.model == "EVA":
            if len(self.delays_ns) != len(self.pdp_db):
                raise ValueError("EVA delay and PDP tables differ in length")
            self.num_paths = len(self.delays_ns)
        if self.num_paths < 1:
            raise ValueError("num_paths must be positive")
        if self.max_delay_tap < 0 or self.max_doppler_tap < 0:
            raise ValueError("maximum tap indices must be non-negative")

    def pdp_weights(self):
        if self.model == "BPM":
            return np.full(self.num_paths, 1.0 / self.num_paths)
        w = 10.0 ** (np.asarray(self.pdp_db, dtype=float) / 10.0)
        return w / w.sum()

    def eva_delay_taps(self, M):
        taps = np.rint(np.asarray(self.delays_ns) * 1e-9 * M * self.delta_f).astype(int)
        if taps.max() >= M:
            raise ValueError(f"EVA delay spread needs {taps.max() + 1} delay bins but M={M}")
        return taps

    def max_doppler_hz(self):
        return self.f_c * self.ue_speed / SPEED_OF_LIGHT


def delay_matrix(l, M):
    if not 0 <= l < M:
        raise ValueError(f"delay tap must satisfy 0 <= l < M, got l={l}, M={M}")
    return np.roll(np.eye(M), l, axis=0)


def _phase_ramp(n, nu, l, dims):
    m = np.arange(dims.M)
    t = np.asarray(n)[..., None] * (dims.M + dims.M_CP) + dims.M_CP + m - l
    return np.exp(2j * np.pi * nu / (dims.N * dims.M) * t)


def doppler_matrix(n, k, kappa, l, dims):
    return np.diag(_phase_ramp(n, k + kappa, l, dims))


def channel_matrix(taps, n):
    return channel_matrices(taps)[n]


def channel_matrices(taps):
    """All N per-symbol matrices of a TapList, shape (N, M, M)."""
    d = taps.dims
    return link_matrices(taps.gains[None, None], taps.delays, taps.dopplers, d)[:, 0, :, 0, :]


def link_matrices(gains, delays, dopplers, dims):
    """Per-symbol matrices of a multi-antenna link.

    ``gains`` has shape (R, C, L): one complex gain per (row antenna, column
    antenna, path).  ``delays`` and ``dopplers`` are either shape (L,) (paths
    shared by all antenna pairs) or (R, C, L).  Returns (N, R, M, C, M), which
    reshapes to the antenna-major (R*M, C*M) matrix of each symbol.
    """
    gains = np.asarray(gains, dtype=complex)
    R, C, L = gains.shape
    delays = np.broadcast_to(np.asarray(delays, dtype=int), (R, C, L))
    dopplers = np.broadcast_to(np.asarray(dopplers, dtype=float), (R, C, L))
    M, N = dims.M, dims.N
    if delays.size and (delays.min() < 0 or delays.max() >= M):
        raise ValueError(f"delay taps must lie in [0, {M - 1}]")
    n = np.arange(N)[:, None, None, None]
    m = np.arange(M)
    out = np.zeros((N, R, C, M, M), dtype=complex)
    rows = np.arange(M)
    for q in range(L):
        l = delays[:, :, q]
        t = n * (M + dims.M_CP) + dims.M_CP + m - l[None, :, :, None]
        vals = gains[None, :, :, q, None] * np.exp(2j * np.pi * dopplers[None, :, :, q, None] / (N * M) * t)
        cols = (rows[None, None, :] - l[:, :, None]) % M
        onehot = cols[..., None] == rows
        out += vals[..., None] * onehot
    return out.transpose(0, 1, 3, 2, 4)


def apply_taps(taps, tx):
    """Sample-domain channel: delayed, Doppler-rotated copies of the CP stream.

    Requires ``M_CP >= max delay tap`` so that every delayed sample of a
    symbol's core stays inside the same CP-extended symbol.  Returns the
    CP-stripped received TimeFrame.
    """
    d = tx.dims
    if not tx.has_cp and d.M_CP > 0:
        raise ValueError("apply_taps expects a CP-extended TimeFrame")
    if taps.delays.max() > d.M_CP:
        raise ValueError(f"M_CP={d.M_CP} shorter than the largest delay tap {taps.delays.max()}")
    s = tx.stream()
    i = np.arange(s.size)
    y = np.zeros_like(s)
    for p in taps.paths:
        l = p.delay_tap
        shifted = np.zeros_like(s)
        shifted[l:] = s[: s.size - l]
        y += p.gain * np.exp(2j * np.pi * p.doppler / (d.N * d.M) * (i - l)) * shifted
    return TimeFrame(d, y.reshape(d.N, d.M + d.M_CP)[:, d.M_CP:])


def _cscg(rng, shape, var=1.0):
    return np.sqrt(np.asarray(var) / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_paths(rng, profile, dims):
    """Path-level draws shared by every antenna pair of one link.

    Returns (powers, delay taps, Doppler values k+kappa) for L paths.
    """
    L = profile.num_paths
    if profile.model == "BPM":
        if profile.max_delay_tap >= dims.M:
            raise ValueError(f"max_delay_tap={profile.max_delay_tap} does not fit M={dims.M}")
        delays = rng.integers(0, profile.max_delay_tap + 1, size=L)
        k = rng.integers(0, profile.max_doppler_tap + 1, size=L).astype(float)
        kappa = rng.uniform(-0.5, 0.5, size=L) if profile.fractional_doppler else np.zeros(L)
        return profile.pdp_weights(), delays, k + kappa
    delays = profile.eva_delay_taps(dims.M)
    T = 1.0 / profile.delta_f
    nu = rng.uniform(0.0, profile.max_doppler_hz(), size=L) * dims.N * T
    if not profile.fractional_doppler:
        nu = np.rint(nu)
    return profile.pdp_weights(), delays, nu


def _split_doppler(nu):
    k = int(np.rint(nu))
    kappa = float(nu - k)
    # rint rounds half to even; keep kappa inside [-0.5, 0.5]
    return k, min(max(kappa, -0.5), 0.5)


def _taplist(gains, delays, nu, dims):
    paths = []
    for g, l, v in zip(gains, delays, nu):
        k, kappa = _split_doppler(v)
        paths.append(PathTap(complex(g), int(l), k, kappa))
    return TapList(paths, dims)


def sample_bpm(rng, profile, dims):
    if profile.model != "BPM":
        raise ValueError("sample_bpm needs a BPM profile")
    powers, delays, nu = draw_paths(rng, profile, dims)
    return _taplist(_cscg(rng, powers.shape, powers), delays, nu, dims)


def sample_eva(rng, profile, dims, ue_speed=None):
    if profile.model != "EVA":
        raise ValueError("sample_eva needs an EVA profile")
    if ue_speed is not None:
        profile = ChannelProfile(**{**profile.__dict__, "ue_speed": ue_speed})
    powers, delays, nu = draw_paths(rng, profile, dims)
    return _taplist(_cscg(rng, powers.shape, powers), delays, nu, dims)


def sample_taps(rng, profile, dims):
    return sample_bpm(rng, profile, dims) if profile.model == "BPM" else sample_eva(rng, profile, dims)
