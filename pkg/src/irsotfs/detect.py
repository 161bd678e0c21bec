"""Detection for y = H a + z: QAM handling, ADMM box relaxation, MMSE and ML.

Symbols use the unnormalized square alphabet with per-axis levels
{+-1, +-3, ..., +-(2^Q - 1)}.  Inputs ``y`` may be one vector (d_r,) or a
batch of frames stacked as columns (d_r, F); outputs follow the same layout.
"""

from dataclasses import dataclass, field
import itertools

import numpy as np
from scipy.linalg import cho_factor, cho_solve


@dataclass(frozen=True)
class QamAlphabet:
    """Square 4^Q-QAM with Gray mapping per axis.

    Bit layout per symbol: the first Q bits select the real level, the next
    Q bits the imaginary level, most significant bit first.  Per axis the Gray
    word g is converted to a binary index b and mapped to level
    ``(2^Q - 1) - 2 b``, so for Q=1 the bits "00" map to 1+1j.
    """

    Q: int = 1

    def __post_init__(self):
        if self.Q < 1:
            raise ValueError(f"Q must be at least 1, got {self.Q}")

    @property
    def levels(self):
        return np.arange(-(2 ** self.Q - 1), 2 ** self.Q, 2)

    @property
    def points(self):
        """Constellation in lexicographic order (real part, then imaginary part)."""
        lv = self.levels
        return (lv[:, None] + 1j * lv[None, :]).reshape(-1)

    @property
    def energy(self):
        return float(np.mean(np.abs(self.points) ** 2))

    @property
    def bits_per_symbol(self):
        return 2 * self.Q


def _gray_to_binary(g):
    b = g.copy()
    shift = g >> 1
    while np.any(shift):
        b ^= shift
        shift >>= 1
    return b


def _bits_to_int(bits):
    w = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits @ w


def _int_to_bits(x, Q):
    return (x[..., None] >> np.arange(Q - 1, -1, -1)) & 1


def qam_map(bits, alphabet=QamAlphabet()):
    bits = np.asarray(bits, dtype=np.int64)
    Q = alphabet.Q
    if bits.ndim != 1 or bits.size % (2 * Q):
        raise ValueError(f"bit count {bits.size} is not a multiple of {2 * Q}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    words = bits.reshape(-1, 2, Q)
    b = _gray_to_binary(_bits_to_int(words))
    lv = (2 ** Q - 1) - 2 * b
    return lv[:, 0] + 1j * lv[:, 1]


def _quantize_axis(x, Q):
    top = 2 ** Q - 1
    return np.clip(2 * np.ceil(x / 2) - 1, -top, top)


def quantize(x, alphabet=QamAlphabet()):
    """Nearest constellation point; ties go to the smaller coordinate."""
    x = np.asarray(x)
    return _quantize_axis(x.real, alphabet.Q) + 1j * _quantize_axis(x.imag, alphabet.Q)


def qam_demap(symbols, alphabet=QamAlphabet()):
    s = quantize(np.asarray(symbols).reshape(-1), alphabet)
    Q = alphabet.Q
    out = []
    for axis in (s.real, s.imag):
        b = ((2 ** Q - 1) - axis.astype(np.int64)) // 2
        out.append(_int_to_bits(b ^ (b >> 1), Q))
    return np.stack(out, axis=1).reshape(-1)


def binary_decompose(a, alphabet=QamAlphabet()):
    """Split 4^Q-QAM symbols into Q vectors over {+-1 +-1j} with a = sum 2^(q-1) a_q."""
    a = np.asarray(a)
    Q = alphabet.Q
    top = 2 ** Q - 1
    parts = []
    for axis in (a.real, a.imag):
        b = (axis + top) / 2
        if np.any(b != np.round(b)) or np.any(b < 0) or np.any(b > top):
            raise ValueError("entries are not points of the alphabet")
        parts.append(2 * _int_to_bits(np.round(b).astype(np.int64), Q)[..., ::-1] - 1)
    # parts[*][..., q] is the bit of weight 2^q
    return [parts[0][..., q] + 1j * parts[1][..., q] for q in range(Q)]


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 2.0
    alpha: float = 0.5
    max_iter: int = 40
    tol: float = 1e-6

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if not self.rho > self.alpha:
            raise ValueError(f"ADMM needs rho > alpha, got rho={self.rho}, alpha={self.alpha}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class AdmmState:
    a: np.ndarray  # (Q, d, F) box-constrained components
    a0: np.ndarray  # (d, F)
    eps: np.ndarray  # (d, F)
    i: int = 0
    residuals: list = field(default_factory=list)


def _box(x):
    return np.clip(x.real, -1, 1) + 1j * np.clip(x.imag, -1, 1)


class AdmmSolver:
    """ADMM detector with the regularized Gram factorization cached per channel."""

    def __init__(self, H, cfg=AdmmConfig(), alphabet=QamAlphabet()):
        self.H = np.asarray(H, dtype=complex)
        self.cfg, self.alphabet = cfg, alphabet
        d = self.H.shape[1]
        self.chol = cho_factor(self.H.conj().T @ self.H + cfg.rho * np.eye(d))
        self.c = 2.0 ** np.arange(alphabet.Q)

    def init_state(self, F):
        d = self.H.shape[1]
        z = np.zeros((d, F), dtype=complex)
        return AdmmState(np.zeros((self.alphabet.Q, d, F), complex), z, z.copy())

    def step(self, st, Hy):
        rho, alpha = self.cfg.rho, self.cfg.alpha
        c = self.c
        a = st.a.copy()
        for q in range(len(c)):
            r = st.a0 - np.tensordot(c, a, 1) + c[q] * a[q]
            a[q] = _box(c[q] * (rho * r + st.eps) / (rho * c[q] ** 2 - alpha))
        comb = np.tensordot(c, a, 1)
        a0 = cho_solve(self.chol, Hy + rho * comb - st.eps)
        eps = st.eps + rho * (a0 - comb)
        return AdmmState(a, a0, eps, st.i + 1, st.residuals)

    def estimate(self, st):
        if len(self.c) == 1:
            return st.a0
        return np.tensordot(self.c, st.a, 1)

    def run(self, y, callback=None, max_iter=None, tol=None):
        y = np.asarray(y, dtype=complex)
        single = y.ndim == 1
        Y = y[:, None] if single else y
        Hy = self.H.conj().T @ Y
        st = self.init_state(Y.shape[1])
        max_iter = self.cfg.max_iter if max_iter is None else max_iter
        tol = self.cfg.tol if tol is None else tol
        thr = tol * np.sqrt(self.H.shape[1])
        active = np.ones(Y.shape[1], bool)
        for _ in range(max_iter):
            new = self.step(st, Hy)
            if not active.all():
                # frames that already met the stopping rule stay frozen
                keep = ~active
                new.a[:, :, keep] = st.a[:, :, keep]
                new.a0[:, keep] = st.a0[:, keep]
                new.eps[:, keep] = st.eps[:, keep]
            st = new
            res = np.linalg.norm(st.a0 - np.tensordot(self.c, st.a, 1), axis=0)
            st.residuals.append(float(res.max()))
            if callback is not None:
                callback(st.i, self.estimate(st))
            active &= ~(res < thr)
            if not active.any():
                break
        x = quantize(self.estimate(st), self.alphabet)
        return (x[:, 0] if single else x), st


def admm_detect(H, y, alphabet=QamAlphabet(), cfg=AdmmConfig(), callback=None):
    """Box-relaxed ADMM detection; returns (symbols, AdmmState)."""
    return AdmmSolver(H, cfg, alphabet).run(y, callback)


def mmse_estimate(H, y, sigma2):
    H = np.asarray(H, dtype=complex)
    if sigma2 < 0:
        raise ValueError("noise power must be non-negative")
    d = H.shape[1]
    G = H.conj().T @ H + sigma2 * np.eye(d)
    return np.linalg.solve(G, H.conj().T @ np.asarray(y, dtype=complex))


def mmse_detect(H, y, sigma2, alphabet=QamAlphabet()):
    return quantize(mmse_estimate(H, y, sigma2), alphabet)


ML_MAX_SYMBOLS = 12


def ml_oracle(H, y, alphabet=QamAlphabet(), chunk=1 << 16):
    """Exhaustive maximum-likelihood search over all symbol vectors."""
    H = np.asarray(H, dtype=complex)
    y = np.asarray(y, dtype=complex)
    d = H.shape[1]
    if d > ML_MAX_SYMBOLS:
        raise ValueError(f"ML enumeration limited to {ML_MAX_SYMBOLS} symbols, got {d}")
    pts = alphabet.points
    best, best_cost = None, np.inf
    it = itertools.product(range(len(pts)), repeat=d)
    while True:
        idx = np.array(list(itertools.islice(it, chunk)))
        if idx.size == 0:
            break
        cand = pts[idx]  # (c, d), lexicographic order
        cost = np.sum(np.abs(y[None, :] - cand @ H.T) ** 2, axis=1)
        k = int(np.argmin(cost))  # first minimum within the chunk
        if cost[k] < best_cost:
            best_cost, best = cost[k], cand[k]
    return best


def op_count(detector, n_t, n_r, N, M, iters=0):
    """Complex multiplication counts of the detectors."""
    d = n_t * N * M
    r = n_r * N * M
    base = d ** 3 + r * d ** 2 + r * d
    det = detector.lower()
    if det == "mmse":
        return base
    if det == "admm":
        return base + iters * (d + d ** 2 + d)
    raise ValueError(f"unknown detector {detector!r}")
