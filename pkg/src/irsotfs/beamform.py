"""Sum rate and the alternating-optimization (fractional programming) beamformer.

Channel layout: ``H`` has shape (N, R, M*N_t).  Rows may use any ordering
(the rate is invariant to a unitary on the receive side).  Columns are
subcarrier-major, index ``j*N_t + t``, so that the precoder of symbol n is
literally ``W_n = blkdiag(V_0, ..., V_{M-1})`` with ``V_j`` of size
N_t x N_s.  :func:`precoder_view` converts an antenna-major time-domain
channel into this layout.

Each AO iteration runs three exact block maximizations of a tight minorant
of the rate (natural-log units internally):

1. ``Lambda_n = A_n^H A_n / sigma2`` with ``A_n = H_n W_n``;
2. ``Y_n = (A_n A_n^H + sigma2 I)^{-1} A_n``;
3. the norm-ball constrained quadratic program in the V blocks.
"""

from dataclasses import dataclass, field

import numpy as np

LN2 = np.log(2.0)


@dataclass
class Beamformer:
    """Per-symbol, per-subcarrier precoding blocks ``V`` of shape (N, M, N_t, N_s)."""

    V: np.ndarray

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=complex)
        if self.V.ndim != 4:
            raise ValueError(f"V must have shape (N, M, N_t, N_s), got {self.V.shape}")

    @property
    def N(self):
        return self.V.shape[0]

    @property
    def M(self):
        return self.V.shape[1]

    @property
    def n_t(self):
        return self.V.shape[2]

    @property
    def n_s(self):
        return self.V.shape[3]

    def power(self):
        return float(np.sum(np.abs(self.V) ** 2))

    def W(self, n):
        """Assembled block-diagonal W_n of size (M N_t) x (M N_s)."""
        M, t, s = self.M, self.n_t, self.n_s
        out = np.zeros((M * t, M * s), dtype=complex)
        for j in range(M):
            out[j * t:(j + 1) * t, j * s:(j + 1) * s] = self.V[n, j]
        return out

    @classmethod
    def identity(cls, N, M, n_t, n_s, P_max):
        c = np.sqrt(P_max / (N * M * n_s)) if P_max > 0 else 0.0
        V = np.broadcast_to(c * np.eye(n_t, n_s), (N, M, n_t, n_s)).copy()
        return cls(V)

    @classmethod
    def random(cls, rng, N, M, n_t, n_s, P_max):
        V = rng.standard_normal((N, M, n_t, n_s)) + 1j * rng.standard_normal((N, M, n_t, n_s))
        V *= np.sqrt(P_max / np.sum(np.abs(V) ** 2))
        return cls(V)


@dataclass
class FpState:
    Lam: np.ndarray
    Y: np.ndarray
    objective: list = field(default_factory=list)


def precoder_view(H_time, n_t):
    """Map an antenna-major time-domain channel (N, R, n_t*M) to the precoder layout.

    Right-multiplies by the unitary that turns a subcarrier-major
    frequency-domain vector into antenna-major time samples.
    """
    N, R, C = H_time.shape
    M = C // n_t
    Hf = np.fft.ifft(H_time.reshape(N, R, n_t, M), axis=-1, norm="ortho")
    return np.swapaxes(Hf, -1, -2).reshape(N, R, M * n_t)


def time_precoder(bf):
    """Antenna-major time-domain precoder T_n = U_t W_n U_s^H, shape (N, N_t M, N_s M).

    Stream-side input is antenna(stream)-major time samples, matching
    :func:`precoder_view`: ``H_time @ T_n == precoder_view(H_time) @ W_n @ U_s^H``.
    """
    N, M, t, s = bf.V.shape
    k = np.arange(M)
    F = np.exp(-2j * np.pi * np.outer(k, k) / M) / np.sqrt(M)
    T = np.einsum("mj,njts,jq->ntmsq", F.conj().T, bf.V, F, optimize=True)
    return T.reshape(N, t * M, s * M)


def _check_channels(H, bf=None):
    H = np.asarray(H, dtype=complex)
    if H.ndim != 3:
        raise ValueError(f"channels must have shape (N, R, M*N_t), got {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ValueError("channel matrices contain non-finite entries")
    if bf is not None and (H.shape[0] != bf.N or H.shape[2] != bf.M * bf.n_t):
        raise ValueError(f"channel shape {H.shape} does not match beamformer (N={bf.N}, M={bf.M}, N_t={bf.n_t})")
    return H


def effective(bf, H):
    """A_n = H_n W_n, shape (N, R, M*N_s)."""
    N, R, _ = H.shape
    A = np.einsum("nrjt,njts->nrjs", H.reshape(N, R, bf.M, bf.n_t), bf.V, optimize=True)
    return A.reshape(N, R, bf.M * bf.n_s)


def _logdet_gram(A, sigma2):
    """log det(I + A^H A / sigma2) per symbol, natural log."""
    R, S = A.shape[-2:]
    if S <= R:
        G = np.conj(np.swapaxes(A, -1, -2)) @ A / sigma2 + np.eye(S)
    else:
        G = A @ np.conj(np.swapaxes(A, -1, -2)) / sigma2 + np.eye(R)
    sign, ld = np.linalg.slogdet(G)
    return ld


def sum_rate(bf, H, sigma2, M_CP=0):
    """(1/(M+M_CP)) sum_n log2 det(I + H_n W_n W_n^H H_n^H / sigma2)."""
    if sigma2 <= 0:
        raise ValueError("noise power must be positive")
    H = _check_channels(H, bf)
    return max(float(np.sum(_logdet_gram(effective(bf, H), sigma2))) / LN2 / (bf.M + M_CP), 0.0)


def update_lambda(bf, H, sigma2):
    A = effective(bf, _check_channels(H, bf))
    return np.conj(np.swapaxes(A, -1, -2)) @ A / sigma2


def update_alpha(bf, H, Lam, sigma2):
    """Quadratic-transform auxiliary Y_n = (A A^H + sigma2 I)^{-1} A.

    ``Lam`` does not enter the maximizer; it is accepted so the call mirrors
    the surrogate's arguments.
    """
    A = effective(bf, _check_channels(H, bf))
    R, S = A.shape[-2:]
    Ah = np.conj(np.swapaxes(A, -1, -2))
    if S < R:
        # push-through identity keeps the solve at the smaller dimension
        return A @ np.linalg.inv(Ah @ A + sigma2 * np.eye(S))
    return np.linalg.solve(A @ Ah + sigma2 * np.eye(R), A)


def _trace(X):
    return np.trace(X, axis1=-2, axis2=-1)


def quadratic_term(bf, H, Lam, Y, sigma2):
    """q_n = 2 Re tr(K Y^H A) - tr(K Y^H (A A^H + sigma2 I) Y), per symbol."""
    A = effective(bf, H)
    K = Lam + np.eye(Lam.shape[-1])
    Yh = np.conj(np.swapaxes(Y, -1, -2))
    Ah = np.conj(np.swapaxes(A, -1, -2))
    lin = 2 * np.real(_trace(K @ Yh @ A))
    quad = np.real(_trace(K @ (Yh @ A) @ (Ah @ Y))) + sigma2 * np.real(_trace(K @ Yh @ Y))
    return lin - quad


def surrogate(bf, H, Lam, Y, sigma2):
    """Fractional-programming minorant of the rate, natural-log units, summed over n."""
    S = Lam.shape[-1]
    _, ld = np.linalg.slogdet(np.eye(S) + Lam)
    return float(np.sum(ld - np.real(_trace(Lam)) + quadratic_term(bf, H, Lam, Y, sigma2)))


def build_qcqp(H, Lam, Y, sigma2, n_t):
    """Coefficients of the W-step restricted to the block-diagonal entries.

    Returns ``mu`` of shape (N, M, N_t, N_t) and ``p`` of shape
    (N, M, N_t, N_s) such that, up to a W-independent constant,
    ``-sum_n q_n = sum tr(V^H mu V) - 2 Re sum tr(p^H V)``.
    """
    H = _check_channels(H)
    N, R, C = H.shape
    M = C // n_t
    S = Lam.shape[-1]
    n_s = S // M
    K = Lam + np.eye(S)
    B = np.conj(np.swapaxes(Y, -1, -2)) @ H  # (N, S, C)
    KB = K @ B
    Bj = B.reshape(N, S, M, n_t)
    KBj = KB.reshape(N, S, M, n_t)
    mu = np.einsum("naji,najk->njik", Bj.conj(), KBj, optimize=True)
    mu = 0.5 * (mu + np.conj(np.swapaxes(mu, -1, -2)))
    P = np.conj(np.swapaxes(KB, -1, -2)).reshape(N, M, n_t, M, n_s)
    p = np.einsum("njtjs->njts", P)
    return mu, p


def qcqp_constant(Lam, Y, sigma2):
    """W-independent part of the surrogate (natural log)."""
    S = Lam.shape[-1]
    K = Lam + np.eye(S)
    _, ld = np.linalg.slogdet(np.eye(S) + Lam)
    YhY = np.conj(np.swapaxes(Y, -1, -2)) @ Y
    return float(np.sum(ld - np.real(_trace(Lam)) - sigma2 * np.real(_trace(K @ YhY))))


def qcqp_objective(mu, p, w):
    """w^H mu w - 2 Re(p^H w), for dense or stacked block inputs."""
    mu, p, w = _as_blocks(mu, p, w)
    quad = np.einsum("bis,bij,bjs->", w.conj(), mu, w, optimize=True)
    return float(np.real(quad) - 2 * np.real(np.vdot(p, w)))


def _as_blocks(mu, p, w=None):
    mu = np.asarray(mu, dtype=complex)
    p = np.asarray(p, dtype=complex)
    d = mu.shape[-1]
    mu_b = mu.reshape(-1, d, d)
    B = mu_b.shape[0]
    p_b = p.reshape(B, d, -1)
    if w is None:
        return mu_b, p_b
    return mu_b, p_b, np.asarray(w, dtype=complex).reshape(p_b.shape)


def solve_qcqp(mu, p, P_max, return_nu=False, rtol=1e-10):
    """Global minimizer of w^H mu w - 2 Re(p^H w) subject to ||w||^2 <= P_max.

    ``mu`` may be one Hermitian PSD matrix (d, d) or a stack of diagonal
    blocks (..., d, d) of a block-diagonal quadratic; ``p`` matches with shape
    (..., d) or (..., d, s), where every one of the s columns shares its block
    of ``mu``.  The single power constraint couples all blocks.  The solution
    is ``w = (mu + nu I)^{-1} p`` with the smallest feasible nu >= 0, found by
    bisection on the secular equation.
    """
    if P_max <= 0:
        raise ValueError(f"power budget must be positive, got {P_max}")
    shape = np.shape(p)
    mu_b, p_b = _as_blocks(mu, p)
    if not np.any(p_b):
        w = np.zeros(shape, dtype=complex)
        return (w, 0.0) if return_nu else w
    lam, U = np.linalg.eigh(mu_b)
    lam = np.maximum(lam, 0.0)
    pt = np.conj(np.swapaxes(U, -1, -2)) @ p_b
    e = np.sum(np.abs(pt) ** 2, axis=-1)  # energy per eigen-direction
    scale = max(lam.max(), 1e-300)
    null = lam <= 1e-12 * scale
    pnorm = np.sqrt(e.sum())

    def norm2(nu):
        return np.sum(e / (lam + nu) ** 2)

    nu = 0.0
    null_energy = e[null].sum()
    if null_energy <= (1e-14 * pnorm) ** 2 and np.sum(e[~null] / lam[~null] ** 2) <= P_max:
        inv = np.where(null, 0.0, 1.0 / np.where(null, 1.0, lam))
    else:
        lo, hi = 0.0, pnorm / np.sqrt(P_max)
        while norm2(hi) > P_max:  # guards against round-off at the analytic bound
            hi *= 2
        while hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            if norm2(mid) > P_max:
                lo = mid
            else:
                hi = mid
        assert norm2(hi) <= P_max * (1 + 1e-12), "bisection lost the feasible bracket"
        nu = hi
        inv = 1.0 / (lam + nu)
    w = (U @ (inv[..., None] * pt)).reshape(shape)
    return (w, nu) if return_nu else w


def ao_beamform(H, sigma2, P_max, tol=1e-6, max_iter=100, n_t=1, n_s=None, init="identity", rng=None,
                M_CP=0, return_state=False, callback=None):
    """Alternating optimization of the precoder blocks.

    Returns (Beamformer, rate trace in bit/s/Hz).  The trace starts with the
    rate of the initial point and gains one entry per iteration.
    ``callback(i, bf, rate)`` is called after every iteration.
    """
    H = _check_channels(H)
    N, R, C = H.shape
    M = C // n_t
    if C != M * n_t:
        raise ValueError(f"channel width {C} is not a multiple of N_t={n_t}")
    if n_s is None:
        n_s = R // M
    if P_max <= 0:
        raise ValueError(f"power budget must be positive, got {P_max}")
    if init == "identity":
        bf = Beamformer.identity(N, M, n_t, n_s, P_max)
    elif init == "random":
        bf = Beamformer.random(rng if rng is not None else np.random.default_rng(), N, M, n_t, n_s, P_max)
    elif isinstance(init, Beamformer):
        bf = init
    else:
        raise ValueError(f"unknown beamformer init {init!r}")
    trace = [sum_rate(bf, H, sigma2, M_CP)]
    state = FpState(None, None, [])
    for _ in range(max_iter):
        Lam = update_lambda(bf, H, sigma2)
        Y = update_alpha(bf, H, Lam, sigma2)
        state.objective.append(surrogate(bf, H, Lam, Y, sigma2))
        mu, p = build_qcqp(H, Lam, Y, sigma2, n_t)
        bf = Beamformer(solve_qcqp(mu, p, P_max))
        trace.append(sum_rate(bf, H, sigma2, M_CP))
        state.Lam, state.Y = Lam, Y
        if callback is not None:
            callback(len(trace) - 1, bf, trace[-1])
        if abs(trace[-1] - trace[-2]) <= tol * max(abs(trace[-1]), 1e-300):
            break
    if return_state:
        return bf, trace, state
    return bf, trace
