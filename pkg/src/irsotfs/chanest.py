"""Cascaded-channel estimation with the block-PARAFAC model and ALS.

Frame-level model for pilot block l:

    R[l] = D (diag(theta[l]) kron I_NM) G X^T + Z[l]

with ``D`` (N_r NM x K NM), ``G`` (K NM x N_t NM), pilots ``X`` (T x N_t NM)
and IRS phase rows ``theta[l]`` (row l of ``Phi``).  Frame-level matrices
index rows and columns as (antenna or element, OFDM symbol, sample).
"""

from dataclasses import dataclass

import numpy as np

from .ddcore import dft_matrix


@dataclass
class CascadeFactors:
    D: np.ndarray
    G: np.ndarray
    K: int

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=complex)
        self.G = np.asarray(self.G, dtype=complex)
        if self.D.shape[1] != self.G.shape[0] or self.D.shape[1] % self.K:
            raise ValueError(f"factor shapes {self.D.shape} and {self.G.shape} do not split into K={self.K} blocks")

    @property
    def block(self):
        return self.D.shape[1] // self.K

    def D_k(self, k):
        b = self.block
        return self.D[:, k * b:(k + 1) * b]

    def G_k(self, k):
        b = self.block
        return self.G[k * b:(k + 1) * b]

    def cascade(self, theta):
        """D (diag(theta) kron I) G."""
        return (self.D * np.repeat(np.asarray(theta), self.block)) @ self.G

    def element_cascades(self):
        return np.stack([self.D_k(k) @ self.G_k(k) for k in range(self.K)])


def frame_factors(links):
    """Frame-level D and G of a MimoLinkSet (block-diagonal over OFDM symbols)."""
    N, M, K = links.dims.N, links.dims.M, links.K

    def blkdiag(X, rows, cols):
        Xr = X.reshape(N, rows, M, cols, M)
        out = np.zeros((rows, N, M, cols, N, M), dtype=complex)
        for n in range(N):
            out[:, n, :, :, n, :] = Xr[n]
        return out.reshape(rows * N * M, cols * N * M)

    return CascadeFactors(blkdiag(links.D, links.n_r, K), blkdiag(links.G, K, links.n_t), K)


@dataclass
class PilotSchedule:
    Phi: np.ndarray  # (L, K) unit-modulus IRS phase rows
    X: np.ndarray  # (T, N_t NM) pilots

    def __post_init__(self):
        self.Phi = np.asarray(self.Phi, dtype=complex)
        self.X = np.asarray(self.X, dtype=complex)
        if not np.allclose(np.abs(self.Phi), 1.0):
            raise ValueError("IRS phase pattern entries must have unit modulus")
        if np.linalg.matrix_rank(self.X) < self.X.shape[1]:
            raise ValueError(f"pilot matrix of shape {self.X.shape} is not full column rank")

    @property
    def L(self):
        return self.Phi.shape[0]

    @property
    def K(self):
        return self.Phi.shape[1]

    @property
    def T(self):
        return self.X.shape[0]

    def validate(self, n_r, NM):
        """Identifiability guard for the two least-squares half-steps."""
        L, K, T = self.L, self.K, self.T
        if self.X.shape[1] % NM:
            raise ValueError(f"pilot width {self.X.shape[1]} is not a multiple of NM={NM}")
        n_t = self.X.shape[1] // NM
        if L * T < K * NM:
            raise ValueError(f"D step under-determined: L*T={L * T} < K*NM={K * NM}")
        if L * n_r * NM * T < K * NM * n_t * NM:
            raise ValueError("G step under-determined: fewer equations than unknowns")
        if L * n_r < K:
            raise ValueError(f"G step rank-deficient: L*N_r={L * n_r} < K={K}")
        if np.linalg.matrix_rank(self.Phi) < K:
            raise ValueError(f"phase pattern of shape {self.Phi.shape} has rank below K={K}")


def default_schedule(K, n_t, NM, L=None, T=None):
    """DFT-based pilots: X = sqrt(T) F_T[:, :N_t NM], Phi = first K columns of the L-point DFT."""
    L = K if L is None else L
    T = n_t * NM if T is None else T
    if T < n_t * NM:
        raise ValueError(f"need T >= N_t*NM={n_t * NM} pilot slots, got T={T}")
    X = np.sqrt(T) * dft_matrix(T)[:, : n_t * NM]
    Phi = np.sqrt(L) * dft_matrix(L)[:, :K] if K <= L else None
    if Phi is None:
        raise ValueError(f"need L >= K phase blocks, got L={L}, K={K}")
    return PilotSchedule(Phi, X)


def simulate_rx_tensor(factors, schedule, sigma2, rng=None):
    """Received slices R[l], shape (L, N_r NM, T)."""
    XT = schedule.X.T
    R = np.stack([factors.cascade(th) @ XT for th in schedule.Phi])
    if sigma2 > 0:
        if rng is None:
            raise ValueError("noisy simulation needs an rng")
        R = R + np.sqrt(sigma2 / 2) * (rng.standard_normal(R.shape) + 1j * rng.standard_normal(R.shape))
    return R


def khatri_rao(A, B):
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"Khatri-Rao product needs equal column counts, got {A.shape} and {B.shape}")
    return (A[:, None, :] * B[None, :, :]).reshape(A.shape[0] * B.shape[0], A.shape[1])


def _lstsq(A, B, what):
    x, _, rank, _ = np.linalg.lstsq(A, B, rcond=None)
    if rank < A.shape[1]:
        raise ValueError(f"{what} least-squares system is rank deficient (rank {rank} < {A.shape[1]}); not identifiable")
    return x


def model_slices(D, G, schedule, NM):
    th = np.repeat(schedule.Phi, NM, axis=1)  # (L, K NM)
    return np.einsum("rk,lk,kc,tc->lrt", D, th, G, schedule.X, optimize=True)


def als_estimate(R, schedule, K, NM, init=None, max_sweeps=50, tol=1e-12, rng=None):
    """Alternating least squares for (D, G).

    ``init`` is an (D0, G0) pair, or None for seeded complex Gaussian
    factors drawn from ``rng``.  Returns (D_hat, G_hat, residual trace) where
    the trace holds ||R - model||_F after every sweep.
    """
    R = np.asarray(R, dtype=complex)
    L, rows, T = R.shape
    n_r = rows // NM
    schedule.validate(n_r, NM)
    if L != schedule.L or T != schedule.T:
        raise ValueError(f"slices of shape {R.shape} do not match the schedule (L={schedule.L}, T={schedule.T})")
    cols = schedule.X.shape[1]
    if init is None:
        rng = np.random.default_rng() if rng is None else rng
        shape_d, shape_g = (rows, K * NM), (K * NM, cols)
        D = (rng.standard_normal(shape_d) + 1j * rng.standard_normal(shape_d)) / np.sqrt(2)
        G = (rng.standard_normal(shape_g) + 1j * rng.standard_normal(shape_g)) / np.sqrt(2)
    else:
        D, G = (np.array(x, dtype=complex) for x in init)
    th = np.repeat(schedule.Phi, NM, axis=1)  # (L, K NM)
    XT = schedule.X.T
    Rh = np.concatenate(list(R), axis=1)  # (rows, L T)
    Rt = np.concatenate(list(R @ np.linalg.pinv(XT)), axis=0)  # (L rows, cols)
    norm_R = np.linalg.norm(R)
    trace = []
    for _ in range(max_sweeps):
        GX = G @ XT
        Z = np.concatenate([t[:, None] * GX for t in th], axis=1)  # (K NM, L T)
        D = _lstsq(Z.T, Rh.T, "D-step").T
        Om = np.concatenate([D * t for t in th], axis=0)  # (L rows, K NM)
        G = _lstsq(Om, Rt, "G-step")
        # balance block norms; the model is unchanged
        for k in range(K):
            sl = slice(k * NM, (k + 1) * NM)
            nd, ng = np.linalg.norm(D[:, sl]), np.linalg.norm(G[sl])
            if nd > 0 and ng > 0:
                s = np.sqrt(ng / nd)
                D[:, sl] *= s
                G[sl] /= s
        trace.append(float(np.linalg.norm(R - model_slices(D, G, schedule, NM))))
        if len(trace) > 1 and abs(trace[-2] - trace[-1]) <= tol * max(trace[-2], norm_R * 1e-300):
            break
        if trace[-1] <= 1e-14 * norm_R:
            break
    return D, G, trace


def cascade_mse(true, est, Phi):
    """Normalized cascade error averaged over the phase rows, plus aligned factor errors.

    Returns (cascade MSE, {"D": ..., "G": ...}) where the factor errors use
    per-block scalar alignment of the estimate to the truth.
    """
    errs = []
    for th in np.asarray(Phi):
        C = true.cascade(th)
        nc = np.linalg.norm(C) ** 2
        if nc == 0:
            raise ValueError("true cascaded channel is zero; normalized error undefined")
        errs.append(np.linalg.norm(C - est.cascade(th)) ** 2 / nc)
    D_al = est.D.copy()
    G_al = est.G.copy()
    b = true.block
    for k in range(true.K):
        sl = slice(k * b, (k + 1) * b)
        den = np.vdot(est.D[:, sl], est.D[:, sl])
        c = np.vdot(est.D[:, sl], true.D[:, sl]) / den if den != 0 else 1.0
        if c != 0:
            D_al[:, sl] *= c
            G_al[sl] /= c
    factor = {
        "D": float(np.linalg.norm(true.D - D_al) ** 2 / max(np.linalg.norm(true.D) ** 2, 1e-300)),
        "G": float(np.linalg.norm(true.G - G_al) ** 2 / max(np.linalg.norm(true.G) ** 2, 1e-300)),
    }
    return float(np.mean(errs)), factor
