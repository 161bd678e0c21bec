"""OTFS transforms, CP framing and the vectorized delay-Doppler relation.

Conventions used throughout the package:

* every DFT is unitary (``norm="ortho"``);
* a delay-Doppler grid ``A`` has shape ``(M, N)``: delay along axis 0,
  Doppler along axis 1;
* ``vec`` is column-major, so grid entry ``(l, k)`` sits at index ``k*M + l``;
* the OTFS transmitter maps ``A`` to ``S = A F_N^H`` and sends column ``n`` of
  ``S`` as OFDM symbol ``n``, prefixed by the last ``M_CP`` samples.
"""

from dataclasses import dataclass

import numpy as np

# Scale applied to the ISFFT output.  Always 1.0 in normal use; the CLI
# exposes a hidden switch that changes it so the check suite can prove it
# catches a broken transform.
_FAULT_SCALE = 1.0


def set_fault_scale(scale):
    global _FAULT_SCALE
    _FAULT_SCALE = float(scale)


@dataclass(frozen=True)
class GridDims:
    M: int
    N: int
    M_CP: int = 0

    def __post_init__(self):
        for name in ("M", "N", "M_CP"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise TypeError(f"{name} must be an integer, got {v!r}")
        if self.M < 1 or self.N < 1:
            raise ValueError(f"M and N must be positive, got M={self.M}, N={self.N}")
        if not 0 <= self.M_CP < self.M:
            raise ValueError(f"M_CP must satisfy 0 <= M_CP < M, got M_CP={self.M_CP}, M={self.M}")

    @property
    def size(self):
        return self.M * self.N

    @property
    def symbol_len(self):
        return self.M + self.M_CP


@dataclass
class DdFrame:
    dims: GridDims
    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=complex)
        if self.grid.shape != (self.dims.M, self.dims.N):
            raise ValueError(f"grid shape {self.grid.shape} does not match (M, N) = ({self.dims.M}, {self.dims.N})")

    def vec(self):
        return vec(self.grid)

    @classmethod
    def from_vec(cls, dims, v):
        return cls(dims, unvec(v, dims.M, dims.N))


@dataclass
class TimeFrame:
    """N OFDM symbols stored as rows of ``samples``, shape (N, M) or (N, M+M_CP)."""

    dims: GridDims
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        d = self.dims
        if self.samples.ndim != 2 or self.samples.shape[0] != d.N or self.samples.shape[1] not in (d.M, d.M + d.M_CP):
            raise ValueError(
                f"samples shape {self.samples.shape} incompatible with N={d.N}, M={d.M}, M_CP={d.M_CP}"
            )

    @property
    def has_cp(self):
        return self.dims.M_CP > 0 and self.samples.shape[1] == self.dims.M + self.dims.M_CP

    def core(self):
        """Samples with the cyclic prefix removed, shape (N, M)."""
        return self.samples[:, self.dims.M_CP:] if self.has_cp else self.samples

    def stream(self):
        """Serial sample stream (row by row)."""
        return self.samples.reshape(-1)


def vec(A):
    """Column-major vectorization of the last two axes."""
    A = np.asarray(A)
    return np.swapaxes(A, -1, -2).reshape(A.shape[:-2] + (-1,))


def unvec(v, M, N):
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (N, M)), -1, -2)


def dft_matrix(n):
    """Unitary DFT matrix F with F[a, b] = exp(-j 2 pi a b / n) / sqrt(n)."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def isfft_grid(A):
    """F_M A F_N^H over the last two axes (batched)."""
    return _FAULT_SCALE * np.fft.ifft(np.fft.fft(A, axis=-2, norm="ortho"), axis=-1, norm="ortho")


def sfft_grid(X):
    """F_M^H X F_N over the last two axes (batched)."""
    return np.fft.fft(np.fft.ifft(X, axis=-2, norm="ortho"), axis=-1, norm="ortho")


def isfft(frame):
    return isfft_grid(frame.grid)


def sfft(ft, dims=None):
    ft = np.asarray(ft, dtype=complex)
    if dims is None:
        dims = GridDims(*ft.shape)
    return DdFrame(dims, sfft_grid(ft))


def dd_to_time(A):
    """Core time samples of each OFDM symbol: rows of (A F_N^H)^T, batched.

    Input (..., M, N), output (..., N, M).
    """
    return np.swapaxes(np.fft.ifft(A, axis=-1, norm="ortho"), -1, -2)


def time_to_dd(R):
    """Inverse of :func:`dd_to_time`: (..., N, M) -> (..., M, N)."""
    return np.fft.fft(np.swapaxes(R, -1, -2), axis=-1, norm="ortho")


def add_cp(core, M_CP):
    if M_CP == 0:
        return core
    return np.concatenate([core[..., -M_CP:], core], axis=-1)


def otfs_modulate(frame):
    d = frame.dims
    # route through the ISFFT so that a broken transform shows up end to end
    core = np.swapaxes(np.fft.ifft(isfft_grid(frame.grid), axis=-2, norm="ortho"), -1, -2)
    return TimeFrame(d, add_cp(core, d.M_CP))


def otfs_demodulate(rx, dims=None):
    if not isinstance(rx, TimeFrame):
        if dims is None:
            raise ValueError("raw sample arrays need explicit dims")
        rx = TimeFrame(dims, rx)
    ft = np.fft.fft(np.swapaxes(rx.core(), -1, -2), axis=-2, norm="ortho")
    return sfft(ft, rx.dims)


def channel_apply(tx, per_symbol):
    """Apply per-symbol matrices H_n to the CP-stripped samples of each symbol.

    Returns a TimeFrame without cyclic prefix.
    """
    H = np.asarray(per_symbol)
    d = tx.dims
    if H.shape != (d.N, d.M, d.M):
        raise ValueError(f"expected {d.N} matrices of size {d.M}x{d.M}, got shape {H.shape}")
    rx = np.einsum("nab,nb->na", H, tx.core())
    return TimeFrame(d, rx)


def effective_dd_matrix(per_symbol, n_rx=1, n_tx=1):
    """(F_N kron I_M) blkdiag(H_n) (F_N^H kron I_M), per antenna pair.

    ``per_symbol`` has shape (N, n_rx*M, n_tx*M) with antenna-major rows and
    columns.  The result is (n_rx*N*M, n_tx*N*M) with index order
    (antenna, Doppler, delay), i.e. antenna-major stacking of vec grids.
    """
    H = np.asarray(per_symbol, dtype=complex)
    if H.ndim != 3:
        raise ValueError(f"per_symbol must be a stack of N matrices, got shape {H.shape}")
    N, R, C = H.shape
    if R % n_rx or C % n_tx or R // n_rx != C // n_tx:
        raise ValueError(f"block sizes {R}x{C} inconsistent with n_rx={n_rx}, n_tx={n_tx}")
    M = R // n_rx
    F = dft_matrix(N)
    Hb = H.reshape(N, n_rx, M, n_tx, M)
    out = np.einsum("kn,nratm,jn->rkatjm", F, Hb, F.conj(), optimize=True)
    return out.reshape(n_rx * N * M, n_tx * N * M)
