"""IRS reflection matrix, cascaded channel assembly and passive phase design."""

from dataclasses import dataclass

import numpy as np

from .channel import TapList, _taplist, link_matrices


def wrap_phase(x):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2 * np.pi)


@dataclass
class IrsPanel:
    K: int
    phases: np.ndarray = None
    amplitudes: np.ndarray = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"an IRS needs at least one element, got K={self.K}")
        self.phases = np.zeros(self.K) if self.phases is None else wrap_phase(self.phases)
        self.amplitudes = np.ones(self.K) if self.amplitudes is None else np.asarray(self.amplitudes, dtype=float)
        if self.phases.shape != (self.K,) or self.amplitudes.shape != (self.K,):
            raise ValueError("phases and amplitudes must have one entry per element")
        if np.any(self.amplitudes <= 0) or np.any(self.amplitudes > 1):
            raise ValueError("reflection amplitudes must lie in (0, 1]")

    @property
    def coefficients(self):
        return self.amplitudes * np.exp(1j * self.phases)

    @classmethod
    def random(cls, rng, K):
        return cls(K, rng.uniform(-np.pi, np.pi, size=K))


def rc_matrix(panel, M):
    return np.diag(np.repeat(panel.coefficients, M))


@dataclass
class LinkTaps:
    """Taps of one link for every antenna pair.

    ``gains`` is (R, C, L); ``delays`` and ``dopplers`` are (L,) when all
    antenna pairs see the same path geometry, or (R, C, L) otherwise.
    """

    gains: np.ndarray
    delays: np.ndarray
    dopplers: np.ndarray

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=complex)
        if self.gains.ndim != 3:
            raise ValueError(f"gains must be (rows, cols, paths), got shape {self.gains.shape}")
        shape = self.gains.shape
        self.delays = np.broadcast_to(np.asarray(self.delays, dtype=int), shape)
        self.dopplers = np.broadcast_to(np.asarray(self.dopplers, dtype=float), shape)

    @property
    def shape(self):
        return self.gains.shape[:2]

    def taplist(self, r, c, dims):
        return _taplist(self.gains[r, c], self.delays[r, c], self.dopplers[r, c], dims)

    def matrices(self, dims):
        N, M = dims.N, dims.M
        R, C = self.shape
        return link_matrices(self.gains, self.delays, self.dopplers, dims).reshape(N, R * M, C * M)

    def scaled(self, c):
        return LinkTaps(c * self.gains, self.delays, self.dopplers)

    @classmethod
    def from_taplists(cls, tls):
        """Build from a nested list ``tls[r][c]`` of TapLists with equal path counts."""
        g = np.array([[t.gains for t in row] for row in tls])
        d = np.array([[t.delays for t in row] for row in tls])
        v = np.array([[t.dopplers for t in row] for row in tls])
        return cls(g, d, v)


class MimoLinkSet:
    """Direct (BS->UE), BS->IRS and IRS->UE links of one frame.

    Per-symbol matrices: ``Hd`` (N, N_r M, N_t M), ``G`` (N, K M, N_t M) and
    ``D`` (N, N_r M, K M), all antenna/element-major.  ``direct`` may be None
    (no direct path), and ``bs_irs``/``irs_ue`` may be None (no IRS).
    """

    def __init__(self, dims, n_t, n_r, K, direct=None, bs_irs=None, irs_ue=None):
        self.dims, self.n_t, self.n_r, self.K = dims, n_t, n_r, K
        self.direct, self.bs_irs, self.irs_ue = direct, bs_irs, irs_ue
        if direct is not None and direct.shape != (n_r, n_t):
            raise ValueError(f"direct link taps have shape {direct.shape}, expected ({n_r}, {n_t})")
        if (bs_irs is None) != (irs_ue is None):
            raise ValueError("BS->IRS and IRS->UE links must be given together")
        if bs_irs is not None:
            if bs_irs.shape != (K, n_t) or irs_ue.shape != (n_r, K):
                raise ValueError(
                    f"IRS link shapes {bs_irs.shape} and {irs_ue.shape} do not match K={K}, N_t={n_t}, N_r={n_r}"
                )
        N, M = dims.N, dims.M
        self.Hd = direct.matrices(dims) if direct is not None else np.zeros((N, n_r * M, n_t * M), complex)
        if bs_irs is not None:
            self.G = bs_irs.matrices(dims)
            self.D = irs_ue.matrices(dims)
        else:
            self.G = np.zeros((N, K * M, n_t * M), complex)
            self.D = np.zeros((N, n_r * M, K * M), complex)

    @classmethod
    def from_matrices(cls, dims, Hd, G, D):
        """Link set defined only by its per-symbol matrices (no taps)."""
        N, R, C = Hd.shape
        M = dims.M
        K = G.shape[1] // M
        obj = cls.__new__(cls)
        obj.dims, obj.n_t, obj.n_r, obj.K = dims, C // M, R // M, K
        obj.direct = obj.bs_irs = obj.irs_ue = None
        if G.shape != (N, K * M, C) or D.shape != (N, R, K * M):
            raise ValueError(f"matrix shapes Hd={Hd.shape}, G={G.shape}, D={D.shape} are inconsistent")
        obj.Hd, obj.G, obj.D = np.asarray(Hd, complex), np.asarray(G, complex), np.asarray(D, complex)
        return obj

    @property
    def has_irs(self):
        return self.bs_irs is not None or np.any(self.G)

    def element_cascades(self):
        """C[n, k] = D_n[:, k-block] G_n[k-block, :], shape (N, K, N_r M, N_t M)."""
        N, M, K = self.dims.N, self.dims.M, self.K
        Dk = self.D.reshape(N, -1, K, M)
        Gk = self.G.reshape(N, K, M, -1)
        return np.einsum("nrkm,nkmc->nkrc", Dk, Gk, optimize=True)


def cascade(links, panel, n=None):
    """H_n = Hd_n + D_n Theta G_n for one symbol, or all symbols when n is None."""
    if panel.K != links.K:
        raise ValueError(f"panel has {panel.K} elements but the links assume K={links.K}")
    theta = np.repeat(panel.coefficients, links.dims.M)
    sl = slice(None) if n is None else n
    return links.Hd[sl] + (links.D[sl] * theta) @ links.G[sl]


def stm_select(d, g, h=None):
    """Strongest-tap phases from raw tap gains.

    ``d`` is (K, L_d) BS->IRS gains, ``g`` is (K, L_g) IRS->UE gains and ``h``
    the optional direct-link gains.  Returns (phases, chosen (p_d, p_g) pairs).
    """
    d = np.asarray(d, dtype=complex)
    g = np.asarray(g, dtype=complex)
    if d.ndim != 2 or g.ndim != 2 or d.shape[1] == 0 or g.shape[1] == 0 or d.shape[0] != g.shape[0]:
        raise ValueError("STM needs non-empty per-element tap lists for both IRS hops")
    prod = d[:, :, None] * g[:, None, :]
    flat = np.abs(prod).reshape(len(d), -1).argmax(axis=1)
    pd, pg = np.unravel_index(flat, prod.shape[1:])
    best = prod[np.arange(len(d)), pd, pg]
    theta = -np.angle(best)
    if h is not None:
        h = np.asarray(h, dtype=complex)
        if h.size == 0:
            raise ValueError("direct-link tap list is empty")
        theta = theta + np.angle(h[np.argmax(np.abs(h))])
    return wrap_phase(theta), np.stack([pd, pg], axis=1)


def stm_phases(links, include_direct=None, ref=(0, 0)):
    """Strongest-tap maximization on the (tx ref[0], rx ref[1]) antenna pair."""
    if links.bs_irs is None:
        raise ValueError("STM needs the per-element tap lists of both IRS hops")
    t, r = ref
    if include_direct is None:
        include_direct = links.direct is not None
    h = links.direct.gains[r, t] if include_direct and links.direct is not None else None
    theta, _ = stm_select(links.bs_irs.gains[:, t, :], links.irs_ue.gains[r, :, :], h)
    return IrsPanel(links.K, theta)


def coherent_phases(links, init=None, max_sweeps=100, tol=1e-10):
    """Phases maximizing total received power sum_n ||H_n||_F^2 by coordinate ascent.

    Each element update is the exact maximizer with the other phases fixed,
    so the power never decreases.  Starts from ``init`` (default: STM).
    """
    C = links.element_cascades()
    K = links.K
    Cf = np.moveaxis(C, 1, 0).reshape(K, -1)
    A = Cf.conj() @ Cf.T  # Gram matrix <C_k, C_k'>
    b = Cf.conj() @ links.Hd.reshape(-1)
    if init is None:
        init = stm_phases(links) if links.bs_irs is not None else IrsPanel(K)
    th = np.exp(1j * init.phases)

    def power(th):
        return np.real(th.conj() @ A @ th + 2 * (b.conj() @ th))

    prev = power(th)
    for _ in range(max_sweeps):
        for k in range(K):
            z = b[k] + A[k] @ th - A[k, k] * th[k]
            if abs(z) > 0:
                th[k] = z / abs(z)
        cur = power(th)
        if cur - prev <= tol * max(abs(cur), 1.0):
            break
        prev = cur
    return IrsPanel(K, np.angle(th))
