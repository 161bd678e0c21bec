"""Geometry-driven link gains and random link-set synthesis."""

from dataclasses import dataclass, field

import numpy as np

from ..channel import draw_paths
from ..irs import LinkTaps, MimoLinkSet


@dataclass
class Geometry:
    """Node positions in metres and the per-link average-gain law.

    Average power gain of a link of length d is ``(d / d0) ** -eta`` with a
    per-link exponent.  Gains are normalized by the direct-link gain at
    ``reference_ue`` so that noise power is referenced to the direct path
    there; the BS->IRS gain carries that normalization, the IRS->UE gain is
    used as is.
    """

    bs: tuple = (0.0, -30.0, 2.0)
    irs: tuple = (30.0, 10.0, 4.0)
    ue: tuple = (30.0, 0.0, 1.0)
    reference_ue: tuple = None
    d0: float = 1.0
    eta_direct: float = 3.5
    eta_bs_irs: float = 2.2
    eta_irs_ue: float = 2.2

    def __post_init__(self):
        for name in ("bs", "irs", "ue"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,):
                raise ValueError(f"geometry.{name} must be a 3-vector")
        if self.d0 <= 0:
            raise ValueError("reference distance d0 must be positive")

    def _gain(self, a, b, eta):
        d = np.linalg.norm(np.asarray(a, float) - np.asarray(b, float))
        return (max(d, self.d0) / self.d0) ** (-eta)

    def link_gains(self, ue=None):
        ue = self.ue if ue is None else ue
        ref = self.ue if self.reference_ue is None else self.reference_ue
        g_ref = self._gain(self.bs, ref, self.eta_direct)
        return {
            "direct": self._gain(self.bs, ue, self.eta_direct) / g_ref,
            "bs_irs": self._gain(self.bs, self.irs, self.eta_bs_irs) / g_ref,
            "irs_ue": self._gain(self.irs, ue, self.eta_irs_ue),
        }


def unit_gains(K):
    """Geometry-free gains: unit direct link, cascade with unit power per random-phase sum."""
    return {"direct": 1.0, "bs_irs": 1.0, "irs_ue": 1.0 / K}


def sample_link_taps(rng, profile, dims, rows, cols, power=1.0, shared_paths=True):
    """Taps of one link for all (row, col) antenna pairs.

    With ``shared_paths`` every antenna pair sees the same path delays,
    Dopplers and Rayleigh path amplitudes, with an independent uniform phase
    per pair and path (far-field view of a compact array).  Otherwise every
    pair draws its own independent tap list.  Either way each pair's taps are
    marginally distributed like one draw of the profile, scaled to ``power``.
    """
    if shared_paths:
        powers, delays, nu = draw_paths(rng, profile, dims)
        L = len(powers)
        amp = np.sqrt(powers * power / 2) * np.abs(rng.standard_normal(L) + 1j * rng.standard_normal(L))
        phase = rng.uniform(-np.pi, np.pi, size=(rows, cols, L))
        return LinkTaps(amp * np.exp(1j * phase), delays, nu)
    L = profile.num_paths
    g = np.empty((rows, cols, L), complex)
    dl = np.empty((rows, cols, L), int)
    dp = np.empty((rows, cols, L), float)
    for r in range(rows):
        for c in range(cols):
            powers, dl[r, c], dp[r, c] = draw_paths(rng, profile, dims)
            g[r, c] = np.sqrt(powers * power / 2) * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
    return LinkTaps(g, dl, dp)


@dataclass
class LinkSpec:
    n_t: int = 1
    n_r: int = 1
    K: int = 16
    direct: bool = True
    irs: bool = True
    shared_paths: bool = True
    gains: dict = field(default_factory=dict)


def sample_links(rng, profile, dims, spec, direct_profile=None):
    """Draw a MimoLinkSet.  Draw order is fixed (direct, BS->IRS, IRS->UE) so
    that enabling or disabling a link never shifts the other links' draws."""
    g = spec.gains
    dp = profile if direct_profile is None else direct_profile
    direct = sample_link_taps(rng, dp, dims, spec.n_r, spec.n_t, g.get("direct", 1.0), spec.shared_paths)
    bs_irs = sample_link_taps(rng, profile, dims, spec.K, spec.n_t, g.get("bs_irs", 1.0), spec.shared_paths)
    irs_ue = sample_link_taps(rng, profile, dims, spec.n_r, spec.K, g.get("irs_ue", 1.0), spec.shared_paths)
    return MimoLinkSet(
        dims,
        spec.n_t,
        spec.n_r,
        spec.K,
        direct=direct if spec.direct else None,
        bs_irs=bs_irs if spec.irs else None,
        irs_ue=irs_ue if spec.irs else None,
    )
