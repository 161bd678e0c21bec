"""Fast invariant suite behind ``irsotfs check``.

Each check is a small seeded instance of a property that the full test
suite covers more thoroughly.  A check returns (passed, detail).
"""

import numpy as np

from . import beamform as bfm
from .chanest import CascadeFactors, als_estimate, cascade_mse, default_schedule, simulate_rx_tensor
from .channel import ChannelProfile, apply_taps, channel_matrices, sample_bpm
from .ddcore import DdFrame, GridDims, effective_dd_matrix, otfs_demodulate, otfs_modulate, vec
from .detect import AdmmSolver, QamAlphabet, ml_oracle, mmse_detect, qam_demap, qam_map
from .irs import IrsPanel, MimoLinkSet, cascade, coherent_phases, stm_phases
from .simkit.links import LinkSpec, sample_links, unit_gains


def _qpsk_grid(rng, M, N):
    return ((2 * rng.integers(0, 2, (M, N)) - 1) + 1j * (2 * rng.integers(0, 2, (M, N)) - 1))


def check_roundtrip():
    rng = np.random.default_rng(1)
    dims = GridDims(16, 16, 4)
    A = _qpsk_grid(rng, 16, 16)
    err = np.abs(otfs_demodulate(otfs_modulate(DdFrame(dims, A))).grid - A).max()
    return err < 1e-10, f"max_abs_error={err:.3e}"


def check_energy():
    rng = np.random.default_rng(2)
    dims = GridDims(8, 8, 0)
    A = _qpsk_grid(rng, 8, 8)
    tx = otfs_modulate(DdFrame(dims, A))
    rel = abs(np.linalg.norm(tx.samples) - np.linalg.norm(A)) / np.linalg.norm(A)
    return rel < 1e-12, f"relative_energy_change={rel:.3e}"


def check_effective_matrix():
    rng = np.random.default_rng(3)
    dims = GridDims(4, 4, 3)
    prof = ChannelProfile("BPM", fractional_doppler=True)
    worst = 0.0
    for _ in range(5):
        taps = sample_bpm(rng, prof, dims)
        A = _qpsk_grid(rng, 4, 4)
        y = otfs_demodulate(apply_taps(taps, otfs_modulate(DdFrame(dims, A)))).grid
        H = effective_dd_matrix(channel_matrices(taps))
        worst = max(worst, np.abs(H @ vec(A) - vec(y)).max())
    return worst < 1e-10, f"max_abs_error={worst:.3e}"


def _links(seed, n_t=2, n_r=1, K=4, M=4, N=4):
    dims = GridDims(M, N, 3)
    spec = LinkSpec(n_t=n_t, n_r=n_r, K=K, gains=unit_gains(K))
    return sample_links(np.random.default_rng(seed), ChannelProfile("BPM"), dims, spec)


def check_irs_phases():
    worst = np.inf
    for s in range(5):
        links = _links(10 + s)
        p_stm = np.linalg.norm(cascade(links, stm_phases(links))) ** 2
        p_coh = np.linalg.norm(cascade(links, coherent_phases(links))) ** 2
        worst = min(worst, p_coh - p_stm)
    return worst >= -1e-9, f"min_power_gain_over_stm={worst:.3e}"


def check_irs_unit_modulus():
    rng = np.random.default_rng(4)
    c = IrsPanel.random(rng, 32).coefficients
    dev = np.abs(np.abs(c) - 1).max()
    return dev < 1e-12, f"max_modulus_deviation={dev:.3e}"


def _rate_instance(seed, n_t=2, n_r=2, M=4, N=4):
    rng = np.random.default_rng(seed)
    H = (rng.standard_normal((N, n_r * M, n_t * M)) + 1j * rng.standard_normal((N, n_r * M, n_t * M))) / np.sqrt(2)
    return H, float(N * M * n_r)


def check_surrogate_tight():
    worst = 0.0
    for s in range(5):
        H, P = _rate_instance(20 + s)
        bf = bfm.Beamformer.random(np.random.default_rng(s), 4, 4, 2, 2, P)
        Lam = bfm.update_lambda(bf, H, 1.0)
        Y = bfm.update_alpha(bf, H, Lam, 1.0)
        gap = abs(bfm.surrogate(bf, H, Lam, Y, 1.0) - bfm.sum_rate(bf, H, 1.0) * bfm.LN2 * 4)
        worst = max(worst, gap)
    return worst < 1e-8, f"max_gap_nats={worst:.3e}"


def check_ao_monotone():
    worst, power = 0.0, 0.0
    for s in range(3):
        H, P = _rate_instance(30 + s, M=2, N=2)
        bf, trace = bfm.ao_beamform(H, 1.0, P, tol=0, max_iter=15, n_t=2)
        worst = min(worst, float(np.min(np.diff(trace))))
        power = max(power, bf.power() / P - 1)
    return worst >= -1e-9 and power <= 1e-9, f"min_step={worst:.3e} power_excess={power:.3e}"


def check_qcqp_kkt():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(5):
        B = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        mu = B.conj().T @ B
        p = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        w, nu = bfm.solve_qcqp(mu, p, 0.1, return_nu=True)
        res = np.linalg.norm(mu @ w + nu * w - p) / np.linalg.norm(p)
        worst = max(worst, res, max(np.vdot(w, w).real - 0.1, 0))
    return worst < 1e-8, f"max_kkt_residual={worst:.3e}"


def check_qam_roundtrip():
    rng = np.random.default_rng(6)
    ok = True
    for Q in (1, 2, 3):
        al = QamAlphabet(Q)
        bits = rng.integers(0, 2, 2 * Q * 64)
        ok &= bool(np.array_equal(qam_demap(qam_map(bits, al), al), bits))
    return ok, "alphabets=4,16,64"


def check_admm_ml():
    rng = np.random.default_rng(7)
    al = QamAlphabet(1)
    agree, trials = 0, 100
    sigma2 = al.energy / 10.0
    for _ in range(trials):
        H = (rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))) / np.sqrt(2)
        a = qam_map(rng.integers(0, 2, 8), al)
        y = H @ a + np.sqrt(sigma2 / 2) * (rng.standard_normal(4) + 1j * rng.standard_normal(4))
        x, _ = AdmmSolver(H).run(y)
        agree += bool(np.array_equal(x, ml_oracle(H, y, al)))
    return agree >= 0.9 * trials, f"frame_agreement={agree / trials:.3f}"


def check_admm_noiseless():
    rng = np.random.default_rng(8)
    H = (rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))) / np.sqrt(2) + 3 * np.eye(16)
    a = qam_map(rng.integers(0, 2, 32))
    x, _ = AdmmSolver(H).run(H @ a)
    m = mmse_detect(H, H @ a, 1e-9)
    return bool(np.array_equal(x, a) and np.array_equal(m, a)), "noiseless recovery by ADMM and MMSE"


def check_als_exact():
    worst = 0.0
    for s in range(3):
        rng = np.random.default_rng(40 + s)
        D = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        G = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        true = CascadeFactors(D, G, 1)
        sched = default_schedule(1, 1, 4, L=4, T=8)
        R = simulate_rx_tensor(true, sched, 0.0)
        Dh, Gh, _ = als_estimate(R, sched, 1, 4, rng=rng)
        mse, _ = cascade_mse(true, CascadeFactors(Dh, Gh, 1), sched.Phi)
        worst = max(worst, mse)
    return worst < 1e-10, f"max_cascade_mse={worst:.3e}"


def check_link_shapes():
    links = _links(50, n_t=2, n_r=2, K=3)
    H = cascade(links, stm_phases(links))
    ok = H.shape == (4, 8, 8) and isinstance(links, MimoLinkSet)
    return ok, f"cascade_shape={H.shape}"


CHECKS = [
    ("ddcore.roundtrip", check_roundtrip),
    ("ddcore.energy", check_energy),
    ("ddcore.effective_matrix", check_effective_matrix),
    ("irs.unit_modulus", check_irs_unit_modulus),
    ("irs.coherent_vs_stm", check_irs_phases),
    ("irs.link_shapes", check_link_shapes),
    ("beamform.surrogate_tight", check_surrogate_tight),
    ("beamform.ao_monotone", check_ao_monotone),
    ("beamform.qcqp_kkt", check_qcqp_kkt),
    ("detect.qam_roundtrip", check_qam_roundtrip),
    ("detect.admm_vs_ml", check_admm_ml),
    ("detect.admm_noiseless", check_admm_noiseless),
    ("chanest.als_exact", check_als_exact),
]

# filter aliases: "admm" selects every detector property
ALIASES = {"admm": "detect.", "detector": "detect.", "otfs": "ddcore.", "als": "chanest."}


def select(filter_text=None):
    if not filter_text:
        return list(CHECKS)
    pat = ALIASES.get(filter_text.lower(), filter_text.lower())
    return [(n, f) for n, f in CHECKS if pat in n]


def run_checks(filter_text=None):
    """Run the selected checks; returns a list of (name, passed, detail)."""
    out = []
    for name, fn in select(filter_text):
        try:
            ok, detail = fn()
        except Exception as e:  # a crash is a failed property, reported by name
            ok, detail = False, f"error={type(e).__name__}: {e}"
        out.append((name, bool(ok), detail))
    return out
