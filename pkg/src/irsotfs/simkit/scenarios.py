"""Monte-Carlo scenarios: sum rate, BER, ADMM convergence, sweeps and channel-estimation MSE.

Seeding: the channel of trial t is drawn from ``SeedSequence([seed, t])``
(shared by every case and x-point, so case comparisons are paired), while
case- or SNR-specific randomness (random IRS phases, pilots noise, data
bits and AWGN) uses streams keyed additionally by the cell.
"""

from dataclasses import replace

import numpy as np

from .. import beamform as bfm
from ..chanest import CascadeFactors, als_estimate, cascade_mse, default_schedule, frame_factors, simulate_rx_tensor
from ..channel import ChannelProfile
from ..ddcore import GridDims, effective_dd_matrix
from ..detect import AdmmSolver, QamAlphabet, mmse_detect, qam_demap, qam_map, quantize
from ..irs import IrsPanel, MimoLinkSet, cascade, coherent_phases, stm_phases
from .links import LinkSpec, sample_links, unit_gains
from .pool import run_tasks, task_rng
from .results import ResultTable, summarize

CASE_CODES = {"ofdm": 99}

# ---------------------------------------------------------------- helpers


def case_code(case):
    return CASE_CODES.get(case, case)


def snr_linear(snr_db):
    return 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)


def noise_variance(snr_db, symbol_energy=1.0):
    """sigma^2 = E|a|^2 / SNR."""
    return symbol_energy / snr_linear(snr_db)


def link_gains(cfg, K, ue=None):
    if cfg.gain_mode == "unit":
        return unit_gains(K)
    return cfg.geometry.link_gains(ue)


def draw_links(cfg, trial, K=None, ue=None, profile=None, dims=None, n_t=None, n_r=None):
    K = cfg.K if K is None else K
    spec = LinkSpec(
        n_t=cfg.n_t if n_t is None else n_t,
        n_r=cfg.n_r if n_r is None else n_r,
        K=K,
        shared_paths=cfg.shared_paths,
        gains=link_gains(cfg, K, ue),
    )
    return sample_links(task_rng(cfg.seed, trial), profile or cfg.channel, dims or cfg.grid, spec)


def without_direct(links):
    return MimoLinkSet(links.dims, links.n_t, links.n_r, links.K, None, links.bs_irs, links.irs_ue)


def without_irs(links):
    return MimoLinkSet(links.dims, links.n_t, links.n_r, links.K, links.direct, None, None)


def fractional_profile(profile):
    return replace(profile, fractional_doppler=True)


def case_channel(cfg, case, links, trial, frac_links=None):
    """Per-symbol time-domain channel (N, N_r M, N_t M) and the panel used for a case.

    Returns (H, panel, link set) where the link set is the one the channel
    was assembled from.
    """
    sum_rate_like = cfg.scenario in ("sum_rate", "irs_sweep", "distance_sweep")
    if sum_rate_like:
        direct_for = {1: True, 2: True, 3: True, 4: False, 5: True, 6: False, 7: True, "ofdm": True}
    else:
        direct_for = {1: False, 2: False, 3: False, 4: False, 5: True, 6: False, "ofdm": False}
    use = links if direct_for[case] else without_direct(links)
    if case == 7:
        use = frac_links
    if sum_rate_like and case == 5:
        return use.Hd.copy(), None, use
    random_phases = case in (2,) if sum_rate_like else case in (2, 4)
    if random_phases:
        # one random draw per trial, shared by every random-phase case
        panel = IrsPanel.random(task_rng(cfg.seed, trial, 2), use.K)
    elif sum_rate_like and case == 3:
        panel = coherent_phases(use)
    else:
        panel = stm_phases(use, include_direct=cfg.include_direct and use.direct is not None)
    return cascade(use, panel), panel, use


def power_budget(cfg, dims, n_s):
    return cfg.beamforming.power if cfg.beamforming.power is not None else float(dims.N * dims.M * n_s)


def optimize_precoder(cfg, Hv, sigma2, n_t, n_s, dims, rng=None):
    P = power_budget(cfg, dims, n_s)
    if not cfg.beamforming.enabled:
        return bfm.Beamformer.identity(dims.N, dims.M, n_t, n_s, P)
    bf, _ = bfm.ao_beamform(
        Hv,
        sigma2,
        P,
        tol=cfg.beamforming.tol,
        max_iter=cfg.beamforming.max_iter,
        n_t=n_t,
        n_s=n_s,
        init=cfg.beamforming.init,
        rng=rng,
        M_CP=dims.M_CP,
    )
    return bf


def estimate_cascade(cfg, links, panel, sigma2, rng):
    """Cascade D_n Theta G_n rebuilt from per-symbol ALS estimates of (D_n, G_n).

    Each OFDM symbol is treated as its own estimation frame with its own
    pilot blocks, which keeps the least-squares systems at size K*M.
    """
    d = links.dims
    N, M, K = d.N, d.M, links.K
    L = cfg.als.L if cfg.als.L is not None else max(K, -(-K // links.n_r))
    T = cfg.als.T if cfg.als.T is not None else links.n_t * M
    sched = default_schedule(K, links.n_t, M, L=L, T=T)
    theta = np.repeat(panel.coefficients, M)
    H = np.empty((N, links.n_r * M, links.n_t * M), complex)
    for n in range(N):
        true = CascadeFactors(links.D[n], links.G[n], K)
        R = simulate_rx_tensor(true, sched, sigma2, rng)
        Dh, Gh, _ = als_estimate(R, sched, K, M, max_sweeps=cfg.als.max_sweeps, tol=cfg.als.tol, rng=rng)
        H[n] = (Dh * theta) @ Gh
    return H


def ofdm_view(Hv, n_r):
    """Frequency-domain receive rows: (N, R, M*N_t) -> (N, M*N_r, M*N_t) subcarrier-major."""
    N, R, C = Hv.shape
    M = R // n_r
    Hf = np.fft.fft(Hv.reshape(N, n_r, M, C), axis=2, norm="ortho")
    return np.swapaxes(Hf, 1, 2).reshape(N, M * n_r, C)


def ofdm_blocks(Hf, n_r, n_t):
    N, R, C = Hf.shape
    M = R // n_r
    return Hf.reshape(N, M, n_r, M, n_t)


def ofdm_rate(bf, Hf, sigma2, n_r, M_CP=0):
    """Per-subcarrier rate with inter-carrier interference treated as noise."""
    N, M = bf.N, bf.M
    B = ofdm_blocks(Hf, n_r, bf.n_t)  # (N, j_rx, r, i_tx, t)
    S = np.einsum("njrit,nits->njirs", B, bf.V, optimize=True)  # contribution of carrier i at j
    total = 0.0
    idx = np.arange(M)
    for n in range(N):
        contrib = S[n]  # (j, i, r, s)
        cov = np.einsum("jirs,jiqs->jirq", contrib, contrib.conj())
        sig = cov[idx, idx]
        interf = cov.sum(axis=1) - sig + sigma2 * np.eye(n_r)
        _, ld_all = np.linalg.slogdet(interf + sig)
        _, ld_int = np.linalg.slogdet(interf)
        total += float(np.sum(ld_all - ld_int))
    return total / np.log(2) / (M + M_CP)


def block_diagonal_part(Hf, n_r, n_t):
    B = ofdm_blocks(Hf, n_r, n_t)
    out = np.zeros_like(B)
    idx = np.arange(B.shape[1])
    out[:, idx, :, idx, :] = B[:, idx, :, idx, :]
    return out.reshape(Hf.shape)


# ---------------------------------------------------------------- sum rate


def _rate_for_case(cfg, case, links, trial, snr_db, frac_links=None, snr_index=0, H_cache=None):
    dims = links.dims
    n_t, n_s = links.n_t, links.n_r
    sigma2 = float(noise_variance(snr_db))
    if H_cache is not None and case in H_cache:
        H, panel, use = H_cache[case]
    else:
        H, panel, use = case_channel(cfg, case, links, trial, frac_links)
        if H_cache is not None:
            H_cache[case] = (H, panel, use)
    Hv = bfm.precoder_view(H, n_t)
    bf_rng = task_rng(cfg.seed, trial, case_code(case), snr_index, 7)
    if case == "ofdm":
        Hf = ofdm_view(Hv, links.n_r)
        bf = optimize_precoder(cfg, block_diagonal_part(Hf, links.n_r, n_t), sigma2, n_t, n_s, dims, bf_rng)
        return ofdm_rate(bf, Hf, sigma2, links.n_r, dims.M_CP)
    if case == 6:
        est_rng = task_rng(cfg.seed, trial, 6, snr_index)
        H_est = estimate_cascade(cfg, use, panel, sigma2, est_rng)
        bf = optimize_precoder(cfg, bfm.precoder_view(H_est, n_t), sigma2, n_t, n_s, dims, bf_rng)
    else:
        bf = optimize_precoder(cfg, Hv, sigma2, n_t, n_s, dims, bf_rng)
    return bfm.sum_rate(bf, Hv, sigma2, dims.M_CP)


def _sum_rate_task(args):
    cfg, trial = args
    links = draw_links(cfg, trial)
    frac = None
    if 7 in cfg.cases:
        frac = draw_links(cfg, trial, profile=fractional_profile(cfg.channel))
    out = np.empty((len(cfg.snr_db), len(cfg.cases)))
    cache = {}
    for i, s in enumerate(cfg.snr_db):
        for j, c in enumerate(cfg.cases):
            out[i, j] = _rate_for_case(cfg, c, links, trial, s, frac, i, cache)
    return out


def _table(x_name, x, cases, samples, meta):
    """samples: (trials, len(x), len(cases))."""
    mean, se, n = summarize(np.moveaxis(np.asarray(samples), 0, -1))
    return ResultTable(x_name, list(x), list(cases), mean, se, n, meta)


def run_sum_rate(cfg):
    _require(cfg, "sum_rate")
    res = run_tasks(_sum_rate_task, [(cfg, t) for t in range(cfg.trials)], cfg.workers)
    return _table("snr_db", cfg.snr_db, cfg.cases, res, {"metric": "sum_rate_bps_hz"})


def _irs_sweep_task(args):
    cfg, trial = args
    s = cfg.snr_db[0]
    out = np.empty((len(cfg.K_values), len(cfg.cases)))
    for i, K in enumerate(cfg.K_values):
        links = draw_links(cfg, trial, K=K)
        frac = draw_links(cfg, trial, K=K, profile=fractional_profile(cfg.channel)) if 7 in cfg.cases else None
        for j, c in enumerate(cfg.cases):
            out[i, j] = _rate_for_case(cfg, c, links, trial, s, frac)
    return out


def run_irs_sweep(cfg):
    _require(cfg, "irs_sweep")
    res = run_tasks(_irs_sweep_task, [(cfg, t) for t in range(cfg.trials)], cfg.workers)
    return _table("K", cfg.K_values, cfg.cases, res, {"metric": "sum_rate_bps_hz", "snr_db": cfg.snr_db[0]})


def ue_position(cfg, x):
    ue = cfg.geometry.ue
    return (float(x), ue[1], ue[2])


def _distance_task(args):
    cfg, trial = args
    s = cfg.snr_db[0]
    out = np.empty((len(cfg.distances), len(cfg.cases)))
    for i, x in enumerate(cfg.distances):
        ue = ue_position(cfg, x)
        links = draw_links(cfg, trial, ue=ue)
        frac = draw_links(cfg, trial, ue=ue, profile=fractional_profile(cfg.channel)) if 7 in cfg.cases else None
        for j, c in enumerate(cfg.cases):
            out[i, j] = _rate_for_case(cfg, c, links, trial, s, frac)
    return out


def run_distance_sweep(cfg):
    """Sum rate versus UE position x along the line (x, ue_y, ue_z).

    Gains are normalized by the direct link at ``geometry.reference_ue``
    (default: the configured UE), which stays fixed across the sweep.
    """
    _require(cfg, "distance_sweep")
    if cfg.geometry.reference_ue is None:
        cfg = replace(cfg, geometry=replace(cfg.geometry, reference_ue=cfg.geometry.ue))
    res = run_tasks(_distance_task, [(cfg, t) for t in range(cfg.trials)], cfg.workers)
    return _table("distance_m", cfg.distances, cfg.cases, res, {"metric": "sum_rate_bps_hz", "snr_db": cfg.snr_db[0]})


# ---------------------------------------------------------------- detection


def dd_system(cfg, case, links, trial, snr_db, snr_index):
    """Effective DD matrix seen by the data, and the one the detector believes.

    Returns (H_true, H_detector, n_s).
    """
    dims = links.dims
    H, panel, use = case_channel(cfg, case, links, trial)
    n_t = links.n_t
    sigma2_design = float(noise_variance(snr_db))
    H_det_time = H
    if case == 6:
        H_det_time = estimate_cascade(cfg, use, panel, sigma2_design, task_rng(cfg.seed, trial, 6, snr_index))
    if cfg.beamforming.enabled:
        n_s = links.n_r
        bf = optimize_precoder(cfg, bfm.precoder_view(H_det_time, n_t), sigma2_design, n_t, n_s, dims)
        T = bfm.time_precoder(bf)
        H, H_det_time = H @ T, H_det_time @ T
    else:
        n_s = n_t
    He = effective_dd_matrix(H, links.n_r, n_s)
    Hd = He if case != 6 else effective_dd_matrix(H_det_time, links.n_r, n_s)
    return He, Hd, n_s


def ofdm_system(links, H_time):
    """Exact frequency-domain block-diagonal matrix (with ICI) and its ICI-free part."""
    n_t, n_r = links.n_t, links.n_r
    Hf = ofdm_view(bfm.precoder_view(H_time, n_t), n_r)
    diag = block_diagonal_part(Hf, n_r, n_t)
    return _blkdiag(Hf), diag


def _blkdiag(stack):
    N, R, C = stack.shape
    out = np.zeros((N * R, N * C), complex)
    for n in range(N):
        out[n * R:(n + 1) * R, n * C:(n + 1) * C] = stack[n]
    return out


def _frames(rng, n_sym, F, alphabet):
    bits = rng.integers(0, 2, size=(F, n_sym * alphabet.bits_per_symbol))
    syms = np.stack([qam_map(b, alphabet) for b in bits], axis=1)
    return bits, syms


def _awgn(rng, shape, sigma2):
    return np.sqrt(sigma2 / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _bit_errors(bits, est, alphabet):
    dec = np.stack([qam_demap(est[:, f], alphabet) for f in range(est.shape[1])])
    return int(np.sum(dec != bits))


def _detector_for(case):
    return "mmse" if case in (3, 4) else "admm"


def _ber_channel_task(args):
    """Errors for one channel realization at one SNR, for the requested cases."""
    cfg, c, snr_index, cases = args
    snr_db = cfg.snr_db[snr_index]
    alphabet = QamAlphabet(cfg.Q)
    links = draw_links(cfg, c)
    F = cfg.ber.frames_per_channel
    sigma2 = float(noise_variance(snr_db, alphabet.energy))
    out = {}
    shared = {}
    for case in cases:
        rng = task_rng(cfg.seed, c, 1000 + snr_index)  # identical bits/noise for every case
        if case == "ofdm":
            H, _, _ = case_channel(cfg, 1, links, c)
            Hx, Hd = ofdm_system(links, H)
            _bits, syms = _frames(rng, Hx.shape[1], F, alphabet)
            y = Hx @ syms + _awgn(rng, (Hx.shape[0], F), sigma2)
            dec = _per_carrier_mmse(Hd, y, sigma2, links, alphabet)
            out[case] = (_bit_errors(_bits, dec, alphabet), _bits.size, F)
            continue
        key = (case in (1, 3), case in (2, 4))
        if key in shared and case in (1, 2, 3, 4):
            He, Hdet, _ = shared[key]
        else:
            He, Hdet, n_s = dd_system(cfg, case, links, c, snr_db, snr_index)
            shared[key] = (He, Hdet, n_s)
        bits, syms = _frames(rng, He.shape[1], F, alphabet)
        y = He @ syms + _awgn(rng, (He.shape[0], F), sigma2)
        if _detector_for(case) == "mmse":
            est = mmse_detect(Hdet, y, sigma2, alphabet)
        else:
            est, _ = AdmmSolver(Hdet, cfg.detector, alphabet).run(y)
        out[case] = (_bit_errors(bits, est, alphabet), bits.size, F)
    return out


def _per_carrier_mmse(Hd_stack, y, sigma2, links, alphabet):
    """One-tap (per-subcarrier block) MMSE on the ICI-free frequency channel."""
    n_r, n_t = links.n_r, links.n_t
    N, R, C = Hd_stack.shape
    M = R // n_r
    B = ofdm_blocks(Hd_stack, n_r, n_t)
    Y = y.reshape(N, M, n_r, -1)
    est = np.empty((N, M, n_t, y.shape[1]), complex)
    for n in range(N):
        for j in range(M):
            est[n, j] = mmse_detect(B[n, j, :, j, :], Y[n, j], sigma2, alphabet)
    return est.reshape(N * M * n_t, -1)


def run_ber(cfg):
    """BER per SNR and case with error-target / frame-budget termination.

    Channels are processed in fixed-size batches in index order, and a case
    stops once it has ``target_errors`` errors (and at least ``min_frames``
    frames) or reaches ``max_frames``; the stopping point therefore does not
    depend on the worker count.
    """
    _require(cfg, "ber")
    bc = cfg.ber
    n_x, n_c = len(cfg.snr_db), len(cfg.cases)
    errs = np.zeros((n_x, n_c))
    nbits = np.zeros((n_x, n_c))
    frames = np.zeros((n_x, n_c), int)
    for i in range(n_x):
        active = list(cfg.cases)
        c0 = 0
        while active:
            batch = [(cfg, c, i, tuple(active)) for c in range(c0, c0 + bc.batch_channels)]
            for res in run_tasks(_ber_channel_task, batch, cfg.workers):
                for case in list(active):
                    j = cfg.cases.index(case)
                    if frames[i, j] >= bc.max_frames or (
                        errs[i, j] >= bc.target_errors and frames[i, j] >= bc.min_frames
                    ):
                        continue
                    e, b, f = res[case]
                    errs[i, j] += e
                    nbits[i, j] += b
                    frames[i, j] += f
            c0 += bc.batch_channels
            active = [
                case
                for case in active
                if not (
                    frames[i, cfg.cases.index(case)] >= bc.max_frames
                    or (
                        errs[i, cfg.cases.index(case)] >= bc.target_errors
                        and frames[i, cfg.cases.index(case)] >= bc.min_frames
                    )
                )
            ]
    ber = errs / np.maximum(nbits, 1)
    se = np.sqrt(ber * (1 - ber) / np.maximum(nbits, 1))
    meta = {"metric": "ber", "bit_errors": errs.astype(int).tolist(), "bits": nbits.astype(int).tolist()}
    return ResultTable("snr_db", cfg.snr_db, cfg.cases, ber, se, frames, meta)


def _convergence_task(args):
    cfg, c = args
    snr_db = cfg.snr_db[0]
    alphabet = QamAlphabet(cfg.Q)
    links = draw_links(cfg, c)
    F = cfg.ber.frames_per_channel
    sigma2 = float(noise_variance(snr_db, alphabet.energy))
    iters = cfg.iterations
    errs = np.zeros((iters + 1, len(cfg.cases)))
    nbits = 0
    cache = {}
    for j, case in enumerate(cfg.cases):
        rng = task_rng(cfg.seed, c, 1000)
        key = (case in (1, 3), case in (2, 4))
        if key not in cache or case not in (1, 2, 3, 4):
            cache[key] = dd_system(cfg, case, links, c, snr_db, 0)
        He, Hdet, _ = cache[key]
        bits, syms = _frames(rng, He.shape[1], F, alphabet)
        y = He @ syms + _awgn(rng, (He.shape[0], F), sigma2)
        nbits = bits.size
        if _detector_for(case) == "mmse":
            errs[:, j] = _bit_errors(bits, mmse_detect(Hdet, y, sigma2, alphabet), alphabet)
            continue
        errs[0, j] = _bit_errors(bits, quantize(np.zeros_like(syms), alphabet), alphabet)

        def record(i, est, j=j, bits=bits):
            errs[i, j] = _bit_errors(bits, quantize(est, alphabet), alphabet)

        solver = AdmmSolver(Hdet, cfg.detector, alphabet)
        _, st = solver.run(y, callback=record, max_iter=iters)
        # frames stop updating once converged; later iterations repeat the final decisions
        errs[st.i + 1:, j] = errs[st.i, j]
    return errs, nbits


def run_convergence(cfg):
    """BER after each ADMM iteration (0 = initial point) at ``snr_db[0]``."""
    _require(cfg, "convergence")
    res = run_tasks(_convergence_task, [(cfg, c) for c in range(cfg.trials)], cfg.workers)
    errs = sum(r[0] for r in res)
    nbits = sum(r[1] for r in res)
    ber = errs / nbits
    se = np.sqrt(ber * (1 - ber) / nbits)
    x = list(range(cfg.iterations + 1))
    counts = np.full(ber.shape, cfg.trials * cfg.ber.frames_per_channel)
    return ResultTable("iteration", x, cfg.cases, ber, se, counts, {"metric": "ber", "snr_db": cfg.snr_db[0]})


# ---------------------------------------------------------------- channel estimation


def mse_label_dims(cfg, mc):
    N = cfg.grid.N if mc.N is None else mc.N
    return GridDims(cfg.grid.M, N, cfg.grid.M_CP)


def mse_profile(cfg, mc):
    base = cfg.channel
    frac = mc.fractional_doppler
    return ChannelProfile(
        model=mc.model,
        max_delay_tap=base.max_delay_tap,
        max_doppler_tap=base.max_doppler_tap,
        fractional_doppler=frac,
        delta_f=base.delta_f,
        f_c=base.f_c,
        ue_speed=base.ue_speed,
    )


def _mse_task(args):
    cfg, trial = args
    out = np.empty((len(cfg.snr_db), len(cfg.mse_configs)))
    for j, mc in enumerate(cfg.mse_configs):
        dims = mse_label_dims(cfg, mc)
        links = draw_links(cfg, trial, profile=mse_profile(cfg, mc), dims=dims, n_t=mc.n_t, n_r=mc.n_r)
        links = without_direct(links)
        true = frame_factors(links)
        NM = dims.N * dims.M
        L = cfg.als.L if cfg.als.L is not None else max(cfg.K, -(-cfg.K // mc.n_r))
        T = cfg.als.T if cfg.als.T is not None else mc.n_t * NM
        sched = default_schedule(cfg.K, mc.n_t, NM, L=L, T=T)
        for i, s in enumerate(cfg.snr_db):
            rng = task_rng(cfg.seed, trial, 2000 + i, j)
            sigma2 = float(noise_variance(s))
            R = simulate_rx_tensor(true, sched, sigma2, rng)
            Dh, Gh, _ = als_estimate(R, sched, cfg.K, NM, max_sweeps=cfg.als.max_sweeps, tol=cfg.als.tol, rng=rng)
            out[i, j], _ = cascade_mse(true, CascadeFactors(Dh, Gh, cfg.K), sched.Phi)
    return out


def run_mse(cfg):
    _require(cfg, "mse")
    res = run_tasks(_mse_task, [(cfg, t) for t in range(cfg.trials)], cfg.workers)
    labels = [mc.label for mc in cfg.mse_configs]
    return _table("snr_db", cfg.snr_db, labels, res, {"metric": "cascade_mse"})


# ---------------------------------------------------------------- dispatch

RUNNERS = {
    "sum_rate": run_sum_rate,
    "ber": run_ber,
    "convergence": run_convergence,
    "irs_sweep": run_irs_sweep,
    "distance_sweep": run_distance_sweep,
    "mse": run_mse,
}


def _require(cfg, scenario):
    if cfg.scenario != scenario:
        raise ValueError(f"config scenario is {cfg.scenario!r}, expected {scenario!r}")


def run_experiment(cfg):
    table = RUNNERS[cfg.scenario](cfg)
    table.metadata.setdefault("scenario", cfg.scenario)
    return table
