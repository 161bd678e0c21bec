import numpy as np
import pytest

from irsotfs.channel import (
    EVA_PDP_DB,
    ChannelProfile,
    PathTap,
    TapList,
    apply_taps,
    channel_matrices,
    channel_matrix,
    delay_matrix,
    doppler_matrix,
    link_matrices,
    sample_bpm,
    sample_eva,
)
from irsotfs.ddcore import GridDims, TimeFrame, add_cp


def per_sample_oracle(taps, core):
    """y[i] = sum_q h_q exp(j2pi nu_q (i - l_q) / (NM)) s[i - l_q] on the CP-extended stream."""
    d = taps.dims
    s = add_cp(core, d.M_CP).reshape(-1)
    y = np.zeros_like(s)
    for i in range(s.size):
        for p in taps.paths:
            if i - p.delay_tap >= 0:
                ph = np.exp(2j * np.pi * p.doppler * (i - p.delay_tap) / (d.N * d.M))
                y[i] += p.gain * ph * s[i - p.delay_tap]
    return y.reshape(d.N, d.M + d.M_CP)[:, d.M_CP:]


class TestDelayMatrix:
    def test_zero_shift_is_identity(self):
        np.testing.assert_array_equal(delay_matrix(0, 5), np.eye(5))

    def test_forward_cyclic_shift(self):
        np.testing.assert_array_equal(delay_matrix(1, 4) @ np.array([1, 2, 3, 4]), [4, 1, 2, 3])

    def test_group_property(self):
        np.testing.assert_array_equal(delay_matrix(3, 4) @ delay_matrix(2, 4), delay_matrix(1, 4))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            delay_matrix(4, 4)
        with pytest.raises(ValueError):
            delay_matrix(-1, 4)


class TestDopplerMatrix:
    def test_zero_doppler_identity(self):
        np.testing.assert_allclose(doppler_matrix(3, 0, 0.0, 2, GridDims(4, 4, 2)), np.eye(4), atol=1e-15)

    def test_unit_modulus(self):
        D = doppler_matrix(2, 3, 0.37, 1, GridDims(8, 4, 3))
        assert np.abs(np.abs(np.diag(D)) - 1).max() < 1e-14
        assert np.count_nonzero(D - np.diag(np.diag(D))) == 0

    def test_hand_value(self):
        D = doppler_matrix(1, 1, 0.0, 0, GridDims(2, 2, 0))
        np.testing.assert_allclose(np.diag(D), [-1, -1j], atol=1e-15)


class TestChannelMatrix:
    def test_single_unit_path_identity(self):
        dims = GridDims(4, 3, 1)
        taps = TapList([PathTap(1.0, 0, 0)], dims)
        for n in range(3):
            np.testing.assert_allclose(channel_matrix(taps, n), np.eye(4), atol=1e-15)

    def test_pure_delay(self):
        dims = GridDims(4, 2, 1)
        h = 0.5 - 1.5j
        taps = TapList([PathTap(h, 1, 0)], dims)
        np.testing.assert_allclose(channel_matrix(taps, 1), h * delay_matrix(1, 4), atol=1e-15)

    def test_matches_per_sample_oracle(self):
        rng = np.random.default_rng(0)
        dims = GridDims(4, 3, 3)
        taps = TapList([PathTap(complex(*rng.standard_normal(2)), 1, 2, -0.2),
                        PathTap(complex(*rng.standard_normal(2)), 3, 1, 0.45)], dims)
        core = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        y = np.einsum("nab,nb->na", channel_matrices(taps), core)
        np.testing.assert_allclose(y, per_sample_oracle(taps, core), atol=1e-12)
        rx = apply_taps(taps, TimeFrame(dims, add_cp(core, 3)))
        np.testing.assert_allclose(rx.samples, per_sample_oracle(taps, core), atol=1e-12)

    def test_linear_in_gains(self):
        rng = np.random.default_rng(1)
        dims = GridDims(8, 4, 3)
        taps = sample_bpm(rng, ChannelProfile("BPM"), dims)
        c = 2 - 0.5j
        np.testing.assert_allclose(channel_matrices(taps.scaled(c)), c * channel_matrices(taps), atol=1e-13)

    def test_zero_doppler_circulant_and_static(self):
        rng = np.random.default_rng(2)
        dims = GridDims(6, 3, 3)
        taps = TapList([PathTap(complex(*rng.standard_normal(2)), l, 0) for l in (0, 2, 3)], dims)
        H = channel_matrices(taps)
        np.testing.assert_allclose(H[0], H[2], atol=1e-15)
        for i in range(6):
            np.testing.assert_allclose(np.roll(H[0][:, 0], i), H[0][:, i], atol=1e-15)

    def test_link_matrices_match_taplists(self):
        rng = np.random.default_rng(3)
        dims = GridDims(4, 2, 3)
        g = rng.standard_normal((2, 3, 2)) + 1j * rng.standard_normal((2, 3, 2))
        dl = rng.integers(0, 4, (2, 3, 2))
        dp = rng.uniform(-1, 3, (2, 3, 2))
        H = link_matrices(g, dl, dp, dims)
        for r in range(2):
            for c in range(3):
                paths = []
                for q in range(2):
                    k = int(np.rint(dp[r, c, q]))
                    paths.append(PathTap(g[r, c, q], int(dl[r, c, q]), k, float(dp[r, c, q] - k)))
                ref = channel_matrices(TapList(paths, dims))
                np.testing.assert_allclose(H[:, r, :, c, :], ref, atol=1e-13)

    def test_expected_energy(self):
        rng = np.random.default_rng(4)
        dims = GridDims(8, 2, 3)
        prof = ChannelProfile("BPM")
        e = np.mean([np.linalg.norm(channel_matrix(sample_bpm(rng, prof, dims), 0)) ** 2 for _ in range(10000)])
        assert abs(e / dims.M - 1) < 0.02

    def test_tap_validation(self):
        with pytest.raises(ValueError):
            TapList([PathTap(1.0, 4)], GridDims(4, 2))
        with pytest.raises(ValueError):
            TapList([], GridDims(4, 2))
        with pytest.raises(ValueError):
            PathTap(1.0, 0, 0, 0.7)

    def test_apply_needs_long_enough_prefix(self):
        dims = GridDims(4, 2, 1)
        taps = TapList([PathTap(1.0, 2)], dims)
        with pytest.raises(ValueError):
            apply_taps(taps, TimeFrame(dims, np.zeros((2, 5))))


class TestSampling:
    def test_bpm_deterministic(self):
        dims = GridDims(8, 8, 3)
        a = sample_bpm(np.random.default_rng(9), ChannelProfile("BPM"), dims)
        b = sample_bpm(np.random.default_rng(9), ChannelProfile("BPM"), dims)
        assert a == b

    def test_bpm_statistics(self):
        rng = np.random.default_rng(5)
        dims = GridDims(8, 8, 3)
        prof = ChannelProfile("BPM")
        n = 100_000
        power = np.empty(n)
        delays = np.empty((n, 4), int)
        dopp = np.empty((n, 4))
        for i in range(n):
            t = sample_bpm(rng, prof, dims)
            power[i] = np.sum(np.abs(t.gains) ** 2)
            delays[i] = t.delays
            dopp[i] = t.dopplers
        assert abs(power.mean() - 1) < 0.01
        freq = np.bincount(delays.ravel(), minlength=4) / delays.size
        assert np.all(np.abs(freq - 0.25) < 0.02)
        assert np.all(dopp == np.rint(dopp))  # integer taps by default

    def test_bpm_fractional_option(self):
        prof = ChannelProfile("BPM", fractional_doppler=True)
        t = sample_bpm(np.random.default_rng(0), prof, GridDims(8, 8, 3))
        assert np.any(t.dopplers != np.rint(t.dopplers))

    def test_eva_delay_taps(self):
        prof = ChannelProfile("EVA")
        taps = prof.eva_delay_taps(512)
        assert taps[0] == 0
        assert taps[-1] == 19

    def test_eva_rejects_small_grid(self):
        prof = ChannelProfile("EVA", delta_f=1e6)
        with pytest.raises(ValueError):
            prof.eva_delay_taps(8)

    def test_eva_pdp_and_doppler(self):
        rng = np.random.default_rng(6)
        dims = GridDims(64, 8, 8)
        prof = ChannelProfile("EVA")
        n = 100_000
        p = np.zeros(9)
        numax = prof.max_doppler_hz() * dims.N / prof.delta_f
        top = 0.0
        for _ in range(n):
            t = sample_eva(rng, prof, dims)
            p += np.abs(t.gains) ** 2
            top = max(top, t.dopplers.max())
            assert t.dopplers.min() >= 0
        w = 10 ** (EVA_PDP_DB / 10)
        w /= w.sum()
        assert np.all(np.abs(p / n - w) / w < 0.02)
        assert top <= numax

    def test_eva_integer_option(self):
        prof = ChannelProfile("EVA", fractional_doppler=False)
        t = sample_eva(np.random.default_rng(1), prof, GridDims(64, 64, 8))
        assert np.all(t.dopplers == np.rint(t.dopplers))

    def test_eva_speed_override(self):
        prof = ChannelProfile("EVA")
        t = sample_eva(np.random.default_rng(2), prof, GridDims(64, 8, 8), ue_speed=0.0)
        assert np.all(t.dopplers == 0)

    def test_profile_validation(self):
        with pytest.raises(ValueError):
            ChannelProfile("TDL")
        assert ChannelProfile("EVA").num_paths == 9
        assert abs(ChannelProfile("EVA").pdp_weights().sum() - 1) < 1e-12
