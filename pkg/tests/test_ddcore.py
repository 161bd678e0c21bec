import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irsotfs.channel import PathTap, TapList, apply_taps, channel_matrices
from irsotfs.ddcore import (
    DdFrame,
    GridDims,
    TimeFrame,
    channel_apply,
    dft_matrix,
    effective_dd_matrix,
    isfft,
    isfft_grid,
    otfs_demodulate,
    otfs_modulate,
    sfft,
    sfft_grid,
    unvec,
    vec,
)


def isfft_oracle(A):
    """Direct double sum X[m, n] = 1/sqrt(MN) sum_{l,k} A[l, k] e^{j2pi(nk/N - ml/M)}."""
    M, N = A.shape
    X = np.zeros((M, N), complex)
    for m in range(M):
        for n in range(N):
            for l in range(M):
                for k in range(N):
                    X[m, n] += A[l, k] * np.exp(2j * np.pi * (n * k / N - m * l / M))
    return X / np.sqrt(M * N)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def qpsk(rng, M, N):
    return (2 * rng.integers(0, 2, (M, N)) - 1) + 1j * (2 * rng.integers(0, 2, (M, N)) - 1)


class TestGridDims:
    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            GridDims(0, 4)
        with pytest.raises(ValueError):
            GridDims(4, 4, 4)
        with pytest.raises(TypeError):
            GridDims(4.0, 4)

    def test_frame_shape_checked(self):
        with pytest.raises(ValueError):
            DdFrame(GridDims(4, 2), np.zeros((2, 4)))
        with pytest.raises(ValueError):
            TimeFrame(GridDims(4, 2, 1), np.zeros((2, 6)))


class TestTransforms:
    def test_zero_grid(self):
        assert np.all(isfft(DdFrame(GridDims(3, 5), np.zeros((3, 5)))) == 0)

    def test_impulse_spreads_evenly(self):
        A = np.zeros((2, 2))
        A[0, 0] = 1
        np.testing.assert_allclose(isfft_grid(A), np.full((2, 2), 0.5), atol=1e-15)

    def test_constant_maps_to_impulse(self):
        out = sfft(np.full((2, 2), 0.5)).grid
        expect = np.zeros((2, 2))
        expect[0, 0] = 1
        np.testing.assert_allclose(out, expect, atol=1e-15)

    def test_matches_double_sum(self):
        rng = np.random.default_rng(0)
        A = crandn(rng, 4, 4)
        np.testing.assert_allclose(isfft_grid(A), isfft_oracle(A), atol=1e-12)
        B = crandn(rng, 8, 4)
        np.testing.assert_allclose(isfft_grid(B), isfft_oracle(B), atol=1e-12)

    def test_inverse_pair(self):
        rng = np.random.default_rng(1)
        A = crandn(rng, 8, 4)
        np.testing.assert_allclose(sfft_grid(isfft_grid(A)), A, atol=1e-12)
        np.testing.assert_allclose(isfft_grid(sfft_grid(A)), A, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
    def test_unitary_and_linear(self, M, N, seed):
        rng = np.random.default_rng(seed)
        A, B = crandn(rng, M, N), crandn(rng, M, N)
        c = complex(rng.standard_normal(), rng.standard_normal())
        assert abs(np.linalg.norm(isfft_grid(A)) - np.linalg.norm(A)) < 1e-12 * max(1, np.linalg.norm(A))
        np.testing.assert_allclose(isfft_grid(A + c * B), isfft_grid(A) + c * isfft_grid(B), atol=1e-12)

    def test_vec_is_column_major(self):
        A = np.arange(6).reshape(3, 2)
        assert list(vec(A)) == [0, 2, 4, 1, 3, 5]
        np.testing.assert_array_equal(unvec(vec(A), 3, 2), A)

    def test_dft_matrix_unitary(self):
        F = dft_matrix(5)
        np.testing.assert_allclose(F @ F.conj().T, np.eye(5), atol=1e-14)


class TestModulation:
    def test_zero_frame(self):
        tx = otfs_modulate(DdFrame(GridDims(4, 4, 2), np.zeros((4, 4))))
        assert tx.samples.shape == (4, 6) and np.all(tx.samples == 0)

    def test_single_column_time_samples(self):
        # one symbol: the DD column is sent through the ISFFT and the per-symbol IDFT,
        # which cancel along delay, so the samples equal the DD column itself
        tx = otfs_modulate(DdFrame(GridDims(2, 1, 0), np.array([[1.0], [0.0]])))
        np.testing.assert_allclose(tx.samples[0], [1.0, 0.0], atol=1e-15)

    def test_cyclic_prefix_copies_tail(self):
        rng = np.random.default_rng(2)
        tx = otfs_modulate(DdFrame(GridDims(8, 3, 3), crandn(rng, 8, 3)))
        np.testing.assert_array_equal(tx.samples[:, :3], tx.samples[:, -3:])

    @settings(max_examples=20, deadline=None)
    @given(st.sampled_from([(4, 4), (8, 4), (16, 8), (32, 32)]), st.integers(0, 3), st.integers(0, 2**32 - 1))
    def test_round_trip(self, shape, cp, seed):
        M, N = shape
        rng = np.random.default_rng(seed)
        dims = GridDims(M, N, cp)
        A = qpsk(rng, M, N)
        out = otfs_demodulate(otfs_modulate(DdFrame(dims, A)))
        assert np.abs(out.grid - A).max() < 1e-10

    def test_identity_channel_apply(self):
        rng = np.random.default_rng(3)
        dims = GridDims(8, 4, 2)
        A = qpsk(rng, 8, 4)
        taps = TapList([PathTap(1.0, 0, 0)], dims)
        rx = channel_apply(otfs_modulate(DdFrame(dims, A)), channel_matrices(taps))
        assert np.abs(otfs_demodulate(rx).grid - A).max() < 1e-10

    def test_impulse_through_identity(self):
        dims = GridDims(4, 4)
        A = np.zeros((4, 4))
        A[1, 2] = 1
        rx = channel_apply(otfs_modulate(DdFrame(dims, A)), np.tile(np.eye(4), (4, 1, 1)))
        np.testing.assert_allclose(otfs_demodulate(rx).grid, A, atol=1e-14)

    def test_channel_apply_shape_checked(self):
        dims = GridDims(4, 2)
        with pytest.raises(ValueError):
            channel_apply(otfs_modulate(DdFrame(dims, np.zeros((4, 2)))), np.zeros((2, 3, 3)))

    def test_raw_demodulate_needs_dims(self):
        with pytest.raises(ValueError):
            otfs_demodulate(np.zeros((2, 4)))


class TestEffectiveMatrix:
    def test_identity_and_scaled_identity(self):
        N, M = 3, 4
        eye = np.tile(np.eye(M), (N, 1, 1))
        np.testing.assert_allclose(effective_dd_matrix(eye), np.eye(N * M), atol=1e-14)
        c = 0.3 - 2j
        np.testing.assert_allclose(effective_dd_matrix(c * eye), c * np.eye(N * M), atol=1e-14)

    def test_frobenius_norm_preserved(self):
        rng = np.random.default_rng(4)
        H = crandn(rng, 4, 6, 6)
        assert abs(np.linalg.norm(effective_dd_matrix(H)) - np.linalg.norm(H)) < 1e-12

    def test_matches_pipeline_random_blocks(self):
        rng = np.random.default_rng(5)
        dims = GridDims(2, 2)
        H = crandn(rng, 2, 2, 2)
        He = effective_dd_matrix(H)
        for _ in range(20):
            A = crandn(rng, 2, 2)
            y = otfs_demodulate(channel_apply(otfs_modulate(DdFrame(dims, A)), H)).grid
            assert np.abs(He @ vec(A) - vec(y)).max() < 1e-10

    def test_matches_sample_domain_channel(self):
        rng = np.random.default_rng(6)
        dims = GridDims(4, 4, 3)
        paths = [PathTap(complex(*rng.standard_normal(2)), int(rng.integers(0, 4)), int(rng.integers(0, 4)), 0.3)
                 for _ in range(3)]
        taps = TapList(paths, dims)
        He = effective_dd_matrix(channel_matrices(taps))
        A = qpsk(rng, 4, 4)
        y = otfs_demodulate(apply_taps(taps, otfs_modulate(DdFrame(dims, A)))).grid
        assert np.abs(He @ vec(A) - vec(y)).max() < 1e-10

    def test_mimo_block_layout(self):
        rng = np.random.default_rng(7)
        N, M = 2, 3
        H = crandn(rng, N, 2 * M, 2 * M)
        He = effective_dd_matrix(H, 2, 2)
        # block (r, t) of the effective matrix is the SISO effective matrix of antenna pair (r, t)
        for r in range(2):
            for t in range(2):
                sub = H[:, r * M:(r + 1) * M, t * M:(t + 1) * M]
                blk = He[r * N * M:(r + 1) * N * M, t * N * M:(t + 1) * N * M]
                np.testing.assert_allclose(blk, effective_dd_matrix(sub), atol=1e-13)

    def test_rejects_inconsistent_blocks(self):
        with pytest.raises(ValueError):
            effective_dd_matrix(np.zeros((2, 4, 6)), 2, 2)
