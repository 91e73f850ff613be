import numpy as np
import pytest

from conftest import rand_tubal, spd_weight_tensor
from tubalsketch.sketching import (
    as_prob_vector,
    is_complete_discrete_sampling,
    make_block_sketches,
    make_fourier_sketches,
    make_gaussian_sketches,
    make_slice_sketches,
    prob_fourier_row_norm,
    prob_sketch_norm,
    prob_slice_norm,
    prob_uniform,
    sample_index,
)
from tubalsketch.t_algebra import WeightQ, dft3, tprod_oracle, ttranspose, unfold


class TestSliceSketches:
    def test_members_are_identity_lateral_slices(self):
        s = make_slice_sketches(3, 2)
        assert s.q == 3 and s.tau == 1
        expect = np.zeros((3, 1, 2))
        expect[1, 0, 0] = 1.0
        np.testing.assert_array_equal(s.members[1], expect)

    def test_unfold_is_padded_basis_column(self):
        s = make_slice_sketches(4, 3)
        col = unfold(s.members[2])
        expect = np.zeros((12, 1))
        expect[2, 0] = 1.0
        np.testing.assert_array_equal(col, expect)

    def test_transposed_sketch_extracts_horizontal_slice(self):
        rng = np.random.default_rng(0)
        A = rand_tubal(rng, 4, 3, 5)
        s = make_slice_sketches(4, 5)
        for i in (0, 3):
            got = tprod_oracle(ttranspose(s.members[i]), A)
            np.testing.assert_allclose(got, A[i:i + 1], atol=1e-12)

    def test_fourier_slices_are_all_equal(self):
        # first-frontal-slice-only sketches look identical in every subsystem
        s = make_slice_sketches(5, 4)
        for i in range(s.q):
            F = dft3(s.members[i])
            for k in range(1, 4):
                np.testing.assert_allclose(F[:, :, k], F[:, :, 0], atol=1e-12)


class TestBlockSketches:
    def test_ragged_partition(self):
        s = make_block_sketches(3, 2, [[0, 1], [2]])
        assert s.q == 2 and s.taus == (2, 1)
        np.testing.assert_array_equal(
            s.members[0][:, :, 0], np.eye(3)[:, :2]
        )
        assert not s.members[0][:, :, 1].any()

    def test_single_full_block(self):
        s = make_block_sketches(4, 2, [range(4)])
        assert s.q == 1 and s.tau == 4
        np.testing.assert_array_equal(s.members[0][:, :, 0], np.eye(4))

    def test_transposed_block_stacks_slices(self):
        rng = np.random.default_rng(1)
        A = rand_tubal(rng, 5, 3, 4)
        s = make_block_sketches(5, 4, [[1, 3], [0, 2, 4]])
        got = tprod_oracle(ttranspose(s.members[0]), A)
        np.testing.assert_allclose(got, A[[1, 3]], atol=1e-12)

    def test_invalid_partitions(self):
        with pytest.raises(ValueError, match="overlap"):
            make_block_sketches(3, 2, [[0, 1], [1, 2]])
        with pytest.raises(ValueError, match="empty"):
            make_block_sketches(3, 2, [[0, 1, 2], []])
        with pytest.raises(ValueError, match="cover"):
            make_block_sketches(3, 2, [[0, 1]])


class TestGaussianSketches:
    def test_seed_reproducibility(self):
        a = make_gaussian_sketches(5, 2, 3, 4, np.random.default_rng(7))
        b = make_gaussian_sketches(5, 2, 3, 4, np.random.default_rng(7))
        for Sa, Sb in zip(a.members, b.members):
            assert np.array_equal(Sa, Sb)

    def test_only_first_slice_nonzero(self):
        s = make_gaussian_sketches(5, 2, 3, 4, np.random.default_rng(8))
        for S in s.members:
            assert S[:, :, 1:].max() == 0.0
            F = dft3(S)
            for k in range(1, 4):
                np.testing.assert_allclose(F[:, :, k], F[:, :, 0], atol=1e-12)

    def test_entry_statistics(self):
        rng = np.random.default_rng(9)
        s = make_gaussian_sketches(100, 10, 100, 1, rng)
        entries = np.concatenate([S[:, :, 0].ravel() for S in s.members])
        assert entries.size == 100_000
        assert abs(entries.mean()) < 0.02

    def test_tau_bound(self):
        with pytest.raises(ValueError):
            make_gaussian_sketches(3, 4, 2, 2, np.random.default_rng(0))


class TestFourierSketches:
    def test_row_kind_lists_coordinate_vectors(self):
        s = make_fourier_sketches(3, 1, 3, 2, "row")
        assert s.per_slice and s.q == 3
        for k in range(2):
            for i in range(3):
                np.testing.assert_array_equal(s.members[k][i], np.eye(3)[:, i:i + 1])

    def test_row_kind_resolves_rows_of_fourier_slices(self):
        rng = np.random.default_rng(10)
        A = rand_tubal(rng, 4, 3, 3)
        s = make_fourier_sketches(4, 1, 4, 3, "row")
        Ah = dft3(A)
        for k in range(3):
            for i in range(4):
                got = s.members[k][i].conj().T @ Ah[:, :, k]
                np.testing.assert_allclose(got, Ah[i:i + 1, :, k], atol=1e-12)

    def test_row_families_resolve_identity(self):
        s = make_fourier_sketches(4, 1, 4, 2, "row")
        for k in range(2):
            acc = sum(S @ S.T for S in s.members[k])
            np.testing.assert_array_equal(acc, np.eye(4))

    def test_row_kind_validates_shape(self):
        with pytest.raises(ValueError):
            make_fourier_sketches(3, 2, 3, 2, "row")
        with pytest.raises(ValueError):
            make_fourier_sketches(3, 1, 2, 2, "row")

    def test_gaussian_families_independent_across_slices(self):
        s = make_fourier_sketches(4, 2, 3, 3, "gaussian", np.random.default_rng(11))
        assert not np.array_equal(s.members[0][0], s.members[1][0])
        # same master seed reproduces everything
        t = make_fourier_sketches(4, 2, 3, 3, "gaussian", np.random.default_rng(11))
        for k in range(3):
            for i in range(3):
                assert np.array_equal(s.members[k][i], t.members[k][i])


class TestProbabilities:
    def test_uniform(self):
        np.testing.assert_allclose(prob_uniform(4), [0.25] * 4)

    def test_slice_norm_squared_ratio(self):
        A = np.zeros((2, 2, 2))
        A[0, 0, 0] = 1.0  # slice norms 1 and 2
        A[1, 0, 0] = 2.0
        np.testing.assert_allclose(prob_slice_norm(A), [0.2, 0.8], atol=1e-14)

    def test_sketch_norm_reduces_to_slice_norm(self):
        rng = np.random.default_rng(12)
        A = rand_tubal(rng, 4, 3, 3)
        s = make_slice_sketches(4, 3)
        Q = WeightQ.identity(3, 3)
        np.testing.assert_allclose(
            prob_sketch_norm(A, Q, s), prob_slice_norm(A), atol=1e-12
        )

    def test_sketch_norm_with_nontrivial_weight_is_simplex(self):
        rng = np.random.default_rng(13)
        A = rand_tubal(rng, 4, 3, 3)
        Q = WeightQ.from_tensor(spd_weight_tensor(rng, 3, 3))
        p = prob_sketch_norm(A, Q, make_slice_sketches(4, 3))
        as_prob_vector(p)

    def test_fourier_row_norm(self):
        rng = np.random.default_rng(14)
        A = rand_tubal(rng, 4, 3, 3)
        p = prob_fourier_row_norm(A)
        Ah = dft3(A)
        for k in range(3):
            rows = np.sum(np.abs(Ah[:, :, k]) ** 2, axis=1)
            np.testing.assert_allclose(p[k], rows / rows.sum(), atol=1e-12)

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            prob_slice_norm(np.zeros((3, 2, 2)))

    def test_simplex_validation(self):
        with pytest.raises(ValueError):
            as_prob_vector([0.5, 0.6])
        with pytest.raises(ValueError):
            as_prob_vector([1.5, -0.5])
        as_prob_vector([0.3, 0.7])


class TestSampling:
    def test_point_mass(self):
        rng = np.random.default_rng(15)
        assert all(sample_index([1.0, 0.0, 0.0], rng) == 0 for _ in range(50))

    def test_empirical_frequencies(self):
        rng = np.random.default_rng(16)
        draws = np.array([sample_index([0.5, 0.5], rng) for _ in range(100_000)])
        freq = np.bincount(draws, minlength=2) / draws.size
        assert np.all(np.abs(freq - 0.5) < 0.01)

    def test_zero_probability_never_drawn(self):
        rng = np.random.default_rng(17)
        draws = [sample_index([0.5, 0.0, 0.5], rng) for _ in range(5000)]
        assert 1 not in draws

    def test_stream_determinism(self):
        a = [sample_index([0.2, 0.3, 0.5], np.random.default_rng(18)) for _ in range(1)]
        b = [sample_index([0.2, 0.3, 0.5], np.random.default_rng(18)) for _ in range(1)]
        assert a == b


class TestCompleteDiscreteSampling:
    def test_generic_slice_sketches_pass(self):
        rng = np.random.default_rng(19)
        A = rand_tubal(rng, 4, 3, 2)
        assert is_complete_discrete_sampling(A, make_slice_sketches(4, 2))

    def test_family_missing_reach_fails(self):
        rng = np.random.default_rng(20)
        A = rand_tubal(rng, 4, 3, 2)
        s = make_block_sketches(4, 2, [[0, 1], [2, 3]])
        partial = type(s)(kind="block", m=4, l=2, q=1, members=[s.members[0]])
        assert not is_complete_discrete_sampling(A, partial)

    def test_zero_sketched_row_fails(self):
        A = np.zeros((3, 2, 2))
        A[1:] = np.random.default_rng(21).standard_normal((2, 2, 2))
        assert not is_complete_discrete_sampling(A, make_slice_sketches(3, 2))
