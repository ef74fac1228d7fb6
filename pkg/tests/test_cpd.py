import numpy as np
import pytest

from promptfactor import (
    CpOptions,
    FactorModel,
    SparseTensor,
    ValidationError,
    cp_als,
    embeddings,
    fit,
    knn_propagate,
)

from _synth import (
    dense_reconstruction,
    exact_rank_tensor,
    random_sparse_tensor,
    rank_one_tensor,
    tensor_from_dense,
)


def normalized(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


class TestExactRecovery:
    def test_rank_one_recovers_components(self):
        rng = np.random.default_rng(100)
        t, a, b, c = rank_one_tensor(rng, (6, 6, 4))
        model = cp_als(t, CpOptions(rank=1, seed=0, tol=1e-12))
        assert model.fit_history[-1] >= 0.9999
        # components match up to sign and scale
        for got, want in ((model.A[:, 0], a), (model.B[:, 0], b), (model.C[:, 0], c)):
            got = normalized(got)
            want = normalized(want)
            if np.dot(got, want) < 0:
                got = -got
            np.testing.assert_allclose(got, want, atol=1e-4)

    def test_rank_three_fit(self):
        rng = np.random.default_rng(200)
        t, _ = exact_rank_tensor(rng, (10, 10, 8), rank=3)
        model = cp_als(t, CpOptions(rank=3, seed=1, tol=1e-12))
        assert model.fit_history[-1] >= 0.999

    def test_lower_rank_fits_worse(self):
        rng = np.random.default_rng(200)
        t, _ = exact_rank_tensor(rng, (10, 10, 8), rank=3)
        fit3 = cp_als(t, CpOptions(rank=3, seed=1, tol=1e-12)).fit_history[-1]
        fit1 = cp_als(t, CpOptions(rank=1, seed=1, tol=1e-12)).fit_history[-1]
        assert fit1 < fit3


class TestConvergenceBehavior:
    def test_fit_history_non_decreasing(self):
        rng = np.random.default_rng(31)
        for trial in range(10):
            dims = tuple(int(d) for d in rng.integers(4, 9, size=3))
            t = random_sparse_tensor(rng, dims, nnz=int(rng.integers(10, 40)))
            model = cp_als(t, CpOptions(rank=3, seed=trial, max_iters=40, tol=1e-12))
            diffs = np.diff(model.fit_history)
            assert (diffs >= -1e-8).all(), f"trial {trial}: fit decreased by {diffs.min()}"

    def test_seed_determinism_is_bitwise(self):
        rng = np.random.default_rng(17)
        t = random_sparse_tensor(rng, (7, 7, 5), 30)
        opts = CpOptions(rank=4, seed=123, max_iters=20)
        m1 = cp_als(t, opts)
        m2 = cp_als(t, opts)
        for f1, f2 in ((m1.A, m2.A), (m1.B, m2.B), (m1.C, m2.C), (m1.weights, m2.weights)):
            np.testing.assert_array_equal(f1, f2)
        assert m1.fit_history == m2.fit_history

    def test_different_seeds_differ(self):
        rng = np.random.default_rng(18)
        t = random_sparse_tensor(rng, (7, 7, 5), 30)
        m1 = cp_als(t, CpOptions(rank=2, seed=0, max_iters=5))
        m2 = cp_als(t, CpOptions(rank=2, seed=1, max_iters=5))
        assert not np.array_equal(m1.A, m2.A)

    def test_final_factor_columns_unit_norm(self):
        rng = np.random.default_rng(19)
        t = random_sparse_tensor(rng, (6, 6, 4), 25)
        model = cp_als(t, CpOptions(rank=2, seed=5))
        for factor in (model.A, model.B, model.C):
            np.testing.assert_allclose(np.linalg.norm(factor, axis=0), 1.0, rtol=1e-12)

    def test_empty_tensor_rejected(self):
        t = SparseTensor((3, 3, 2), [], [], [], [])
        with pytest.raises(ValidationError):
            cp_als(t, CpOptions(rank=1))

    def test_rank_above_dims_warns(self):
        rng = np.random.default_rng(20)
        t = random_sparse_tensor(rng, (4, 4, 3), 10)
        with pytest.warns(UserWarning, match="rank"):
            cp_als(t, CpOptions(rank=5, seed=0, max_iters=3))

    def test_bad_options_rejected(self):
        for kwargs in (dict(rank=0), dict(rank=1, max_iters=0),
                       dict(rank=1, tol=0.0), dict(rank=1, ridge=-1.0)):
            with pytest.raises(ValidationError):
                CpOptions(**kwargs)


class TestScaleEquivariance:
    def test_scaling_moves_into_weights_only(self):
        rng = np.random.default_rng(44)
        t = random_sparse_tensor(rng, (8, 8, 6), 40)
        opts = CpOptions(rank=3, seed=9, max_iters=30, tol=1e-12)
        base = cp_als(t, opts)
        scaled = cp_als(t.scaled(2.0), opts)
        np.testing.assert_allclose(scaled.A, base.A, rtol=1e-7, atol=1e-9)
        np.testing.assert_allclose(scaled.B, base.B, rtol=1e-7, atol=1e-9)
        np.testing.assert_allclose(scaled.C, base.C, rtol=1e-7, atol=1e-9)
        np.testing.assert_allclose(scaled.weights, 2.0 * base.weights, rtol=1e-7)

    def test_downstream_labels_identical(self):
        rng = np.random.default_rng(45)
        for alpha in (0.25, 2.0, 3.0):
            t = random_sparse_tensor(rng, (8, 8, 10), 50)
            opts = CpOptions(rank=3, seed=2, max_iters=25)
            seeds = [(0, 1), (3, 0), (7, 1)]
            base = knn_propagate(embeddings(cp_als(t, opts)), seeds, k=3)
            scaled = knn_propagate(embeddings(cp_als(t.scaled(alpha), opts)), seeds, k=3)
            np.testing.assert_array_equal(base.labels, scaled.labels)


class TestPermutationEquivariance:
    def test_slice_permutation_permutes_embedding_rows(self):
        rng = np.random.default_rng(46)
        t, true_factors = exact_rank_tensor(rng, (6, 6, 8), rank=2)
        perm = rng.permutation(t.dims[2])
        inv = np.argsort(perm)
        # permuted tensor: slice p holds original slice perm[p]
        t_perm = SparseTensor(t.dims, t.i, t.j, inv[t.k], t.values)

        init = (rng.uniform(size=(6, 2)), rng.uniform(size=(6, 2)), rng.uniform(size=(8, 2)))
        opts = CpOptions(rank=2, seed=0, max_iters=30, tol=1e-30, init=init)
        opts_perm = CpOptions(rank=2, seed=0, max_iters=30, tol=1e-30,
                              init=(init[0], init[1], init[2][perm]))
        ref = embeddings(cp_als(t, opts))
        got = embeddings(cp_als(t_perm, opts_perm))
        np.testing.assert_allclose(got, ref[perm], atol=1e-6)


class TestFit:
    def test_exact_model_fits_perfectly(self):
        rng = np.random.default_rng(50)
        t, (A, B, C) = exact_rank_tensor(rng, (5, 5, 4), rank=2)
        model = FactorModel(A=A, B=B, C=C, weights=np.ones(2), rank=2)
        assert fit(t, model) == pytest.approx(1.0, abs=1e-10)

    def test_zero_model_fit_is_zero(self):
        rng = np.random.default_rng(51)
        t = random_sparse_tensor(rng, (4, 4, 3), 10)
        model = FactorModel(A=np.zeros((4, 1)), B=np.zeros((4, 1)), C=np.zeros((3, 1)),
                            weights=np.zeros(1), rank=1)
        assert fit(t, model) == pytest.approx(0.0, abs=1e-14)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(52)
        for _ in range(10):
            t = random_sparse_tensor(rng, (4, 5, 3), 15)
            model = FactorModel(
                A=rng.normal(size=(4, 2)), B=rng.normal(size=(5, 2)),
                C=rng.normal(size=(3, 2)), weights=rng.uniform(0.5, 2.0, size=2), rank=2,
            )
            dense = t.to_dense()
            expected = 1.0 - np.linalg.norm(dense - dense_reconstruction(model)) \
                / np.linalg.norm(dense)
            assert fit(t, model) == pytest.approx(expected, abs=1e-9)

    def test_zero_tensor_rejected(self):
        t = SparseTensor((2, 2, 2), [0], [0], [0], [0.0])
        model = FactorModel(A=np.ones((2, 1)), B=np.ones((2, 1)), C=np.ones((2, 1)),
                            weights=np.ones(1), rank=1)
        with pytest.raises(ValidationError):
            fit(t, model)

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(53)
        t = random_sparse_tensor(rng, (4, 4, 3), 10)
        model = FactorModel(A=np.ones((5, 1)), B=np.ones((4, 1)), C=np.ones((3, 1)),
                            weights=np.ones(1), rank=1)
        with pytest.raises(ValidationError):
            fit(t, model)


class TestEmbeddings:
    def test_unit_weights_return_c(self):
        C = np.array([[1.0, 2.0], [3.0, 4.0]])
        model = FactorModel(A=np.ones((2, 2)), B=np.ones((2, 2)), C=C,
                            weights=np.ones(2), rank=2)
        np.testing.assert_array_equal(embeddings(model), C)

    def test_scalar_weight_doubles(self):
        C = np.array([[1.0], [2.0]])
        model = FactorModel(A=np.ones((2, 1)), B=np.ones((2, 1)), C=C,
                            weights=np.array([2.0]), rank=1)
        np.testing.assert_array_equal(embeddings(model), 2.0 * C)

    def test_diagonal_scaling(self):
        model = FactorModel(A=np.ones((1, 2)), B=np.ones((1, 2)),
                            C=np.array([[1.0, 1.0]]), weights=np.array([3.0, 1.0]), rank=2)
        np.testing.assert_array_equal(embeddings(model), [[3.0, 1.0]])

    def test_unfolded_variant(self):
        C = np.array([[1.0, 1.0]])
        model = FactorModel(A=np.ones((1, 2)), B=np.ones((1, 2)), C=C,
                            weights=np.array([3.0, 1.0]), rank=2)
        np.testing.assert_array_equal(embeddings(model, fold_weights=False), C)
