import math

import numpy as np
import pytest
import scipy.sparse as sp

from sketchpcr.sketch import (
    CountSketch,
    TouchCounter,
    apply_left,
    gen_countsketch,
    gen_subgaussian,
    gen_tensorsketch,
    gram_error,
    identity_embedding,
    sketch_rows_for_gram,
    tensorsketch_apply,
    tensorsketch_materialize,
)
from oracles import tensorsketch_bruteforce


class TestSubgaussian:
    def test_seed_determinism(self):
        a = gen_subgaussian(4, 4, seed=7)
        b = gen_subgaussian(4, 4, seed=7)
        assert np.array_equal(a.matrix, b.matrix)

    def test_column_norm_concentration(self):
        op = gen_subgaussian(2000, 50, seed=1)
        norms = np.linalg.norm(op.matrix, axis=0)
        assert norms.min() > 0.8 and norms.max() < 1.2

    def test_basis_vector_reproduces_column(self):
        op = gen_subgaussian(6, 5, seed=2)
        e3 = np.zeros((5, 1))
        e3[3] = 1.0
        assert np.allclose(apply_left(op, e3).ravel(), op.matrix[:, 3])


class TestCountSketch:
    def test_one_nonzero_per_column(self):
        op = gen_countsketch(7, 30, seed=3)
        m = op.materialize()
        assert np.all(np.count_nonzero(m, axis=0) == 1)
        assert set(np.unique(m)) <= {-1.0, 0.0, 1.0}

    def test_row_occupancy_roughly_uniform(self):
        op = gen_countsketch(10, 10000, seed=4)
        counts = np.bincount(op.rows, minlength=10)
        assert counts.max() <= 3 * counts.mean()

    def test_norm_preserved_when_buckets_distinct(self):
        op = gen_countsketch(64, 8, seed=5)
        x = np.zeros(8)
        # restrict support to columns with pairwise-distinct buckets
        seen, support = set(), []
        for i, r in enumerate(op.rows):
            if r not in seen:
                seen.add(r)
                support.append(i)
        rng = np.random.default_rng(0)
        x[support] = rng.standard_normal(len(support))
        sx = apply_left(op, x[:, None]).ravel()
        assert np.linalg.norm(sx) == pytest.approx(np.linalg.norm(x), abs=0)

    def test_determinism(self):
        a = gen_countsketch(9, 40, seed=11)
        b = gen_countsketch(9, 40, seed=11)
        assert np.array_equal(a.rows, b.rows) and np.array_equal(a.signs, b.signs)


class TestApplyLeft:
    def test_signed_permutation(self):
        rng = np.random.default_rng(6)
        perm = rng.permutation(5)
        signs = rng.choice([-1.0, 1.0], size=5)
        op = CountSketch(out_dim=5, in_dim=5, seed=-1,
                         rows=perm.astype(np.int64), signs=signs)
        a = rng.standard_normal((5, 3))
        out = apply_left(op, a)
        want = np.zeros_like(a)
        want[perm] = signs[:, None] * a
        assert np.array_equal(out, want)

    def test_apply_to_identity_materializes(self):
        op = gen_countsketch(6, 9, seed=7)
        assert np.array_equal(apply_left(op, np.eye(9)), op.materialize())
        dense_op = gen_subgaussian(6, 9, seed=7)
        assert np.allclose(apply_left(dense_op, np.eye(9)), dense_op.matrix)

    def test_sparse_dense_equivalence(self):
        rng = np.random.default_rng(8)
        dense = rng.standard_normal((30, 6))
        dense[rng.random((30, 6)) < 0.6] = 0.0
        sparse = sp.csr_matrix(dense)
        for op in (gen_countsketch(12, 30, seed=9), gen_subgaussian(12, 30, seed=9)):
            out_sparse = apply_left(op, sparse)
            out_dense = apply_left(op, dense)
            assert np.allclose(out_sparse, out_dense, atol=1e-12)

    def test_touch_counter_equals_nnz(self):
        rng = np.random.default_rng(10)
        dense = rng.standard_normal((25, 4))
        dense[rng.random((25, 4)) < 0.7] = 0.0
        sparse = sp.csr_matrix(dense)
        counter = TouchCounter()
        apply_left(gen_countsketch(8, 25, seed=12), sparse, touch_counter=counter)
        assert counter.count == sparse.nnz

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply_left(gen_countsketch(4, 10, seed=0), np.eye(9))


class TestGramError:
    def test_identity_embedding_exact(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((8, 3))
        rep = gram_error(identity_embedding(8), x, eps=1e-12)
        assert rep.spectral_error < 1e-12 and rep.passed

    def test_single_row_fails_on_rank_two(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        rep = gram_error(gen_subgaussian(1, 3, seed=14), x, eps=0.05)
        assert not rep.passed
        assert rep.normalized_error >= 0.0

    def test_unbiased_countsketch_gram(self):
        # mean of X^T S^T S X over seeds approaches X^T X entrywise
        rng = np.random.default_rng(15)
        x = rng.standard_normal((10, 3))
        trials = 2000
        acc = np.zeros((3, 3))
        acc2 = np.zeros((3, 3))
        for seed in range(trials):
            sx = apply_left(gen_countsketch(6, 10, seed=seed), x)
            g = sx.T @ sx
            acc += g
            acc2 += g * g
        mean = acc / trials
        var = acc2 / trials - mean**2
        se = np.sqrt(var / trials)
        assert np.all(np.abs(mean - x.T @ x) <= 3 * se + 1e-12)


class TestSketchSizing:
    def test_subgaussian_formula(self):
        assert sketch_rows_for_gram("subgaussian", 4.0, 0.5, 0.25, const=1.0) == 22

    def test_countsketch_formula(self):
        assert sketch_rows_for_gram("countsketch", 4.0, 0.5, 0.25, const=1.0) == 256

    def test_halving_eps_quadruples(self):
        base = sketch_rows_for_gram("subgaussian", 4.0, 0.4, 0.25, const=1.0)
        finer = sketch_rows_for_gram("subgaussian", 4.0, 0.2, 0.25, const=1.0)
        assert finer == pytest.approx(4 * base, abs=2)

    def test_monotone_in_eps_and_delta(self):
        coarse = sketch_rows_for_gram("countsketch", 4.0, 0.4, 0.4)
        fine = sketch_rows_for_gram("countsketch", 4.0, 0.1, 0.1)
        assert fine >= coarse

    def test_parameter_ranges(self):
        with pytest.raises(ValueError):
            sketch_rows_for_gram("subgaussian", 4.0, 0.6, 0.25)
        with pytest.raises(ValueError):
            sketch_rows_for_gram("subgaussian", 4.0, 0.25, 0.0)
        with pytest.raises(ValueError):
            sketch_rows_for_gram("osnap", 4.0, 0.25, 0.25)


class TestTensorSketch:
    def test_seed_determinism(self):
        a = gen_tensorsketch(2, 6, 16, seed=16)
        b = gen_tensorsketch(2, 6, 16, seed=16)
        assert np.array_equal(a.row_tables, b.row_tables)
        assert np.array_equal(a.sign_tables, b.sign_tables)

    def test_degree_one_is_countsketch(self):
        op = gen_tensorsketch(1, 7, 5, seed=17)
        cs = CountSketch(out_dim=5, in_dim=7, seed=-1,
                         rows=op.row_tables[0].copy(), signs=op.sign_tables[0].copy())
        z = np.random.default_rng(1).standard_normal(7)
        assert np.array_equal(tensorsketch_apply(op, z),
                              apply_left(cs, z[:, None]).ravel())

    def test_materialized_one_nonzero_per_tuple(self):
        op = gen_tensorsketch(2, 3, 5, seed=18)
        r = tensorsketch_materialize(op)
        assert r.shape == (9, 5)
        assert np.all(np.count_nonzero(r, axis=1) == 1)
        assert set(np.unique(np.abs(r))) <= {0.0, 1.0}

    def test_bruteforce_equality(self):
        rng = np.random.default_rng(19)
        op = gen_tensorsketch(2, 4, 8, seed=20)
        z = rng.standard_normal(4)
        want = tensorsketch_bruteforce(op, z)
        got = tensorsketch_apply(op, z)
        assert np.allclose(got, want, atol=1e-8)
        # and via the materialized matrix acting on phi(z)
        from oracles import poly_feature_vector
        phi = poly_feature_vector(z, 2)
        assert np.allclose(tensorsketch_materialize(op).T @ phi, got, atol=1e-8)

    def test_zero_vector(self):
        op = gen_tensorsketch(3, 4, 16, seed=21)
        assert np.array_equal(tensorsketch_apply(op, np.zeros(4)), np.zeros(16))

    def test_fft_and_direct_paths_agree(self):
        rng = np.random.default_rng(22)
        z = rng.standard_normal(3)
        op_big = gen_tensorsketch(3, 3, 71, seed=23)  # t >= 64: FFT path
        want = tensorsketch_bruteforce(op_big, z)
        assert np.allclose(tensorsketch_apply(op_big, z), want, atol=1e-8)
        op_small = gen_tensorsketch(3, 3, 20, seed=23)  # direct path
        assert np.allclose(tensorsketch_apply(op_small, z),
                           tensorsketch_bruteforce(op_small, z), atol=1e-8)

    def test_inner_product_preservation(self):
        # mean over seeds of <Rphi(x), Rphi(z)> approaches (x.z)^2 for q=2
        rng = np.random.default_rng(24)
        x = rng.standard_normal(5)
        z = rng.standard_normal(5)
        want = float(x @ z) ** 2
        trials = 2000
        vals = np.empty(trials)
        for seed in range(trials):
            op = gen_tensorsketch(2, 5, 16, seed=seed)
            vals[seed] = tensorsketch_apply(op, x) @ tensorsketch_apply(op, z)
        se = vals.std(ddof=1) / math.sqrt(trials)
        assert abs(vals.mean() - want) <= 3 * se
