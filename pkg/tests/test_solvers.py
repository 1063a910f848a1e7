import math

import numpy as np
import pytest
import scipy.sparse as sp

from sketchpcr.errors import GapError, RankDeficiencyError
from sketchpcr.evaluation import planted_matrix
from sketchpcr.linalg import pinv_solve, spectral_norm, subspace_distance, thin_svd
from sketchpcr.sketch import gen_countsketch, gen_subgaussian, identity_embedding
from sketchpcr.solvers import (
    CountSketchRight,
    PcrProblem,
    ProductOperator,
    build_r_left,
    build_r_right,
    build_r_twosided,
    certify,
    cls,
    exact_pcp,
    exact_pcr,
    input_sparsity_pcp,
    precond_iterative_ls,
    sketched_pcr,
)
from oracles import reduced_ls_objective, rotated_basis


def eq3_bruteforce(a, r_mat, b, k):
    """x_{R,k} evaluated directly from the definition with dense SVD."""
    ar = a @ r_mat
    _, _, vt = np.linalg.svd(ar, full_matrices=False)
    v_k = vt[:k].T
    return r_mat @ (v_k @ (np.linalg.pinv(ar @ v_k) @ b))


def random_problem(seed, n=40, d=12, k=4):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, d))
    b = rng.standard_normal(n)
    return PcrProblem(a=a, b=b, k=k)


class TestExactPcr:
    def test_diagonal(self):
        p = PcrProblem(a=np.diag([3.0, 2.0, 1.0]), b=np.ones(3), k=2)
        sol = exact_pcr(p)
        assert np.allclose(sol.x, [1 / 3, 1 / 2, 0.0], atol=1e-12)

    def test_full_rank_equals_ols(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((20, 6))
        b = rng.standard_normal(20)
        sol = exact_pcr(PcrProblem(a=a, b=b, k=6))
        assert np.allclose(sol.x, pinv_solve(a, b), atol=1e-10)

    def test_matches_reduced_ls_oracle(self):
        p = random_problem(2)
        sol = exact_pcr(p)
        f = thin_svd(p.a, p.k)
        obj_ref, _ = reduced_ls_objective(p.a, p.b, f.v_k)
        assert abs(sol.objective - obj_ref) <= 1e-9 * max(1.0, obj_ref)

    def test_solution_in_top_subspace(self):
        p = random_problem(3)
        sol = exact_pcr(p)
        f = thin_svd(p.a, p.k)
        assert np.linalg.norm(f.v_rest.T @ sol.x) <= 1e-10 * np.linalg.norm(sol.x)
        assert sol.constraint_norm <= 1e-10 * np.linalg.norm(sol.x)

    def test_gap_is_zero_rejected(self):
        p = PcrProblem(a=np.eye(4), b=np.ones(4), k=2)
        with pytest.raises(GapError):
            exact_pcr(p)


class TestExactPcp:
    def test_b_in_top_range_unchanged(self):
        p = random_problem(4)
        f = thin_svd(p.a, p.k)
        b = f.u_k @ np.arange(1.0, p.k + 1)
        p2 = PcrProblem(a=p.a, b=b, k=p.k)
        assert np.allclose(exact_pcp(p2), b, atol=1e-10)

    def test_b_orthogonal_maps_to_zero(self):
        p = random_problem(5)
        f = thin_svd(p.a, p.k)
        b = f.u_rest @ np.arange(1.0, f.u_rest.shape[1] + 1)
        p2 = PcrProblem(a=p.a, b=b, k=p.k)
        assert np.linalg.norm(exact_pcp(p2)) < 1e-10

    def test_equals_a_times_xk(self):
        p = random_problem(6)
        assert np.allclose(exact_pcp(p), p.a @ exact_pcr(p).x, atol=1e-9)


class TestSketchedPcr:
    def test_r_equals_vk_recovers_exact(self):
        p = random_problem(7)
        f = thin_svd(p.a, p.k)
        sol = sketched_pcr(p, f.v_k)
        assert np.allclose(sol.x, exact_pcr(p).x, atol=1e-9)

    def test_r_identity_recovers_exact(self):
        p = random_problem(8)
        sol = sketched_pcr(p, np.eye(12))
        assert np.allclose(sol.x, exact_pcr(p).x, atol=1e-9)

    def test_matches_bruteforce_eq3(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((30, 10))
        b = rng.standard_normal(30)
        p = PcrProblem(a=a, b=b, k=3)
        g = gen_countsketch(8, 10, seed=10)
        right = build_r_right(g)
        sol = sketched_pcr(p, right)
        want = eq3_bruteforce(a, right.materialize(), b, 3)
        assert np.allclose(sol.x, want, atol=1e-9)

    def test_rejects_r_narrower_than_k(self):
        p = random_problem(11)
        with pytest.raises(ValueError):
            sketched_pcr(p, np.eye(12)[:, :2])


class TestCls:
    def test_identity_is_ols(self):
        p = random_problem(12)
        sol = cls(p, np.eye(12))
        assert np.allclose(sol.x, pinv_solve(p.a, p.b), atol=1e-10)

    def test_coincides_with_sketched_for_k_orthonormal_columns(self):
        p = random_problem(13)
        f = thin_svd(p.a, p.k)
        r = rotated_basis(f.v_k, f.v_rest, theta=0.2)
        assert np.allclose(cls(p, r).x, sketched_pcr(p, r).x, atol=1e-10)

    def test_normal_equations_orthogonality(self):
        rng = np.random.default_rng(14)
        p = random_problem(15)
        r = rng.standard_normal((12, 5))
        sol = cls(p, r)
        ar = p.a @ r
        assert np.linalg.norm(ar.T @ (p.a @ sol.x - p.b)) < 1e-8


class TestBuildR:
    def test_left_identity_sketch_gives_vk(self):
        p = random_problem(16)
        r = build_r_left(p, identity_embedding(40))
        f = thin_svd(p.a, p.k)
        assert np.allclose(r, f.v_k, atol=1e-12)

    def test_left_output_orthonormal(self):
        p = random_problem(17)
        r = build_r_left(p, gen_subgaussian(25, 40, seed=18))
        assert np.linalg.norm(r.T @ r - np.eye(p.k)) < 1e-10

    def test_right_countsketch_column_semantics(self):
        rng = np.random.default_rng(19)
        a = rng.standard_normal((9, 6))
        g = gen_countsketch(4, 6, seed=20)
        ar = CountSketchRight(g).times(a)
        want = np.zeros((9, 4))
        for i in range(6):
            want[:, g.rows[i]] += g.signs[i] * a[:, i]
        assert np.allclose(ar, want, atol=0)

    def test_right_identity_gives_a(self):
        rng = np.random.default_rng(21)
        a = rng.standard_normal((7, 5))
        right = build_r_right(identity_embedding(5))
        assert np.allclose(right.times(a), a, atol=0)

    def test_right_implicit_matches_materialized(self):
        rng = np.random.default_rng(22)
        a = rng.standard_normal((15, 9))
        right = build_r_right(gen_countsketch(6, 9, seed=23))
        assert np.allclose(right.times(a), a @ right.materialize(), atol=1e-12)
        v = rng.standard_normal(6)
        assert np.allclose(right.expand(v), right.materialize() @ v, atol=1e-12)

    def test_right_sparse_input(self):
        rng = np.random.default_rng(24)
        dense = rng.standard_normal((20, 8))
        dense[rng.random((20, 8)) < 0.5] = 0.0
        right = build_r_right(gen_countsketch(5, 8, seed=25))
        assert np.allclose(right.times(sp.csr_matrix(dense)), right.times(dense), atol=1e-12)

    def test_twosided_identity_recovers_top_subspace(self):
        p = random_problem(26)
        r = build_r_twosided(p, identity_embedding(40), identity_embedding(12))
        f = thin_svd(p.a, p.k)
        # sqrt(1 - sigma_min^2) has a ~1e-8 precision floor near zero distance
        assert subspace_distance(r.materialize(), f.v_k) < 1e-7

    def test_twosided_matches_algorithm_intermediates(self):
        p = random_problem(27)
        s_op = gen_countsketch(20, 40, seed=28)
        g_op = gen_countsketch(8, 12, seed=29)
        r = build_r_twosided(p, s_op, g_op)
        c = p.a @ g_op.materialize().T
        d = s_op.materialize() @ c
        f_d = thin_svd(d, p.k)
        want = g_op.materialize().T @ f_d.v_k
        assert np.allclose(r.materialize(), want, atol=1e-9)

    def test_twosided_solution_matches_bruteforce(self):
        p = random_problem(30)
        r = build_r_twosided(p, gen_countsketch(20, 40, seed=31), gen_countsketch(8, 12, seed=32))
        sol = sketched_pcr(p, r)
        want = eq3_bruteforce(p.a, r.materialize(), p.b, p.k)
        assert np.allclose(sol.x, want, atol=1e-9)


class TestCertify:
    def test_exact_solution_certificate(self):
        p = random_problem(33)
        cert = certify(p, exact_pcr(p), mode="pcr")
        assert cert.eps_observed < 1e-12
        assert cert.upsilon_observed < 1e-10

    def test_ols_has_large_leakage(self):
        rng = np.random.default_rng(34)
        a = planted_matrix(60, 30, 4, 0.5, seed=35)
        x_true = rng.standard_normal(30)
        b = a @ x_true + 0.5 * rng.standard_normal(60)
        p = PcrProblem(a=a, b=b, k=4)
        from sketchpcr.solvers import PcrSolution
        ols = PcrSolution(x=pinv_solve(a, b), method="ols", r_cols=0,
                          objective=0.0, constraint_norm=None, wall_time=0.0)
        cert_ols = certify(p, ols, mode="pcr")
        cert_exact = certify(p, exact_pcr(p), mode="pcr")
        assert cert_ols.upsilon_observed > 10 * max(cert_exact.upsilon_observed, 1e-6)

    def test_left_sketched_respects_structural_bounds(self):
        for seed in range(15):
            a = planted_matrix(80, 40, 4, 0.4, seed=100 + seed)
            rng = np.random.default_rng(200 + seed)
            b = a @ rng.standard_normal(40) + 0.2 * rng.standard_normal(80)
            p = PcrProblem(a=a, b=b, k=4)
            f = thin_svd(a, 4)
            r = build_r_left(p, gen_subgaussian(160, 80, seed=300 + seed))
            dist = subspace_distance(r, f.v_k)
            nu = dist / math.sqrt(1.0 - dist**2)
            if nu >= 0.6:
                continue
            cert = certify(p, sketched_pcr(p, r), mode="pcr")
            sk, sk1 = f.sigma_k[-1], f.sigma_rest[0]
            assert cert.eps_observed <= (sk1 / sk) * nu + 1e-8
            ups_cap = nu / ((math.sqrt(1.0 - nu**2) - nu) * sk)
            assert cert.upsilon_observed <= ups_cap + 1e-8

    def test_mode_validation(self):
        p = random_problem(36)
        with pytest.raises(ValueError):
            certify(p, exact_pcr(p), mode="other")


class TestPrecondIterativeLs:
    def test_matches_direct_solve(self):
        rng = np.random.default_rng(37)
        c = rng.standard_normal((60, 4))
        b = rng.standard_normal(60)
        got = precond_iterative_ls(c, b, eps=1e-14, seed=38)
        want, *_ = np.linalg.lstsq(c, b, rcond=None)
        assert np.allclose(got, want, atol=1e-8)

    def test_orthonormal_converges_in_one_iteration(self):
        rng = np.random.default_rng(39)
        q, _ = np.linalg.qr(rng.standard_normal((30, 3)))
        b = rng.standard_normal(30)
        got = precond_iterative_ls(q, b, eps=1e-12, seed=40, max_iter=2)
        assert np.allclose(got, q.T @ b, atol=1e-10)

    def test_metric_contract_on_ill_conditioned(self):
        rng = np.random.default_rng(41)
        u, _ = np.linalg.qr(rng.standard_normal((500, 4)))
        v, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        c = u @ np.diag([1.0, 1e-2, 1e-4, 1e-6]) @ v.T
        b = rng.standard_normal(500)
        eps = 1e-6
        got = precond_iterative_ls(c, b, eps=eps, seed=42)
        want, *_ = np.linalg.lstsq(c, b, rcond=None)
        lhs = np.linalg.norm(c @ (got - want))
        assert lhs <= math.sqrt(eps) * np.linalg.norm(c @ want)

    def test_product_operator_never_materialized(self):
        rng = np.random.default_rng(43)
        left = rng.standard_normal((300, 12))
        right_f = rng.standard_normal((12, 3))
        b = rng.standard_normal(300)
        got = precond_iterative_ls(ProductOperator(left, right_f), b, eps=1e-12, seed=44)
        want, *_ = np.linalg.lstsq(left @ right_f, b, rcond=None)
        assert np.allclose(got, want, atol=1e-8)

    def test_rank_deficiency_signaled(self):
        c = np.zeros((50, 3))
        c[:, 0] = 1.0
        with pytest.raises(RankDeficiencyError):
            precond_iterative_ls(c, np.ones(50), eps=1e-6, seed=45)


class TestInputSparsityPcp:
    def test_matches_materialized_oracle(self):
        rng = np.random.default_rng(46)
        a = planted_matrix(50, 40, 3, 0.4, seed=47)
        b = a @ rng.standard_normal(40) + 0.1 * rng.standard_normal(50)
        p = PcrProblem(a=a, b=b, k=3)
        s_op = gen_countsketch(30, 50, seed=48)
        g_op = gen_countsketch(20, 40, seed=49)
        y = input_sparsity_pcp(p, eps=1e-10, seed=50, s_op=s_op, g_op=g_op)
        # rebuild R = G'^T V_{D,k} exactly as the algorithm does
        occupied = np.unique(g_op.rows)
        g_mat = np.zeros((len(occupied), 40))
        g_mat[np.searchsorted(occupied, g_op.rows), np.arange(40)] = g_op.signs
        c = a @ g_mat.T
        d_mat = s_op.materialize() @ c
        f_d = thin_svd(d_mat, 3)
        r_mat = g_mat.T @ f_d.v_k
        x_r = r_mat @ (np.linalg.pinv(a @ r_mat) @ b)
        assert np.linalg.norm(y - x_r) <= 1e-4 * np.linalg.norm(x_r)

    def test_degenerate_sketches_recover_exact(self):
        rng = np.random.default_rng(51)
        a = planted_matrix(30, 12, 3, 0.5, seed=52)
        b = a @ rng.standard_normal(12)
        p = PcrProblem(a=a, b=b, k=3)
        perm = rng.permutation(12)
        from sketchpcr.sketch import CountSketch
        g_perm = CountSketch(out_dim=12, in_dim=12, seed=-1,
                             rows=perm.astype(np.int64),
                             signs=rng.choice([-1.0, 1.0], size=12))
        y = input_sparsity_pcp(p, eps=1e-12, seed=53,
                               s_op=identity_embedding(30), g_op=g_perm)
        assert np.allclose(y, exact_pcr(p).x, atol=1e-8)

    def test_probabilistic_contract_sample(self):
        # small-sample version of the acceptance Monte Carlo
        hits = 0
        trials = 20
        for seed in range(trials):
            rng = np.random.default_rng(1000 + seed)
            a = planted_matrix(100, 80, 4, 0.4, seed=2000 + seed)
            b = a @ rng.standard_normal(80) + 0.1 * rng.standard_normal(100)
            p = PcrProblem(a=a, b=b, k=4)
            s_op = gen_countsketch(48, 100, seed=3000 + seed)
            g_op = gen_countsketch(32, 80, seed=4000 + seed)
            y = input_sparsity_pcp(p, eps=1e-3, seed=5000 + seed, s_op=s_op, g_op=g_op)
            occupied = np.unique(g_op.rows)
            g_mat = np.zeros((len(occupied), 80))
            g_mat[np.searchsorted(occupied, g_op.rows), np.arange(80)] = g_op.signs
            c = a @ g_mat.T
            f_d = thin_svd(s_op.materialize() @ c, 4)
            r_mat = g_mat.T @ f_d.v_k
            x_r = r_mat @ (np.linalg.pinv(a @ r_mat) @ b)
            if np.linalg.norm(y - x_r) ** 2 <= 1e-3 * np.linalg.norm(x_r) ** 2:
                hits += 1
        assert hits >= (2 * trials) // 3


class TestDeterministicLemmas:
    def test_lemma_11_bounds(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            a = planted_matrix(30, 20, 3, 0.5, seed=seed)
            f = thin_svd(a, 3)
            theta = float(rng.uniform(0.05, 0.6))
            r = rotated_basis(f.v_k, f.v_rest, theta)
            nu = subspace_distance(r, f.v_k)
            assert spectral_norm(f.v_rest.T @ r) <= nu + 1e-10
            if nu < math.sqrt(0.5):
                smin = np.linalg.svd(a @ r, compute_uv=False)[-1]
                assert smin >= f.sigma_k[-1] * (math.sqrt(1 - nu**2) - nu) - 1e-10

    def test_lemma_14_bound(self):
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            a = planted_matrix(30, 20, 3, 0.5, seed=300 + seed)
            f = thin_svd(a, 3)
            theta = float(rng.uniform(0.05, 0.6))
            r = rotated_basis(f.v_k, f.v_rest, theta)
            nu = math.tan(theta)  # d2(R, V_k) = sin(theta) = nu (1 + nu^2)^{-1/2}
            f_ar = thin_svd(a @ r, 3)
            lhs = subspace_distance(f_ar.u_k, f.u_k)
            assert lhs <= (f.sigma_rest[0] / f.sigma_k[-1]) * nu + 1e-8

    def test_structural_part1_pcp_certificate(self):
        for seed in range(15):
            rng = np.random.default_rng(200 + seed)
            a = planted_matrix(40, 24, 3, 0.5, seed=400 + seed)
            b = a @ rng.standard_normal(24) + 0.2 * rng.standard_normal(40)
            p = PcrProblem(a=a, b=b, k=3)
            r = rng.standard_normal((24, 6))
            f = thin_svd(a, 3)
            f_ar = thin_svd(a @ r, 3)
            nu = subspace_distance(f_ar.u_k, f.u_k)
            if nu >= 1.0 - 1e-9:
                continue
            cert = certify(p, sketched_pcr(p, r), mode="pcp")
            assert cert.eps_observed <= nu + 1e-8
            assert cert.upsilon_observed <= nu + 1e-8

    def test_davis_kahan_corollary(self):
        for seed in range(10):
            rng = np.random.default_rng(500 + seed)
            k = 3
            base = rng.standard_normal((12, 12))
            sym = base @ base.T  # PSD, generic spectrum
            lam = np.sort(np.linalg.eigvalsh(sym))[::-1]
            pert = rng.standard_normal((12, 12))
            pert = (pert + pert.T) / 2
            pert *= 0.45 * (lam[k - 1] - lam[k]) / spectral_norm(pert)
            lam_tilde = np.sort(np.linalg.eigvalsh(sym + pert))[::-1]
            v1 = thin_svd(sym, k).v_k
            v2 = thin_svd(sym + pert, k).v_k
            bound = spectral_norm(pert) / (lam[k - 1] - lam_tilde[k])
            assert subspace_distance(v1, v2) <= bound + 1e-8
