"""Principal component regression and projection estimators.

Exact solvers factor the data matrix directly. Sketched solvers restrict
the regression to the range of a compression matrix R built from a
random sketch: left sketching uses the top right-singular basis of S A,
right sketching uses G^T itself, and two-sided sketching composes both.
Compressed least squares (plain OLS on A R) is included for comparison.

The input-sparsity solver avoids dense factorizations of A entirely:
CountSketch compressions are applied in one pass over the nonzeros and
the inner least-squares problem is solved by a sketch-preconditioned
conjugate-gradient iteration.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ConvergenceError, GapError, RankDeficiencyError
from .linalg import (
    as_matrix,
    as_vector,
    pinv_solve,
    rank_tolerance,
    relative_gap_from_sigma,
    thin_svd,
)
from .sketch import CountSketch, apply_left, gen_countsketch

GAP_TOL = 1e-12


@dataclass(frozen=True)
class PcrProblem:
    a: object          # (n, d) dense array or scipy sparse matrix
    b: np.ndarray      # (n,)
    k: int

    def __post_init__(self):
        if sp.issparse(self.a):
            if not np.all(np.isfinite(self.a.data)):
                raise ValueError("a contains NaN or Inf entries")
        else:
            object.__setattr__(self, "a", as_matrix(self.a, "a"))
        n, d = self.a.shape
        object.__setattr__(self, "b", as_vector(self.b, length=n, name="b"))
        if not 1 <= self.k <= min(n, d):
            raise ValueError(f"rank k={self.k} out of range [1, {min(n, d)}]")

    @property
    def shape(self):
        return self.a.shape

    def dense_a(self):
        return self.a.toarray() if sp.issparse(self.a) else np.asarray(self.a, dtype=float)


@dataclass(frozen=True)
class PcrSolution:
    x: np.ndarray
    method: str
    r_cols: int                      # columns of R used; 0 for exact
    objective: float | None          # |A x - b|; None when A was not retained
    constraint_norm: float | None    # |V_{A,k+}^T x| when the exact SVD was at hand
    wall_time: float


@dataclass(frozen=True)
class ApproxCertificate:
    eps_observed: float      # additive objective error over |b|
    upsilon_observed: float  # constraint leakage over |b|
    reference_objective: float


def require_gap(sigma, k, what="matrix"):
    """Reject spectra without a usable rank or eigengap at k."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma[0] == 0.0:
        raise RankDeficiencyError(f"{what} is zero")
    sk = sigma[k - 1] if k - 1 < len(sigma) else 0.0
    if sk <= rank_tolerance(sigma, (len(sigma), len(sigma))):
        raise RankDeficiencyError(f"{what} has rank below k={k}")
    if relative_gap_from_sigma(sigma, k) < GAP_TOL:
        raise GapError(f"{what} has a vanishing eigengap at k={k}")


def _objective(a, x, b):
    return float(np.linalg.norm(a @ x - b))


def exact_pcr(p: PcrProblem) -> PcrSolution:
    """PCR solution x_k = V_{A,k} Sigma_{A,k}^-1 U_{A,k}^T b."""
    t0 = time.perf_counter()
    a = p.dense_a()
    f = thin_svd(a, p.k)
    require_gap(f.sigma, p.k, "A")
    x = f.v_k @ ((f.u_k.T @ p.b) / f.sigma_k)
    elapsed = time.perf_counter() - t0
    return PcrSolution(
        x=x,
        method="exact",
        r_cols=0,
        objective=_objective(a, x, p.b),
        constraint_norm=float(np.linalg.norm(f.v_rest.T @ x)),
        wall_time=elapsed,
    )


def exact_pcp(p: PcrProblem) -> np.ndarray:
    """Projection of b onto the span of the top-k left singular vectors."""
    a = p.dense_a()
    f = thin_svd(a, p.k)
    require_gap(f.sigma, p.k, "A")
    return f.u_k @ (f.u_k.T @ p.b)


# ---------------------------------------------------------------------------
# Compression factors R, possibly held in implicit form.

class DenseRight:
    """Explicit d x s compression matrix."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)
        self.cols = self.matrix.shape[1]

    def times(self, a):
        out = a @ self.matrix
        return np.asarray(out)

    def expand(self, v):
        return self.matrix @ v

    def materialize(self):
        return self.matrix


class CountSketchRight:
    """R = G^T for a CountSketch G, applied without materializing it.

    A G^T is assembled in one pass over the stored nonzeros of A: column
    j of the product is the signed sum of the columns of A hashed to j.
    """

    def __init__(self, g_op: CountSketch):
        if g_op.kind != "countsketch":
            raise ValueError("CountSketchRight wraps a CountSketch operator")
        self.g = g_op
        self.cols = g_op.out_dim

    def times(self, a):
        if sp.issparse(a):
            return apply_left(self.g, a.T).T
        return apply_left(self.g, np.asarray(a, dtype=float).T).T

    def expand(self, v):
        v = np.asarray(v, dtype=float)
        return self.g.signs * v[self.g.rows]

    def materialize(self):
        return self.g.materialize().T


class ComposedRight:
    """R = R0 @ w for an inner factor R0 and a small dense matrix w."""

    def __init__(self, base, w):
        self.base = base
        self.w = np.asarray(w, dtype=float)
        self.cols = self.w.shape[1]

    def times(self, a):
        return self.base.times(a) @ self.w

    def expand(self, v):
        return self.base.expand(self.w @ v)

    def materialize(self):
        return self.base.materialize() @ self.w


def _as_right(r):
    if isinstance(r, (DenseRight, CountSketchRight, ComposedRight)):
        return r
    return DenseRight(np.atleast_2d(np.asarray(r, dtype=float)))


def build_r_left(p: PcrProblem, s_op) -> np.ndarray:
    """R = top-k right singular basis of the row-compressed matrix S A."""
    sa = apply_left(s_op, p.a)
    f = thin_svd(sa, p.k)
    require_gap(f.sigma, p.k, "S A")
    return f.v_k


def build_r_right(g_op):
    """R = G^T, kept implicit for CountSketch."""
    if g_op.kind == "countsketch":
        return CountSketchRight(g_op)
    if g_op.kind == "subgaussian":
        return DenseRight(g_op.matrix.T)
    raise ValueError(f"unsupported sketch kind {g_op.kind!r} for right sketching")


def build_r_twosided(p: PcrProblem, s_op, g_op):
    """R = G^T V_{S A G^T, k}: column compression followed by row compression."""
    right = build_r_right(g_op)
    c = right.times(p.a)
    d = apply_left(s_op, c)
    f = thin_svd(d, p.k)
    require_gap(f.sigma, p.k, "S A G^T")
    return ComposedRight(right, f.v_k)


def sketched_pcr(p: PcrProblem, r) -> PcrSolution:
    """Rank-k PCR on the compressed matrix A R, mapped back through R.

    x = R V_{AR,k} (A R V_{AR,k})^+ b. The product A R is formed first
    (in one pass over the nonzeros when R is an implicit CountSketch
    transpose) and then factorized, which is the cheap ordering.
    """
    t0 = time.perf_counter()
    rw = _as_right(r)
    if rw.cols < p.k:
        raise ValueError(f"R has {rw.cols} columns, fewer than k={p.k}")
    ar = rw.times(p.a)
    f = thin_svd(ar, p.k)
    require_gap(f.sigma, p.k, "A R")
    gamma = f.v_k @ ((f.u_k.T @ p.b) / f.sigma_k)
    x = rw.expand(gamma)
    elapsed = time.perf_counter() - t0
    return PcrSolution(
        x=x,
        method="sketched",
        r_cols=rw.cols,
        objective=_objective(p.a, x, p.b),
        constraint_norm=None,
        wall_time=elapsed,
    )


def cls(p: PcrProblem, r) -> PcrSolution:
    """Compressed least squares: x = R (A R)^+ b, no rank truncation."""
    t0 = time.perf_counter()
    rw = _as_right(r)
    ar = rw.times(p.a)
    x = rw.expand(pinv_solve(ar, p.b))
    elapsed = time.perf_counter() - t0
    return PcrSolution(
        x=x,
        method="cls",
        r_cols=rw.cols,
        objective=_objective(p.a, x, p.b),
        constraint_norm=None,
        wall_time=elapsed,
    )


def certify(p: PcrProblem, sol: PcrSolution, mode: str) -> ApproxCertificate:
    """Measure the additive objective error and constraint leakage of a
    candidate solution against the exact rank-k reference.

    Diagnostic only: requires a full SVD of A, so intended for problem
    sizes where the exact solution is tractable.
    """
    if mode not in ("pcr", "pcp"):
        raise ValueError("mode must be 'pcr' or 'pcp'")
    a = p.dense_a()
    f = thin_svd(a, p.k)
    require_gap(f.sigma, p.k, "A")
    nb = float(np.linalg.norm(p.b))
    if nb == 0.0:
        raise ValueError("b is zero; certificates are undefined")
    if mode == "pcr":
        x_k = f.v_k @ ((f.u_k.T @ p.b) / f.sigma_k)
        ref = float(np.linalg.norm(a @ x_k - p.b))
        obj = float(np.linalg.norm(a @ sol.x - p.b))
        leak = float(np.linalg.norm(f.v_rest.T @ sol.x))
    else:
        b_k = f.u_k @ (f.u_k.T @ p.b)
        ref = float(np.linalg.norm(b_k - p.b))
        b_tilde = a @ sol.x
        obj = float(np.linalg.norm(b_tilde - p.b))
        leak = float(np.linalg.norm(f.u_rest.T @ b_tilde))
    return ApproxCertificate(
        eps_observed=abs(obj - ref) / nb,
        upsilon_observed=leak / nb,
        reference_objective=ref,
    )


# ---------------------------------------------------------------------------
# Sketch-preconditioned iterative least squares and the input-sparsity solver.

@dataclass
class ProductOperator:
    """Implicit n x k matrix ``left @ right`` that is never formed."""

    left: np.ndarray   # (n, t), possibly large
    right: np.ndarray  # (t, k), small

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[1])

    def matvec(self, v):
        return self.left @ (self.right @ v)

    def rmatvec(self, v):
        return self.right.T @ (self.left.T @ v)

    def sketch_rows(self, op):
        return apply_left(op, self.left) @ self.right


class _DenseLsOperator:
    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)
        self.shape = self.c.shape

    def matvec(self, v):
        return self.c @ v

    def rmatvec(self, v):
        return self.c.T @ v

    def sketch_rows(self, op):
        return apply_left(op, self.c)


PRECOND_SKETCH_FACTOR = 4  # CountSketch rows = 4 k^2 for the preconditioner


def precond_iterative_ls(c, b, eps, seed=0, max_iter=None):
    """Approximate argmin_g |c g - b| to relative metric accuracy eps.

    Returns g with |c (g - g*)|^2 <= eps |c g*|^2 for the exact
    minimizer g*. The column space metric is controlled by CountSketching
    c to O(k^2) rows, QR-factorizing the sketch, and running CGLS with
    the triangular factor as a right preconditioner; the preconditioned
    system has O(1) condition number with high probability, so
    O(log(1/eps)) iterations suffice. When the sketch would not compress
    (4 k^2 >= n) the preconditioner comes from a QR of c itself.
    """
    op = c if hasattr(c, "matvec") else _DenseLsOperator(c)
    n, k = op.shape
    b = as_vector(b, length=n, name="b")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")

    m = PRECOND_SKETCH_FACTOR * k * k
    if m >= n:
        sc = op.left @ op.right if isinstance(op, ProductOperator) else op.c
    else:
        sc = op.sketch_rows(gen_countsketch(m, n, seed))
    sc_sigma = np.linalg.svd(sc, compute_uv=False)
    if sc_sigma[-1] <= rank_tolerance(sc_sigma, sc.shape):
        raise RankDeficiencyError("least-squares matrix is rank deficient")
    r_fac = np.linalg.qr(sc, mode="r")

    def solve_r(v):
        return scipy.linalg.solve_triangular(r_fac, v, lower=False)

    def solve_rt(v):
        return scipy.linalg.solve_triangular(r_fac, v, trans="T", lower=False)

    def bmat(z):
        return op.matvec(solve_r(z))

    def bmat_t(v):
        return solve_rt(op.rmatvec(v))

    if max_iter is None:
        max_iter = 4 * math.ceil(math.log(max(n, 2) / eps))

    # CGLS on the preconditioned system B z = b, z = R gamma. The stop
    # rule |B^T r| <= 0.1 sqrt(eps) |B z| controls |B (z - z*)| because
    # the preconditioned singular values are O(1)-clustered around 1.
    def converged(s_norm2, resid):
        if s_norm2 <= tiny:
            return True
        fitted = float(np.linalg.norm(b - resid))
        return fitted > 0 and math.sqrt(s_norm2) <= 0.1 * math.sqrt(eps) * fitted

    z = np.zeros(k)
    resid = b.copy()
    s = bmat_t(resid)
    pdir = s.copy()
    s_norm2 = float(s @ s)
    tiny = 1e-30 * max(1.0, float(b @ b))
    for _ in range(max_iter):
        if converged(s_norm2, resid):
            break
        q = bmat(pdir)
        alpha = s_norm2 / float(q @ q)
        z += alpha * pdir
        resid -= alpha * q
        s = bmat_t(resid)
        s_new = float(s @ s)
        pdir = s + (s_new / s_norm2) * pdir
        s_norm2 = s_new
    if not converged(s_norm2, resid):
        raise ConvergenceError(
            f"preconditioned least squares did not reach eps={eps} within {max_iter} iterations"
        )
    return solve_r(z)


def input_sparsity_pcp(p: PcrProblem, s=None, t=None, eps=1e-3, seed=0,
                       s_op=None, g_op=None):
    """Approximate PCP via two-sided CountSketch compression.

    Sketches rows with S (s x n) and columns with G (t x d), drops empty
    rows of G, extracts the dominant right basis of D = S A G^T, and
    solves the inner least-squares problem iteratively without forming
    A G^T V. Returns y with |y - x_R|^2 <= eps |x_R|^2 (with constant
    probability) for x_R the exact minimizer over the range of
    R = G^T V_{D,k}. Cost is dominated by one pass over the nonzeros.
    """
    n, d = p.shape
    if s is None:
        s = max(p.k + 1, min(n, 4 * p.k * p.k))
    if t is None:
        t = max(p.k + 1, min(d, 4 * p.k * p.k))
    if s < p.k or t < p.k:
        raise ValueError("sketch sizes must be at least k")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    seed_s, seed_g, seed_ls = (int(x) for x in rng.integers(0, 2**63 - 1, size=3))

    if s_op is None:
        s_op = gen_countsketch(s, n, seed_s)
    if g_op is None:
        g_op = gen_countsketch(t, d, seed_g)

    # Drop the zero rows of G so that G^T has no zero columns and
    # sigma_min(G^T) >= 1.
    occupied = np.unique(g_op.rows)
    g_op = CountSketch(
        out_dim=len(occupied),
        in_dim=d,
        seed=seed_g,
        rows=np.searchsorted(occupied, g_op.rows).astype(np.int64),
        signs=g_op.signs,
    )

    right = CountSketchRight(g_op)
    c = right.times(p.a)
    d_mat = apply_left(s_op, c)
    f = thin_svd(d_mat, p.k)
    require_gap(f.sigma, p.k, "S A G^T")

    gamma = precond_iterative_ls(ProductOperator(c, f.v_k), p.b, eps / d, seed=seed_ls)
    return right.expand(f.v_k @ gamma)
