"""Statistical evaluation under the fixed-design model.

The data matrix A is deterministic; responses are b = f + noise with
independent zero-mean sigma^2 entries. The excess risk of an estimator
theta is E |A theta - A x*|^2 / n where x* is the minimum-norm optimal
predictor (A x* = P_A f). For any compression M the risk decomposes
exactly into a bias term |(I - P_{AM}) A x*|^2 / n plus a variance term
sigma^2 rank(AM) / n, which gives closed-form references for Monte
Carlo checks and for the risk bounds of the sketched estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    as_matrix,
    as_vector,
    pinv_solve,
    rank_tolerance,
    subspace_distance,
    thin_svd,
)
from .sketch import sketch_rows_for_gram, DEFAULT_GRAM_CONST

MC_CAP_FACTOR = 4  # desk-scale ceiling: sketch rows <= 4x the sketched dimension


@dataclass(frozen=True)
class FixedDesignModel:
    a: np.ndarray
    f: np.ndarray
    sigma: float
    x_star: np.ndarray | None = None
    noise: str = "gaussian"

    def __post_init__(self):
        a = as_matrix(self.a, "a")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "f", as_vector(self.f, length=a.shape[0], name="f"))
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.noise not in ("gaussian", "rademacher"):
            raise ValueError("noise must be 'gaussian' or 'rademacher'")
        if self.x_star is None:
            object.__setattr__(self, "x_star", pinv_solve(a, self.f))
        else:
            xs = as_vector(self.x_star, length=a.shape[1], name="x_star")
            resid = np.linalg.norm(a @ xs - a @ pinv_solve(a, self.f))
            if resid > 1e-8:
                raise ValueError("x_star does not reproduce the projected mean")
            object.__setattr__(self, "x_star", xs)

    @property
    def n(self):
        return self.a.shape[0]

    def optimal_prediction(self):
        return self.a @ self.x_star


@dataclass(frozen=True)
class RiskEstimate:
    mean: float
    std_error: float
    trials: int

    def __post_init__(self):
        if self.trials < 2:
            raise ValueError("at least two trials are needed for a standard error")
        if self.std_error < 0:
            raise ValueError("standard error must be nonnegative")


def planted_spectrum(n, d, k, gap_target, tail_decay=0.25):
    """Singular values with top-k flat at 1 and relative gap_k == gap_target."""
    m = min(n, d)
    s2 = np.ones(m)
    s2[k:] = (1.0 - gap_target) * tail_decay ** np.arange(m - k)
    return np.sqrt(s2)


def planted_matrix(n, d, k, gap_target, seed, tail_decay=0.25):
    """Random-orientation matrix with a controlled spectral gap at k.

    A = U diag(s) V^T with Haar-distributed orthogonal factors and the
    spectrum from :func:`planted_spectrum`, so relative_gap(A, k) equals
    gap_target by construction.
    """
    if not 1 <= k < min(n, d):
        raise ValueError(f"k={k} must lie in [1, {min(n, d) - 1}]")
    if not 0 < gap_target < 1:
        raise ValueError("gap_target must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    m = min(n, d)
    u = _haar(rng, n, m)
    v = _haar(rng, d, m)
    return (u * planted_spectrum(n, d, k, gap_target, tail_decay)) @ v.T


def _haar(rng, rows, cols):
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    sign = np.sign(np.diag(r))
    sign[sign == 0] = 1.0
    return q * sign


def sample_response(model: FixedDesignModel, seed):
    """One draw of b = f + noise."""
    rng = np.random.default_rng(seed)
    n = model.n
    if model.noise == "gaussian":
        xi = rng.standard_normal(n)
    else:
        xi = 2.0 * (rng.random(n) < 0.5) - 1.0
    return model.f + model.sigma * xi


def excess_risk_mc(model: FixedDesignModel, estimator, trials, seed) -> RiskEstimate:
    """Monte Carlo excess risk of ``estimator(A, b) -> x`` over fresh noise."""
    if trials < 2:
        raise ValueError("trials must be at least 2")
    opt = model.optimal_prediction()
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=trials)
    samples = np.empty(trials)
    for i, si in enumerate(seeds):
        b = sample_response(model, int(si))
        try:
            x = estimator(model.a, b)
        except Exception as exc:
            raise RuntimeError(f"estimator failed on trial {i}") from exc
        samples[i] = np.linalg.norm(model.a @ x - opt) ** 2 / model.n
    return RiskEstimate(
        mean=float(samples.mean()),
        std_error=float(samples.std(ddof=1) / math.sqrt(trials)),
        trials=trials,
    )


def bias_variance(model: FixedDesignModel, m):
    """Closed-form excess-risk split of the estimator x = M (A M)^+ b.

    Returns (bias, variance) with bias = |(I - P_{AM}) A x*|^2 / n and
    variance = sigma^2 rank(AM) / n; their sum is the exact excess risk.
    """
    m = as_matrix(m, "m")
    am = model.a @ m
    u, s, _ = np.linalg.svd(am, full_matrices=False)
    rank = int(np.sum(s > rank_tolerance(s, am.shape)))
    opt = model.optimal_prediction()
    if rank == 0:
        bias = float(opt @ opt) / model.n
    else:
        ur = u[:, :rank]
        resid = opt - ur @ (ur.T @ opt)
        bias = float(resid @ resid) / model.n
    variance = model.sigma**2 * rank / model.n
    return bias, variance


def exact_risk(model: FixedDesignModel, m):
    return float(sum(bias_variance(model, m)))


def classic_pcr_risk_bound(model: FixedDesignModel, k):
    """|V_A^T x*|_inf^2 sum_{i>k} sigma_i^2 / n + sigma^2 k / n."""
    f = thin_svd(model.a, k)
    coeff = np.max(np.abs(f.v.T @ model.x_star)) ** 2
    return float(coeff * np.sum(f.sigma_rest**2) / model.n
                 + model.sigma**2 * k / model.n)


@dataclass(frozen=True)
class RiskBoundReport:
    kind: str
    risk: float
    bound: float
    slack: float
    prerequisite_ok: bool
    details: dict = field(default_factory=dict)

    @property
    def holds(self):
        return self.prerequisite_ok and self.slack >= -1e-10


def risk_bound_check(model: FixedDesignModel, k, kind, params=None) -> RiskBoundReport:
    """Evaluate one of the excess-risk bounds against the exact risk.

    kind 'pcr_corollary' needs no parameters. 'stat_structural' takes an
    orthonormal d x k matrix ``r`` and a level ``nu`` and requires
    d2(R, V_{A,k}) <= nu (1 + nu^2)^(-1/2). 'struct_stat_pcp' takes a
    d x s matrix ``r`` and ``nu`` and requires
    d2(U_{AR,k}, U_{A,k}) <= nu. Prerequisite violations are reported in
    the result, never silently skipped.
    """
    params = params or {}
    f = thin_svd(model.a, k)
    sk1 = f.sigma_rest[0] if len(f.sigma_rest) else 0.0
    xs2 = float(model.x_star @ model.x_star)
    n = model.n

    if kind == "pcr_corollary":
        risk = exact_risk(model, f.v_k)
        bound = xs2 * sk1**2 / n + model.sigma**2 * k / n
        return RiskBoundReport(kind, risk, bound, bound - risk, True)

    if kind == "stat_structural":
        r = as_matrix(params["r"], "r")
        nu = float(params["nu"])
        dist = subspace_distance(r, f.v_k)
        ok = dist <= nu / math.sqrt(1.0 + nu**2) + 1e-12
        risk = exact_risk(model, r)
        bound = (1.0 + nu) * xs2 * sk1**2 / n + model.sigma**2 * k / n
        return RiskBoundReport(kind, risk, bound, bound - risk, ok,
                               details={"d2": dist, "nu": nu})

    if kind == "struct_stat_pcp":
        r = as_matrix(params["r"], "r")
        nu = float(params["nu"])
        ar = model.a @ r
        f_ar = thin_svd(ar, k)
        dist = subspace_distance(f_ar.u_k, f.u_k)
        ok = dist <= nu + 1e-12
        risk = exact_risk(model, r @ f_ar.v_k)
        bound = exact_risk(model, f.v_k) + (2.0 * nu + nu**2) * float(model.f @ model.f) / n
        return RiskBoundReport(kind, risk, bound, bound - risk, ok,
                               details={"d2": dist, "nu": nu})

    raise ValueError(f"unknown risk bound kind {kind!r}")


# ---------------------------------------------------------------------------
# Converting a target subspace accuracy nu into sketch sizes. The Gram
# tolerance eps below which the Davis-Kahan chain delivers nu follows
# the sketching guarantees; the row counts then come from
# sketch_rows_for_gram. At desk scale those counts exceed the matrix
# dimensions, so Monte Carlo helpers cap them at a small multiple of
# the sketched dimension (the conclusions are what the suite verifies).

def left_gram_eps(nu, gap):
    z = nu / math.sqrt(1.0 + nu**2)
    return gap * z / (1.0 + z)


def right_gram_eps(nu, gap):
    return gap * nu / (1.0 + nu)


def twosided_gram_eps(nu, gap_a, gap_c=None):
    """(eps for G against A^T, eps for S against A G^T)."""
    if gap_c is None:
        gap_c = gap_a
    half = nu / 2.0
    eps_g = gap_a * half / (1.0 + half)
    w = half / math.sqrt(1.0 + half**2)
    eps_s = gap_c * w / (1.0 + w)
    return eps_g, eps_s


def capped_sketch_rows(eps, delta, stable_rank, in_dim, kind="subgaussian",
                       const=DEFAULT_GRAM_CONST, cap_factor=MC_CAP_FACTOR):
    """Gram-property row count, clamped to cap_factor * in_dim.

    Beyond a small multiple of the sketched dimension the exact
    computation is cheaper than the sketch, so desk-scale experiments
    stop there.
    """
    rows = sketch_rows_for_gram(kind, stable_rank, eps, delta, const=const)
    return int(min(rows, cap_factor * in_dim))
