"""Dense linear algebra kernels: truncated SVD, pseudo-inverse solves,
orthogonal projections, principal angles and spectral diagnostics.

Everything here is deterministic. Matrices are plain 2-D float64
``numpy.ndarray`` objects; bases are matrices with orthonormal columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, RankDeficiencyError

ORTHO_TOL = 1e-10


def as_matrix(a, name="matrix"):
    """Validate and return ``a`` as a finite 2-D float64 array."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return m


def as_vector(v, length=None, name="vector"):
    x = np.asarray(v, dtype=float).ravel()
    if length is not None and x.shape[0] != length:
        raise ValueError(f"{name} has length {x.shape[0]}, expected {length}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return x


def rank_tolerance(sigma, shape):
    """Cutoff below which singular values are treated as zero.

    Uses the standard sigma_max * max(m, n) * machine-epsilon rule.
    """
    if len(sigma) == 0:
        return 0.0
    return sigma[0] * max(shape) * np.finfo(float).eps


def check_orthonormal(q, name="basis", tol=ORTHO_TOL):
    """Require Q^T Q = I within ``tol`` in Frobenius norm."""
    q = as_matrix(q, name)
    gram = q.T @ q
    err = np.linalg.norm(gram - np.eye(q.shape[1]))
    if err > tol:
        raise ValueError(f"{name} columns are not orthonormal (|Q^T Q - I|_F = {err:.3e})")
    return q


def spectral_norm(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


@dataclass(frozen=True)
class TruncatedSvd:
    """A thin SVD split at index k.

    ``u_k @ diag(sigma_k) @ v_k.T + u_rest @ diag(sigma_rest) @ v_rest.T``
    reconstructs the source matrix. Singular values are nonincreasing
    across the split and column signs are fixed so the largest-magnitude
    entry of each left singular vector is positive.
    """

    u_k: np.ndarray
    sigma_k: np.ndarray
    v_k: np.ndarray
    u_rest: np.ndarray
    sigma_rest: np.ndarray
    v_rest: np.ndarray
    k: int

    @property
    def u(self):
        return np.hstack([self.u_k, self.u_rest])

    @property
    def sigma(self):
        return np.concatenate([self.sigma_k, self.sigma_rest])

    @property
    def v(self):
        return np.hstack([self.v_k, self.v_rest])

    def reconstruct(self):
        return (self.u * self.sigma) @ self.v.T


def _fix_signs(u, vt):
    # Largest-magnitude entry of each left singular vector made positive;
    # right vectors flipped along to keep the product unchanged.
    idx = np.argmax(np.abs(u), axis=0)
    flip = np.sign(u[idx, np.arange(u.shape[1])])
    flip[flip == 0] = 1.0
    return u * flip, vt * flip[:, None]


def thin_svd(m, k):
    """Thin SVD of ``m`` split at index ``k``.

    Parameters
    ----------
    m : array-like, (rows, cols)
    k : int
        Split index, 1 <= k <= min(rows, cols).

    Returns
    -------
    TruncatedSvd
    """
    m = as_matrix(m)
    r = min(m.shape)
    if not 1 <= k <= r:
        raise ValueError(f"split index k={k} out of range [1, {r}]")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD failed to converge: {exc}") from exc
    u, vt = _fix_signs(u, vt)
    v = vt.T
    return TruncatedSvd(
        u_k=u[:, :k].copy(),
        sigma_k=s[:k].copy(),
        v_k=v[:, :k].copy(),
        u_rest=u[:, k:].copy(),
        sigma_rest=s[k:].copy(),
        v_rest=v[:, k:].copy(),
        k=k,
    )


def singular_values(m):
    m = as_matrix(m)
    try:
        return np.linalg.svd(m, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD failed to converge: {exc}") from exc


def pinv_solve(m, rhs):
    """Minimum-norm least-squares solution ``m^+ @ rhs``.

    Singular values at or below the rank tolerance are inverted to zero,
    so the output has no component along numerically-null directions.
    """
    m = as_matrix(m)
    rhs = as_vector(rhs, length=m.shape[0], name="rhs")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    tol = rank_tolerance(s, m.shape)
    inv = np.where(s > tol, np.divide(1.0, s, out=np.zeros_like(s), where=s > 0), 0.0)
    return vt.T @ (inv * (u.T @ rhs))


def project(basis, v):
    """Orthogonal projection Q @ (Q^T v) onto the span of ``basis``."""
    q = check_orthonormal(basis)
    v = as_vector(v, length=q.shape[0], name="v")
    return q @ (q.T @ v)


def subspace_distance(u, w):
    """sin of the largest principal angle between two equal-rank subspaces.

    Computed as sqrt(1 - sigma_min(U^T W)^2), which equals the spectral
    norm of the difference of the two orthogonal projectors.
    """
    u = check_orthonormal(u, "u")
    w = check_orthonormal(w, "w")
    if u.shape[0] != w.shape[0]:
        raise ValueError("bases live in different ambient dimensions")
    if u.shape[1] != w.shape[1]:
        raise ValueError(
            f"column counts differ ({u.shape[1]} vs {w.shape[1]}); "
            "the distance is defined for equal-dimension subspaces only"
        )
    sigma = np.linalg.svd(u.T @ w, compute_uv=False)
    smin = min(1.0, sigma[-1] if sigma.size else 0.0)
    return float(np.sqrt(max(0.0, 1.0 - smin * smin)))


def tan_theta_norm(q, w_k, w_kplus):
    """Spectral norm of tan of the principal angles between Q and W_k.

    Evaluates |(W_k+^T Q)(W_k^T Q)^+|_2 where [W_k W_k+] is an orthogonal
    split of the ambient space. Requires W_k^T Q to have full row rank.
    """
    q = check_orthonormal(q, "q")
    w_k = check_orthonormal(w_k, "w_k")
    w_kplus = check_orthonormal(w_kplus, "w_kplus")
    k = w_k.shape[1]
    top = w_k.T @ q
    bottom = w_kplus.T @ q
    u, s, vt = np.linalg.svd(top, full_matrices=False)
    tol = rank_tolerance(s, top.shape)
    if np.sum(s > tol) < k:
        raise RankDeficiencyError("W_k^T Q is rank deficient; the tangent is unbounded")
    pinv_top = vt.T @ ((1.0 / s)[:, None] * u.T)
    return spectral_norm(bottom @ pinv_top)


def stable_rank(m):
    """Frobenius-norm-squared over spectral-norm-squared of ``m``."""
    m = as_matrix(m)
    s2 = spectral_norm(m) ** 2
    if s2 == 0.0:
        raise ValueError("stable rank is undefined for the zero matrix")
    return float(np.linalg.norm(m, "fro") ** 2 / s2)


def relative_gap(m, k):
    """(sigma_k^2 - sigma_{k+1}^2) / sigma_1^2 for the matrix ``m``."""
    m = as_matrix(m)
    r = min(m.shape)
    if not 1 <= k < r:
        raise ValueError(f"gap index k={k} out of range [1, {r - 1}]")
    s = singular_values(m)
    if s[0] == 0.0:
        raise ValueError("relative gap is undefined for the zero matrix")
    return float((s[k - 1] ** 2 - s[k] ** 2) / s[0] ** 2)


def relative_gap_from_sigma(s, k):
    """Same as :func:`relative_gap` but from precomputed singular values."""
    s = np.asarray(s, dtype=float)
    if s[0] == 0.0:
        raise ValueError("relative gap is undefined for the zero matrix")
    sk1 = s[k] if k < len(s) else 0.0
    return float((s[k - 1] ** 2 - sk1 ** 2) / s[0] ** 2)
