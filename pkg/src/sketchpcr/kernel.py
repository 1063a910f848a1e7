"""Polynomial-kernel PCR: exact via the Gram matrix, sketched via
TensorSketch.

The degree-q polynomial kernel K(x, z) = (x^T z + c)^q corresponds to an
implicit feature matrix Phi with d^q columns. The exact path never forms
Phi: it eigendecomposes the n x n Gram matrix and keeps dual
coefficients. The sketched path compresses Phi's columns with
TensorSketch and runs ordinary rank-k PCR in the t-dimensional sketched
feature space. The non-homogeneous offset c is handled by appending a
constant sqrt(c) feature to every data point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GapError, RankDeficiencyError
from .linalg import as_matrix, as_vector, thin_svd
from .sketch import tensorsketch_apply
from .solvers import require_gap

EIG_CLAMP = 1e-9   # relative floor below which eigenvalues count as zero
GAP_TOL = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    degree: int
    offset: float = 0.0

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("kernel degree must be at least 1")
        if self.offset < 0:
            raise ValueError("kernel offset must be nonnegative")


@dataclass(frozen=True)
class KernelModel:
    mode: str                 # "exact" or "sketched"
    k: int
    spec: KernelSpec
    train: np.ndarray | None = field(default=None, repr=False)  # exact only
    alpha: np.ndarray | None = field(default=None, repr=False)  # exact only
    ts: object | None = None                                    # sketched only
    gamma: np.ndarray | None = field(default=None, repr=False)  # sketched only


def kernel_matrix(a, spec: KernelSpec):
    """n x n matrix with entries (a_i^T a_j + c)^q; symmetric PSD."""
    a = as_matrix(a, "a")
    k = (a @ a.T + spec.offset) ** spec.degree
    return (k + k.T) / 2.0


def augment_offset(a, offset):
    """Append the constant sqrt(c) feature that linearizes the offset."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if offset == 0.0:
        return a
    col = np.full((a.shape[0], 1), math.sqrt(offset))
    return np.hstack([a, col])


def exact_kernel_pcr(k_mat, b, k, train=None, spec=None) -> KernelModel:
    """Dual rank-k PCR coefficients from the top-k eigenpairs of K.

    alpha = U_{K,k} diag(lambda_i^-1) U_{K,k}^T b. Pass the training rows
    to enable prediction.
    """
    k_mat = as_matrix(k_mat, "k_mat")
    n = k_mat.shape[0]
    if k_mat.shape[1] != n:
        raise ValueError("kernel matrix must be square")
    b = as_vector(b, length=n, name="b")
    if not 1 <= k <= n:
        raise ValueError(f"rank k={k} out of range [1, {n}]")
    evals, evecs = np.linalg.eigh(k_mat)
    evals, evecs = evals[::-1].copy(), evecs[:, ::-1].copy()
    top = evals[0]
    if top <= 0:
        raise RankDeficiencyError("kernel matrix has no positive eigenvalues")
    # Floating-point PSD repair: tiny negative eigenvalues clamp to zero.
    evals[(evals < 0) & (evals >= -EIG_CLAMP * top)] = 0.0
    lam_k = evals[k - 1]
    lam_next = evals[k] if k < n else 0.0
    if lam_k <= EIG_CLAMP * top:
        raise RankDeficiencyError(f"kernel matrix has rank below k={k}")
    if (lam_k - lam_next) / top < GAP_TOL:
        raise GapError(f"kernel spectrum has a vanishing eigengap at k={k}")
    u_k = evecs[:, :k]
    alpha = u_k @ ((u_k.T @ b) / evals[:k])
    return KernelModel(mode="exact", k=k, spec=spec or KernelSpec(degree=1),
                       train=None if train is None else as_matrix(train),
                       alpha=alpha)


def kernel_predict(model: KernelModel, z):
    """f(z) = sum_i K(z, a_i) alpha_i for an exact model."""
    if model.mode != "exact":
        raise ValueError("kernel_predict needs an exact model")
    if model.train is None:
        raise ValueError("model was fit without training rows")
    z = as_vector(z, length=model.train.shape[1], name="z")
    kvec = (model.train @ z + model.spec.offset) ** model.spec.degree
    return float(kvec @ model.alpha)


def fit_exact(a, b, k, spec: KernelSpec) -> KernelModel:
    """Convenience wrapper: Gram matrix plus dual PCR in one call."""
    a = as_matrix(a, "a")
    return exact_kernel_pcr(kernel_matrix(a, spec), b, k, train=a, spec=spec)


def sketched_feature_matrix(a, ts, offset=0.0):
    """Rows of Phi R computed by TensorSketch, one training row at a time."""
    a = augment_offset(as_matrix(a, "a"), offset)
    if ts.in_dim != a.shape[1]:
        raise ValueError(
            f"TensorSketch expects {ts.in_dim} features, data has {a.shape[1]} "
            "(offset augmentation adds one)"
        )
    out = np.empty((a.shape[0], ts.out_dim))
    for i in range(a.shape[0]):
        out[i] = tensorsketch_apply(ts, a[i])
    return out


def sketched_kernel_pcr(a, b, k, ts, offset=0.0) -> KernelModel:
    """Rank-k PCR in the TensorSketched feature space.

    gamma = V_{Phi R, k} (Phi R V_{Phi R, k})^+ b, computed without ever
    materializing the d^q-column feature matrix Phi.
    """
    a = as_matrix(a, "a")
    b = as_vector(b, length=a.shape[0], name="b")
    phi_r = sketched_feature_matrix(a, ts, offset)
    if not 1 <= k <= min(phi_r.shape):
        raise ValueError(f"rank k={k} out of range for the sketched features")
    f = thin_svd(phi_r, k)
    require_gap(f.sigma, k, "Phi R")
    gamma = f.v_k @ ((f.u_k.T @ b) / f.sigma_k)
    return KernelModel(mode="sketched", k=k, spec=KernelSpec(ts.degree, offset),
                       ts=ts, gamma=gamma)


def sketched_kernel_predict(model: KernelModel, z):
    """f(z) = <TensorSketch(phi(z)), gamma> for a sketched model."""
    if model.mode != "sketched":
        raise ValueError("sketched_kernel_predict needs a sketched model")
    z = augment_offset(np.asarray(z, dtype=float).reshape(1, -1), model.spec.offset)[0]
    return float(tensorsketch_apply(model.ts, z) @ model.gamma)


def theorem_sketch_cols(k_mat, k, degree, nu, delta, const=1.0):
    """Sketch width from the kernel risk guarantee.

    ceil(const * 3^q tr(K)^2 / ((lambda_k - lambda_{k+1})^2 nu^2 delta)).
    Exposed for completeness; it is pessimistic at small scale, so
    callers usually pick the width directly.
    """
    k_mat = as_matrix(k_mat, "k_mat")
    if not 0 < nu < 0.5 or not 0 < delta < 0.5:
        raise ValueError("nu and delta must lie in (0, 1/2)")
    evals = np.sort(np.linalg.eigvalsh(k_mat))[::-1]
    gap = evals[k - 1] - (evals[k] if k < len(evals) else 0.0)
    if gap <= 0:
        raise GapError("kernel spectrum has no eigengap at k")
    trace = float(np.sum(np.clip(evals, 0.0, None)))
    return max(1, math.ceil(const * 3.0**degree * trace**2 / (gap**2 * nu**2 * delta)))
