"""Sketching-based approximate principal component regression and projection.

A small numpy/scipy library for PCR/PCP with exact SVD solvers, sketched
solvers (left, right, two-sided, compressed least squares), an
input-sparsity solver, a one-pass streaming estimator, polynomial-kernel
PCR via TensorSketch, and fixed-design risk evaluation utilities.
"""

from .errors import ConvergenceError, GapError, RankDeficiencyError
from .evaluation import (
    FixedDesignModel,
    RiskBoundReport,
    RiskEstimate,
    bias_variance,
    capped_sketch_rows,
    classic_pcr_risk_bound,
    exact_risk,
    excess_risk_mc,
    left_gram_eps,
    planted_matrix,
    planted_spectrum,
    right_gram_eps,
    risk_bound_check,
    sample_response,
    twosided_gram_eps,
)
from .kernel import (
    KernelModel,
    KernelSpec,
    exact_kernel_pcr,
    fit_exact,
    kernel_matrix,
    kernel_predict,
    sketched_kernel_pcr,
    sketched_kernel_predict,
    theorem_sketch_cols,
)
from .linalg import (
    TruncatedSvd,
    pinv_solve,
    project,
    relative_gap,
    stable_rank,
    subspace_distance,
    tan_theta_norm,
    thin_svd,
)
from .sketch import (
    CountSketch,
    GramErrorReport,
    SubgaussianSketch,
    TensorSketch,
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
from .solvers import (
    ApproxCertificate,
    PcrProblem,
    PcrSolution,
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
from .streaming import (
    StreamState,
    stream_finalize,
    stream_init,
    stream_init_with_specs,
    stream_update,
)

__version__ = "0.1.0"
