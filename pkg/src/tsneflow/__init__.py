"""Exact t-SNE as a continuous KL gradient flow, with boundedness diagnostics."""
from .affinity_hi import (
    CondAffinity,
    CpBoundReport,
    Dataset,
    SymAffinity,
    calibrate,
    conditional_row,
    cp_bound_report,
    perp_from_zeta,
    shannon_entropy,
    solve_sigma,
    symmetrize,
)
from .affinity_lo import (
    EmbeddingState,
    q_matrix,
    q_prime_matrix,
    qprime_sq_bound,
    qprime_sq_sum_check,
    student_kernel,
)
from .diagnostics import (
    TheoryReport,
    boundedness_radius,
    derivative_upper_bound,
    detect_tau,
    pairwise_sq_sum,
    pairwise_sq_sum_derivative,
    ratio_constant_D,
    theorem_condition,
    theory_report,
)
from .errors import TsneFlowError
from .flow import (
    FlowOptions,
    FlowTrace,
    descend,
    discrete_step,
    flow_step,
    initial_embedding,
    integrate,
    integrate_many,
    kl_divergence,
    kl_gradient,
)
from .geometry import (
    ManifoldSpec,
    continuum_entropy,
    estimate_intrinsic_dim,
    kernel_integral,
    sample,
    w1_convergence_curve,
    w1_exact,
)

__version__ = "0.1.0"
