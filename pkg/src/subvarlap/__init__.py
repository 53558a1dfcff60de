"""Numerics for variable-exponent Lebesgue spaces on Carnot groups.

Geometry of the Heisenberg group and R^n on grids, Luxemburg norms,
Muckenhoupt estimates, maximal and fractional operators, Poincaré ratio
sweeps and a variational solver for the degenerate p(x)-Laplacian.
"""
from .errors import *  # noqa: F401,F403
from .geometry import (
    BallFamily,
    CarnotGroup,
    GridDomain,
    ball_mask,
    ball_measure,
    ball_reduce,
    dilate,
    group_multiply,
    higher_order_gradient,
    homogeneous_quasi_distance,
    horizontal_gradient,
    quasi_triangle_constant,
)
from .lebesgue import (
    conjugate_exponent,
    exponent_bounds,
    jump_condition_check,
    log_holder_check,
    luxemburg_norm,
    modular,
    sobolev_exponent,
)
from .muckenhoupt import apq_constant_estimate, classify_growth, doubling_check
from .operators import (
    MaximalOperator,
    fractional_integral,
    maximal_operator,
    operator_norm_estimate,
    probe_family,
    rubio_de_francia,
    sawyer_wheeden_check,
    truncated_kernel,
    weak_type_check,
)
from .plaplacian import (
    DirichletProblem,
    EllipticityField,
    coercivity_probe,
    energy,
    energy_gradient,
    solve_dirichlet,
    weak_residual,
)
from .poincare import (
    TestFunctionFamily,
    domain_mean,
    level_truncation,
    poincare_ratio,
    ratio_sweep,
    refinement_sweep,
    representation_check,
)

__version__ = "0.1.0"
