"""Concave elliptic operators on flat complex tori.

Numerical toolkit for equations ``F(A + ddbar(phi)) = c`` built from
symmetric functions of eigenvalues, the cohomological formulas for ``c``,
and Khovanskii-Teissier type inequalities between intersection numbers.
"""

from .cohomology import (
    CohomologicalPrediction,
    CohomologicalPredictor,
    arg_pv,
    brunn_minkowski_gap,
    dhym_identity_gap,
    dhym_sides,
    kt_hessian_gap,
    mixed_intersection,
    obstruction_derivative,
    predict,
    predicted_c_hessian,
    predicted_c_quotient,
    predicted_phase,
    quotient_convexity_gap,
    quotient_kt_sides,
    volume,
    z_functional,
)
from .exceptions import *  # noqa: F401,F403
from .operators import (
    GammaK,
    Hessian,
    HessianQuotient,
    LagrangianPhase,
    NMinusOneHessian,
    OperatorSpec,
    PInverseGammaK,
    SupercriticalPhase,
    eigenvalues,
    evaluate_f,
    gradient_F,
    hessian_quadratic_form,
    in_cone,
    p_map,
    sigma_k,
    spec_from_dict,
    zhat_and_phi,
)
from .solver import (
    ConstantRHSSolver,
    SolveOptions,
    SolveResult,
    c_of_class,
    check_residual,
    continuity_path,
    solve,
)
from .torus import (
    ClassSpec,
    FormField,
    ScalarField,
    TorusGeometry,
    combine_classes,
    complex_hessian,
    field_to_csv,
    form_from_class,
    interpolate_classes,
    intersection_number,
    mixed_discriminant,
    wedge_integral,
)

__version__ = "0.1.0"
