"""Multisymplectic geometry toolkit for covariant Hamiltonian field theory."""

from .algebra import (
    AlgebraError,
    Chart,
    ChartMismatchError,
    ChartSpec,
    DegreeError,
    Form,
    FormField,
    Multivector,
    contract,
    exterior_derivative,
    wedge,
    wedge_all,
)
from .dedonder_weyl import (
    GaugeError,
    HamiltonianMultivector,
    SingularityError,
    build_hamiltonian_nvector,
    dw_rhs,
    hamiltonian_from_lagrangian,
    integrate_hamiltonian_flow,
    invert_polymomenta,
    legendre_transform,
    lift_tangent_from_patch,
    verify_defining_relation,
)
from .expr import EvaluationError, ExprSyntaxError, PotentialExpr, UnknownIdentifierError, parse_potential
from .field_solver import (
    DivergenceError,
    FieldState,
    GridSpec,
    Trajectory,
    euler_lagrange_oracle,
    evolve,
    lift_solution_tangent,
    plane_wave,
    standing_wave,
    step,
)
from .hamilton_jacobi import (
    DomainBox,
    HJPotential,
    PhaseSection,
    check_theorem2_conditions,
    foliation_integrability_check,
    geometric_form_check,
    hj_residual,
    project_distribution,
    section_from_potential,
    translate_fiber,
)
from .phase_space import (
    ChartPoint,
    ConfigPoint,
    build_omega,
    build_theta,
    nondegeneracy_check,
    project_to_E,
)
from .theories import (
    DWHamiltonian,
    JetPoint,
    LagrangianDensity,
    Theory,
    free_scalar,
    get_theory,
    oscillator,
    sine_gordon,
)

__version__ = "0.1.0"
