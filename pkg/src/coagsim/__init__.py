"""Steady states of multicomponent coagulation with source injection.

Clusters carry a composition vector counting monomers of each of d species;
pairs merge at a kernel-controlled rate on the truncated size lattice, small
clusters are injected at constant rates, and monomers leaving through the
truncation boundary balance the injection at stationarity.  The package
solves for those steady states and measures their flux, scaling, and
direction-localization diagnostics.
"""

from .dynamics import (
    DivergenceError,
    PopulationState,
    SourceSpec,
    SteadyStateReport,
    bundled_test_functions,
    export_state_csv,
    integrate_to_steady_state,
    load_checkpoint,
    rhs,
    save_checkpoint,
    weak_form_residual,
)
from .kernels import (
    EnvelopeReport,
    ExistenceVerdict,
    KernelEvaluationError,
    KernelSpec,
    StateTransform,
    additive,
    brownian,
    constant,
    custom,
    evaluate,
    evaluate_many,
    existence_gate,
    product_powerlaw,
    reduce_to_p_zero,
    size_weighted,
    validate_envelope,
)
from .lattice import Composition, LatticeIndex, PolarPoint, enumerate_lattice, shell_sum
from .localization import (
    DichotomyResult,
    DichotomyViolation,
    LocalizationProfile,
    SimplexMeasure,
    dichotomy,
    dispersion,
    effective_theta0,
    lambda_measure,
    localization_profile,
)
from .observables import (
    BoundCheckReport,
    FluxCurve,
    ScalingFit,
    TailBoundResult,
    fit_shell_scaling,
    flux,
    injection_vector,
    tail_bound_from_shells,
    two_sided_bound_check,
    calibrate_bound_constants,
)
from .reference import (
    PowerLawFluxSolution,
    QuadratureError,
    RadialMeasure,
    brute_force_rhs,
    c4_flux,
    radial_flux,
    reduce_to_radial,
)

__version__ = "0.1.0"

__all__ = [
    "Composition",
    "LatticeIndex",
    "PolarPoint",
    "enumerate_lattice",
    "shell_sum",
    "KernelSpec",
    "KernelEvaluationError",
    "EnvelopeReport",
    "ExistenceVerdict",
    "StateTransform",
    "constant",
    "brownian",
    "additive",
    "product_powerlaw",
    "size_weighted",
    "custom",
    "evaluate",
    "evaluate_many",
    "validate_envelope",
    "existence_gate",
    "reduce_to_p_zero",
    "PopulationState",
    "SourceSpec",
    "SteadyStateReport",
    "DivergenceError",
    "rhs",
    "integrate_to_steady_state",
    "weak_form_residual",
    "bundled_test_functions",
    "save_checkpoint",
    "load_checkpoint",
    "export_state_csv",
    "FluxCurve",
    "ScalingFit",
    "BoundCheckReport",
    "TailBoundResult",
    "injection_vector",
    "flux",
    "fit_shell_scaling",
    "two_sided_bound_check",
    "calibrate_bound_constants",
    "tail_bound_from_shells",
    "SimplexMeasure",
    "LocalizationProfile",
    "DichotomyResult",
    "DichotomyViolation",
    "lambda_measure",
    "dispersion",
    "localization_profile",
    "dichotomy",
    "effective_theta0",
    "PowerLawFluxSolution",
    "RadialMeasure",
    "QuadratureError",
    "c4_flux",
    "reduce_to_radial",
    "radial_flux",
    "brute_force_rhs",
    "__version__",
]
