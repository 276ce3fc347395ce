"""Estimation of group-level policy effects on model-based outcomes.

Group parameters are defined by linear moment systems on unit-level data;
policy effects on them are estimated either in two steps (per-group estimates,
then an explicit weighted regression) or in one pooled step, whose implicit
weights this package makes visible, bounds, and reproduces in synthetic
experiments.
"""

from . import diagnostics, exceptions, first_stage, gmm, md, moments, simlab
from .diagnostics import (
    BoundReport,
    SelectionReport,
    banking_bias,
    banking_weight,
    md_bias_bound,
    selection_report,
)
from .first_stage import (
    AuxiliaryDesign,
    GroupEstimate,
    estimate_group,
    estimate_group_alt,
    estimate_groups,
    ipw_tau,
)
from .gmm import (
    BinaryWeightScenario,
    DiscreteScenario,
    GmmWeights,
    bias_decomposition,
    consistency_condition,
    effective_weight,
    fit_gmm_pooled,
    gmm_plim,
)
from .md import (
    FitResult,
    OracleSpec,
    b0_basis_diagonal,
    b0_basis_full,
    b0_basis_scalar,
    ehw_vcov,
    fit_md,
    gamma_perp_projector,
    kappa,
)
from .moments import (
    GroupSample,
    MomentAverages,
    UnitMoment,
    average_moments,
    build_did_unit,
    build_iv_unit,
    solve_theta,
)

__version__ = "0.1.0"

__all__ = [
    "AuxiliaryDesign",
    "BinaryWeightScenario",
    "BoundReport",
    "DiscreteScenario",
    "FitResult",
    "GmmWeights",
    "GroupEstimate",
    "GroupSample",
    "MomentAverages",
    "OracleSpec",
    "SelectionReport",
    "UnitMoment",
    "average_moments",
    "b0_basis_diagonal",
    "b0_basis_full",
    "b0_basis_scalar",
    "banking_bias",
    "banking_weight",
    "bias_decomposition",
    "build_did_unit",
    "build_iv_unit",
    "consistency_condition",
    "diagnostics",
    "effective_weight",
    "ehw_vcov",
    "estimate_group",
    "estimate_group_alt",
    "estimate_groups",
    "exceptions",
    "first_stage",
    "fit_gmm_pooled",
    "fit_md",
    "gamma_perp_projector",
    "gmm",
    "gmm_plim",
    "ipw_tau",
    "kappa",
    "md",
    "md_bias_bound",
    "moments",
    "selection_report",
    "simlab",
    "solve_theta",
]
