"""Invariant densities and linear response for quadratic unimodal maps.

The package builds the tower extension of a quadratic interval map, runs a
smooth-cutoff transfer operator on it, extracts the invariant density as a
smooth part plus dynamically generated square-root spikes, solves the twisted
cohomological equation by dynamical resummation, and evaluates an explicit
linear-response formula, all validated against independent oracles (exact
conjugation families, the closed-form density of the full quadratic map,
coarse-grained transfer matrices, and long-run orbit averages).
"""

from .unimodal import (
    UnimodalMap, DeformationFamily, Profile, PolyProfile, BumpProfile,
    make_quadratic, validate_s_unimodal, make_family, family_velocity,
    profile_from_spec, NAMED_PROFILES,
)
from .recurrence import (
    CriticalOrbit, critical_orbit, estimate_ce, estimate_bec, default_h0,
    tsr_statistic, expansion_constants, lyapunov, analyze_map,
)
from .tower import (
    TowerParams, Tower, ItinerarySchedule, build_tower, bound_free_times,
    fall_intervals, key_estimate_check,
)
from .tce import (
    AlphaEvaluation, alpha_candidate_partial, horizontality_defect, horizontalize,
    alpha_resummed, make_alpha_evaluator, tce_residual, divergence_probe,
    integrate_conjugacy_ode, term_magnitude,
)
from .transfer import (
    CutoffProfile, TowerFunction, OperatorContext, make_cutoffs, inverse_branch,
    build_operator, fixed_point, truncate, commutation_residual, spike_exponent,
    cutoff_derivative_report, classical_transfer,
)
from .response import (
    ResponseReport, y_weights, response_source, resolvent_apply, linear_response,
    response_oracle_conjugation, response_fd, ruelle_identity_check,
    susceptibility_partial, bound_period_weight_table, integrate_density,
)
from .oracle import (
    UlamModel, ulam_matrix, birkhoff_average, closed_form_ulam_density,
)
from . import bench

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
