"""Entropic projection of diffusion path laws under time-indexed constraints.

The package computes the projection of a reference diffusion's path law onto
sets cut out by inequality constraints on every time marginal (optionally
with endpoint equality constraints), through three complementary routes that
cross-validate each other:

* a particle dual solver ascending the Gibbs free energy over nonnegative
  node multipliers (:mod:`entroproj.dual_solver`),
* an exact discrete constrained bridge fusing iterative proportional
  fitting with multiplier ascent (:mod:`entroproj.bridge`),
* corrected-SDE simulation driven by Feynman-Kac evaluation of the
  drift-correction potential (:mod:`entroproj.reference`,
  :mod:`entroproj.hjb`).

Closed-form Gaussian solutions (:func:`entroproj.reference.gaussian_oracle_drifted_bm`,
:func:`entroproj.reference.gaussian_oracle_ou`) anchor the verification
harnesses in :mod:`entroproj.experiments` and the acceptance suite.
"""

from .measure import (
    Multiplier,
    PathEnsemble,
    TimeGrid,
    WeightedMeasure,
    relative_entropy,
    tilt,
    tilt_weights,
    time_marginal_moment,
    wasserstein1_1d,
)
from .constraints import (
    EndpointEquality,
    LinearConstraint,
    NonlinearConstraint,
    constraint_violation,
    evaluate_psi_matrix,
    linear_as_nonlinear,
    linearize_nonlinear,
    quadratic_interaction,
    variance_cap_constraint,
)
from .reference import (
    OracleSolution,
    SdeSpec,
    corrected_sde_sample,
    custom_sde_spec,
    drifted_brownian_spec,
    gaussian_oracle_drifted_bm,
    gaussian_oracle_ou,
    ornstein_uhlenbeck_spec,
    sample_paths,
)
from .dual_solver import (
    DualConfig,
    GibbsSolution,
    KktReport,
    dual_gradient,
    gibbs_free_energy,
    mass_bound,
    primal_value,
    solve_mean_field,
    solve_projected_ascent,
)

__version__ = "0.1.0"
