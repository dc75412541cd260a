"""Scikit-learn style front doors for the two fit-shaped solvers.

Both estimators follow the usual conventions -- hyperparameters in
``__init__`` (so ``get_params`` / ``set_params`` / ``clone`` work), a
``fit`` that sets trailing-underscore attributes -- which lets them compose
with model-selection and inspection tooling from the wider ecosystem.

The sampling, oracle, and experiment machinery is deliberately not wrapped:
those parts are not fit/transform shaped.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .bridge import solve_constrained_bridge
from .dual_solver import DualConfig, solve_projected_ascent

__all__ = ["EntropicProjection", "ConstrainedBridge"]


def _check_matrix(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"{name}: expected a 2-d array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name}: contains non-finite entries")
    return x


class EntropicProjection(BaseEstimator):
    """Entropic projection of a particle ensemble under per-node inequalities.

    ``fit(X)`` takes the observable matrix X[i, j] = psi(x^i at node j) and
    maximizes the Gibbs free energy over nonnegative node multipliers.

    Attributes after fit: ``multiplier_`` (node atoms), ``weights_`` (tilted
    particle weights), ``dual_value_``, ``primal_value_``, ``mass_``,
    ``kkt_``, ``n_iter_``, ``converged_``.
    """

    def __init__(self, step_size=1.0, max_iters=5000, grad_tol=1e-7,
                 feas_tol=None, slack_tol=1e-6, mass_cap=None):
        self.step_size = step_size
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.feas_tol = feas_tol
        self.slack_tol = slack_tol
        self.mass_cap = mass_cap

    def _config(self):
        return DualConfig(
            step_size=self.step_size,
            max_iters=self.max_iters,
            grad_tol=self.grad_tol,
            feas_tol=self.feas_tol,
            slack_tol=self.slack_tol,
            mass_cap=self.mass_cap,
        )

    def fit(self, X, y=None, f_derivative=None):
        X = _check_matrix(X, "X")
        solution = solve_projected_ascent(X, f_derivative, self._config())
        self.solution_ = solution
        self.multiplier_ = solution.multiplier.atoms
        self.weights_ = solution.measure.weights
        self.dual_value_ = solution.dual_value
        self.primal_value_ = solution.primal_value
        self.mass_ = solution.mass
        self.kkt_ = solution.kkt
        self.n_iter_ = solution.iterations
        self.converged_ = solution.converged
        return self

    def score(self, X=None, y=None):
        """Attained dual value (higher is better by weak duality)."""
        return self.dual_value_


class ConstrainedBridge(BaseEstimator):
    """Endpoint-matched projection of a discrete chain under inequalities.

    ``fit(reference, targets, psi_values)`` runs proportional fitting fused
    with multiplier ascent.  Attributes after fit: ``potential_init_``,
    ``potential_fin_``, ``multiplier_``, ``marginals_``, ``value_``,
    ``kkt_``, ``n_iter_``, ``converged_``.
    """

    def __init__(self, step_size=1.0, max_iters=5000, grad_tol=1e-8,
                 slack_tol=1e-8, sinkhorn_tol=1e-10, max_sweeps=1000):
        self.step_size = step_size
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.slack_tol = slack_tol
        self.sinkhorn_tol = sinkhorn_tol
        self.max_sweeps = max_sweeps

    def fit(self, reference, targets, psi_values):
        cfg = DualConfig(
            step_size=self.step_size,
            max_iters=self.max_iters,
            grad_tol=self.grad_tol,
            slack_tol=self.slack_tol,
        )
        solution = solve_constrained_bridge(
            reference, targets, _check_matrix(psi_values, "psi_values"), cfg,
            sinkhorn_tol=self.sinkhorn_tol, max_sweeps=self.max_sweeps,
        )
        self.solution_ = solution
        self.potential_init_ = solution.potential_init
        self.potential_fin_ = solution.potential_fin
        self.multiplier_ = solution.multiplier.atoms
        self.marginals_ = solution.marginals
        self.value_ = solution.value
        self.kkt_ = solution.kkt
        self.n_iter_ = solution.iterations
        self.converged_ = solution.converged
        return self
