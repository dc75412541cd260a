"""Constraint families on time marginals and their functional derivatives.

Three kinds ship:

* :class:`LinearConstraint` -- the marginal moment of a scalar observable is
  bounded by zero at every grid node,
* :class:`NonlinearConstraint` -- an arbitrary functional of the weighted
  time marginal with a user-supplied flat derivative (centered so that its
  mean under the current marginal vanishes),
* :class:`EndpointEquality` -- prescribed initial and terminal marginals on
  a discrete state space, consumed by the bridge solver.

A weighted time marginal is passed around as ``(values, weights)`` where
``values`` are the particle states at one node.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._validation import as_float_array, check_finite, check_probability_vector

__all__ = [
    "LinearConstraint",
    "NonlinearConstraint",
    "EndpointEquality",
    "linear_as_nonlinear",
    "quadratic_interaction_constraint",
    "variance_cap_constraint",
    "evaluate_psi_matrix",
    "constraint_violation",
    "quadratic_interaction",
    "linearize_nonlinear",
    "DENSE_INTERACTION_CAP",
]

DENSE_INTERACTION_CAP = 4096  # pairwise interactions are evaluated densely


@dataclass(frozen=True)
class LinearConstraint:
    """Inequality <marginal, observable> <= 0 at every node.

    ``observable`` is vectorized over particle states.  When ``growth_bound``
    is set, |observable(x)| <= growth_bound * (1 + |x|) is asserted on every
    sampled state at evaluation time.
    """

    observable: Callable
    growth_bound: Optional[float] = None


@dataclass(frozen=True)
class NonlinearConstraint:
    """Inequality functional of one time marginal with its flat derivative.

    ``evaluate(values, weights)`` returns the constraint value at a weighted
    marginal; ``derivative(values, weights)`` returns per-particle derivative
    values, centered: sum_i w_i deriv_i = 0 (within 1e-10).
    """

    evaluate: Callable
    derivative: Callable
    convex_flag: bool = False


@dataclass(frozen=True)
class EndpointEquality:
    """Prescribed initial and terminal marginals on a discrete state space."""

    target_initial: np.ndarray
    target_final: np.ndarray

    def __post_init__(self):
        ini = check_probability_vector(self.target_initial, "target_initial").copy()
        fin = check_probability_vector(self.target_final, "target_final").copy()
        ini.flags.writeable = False
        fin.flags.writeable = False
        object.__setattr__(self, "target_initial", ini)
        object.__setattr__(self, "target_final", fin)


def evaluate_psi_matrix(ensemble, constraint):
    """Observable values per (path, node): entry (i, j) = psi(x^i at node j)."""
    n, m_plus_1, d = ensemble.states.shape
    flat = ensemble.states.reshape(n * m_plus_1, d)
    arg = flat[:, 0] if d == 1 else flat
    values = np.asarray(constraint.observable(arg), dtype=float)
    if values.shape != (n * m_plus_1,):
        raise ValueError(
            f"observable returned shape {values.shape}, expected ({n * m_plus_1},)"
        )
    if not np.all(np.isfinite(values)):
        bad = int(np.argmax(~np.isfinite(values)))
        i, j = divmod(bad, m_plus_1)
        raise ValueError(f"observable: non-finite value at path {i}, node {j}")
    matrix = values.reshape(n, m_plus_1)
    if constraint.growth_bound is not None:
        norms = np.abs(flat[:, 0]) if d == 1 else np.linalg.norm(flat, axis=1)
        cap = constraint.growth_bound * (1.0 + norms)
        if np.any(np.abs(values) > cap + 1e-12):
            bad = int(np.argmax(np.abs(values) - cap))
            i, j = divmod(bad, m_plus_1)
            raise ValueError(
                f"observable exceeds growth bound at path {i}, node {j}: "
                f"|{values[bad]!r}| > {constraint.growth_bound} * (1 + |x|)"
            )
    return matrix


def constraint_violation(psi_matrix, measure):
    """Per-node moments g_j = sum_i w_i psi[i, j] and their maximum."""
    psi = as_float_array(psi_matrix, "psi_matrix", ndim=2)
    if psi.shape[0] != measure.n_particles:
        raise ValueError("psi_matrix rows do not match particle count")
    g = measure.weights @ psi
    return g, float(g.max())


def quadratic_interaction(kernel, values, weights, cap=DENSE_INTERACTION_CAP):
    """Pairwise interaction value and centered derivative of one marginal.

    value = sum_{i,k} w_i w_k kernel(x_i - x_k); the derivative at x_i is
    sum_k w_k [kernel(x_i - x_k) + kernel(x_k - x_i)] - 2 * value.  Dense
    O(N^2) evaluation; particle counts above ``cap`` are refused.
    """
    x = as_float_array(values, "values", ndim=1)
    w = as_float_array(weights, "weights", ndim=1)
    if x.size > cap:
        raise ValueError(
            f"dense pairwise interaction refused for N={x.size} > cap={cap}; "
            "reduce the particle count or raise the cap"
        )
    diff = x[:, None] - x[None, :]
    kvals = np.asarray(kernel(diff), dtype=float)
    check_finite(kvals, "kernel values")
    value = float(w @ kvals @ w)
    deriv = (kvals + kvals.T) @ w - 2.0 * value
    return value, deriv


def quadratic_interaction_constraint(kernel, convex_flag=False, cap=DENSE_INTERACTION_CAP):
    """Package a pairwise-kernel functional as a :class:`NonlinearConstraint`."""

    def evaluate(values, weights):
        return quadratic_interaction(kernel, values, weights, cap=cap)[0]

    def derivative(values, weights):
        return quadratic_interaction(kernel, values, weights, cap=cap)[1]

    return NonlinearConstraint(evaluate=evaluate, derivative=derivative,
                               convex_flag=convex_flag)


def variance_cap_constraint(cap_value, cap=DENSE_INTERACTION_CAP):
    """Variance of the marginal bounded by ``cap_value``.

    Realized through the pairwise kernel 0.5 x^2 - cap_value, whose
    interaction functional equals Var - cap_value.  This functional is
    concave, so ``convex_flag`` is False: the solver only certifies a
    stationary point on such instances and requires an explicit override.
    """
    return quadratic_interaction_constraint(
        lambda z: 0.5 * z**2 - cap_value, convex_flag=False, cap=cap
    )


def linear_as_nonlinear(constraint):
    """Wrap a :class:`LinearConstraint` in the nonlinear interface; the flat
    derivative of a linear functional is the centered observable."""

    def evaluate(values, weights):
        return float(np.dot(weights, constraint.observable(values)))

    def derivative(values, weights):
        vals = np.asarray(constraint.observable(values), dtype=float)
        return vals - float(np.dot(weights, vals))

    return NonlinearConstraint(evaluate=evaluate, derivative=derivative, convex_flag=True)


def linearize_nonlinear(constraint, ensemble, measure):
    """Freeze a nonlinear constraint at the current weighted marginals.

    Returns ``(offsets, slopes)`` where ``offsets[j]`` is the constraint
    value at node j and ``slopes[i, j]`` the per-particle derivative, so the
    linearized feasibility test in a trust region of scale ``eps`` reads
    offsets[j] + eps * sum_i (w_i - wbar_i) slopes[i, j] <= 0.
    """
    n = ensemble.n_paths
    m_plus_1 = ensemble.grid.num_intervals + 1
    offsets = np.zeros(m_plus_1)
    slopes = np.zeros((n, m_plus_1))
    w = measure.weights
    for j in range(m_plus_1):
        values = ensemble.states_at(j)
        offsets[j] = float(constraint.evaluate(values, w))
        deriv = np.asarray(constraint.derivative(values, w), dtype=float)
        center = float(np.dot(w, deriv))
        if abs(center) > 1e-10:
            raise ValueError(
                f"constraint derivative violates the centering convention at node {j}: "
                f"<marginal, derivative> = {center!r}"
            )
        slopes[:, j] = deriv
    return offsets, slopes
