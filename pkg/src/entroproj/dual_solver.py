"""Projected ascent of the Gibbs free energy over nonnegative multipliers.

The primal problem -- minimize relative entropy plus an interaction pairing
over particle measures subject to per-node inequality constraints -- is
solved through its concave dual.  For a multiplier with node atoms lam_j the
free energy is

    G(lam) = -log ( (1/N) sum_i exp(-V_i) ),   V_i = f_i + sum_j lam_j psi_ij,

whose gradient is the vector of tilted per-node moments.  Ascent is by
projected gradient steps with Armijo backtracking (monotone in G), stopping
on the projected-gradient norm.  The variational identity

    G(lam) = H(w|uniform) + <w, f> + sum_j lam_j <w, psi_j>

holds per particle in exact arithmetic and is asserted at every iterate; a
violation aborts the run (it can only come from a bookkeeping bug).

Nonlinear interactions and constraints are handled by an outer fixed-point
loop that freezes their flat derivatives at the current tilted measure,
solves the frozen problem, and applies a damped weight update.
"""

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from ._validation import as_float_array, check_positive
from .constraints import LinearConstraint, NonlinearConstraint, evaluate_psi_matrix, linearize_nonlinear
from .measure import Multiplier, WeightedMeasure, relative_entropy, tilt_weights

__all__ = [
    "DualConfig",
    "KktReport",
    "GibbsSolution",
    "IdentityViolationError",
    "DualUnboundedError",
    "FixedPointError",
    "gibbs_free_energy",
    "dual_gradient",
    "solve_projected_ascent",
    "primal_value",
    "mass_bound",
    "solve_mean_field",
    "solution_report",
    "LinearPathFunctional",
    "MarginalInteraction",
]

_ARMIJO = 1e-4


class IdentityViolationError(RuntimeError):
    """The per-particle free-energy identity failed: internal inconsistency."""


class DualUnboundedError(RuntimeError):
    """Multiplier mass exceeded the cap: dual unbounded or infeasible primal."""


class FixedPointError(RuntimeError):
    """The mean-field outer loop oscillated instead of contracting."""


@dataclass(frozen=True)
class DualConfig:
    step_size: float = 1.0
    max_iters: int = 5000
    grad_tol: float = 1e-7
    feas_tol: Optional[float] = None  # None: max(1e-8, 3 * worst node standard error)
    slack_tol: float = 1e-6
    outer_max: int = 50
    outer_damping: float = 1.0
    mass_cap: Optional[float] = None
    identity_tol: float = 1e-8
    ess_warn_fraction: float = 0.01
    keep_trace: bool = False

    def __post_init__(self):
        check_positive(self.step_size, "step_size")
        check_positive(self.grad_tol, "grad_tol")
        check_positive(self.slack_tol, "slack_tol")
        check_positive(self.identity_tol, "identity_tol")
        if self.feas_tol is not None:
            check_positive(self.feas_tol, "feas_tol")
        if not 0.0 < self.outer_damping <= 1.0:
            raise ValueError(f"outer_damping: must be in (0, 1], got {self.outer_damping!r}")
        if self.max_iters < 1 or self.outer_max < 1:
            raise ValueError("max_iters and outer_max must be >= 1")


@dataclass(frozen=True)
class KktReport:
    max_violation: float
    max_slackness_residual: float
    feas_tol: float
    slack_tol: float

    @property
    def feasible(self):
        return self.max_violation <= self.feas_tol

    @property
    def slack_ok(self):
        return self.max_slackness_residual <= self.slack_tol

    def to_dict(self):
        return {
            "max_violation": self.max_violation,
            "max_slackness_residual": self.max_slackness_residual,
            "feas_tol": self.feas_tol,
            "slack_tol": self.slack_tol,
            "feasible": self.feasible,
            "slack_ok": self.slack_ok,
        }


@dataclass(frozen=True)
class GibbsSolution:
    multiplier: Multiplier
    measure: WeightedMeasure
    dual_value: float
    primal_value: float
    kkt: KktReport
    iterations: int
    mass: float
    gradient: np.ndarray
    converged: bool
    status: str
    max_identity_residual: float
    ess: float
    outer_iterations: int = 0
    trace: Optional[list] = None


def _potential(psi_matrix, f_derivative, atoms):
    v = psi_matrix @ atoms
    if f_derivative is not None:
        v = v + f_derivative
    return v


def gibbs_free_energy(psi_matrix, f_derivative, multiplier):
    """Free energy and tilted measure at one multiplier.

    Returns ``(G, measure)`` with G = -log((1/N) sum exp(-V)).
    """
    psi = as_float_array(psi_matrix, "psi_matrix", ndim=2)
    atoms = multiplier.atoms if isinstance(multiplier, Multiplier) else np.asarray(multiplier, float)
    if atoms.size != psi.shape[1]:
        raise ValueError("multiplier length does not match psi_matrix columns")
    if np.any(atoms < 0):
        raise ValueError("multiplier atoms must be nonnegative")
    measure = tilt_weights(_potential(psi, f_derivative, atoms))
    return -measure.log_normalizer, measure


def dual_gradient(psi_matrix, measure):
    """Gradient of the free energy: tilted per-node moments <w, psi_j>."""
    return measure.weights @ as_float_array(psi_matrix, "psi_matrix", ndim=2)


def _gvar_sides(psi_matrix, f_derivative, atoms, g_value, measure):
    w = measure.weights
    rhs = relative_entropy(measure)
    if f_derivative is not None:
        rhs += float(np.dot(w, f_derivative))
    grad = dual_gradient(psi_matrix, measure)
    rhs += float(np.dot(atoms, grad))
    residual = abs(rhs - g_value) / (1.0 + abs(g_value))
    return rhs, grad, residual


def _node_standard_errors(psi_matrix, measure):
    w = measure.weights
    g = w @ psi_matrix
    centered = psi_matrix - g
    return np.sqrt(np.einsum("i,ij->j", w**2, centered**2))


def primal_value(solution, psi_matrix, f_derivative=None, identity_tol=1e-8):
    """Recompute the variational identity's right-hand side and assert it.

    Returns H(w|uniform) + <w, f> + sum_j lam_j <w, psi_j>, which must equal
    the dual value up to ``identity_tol`` (relative).
    """
    rhs, _, residual = _gvar_sides(
        as_float_array(psi_matrix, "psi_matrix", ndim=2),
        f_derivative,
        solution.multiplier.atoms,
        solution.dual_value,
        solution.measure,
    )
    if residual > identity_tol:
        raise IdentityViolationError(
            f"free-energy identity residual {residual:.3e} exceeds {identity_tol:.1e}"
        )
    return rhs


def solve_projected_ascent(psi_matrix, f_derivative=None, cfg=None, warm_start=None):
    """Maximize the free energy over nonnegative node multipliers.

    Projected gradient ascent with Armijo backtracking; convergence is
    declared on the unit-step projected gradient norm.  The tilted measure,
    multiplier, dual/primal values and a KKT report are returned.
    """
    cfg = cfg or DualConfig()
    psi = as_float_array(psi_matrix, "psi_matrix", ndim=2)
    n, num_nodes = psi.shape
    f = None if f_derivative is None else as_float_array(f_derivative, "f_derivative", ndim=1)
    lam = np.zeros(num_nodes) if warm_start is None else np.maximum(np.asarray(warm_start, float), 0.0)

    g_value, measure = gibbs_free_energy(psi, f, lam)
    _, grad, residual = _gvar_sides(psi, f, lam, g_value, measure)
    max_residual = residual
    trace = [] if cfg.keep_trace else None
    eta = cfg.step_size
    prev_lam = None
    prev_grad = None
    iterations = 0
    converged = False
    status = "max_iters reached"

    while iterations < cfg.max_iters:
        if residual > cfg.identity_tol:
            raise IdentityViolationError(
                f"free-energy identity residual {residual:.3e} at iterate {iterations}"
            )
        proj_grad = lam - np.maximum(0.0, lam + grad)
        grad_norm = float(np.max(np.abs(proj_grad)))
        if trace is not None:
            trace.append((iterations, g_value, grad_norm, float(lam.sum())))
        if grad_norm <= cfg.grad_tol:
            converged = True
            status = "projected gradient below tolerance"
            break

        # spectral (Barzilai-Borwein) trial step; Armijo halving keeps ascent
        # monotone regardless; degenerate curvature falls back to a growing step
        if prev_lam is not None:
            s = lam - prev_lam
            y = prev_grad - grad  # curvature of -G, nonnegative along s for concave G
            ss = float(np.dot(s, s))
            sy = float(np.dot(s, y))
            if sy > 1e-14 * ss:
                eta = min(max(ss / sy, 1e-12), 1e8)
            else:
                eta = min(max(eta * 10.0, cfg.step_size), 1e8)
        prev_lam, prev_grad = lam, grad

        accepted = False
        restarted = False
        while True:
            candidate = np.maximum(0.0, lam + eta * grad)
            direction = candidate - lam
            slope = float(np.dot(grad, direction))
            if slope > 0.0:
                g_new, measure_new = gibbs_free_energy(psi, f, candidate)
                if g_new >= g_value + _ARMIJO * slope:
                    lam, g_value, measure = candidate, g_new, measure_new
                    accepted = True
                    break
            eta *= 0.5
            if eta <= 1e-18:
                if restarted:
                    break
                restarted = True
                eta = cfg.step_size
        if not accepted:
            status = "step size collapsed"
            break
        iterations += 1
        if cfg.mass_cap is not None and lam.sum() > cfg.mass_cap:
            raise DualUnboundedError(
                f"multiplier mass {lam.sum():.6g} exceeded cap {cfg.mass_cap:.6g}: "
                "dual unbounded or infeasible primal"
            )
        _, grad, residual = _gvar_sides(psi, f, lam, g_value, measure)
        max_residual = max(max_residual, residual)

    primal, grad, residual = _gvar_sides(psi, f, lam, g_value, measure)
    max_residual = max(max_residual, residual)
    if max_residual > cfg.identity_tol:
        raise IdentityViolationError(
            f"free-energy identity residual {max_residual:.3e} exceeds {cfg.identity_tol:.1e}"
        )

    feas_tol = cfg.feas_tol
    if feas_tol is None:
        feas_tol = max(1e-8, 3.0 * float(np.max(_node_standard_errors(psi, measure))))
    kkt = KktReport(
        max_violation=float(grad.max()),
        max_slackness_residual=float(np.max(np.minimum(lam, np.abs(grad)))),
        feas_tol=feas_tol,
        slack_tol=cfg.slack_tol,
    )
    ess = measure.effective_sample_size()
    if ess < cfg.ess_warn_fraction * n:
        warnings.warn(
            f"tilted measure effective sample size {ess:.1f} is below "
            f"{cfg.ess_warn_fraction:.0%} of N={n}; dual estimates may be unreliable",
            RuntimeWarning,
            stacklevel=2,
        )
    return GibbsSolution(
        multiplier=Multiplier(lam),
        measure=measure,
        dual_value=float(g_value),
        primal_value=float(primal),
        kkt=kkt,
        iterations=iterations,
        mass=float(lam.sum()),
        gradient=grad,
        converged=converged,
        status=status,
        max_identity_residual=float(max_residual),
        ess=ess,
        trace=trace,
    )


def mass_bound(witness, eta, f_derivative, psi_matrix):
    """Upper bound on the optimal multiplier mass from a strictly feasible tilt.

    ``witness`` must satisfy <witness, psi_j> <= -eta at every node (asserted).
    The bound is eta^-1 [ log((1/N) sum exp(-f)) + H(witness|uniform)
    + <witness, f> ].
    """
    check_positive(eta, "eta")
    psi = as_float_array(psi_matrix, "psi_matrix", ndim=2)
    g = witness.weights @ psi
    worst = int(np.argmax(g))
    if g[worst] > -eta + 1e-12:
        raise ValueError(
            f"witness infeasible at eta={eta}: node {worst} has moment {g[worst]!r} > {-eta}"
        )
    n = witness.n_particles
    if f_derivative is None:
        log_ref = 0.0
        pairing = 0.0
    else:
        f = as_float_array(f_derivative, "f_derivative", ndim=1)
        shift = f.min()
        log_ref = float(np.log(np.mean(np.exp(-(f - shift)))) - shift)
        pairing = float(np.dot(witness.weights, f))
    return (log_ref + relative_entropy(witness) + pairing) / eta


# ---------------------------------------------------------------------------
# mean-field / nonlinear outer loop
# ---------------------------------------------------------------------------


class LinearPathFunctional:
    """Interaction F(mu) = <mu, func(path)> -- derivative independent of mu."""

    convex = True

    def __init__(self, func):
        self.func = func

    def _values(self, ensemble):
        return np.asarray(self.func(ensemble.states), dtype=float)

    def value(self, ensemble, weights):
        return float(np.dot(weights, self._values(ensemble)))

    def derivative(self, ensemble, weights):
        vals = self._values(ensemble)
        return vals - float(np.dot(weights, vals))


class MarginalInteraction:
    """Interaction strength * <marginal, kernel * marginal> at one grid node."""

    convex = False

    def __init__(self, kernel, node_index, strength=1.0):
        from .constraints import quadratic_interaction

        self._quad = quadratic_interaction
        self.kernel = kernel
        self.node_index = node_index
        self.strength = strength

    def value(self, ensemble, weights):
        v, _ = self._quad(self.kernel, ensemble.states_at(self.node_index), weights)
        return self.strength * v

    def derivative(self, ensemble, weights):
        _, d = self._quad(self.kernel, ensemble.states_at(self.node_index), weights)
        return self.strength * d


def _shift_invariant(a, b, tol=1e-12):
    if a is None and b is None:
        return True
    if a is None or b is None:
        return False
    delta = a - b
    return float(np.max(np.abs(delta - delta.mean()))) <= tol


def solve_mean_field(ensemble, interaction, constraint, cfg=None, allow_nonconvex=False):
    """Fixed-point outer loop for mean-field interactions and nonlinear
    constraints: freeze flat derivatives at the current measure, run the
    projected ascent, then apply a damped weight update.

    Stops when the outer weight change (total variation) falls below
    ``cfg.grad_tol`` or when the refrozen derivatives are unchanged up to an
    additive constant (linear functionals converge in one outer step).
    Nonlinear constraints enter through their linearization, scaled by a
    trust region that halves whenever true feasibility regresses.
    """
    cfg = cfg or DualConfig()
    n = ensemble.n_paths
    nonconvex_reasons = []
    if interaction is not None and not getattr(interaction, "convex", False):
        nonconvex_reasons.append("interaction not declared convex")
    nonlinear = isinstance(constraint, NonlinearConstraint)
    if nonlinear and not constraint.convex_flag:
        if not allow_nonconvex:
            raise ValueError(
                "constraint is not convex; pass allow_nonconvex=True to search "
                "for a stationary point (uniqueness/sufficiency do not apply)"
            )
        nonconvex_reasons.append("constraint not convex")
    if isinstance(constraint, LinearConstraint):
        psi_fixed = evaluate_psi_matrix(ensemble, constraint)
    elif not nonlinear:
        psi_fixed = as_float_array(constraint, "constraint", ndim=2)
    else:
        psi_fixed = None

    weights = np.full(n, 1.0 / n)
    lam = None
    f_der = None
    trust = 1.0
    tv_history = []
    non_decreasing = 0
    sup_violation = np.inf
    solution = None
    converged = False
    status = "outer_max reached"
    outer = 0

    while outer < cfg.outer_max:
        frozen = WeightedMeasure(weights / weights.sum())
        f_new = None if interaction is None else np.asarray(
            interaction.derivative(ensemble, frozen.weights), dtype=float
        )
        if outer > 0 and not nonlinear and (interaction is None or _shift_invariant(f_new, f_der)):
            # refrozen derivatives unchanged up to a constant: the next inner
            # solve would reproduce the current solution exactly
            converged = True
            status = "frozen derivatives stationary"
            break
        if nonlinear:
            offsets, slopes = linearize_nonlinear(constraint, ensemble, frozen)
            psi_eff = slopes + offsets / trust
        else:
            psi_eff = psi_fixed

        inner_converged = False
        for _ in range(25):
            solution = solve_projected_ascent(psi_eff, f_new, cfg, warm_start=lam)
            w_new = solution.measure.weights
            w_next = (1.0 - cfg.outer_damping) * weights + cfg.outer_damping * w_new
            if not nonlinear:
                inner_converged = True
                break
            cand_violation = max(
                constraint.evaluate(ensemble.states_at(j), w_next)
                for j in range(ensemble.grid.num_intervals + 1)
            )
            if cand_violation <= max(sup_violation, solution.kkt.feas_tol) + 1e-12:
                sup_violation = cand_violation
                inner_converged = True
                break
            trust *= 0.5
            if trust < 1e-6:
                raise FixedPointError("trust region collapsed before reaching feasibility")
            psi_eff = slopes + offsets / trust
        if not inner_converged:
            raise FixedPointError("feasibility regression not resolved by trust region")

        outer += 1
        lam = solution.multiplier.atoms
        f_der = f_new
        tv = 0.5 * float(np.sum(np.abs(w_next - weights)))
        weights = w_next
        tv_history.append(tv)
        if len(tv_history) >= 2 and tv >= tv_history[-2] - 1e-15:
            non_decreasing += 1
            if non_decreasing >= 10:
                raise FixedPointError(
                    "fixed point not reached: outer weight change non-decreasing "
                    f"over 10 iterations (last TV {tv:.3e})"
                )
        else:
            non_decreasing = 0
        if tv <= cfg.grad_tol:
            converged = True
            status = "outer weight change below tolerance"
            break

    status_notes = status
    if nonconvex_reasons:
        status_notes += "; stationary point only (" + ", ".join(nonconvex_reasons) + ")"
    return replace(
        solution,
        converged=converged and solution.converged,
        status=status_notes,
        outer_iterations=outer,
    )


def solution_report(solution, grid=None, cfg=None):
    """JSON-ready report of a solver run."""
    doc = {
        "iterations": solution.iterations,
        "outer_iterations": solution.outer_iterations,
        "converged": solution.converged,
        "status": solution.status,
        "dual_value": solution.dual_value,
        "primal_value": solution.primal_value,
        "mass": solution.mass,
        "kkt": solution.kkt.to_dict(),
        "max_identity_residual": solution.max_identity_residual,
        "effective_sample_size": solution.ess,
        "multiplier_pairs": solution.multiplier.nonzero_pairs(),
        "gradient": solution.gradient.tolist(),
    }
    if grid is not None:
        doc["grid_nodes"] = grid.nodes.tolist()
    if cfg is not None:
        doc["config"] = {
            "step_size": cfg.step_size,
            "max_iters": cfg.max_iters,
            "grad_tol": cfg.grad_tol,
            "feas_tol": cfg.feas_tol,
            "slack_tol": cfg.slack_tol,
            "outer_max": cfg.outer_max,
            "outer_damping": cfg.outer_damping,
            "mass_cap": cfg.mass_cap,
        }
    return doc
