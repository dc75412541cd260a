"""Constrained bridge on a discrete state space, solved exactly.

The reference is a finite Markov chain (initial law plus one row-stochastic
kernel per grid interval).  The solver projects it onto prescribed endpoint
marginals AND per-node inequality constraints by fusing log-domain iterative
proportional fitting (for the endpoint potentials) with projected multiplier
ascent (for the inequalities).  All marginals are computed by exact
forward/backward message passing, so tolerances here are linear-algebra
tight, not Monte Carlo limited.

The path density is, by construction,

    log dmu/dnu (x_0..x_M) = -pot_init(x_0) - pot_fin(x_M)
                             - sum_j lam_j psi[j, x_j] - log Z,

matching the additive decomposition of the endpoint potentials.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from ._validation import as_float_array, check_finite, check_probability_vector
from .constraints import EndpointEquality
from .dual_solver import DualConfig, KktReport
from .measure import Multiplier

__all__ = [
    "MarkovReference",
    "BridgeSolution",
    "EquivalenceError",
    "gaussian_random_walk_reference",
    "discretize_gaussian",
    "forward_backward",
    "sinkhorn_step",
    "solve_constrained_bridge",
    "enumerate_path_measure",
]

_ARMIJO = 1e-4


class EquivalenceError(ValueError):
    """Endpoint targets incompatible with the reference chain's support."""


@dataclass(frozen=True)
class MarkovReference:
    """Discrete reference chain: states (S,), init (S,), kernels (M, S, S)."""

    states: np.ndarray
    init: np.ndarray
    kernels: np.ndarray

    def __post_init__(self):
        states = as_float_array(self.states, "states", ndim=1).copy()
        init = check_probability_vector(self.init, "init").copy()
        kernels = as_float_array(self.kernels, "kernels", ndim=3).copy()
        s = states.size
        if init.size != s or kernels.shape[1:] != (s, s):
            raise ValueError("states, init and kernels have inconsistent shapes")
        if np.any(kernels < 0):
            raise ValueError("kernels: negative entry")
        rows = kernels.sum(axis=2)
        if np.max(np.abs(rows - 1.0)) > 1e-12:
            raise ValueError("kernels: rows must sum to 1 within 1e-12")
        for arr in (states, init, kernels):
            arr.flags.writeable = False
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "kernels", kernels)

    @property
    def n_states(self):
        return self.states.size

    @property
    def n_steps(self):
        return self.kernels.shape[0]

    @property
    def strictly_positive(self):
        return bool(self.init.min() > 0 and self.kernels.min() > 0)


def discretize_gaussian(states, mean, var):
    """Gaussian density sampled on the state grid and normalized."""
    w = np.exp(-0.5 * (np.asarray(states, float) - mean) ** 2 / var)
    return w / w.sum()


def gaussian_random_walk_reference(n_states, x_min, x_max, step_var, n_steps,
                                   init=None):
    """Random walk on an equispaced 1-d grid with Gaussian step weights.

    Rows of each kernel are the step density exp(-(x' - x)^2 / (2 step_var))
    renormalized on the grid; ``init`` defaults to uniform.
    """
    states = np.linspace(x_min, x_max, n_states)
    diff = states[None, :] - states[:, None]
    kernel = np.exp(-0.5 * diff**2 / step_var)
    kernel = kernel / kernel.sum(axis=1, keepdims=True)
    kernels = np.repeat(kernel[None, :, :], n_steps, axis=0)
    if init is None:
        init = np.full(n_states, 1.0 / n_states)
    return MarkovReference(states, init, kernels)


@dataclass(frozen=True)
class BridgeSolution:
    potential_init: np.ndarray
    potential_fin: np.ndarray
    multiplier: Multiplier
    marginals: np.ndarray  # (M+1, S), rows normalized
    value: float  # relative entropy of the solution w.r.t. the reference
    kkt: object
    iterations: int
    ipf_sweeps: int
    log_partition: float
    endpoint_error: float
    min_marginal: float
    converged: bool
    status: str
    trace: Optional[list] = None

    def to_dict(self):
        return {
            "value": self.value,
            "multiplier_pairs": self.multiplier.nonzero_pairs(),
            "mass": self.multiplier.mass,
            "kkt": self.kkt.to_dict(),
            "iterations": self.iterations,
            "ipf_sweeps": self.ipf_sweeps,
            "log_partition": self.log_partition,
            "endpoint_error": self.endpoint_error,
            "min_marginal": self.min_marginal,
            "converged": self.converged,
            "status": self.status,
        }


def _log_clip(vec):
    with np.errstate(divide="ignore"):
        return np.log(vec)


def forward_backward(ref, potential_init, potential_fin, multiplier, psi_values):
    """Exact time marginals and log-partition of the tilted path measure.

    The path measure is nu(path) * exp[-pot_init(x_0) - pot_fin(x_M)
    - sum_j lam_j psi[j, x_j]]; one forward and one backward log-domain pass
    cost O(M S^2).  Potentials may contain +inf (pinned-out states).
    """
    psi = as_float_array(psi_values, "psi_values", ndim=2)
    check_finite(psi, "psi_values")
    m_plus_1, s = psi.shape
    if m_plus_1 != ref.n_steps + 1 or s != ref.n_states:
        raise ValueError("psi_values shape does not match the reference chain")
    atoms = multiplier.atoms
    if atoms.size != m_plus_1:
        raise ValueError("multiplier length does not match the chain")
    node_pot = -(atoms[:, None] * psi)
    node_pot[0] = node_pot[0] - np.asarray(potential_init, float)
    node_pot[-1] = node_pot[-1] - np.asarray(potential_fin, float)

    log_kernels = _log_clip(ref.kernels)
    log_alpha = np.empty((m_plus_1, s))
    log_alpha[0] = _log_clip(ref.init) + node_pot[0]
    for j in range(ref.n_steps):
        log_alpha[j + 1] = (
            logsumexp(log_alpha[j][:, None] + log_kernels[j], axis=0) + node_pot[j + 1]
        )
    log_z = float(logsumexp(log_alpha[-1]))
    if not np.isfinite(log_z):
        raise ValueError("incompatible potentials: all path mass annihilated")

    log_beta = np.zeros((m_plus_1, s))
    for j in range(ref.n_steps - 1, -1, -1):
        log_beta[j] = logsumexp(
            log_kernels[j] + (node_pot[j + 1] + log_beta[j + 1])[None, :], axis=1
        )
    with np.errstate(invalid="ignore"):
        marginals = np.exp(log_alpha + log_beta - log_z)
    marginals = np.nan_to_num(marginals, nan=0.0)
    marginals = marginals / marginals.sum(axis=1, keepdims=True)
    return marginals, log_z


def _check_targets(ref, targets):
    if targets.target_initial.size != ref.n_states or targets.target_final.size != ref.n_states:
        raise ValueError("endpoint targets do not match the state grid length")


def _ratio_update(potential, marginal, target, name):
    if np.any((target > 1e-15) & (marginal <= 0.0)):
        raise EquivalenceError(
            f"{name}: target puts mass on a state the reference never reaches"
        )
    if np.any((target <= 1e-15) & (marginal > 1e-13)):
        raise EquivalenceError(
            f"{name}: zero target on a charged state; equality constraints "
            "would destroy equivalence with the reference"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        update = np.where(target > 0, _log_clip(marginal) - _log_clip(target), np.inf)
    return potential + update


def sinkhorn_step(ref, targets, potential_init, potential_fin, multiplier, psi_values):
    """One log-domain proportional-fitting sweep: match the initial marginal,
    recompute, then match the terminal marginal."""
    _check_targets(ref, targets)
    marginals, _ = forward_backward(ref, potential_init, potential_fin, multiplier, psi_values)
    potential_init = _ratio_update(
        potential_init, marginals[0], targets.target_initial, "target_initial"
    )
    marginals, _ = forward_backward(ref, potential_init, potential_fin, multiplier, psi_values)
    potential_fin = _ratio_update(
        potential_fin, marginals[-1], targets.target_final, "target_final"
    )
    return potential_init, potential_fin


def _endpoint_error(marginals, targets):
    tv0 = 0.5 * float(np.abs(marginals[0] - targets.target_initial).sum())
    tv1 = 0.5 * float(np.abs(marginals[-1] - targets.target_final).sum())
    return max(tv0, tv1)


def _masked_dot(weights, potential):
    mask = weights > 0
    vals = potential[mask]
    if np.any(np.isinf(vals)):
        raise ValueError("infinite potential on a charged state")
    return float(np.dot(weights[mask], vals))


def _ipf_block(ref, targets, pot0, potT, multiplier, psi, tol, max_sweeps):
    sweeps = 0
    marginals, log_z = forward_backward(ref, pot0, potT, multiplier, psi)
    err = _endpoint_error(marginals, targets)
    while err > tol and sweeps < max_sweeps:
        pot0, potT = sinkhorn_step(ref, targets, pot0, potT, multiplier, psi)
        marginals, log_z = forward_backward(ref, pot0, potT, multiplier, psi)
        err = _endpoint_error(marginals, targets)
        sweeps += 1
    return pot0, potT, marginals, log_z, err, sweeps


def _dual_value(targets, pot0, potT, log_z):
    # value of the endpoint-constrained inner minimum at the current multiplier
    return -log_z - _masked_dot(targets.target_initial, pot0) - _masked_dot(
        targets.target_final, potT
    )


def solve_constrained_bridge(ref, targets, psi_values, cfg=None,
                             sinkhorn_tol=1e-10, max_sweeps=1000):
    """Endpoint-matched entropic projection with per-node inequalities.

    Alternates proportional-fitting blocks (run to ``sinkhorn_tol``) with one
    backtracked projected ascent step on the multiplier, whose gradient is
    the vector of exact per-node moments.  Converged when the endpoint error
    and the projected multiplier gradient are both below tolerance.
    """
    cfg = cfg or DualConfig()
    _check_targets(ref, targets)
    psi = as_float_array(psi_values, "psi_values", ndim=2)
    m_plus_1, s = psi.shape
    lam = np.zeros(m_plus_1)
    pot0 = np.zeros(s)
    potT = np.zeros(s)
    eta = cfg.step_size
    total_sweeps = 0
    trace = [] if cfg.keep_trace else None
    converged = False
    status = "max_iters reached"
    iterations = 0

    pot0, potT, marginals, log_z, err, sw = _ipf_block(
        ref, targets, pot0, potT, Multiplier(lam), psi, sinkhorn_tol, max_sweeps
    )
    total_sweeps += sw
    value = _dual_value(targets, pot0, potT, log_z)

    while iterations < cfg.max_iters:
        if err > sinkhorn_tol:
            status = f"proportional fitting stalled at endpoint error {err:.3e}"
            break
        grad = np.einsum("js,js->j", marginals, psi)
        proj = lam - np.maximum(0.0, lam + grad)
        grad_norm = float(np.max(np.abs(proj)))
        if trace is not None:
            trace.append((iterations, value, grad_norm, float(lam.sum())))
        if grad_norm <= cfg.grad_tol:
            converged = True
            status = "projected gradient below tolerance"
            break

        accepted = False
        while eta > 1e-18:
            candidate = np.maximum(0.0, lam + eta * grad)
            direction = candidate - lam
            slope = float(np.dot(grad, direction))
            if slope <= 0.0:
                break
            c_pot0, c_potT, c_marg, c_logz, c_err, sw = _ipf_block(
                ref, targets, pot0, potT, Multiplier(candidate), psi,
                sinkhorn_tol, max_sweeps,
            )
            total_sweeps += sw
            c_value = _dual_value(targets, c_pot0, c_potT, c_logz)
            if c_value >= value + _ARMIJO * slope and c_err <= sinkhorn_tol:
                lam, pot0, potT = candidate, c_pot0, c_potT
                marginals, log_z, err, value = c_marg, c_logz, c_err, c_value
                accepted = True
                eta = min(eta * 1.5, 1e8)
                break
            eta *= 0.5
        if not accepted:
            status = "step size collapsed"
            break
        iterations += 1
        if cfg.mass_cap is not None and lam.sum() > cfg.mass_cap:
            status = "multiplier mass cap exceeded: dual unbounded or infeasible"
            break

    grad = np.einsum("js,js->j", marginals, psi)
    kkt = KktReport(
        max_violation=float(grad.max()),
        max_slackness_residual=float(np.max(np.minimum(lam, np.abs(grad)))),
        feas_tol=cfg.feas_tol if cfg.feas_tol is not None else max(1e-8, cfg.grad_tol),
        slack_tol=cfg.slack_tol,
    )
    entropy = (
        -_masked_dot(marginals[0], pot0)
        - _masked_dot(marginals[-1], potT)
        - float(np.dot(lam, grad))
        - log_z
    )
    return BridgeSolution(
        potential_init=pot0,
        potential_fin=potT,
        multiplier=Multiplier(lam),
        marginals=marginals,
        value=float(entropy),
        kkt=kkt,
        iterations=iterations,
        ipf_sweeps=total_sweeps,
        log_partition=log_z,
        endpoint_error=err,
        min_marginal=float(marginals.min()),
        converged=converged,
        status=status,
        trace=trace,
    )


def enumerate_path_measure(ref, potential_init, potential_fin, multiplier, psi_values):
    """Exhaustive enumeration of the tilted path measure (small chains only).

    Returns ``(marginals, log_z, path_probs, paths)``; the independent check
    for the message-passing marginals.
    """
    s = ref.n_states
    m_plus_1 = ref.n_steps + 1
    if s**m_plus_1 > 2_000_000:
        raise ValueError("enumeration refused: state-path space too large")
    grids = np.meshgrid(*[np.arange(s)] * m_plus_1, indexing="ij")
    paths = np.stack([g.ravel() for g in grids], axis=1)  # (S^(M+1), M+1)
    with np.errstate(divide="ignore"):
        log_init = np.log(ref.init)
        log_kernels = np.log(ref.kernels)
    log_p = log_init[paths[:, 0]].astype(float)
    for j in range(ref.n_steps):
        log_p += log_kernels[j][paths[:, j], paths[:, j + 1]]
    psi = as_float_array(psi_values, "psi_values", ndim=2)
    for j in range(m_plus_1):
        log_p -= multiplier.atoms[j] * psi[j][paths[:, j]]
    log_p -= np.asarray(potential_init, float)[paths[:, 0]]
    log_p -= np.asarray(potential_fin, float)[paths[:, -1]]
    log_z = float(logsumexp(log_p))
    probs = np.exp(log_p - log_z)
    marginals = np.zeros((m_plus_1, s))
    for j in range(m_plus_1):
        np.add.at(marginals[j], paths[:, j], probs)
    return marginals, log_z, probs, paths
