"""End-to-end verification harnesses.

* conditioning-by-rejection: draw blocks of N reference paths, keep blocks
  whose empirical marginal satisfies the constraint at every node, and watch
  the first particle of accepted blocks approach the projected law;
* the quantitative conditioning bound: the entropy between the conditioned
  one-particle law and the projected law is at most
  -(1/N) log P(block accepted) - H(projection | reference);
* quantitative sweeps in the constraint relaxation (common random numbers),
  testing the value derivative d(value)/d(eps) = -multiplier mass;
* weak stability under simultaneous perturbation of the reference and the
  observable.

Everything is deterministic under a fixed seed; child seeds are derived per
chunk so block rejection can be vectorized without changing results.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm

from .dual_solver import DualConfig, solve_projected_ascent
from .measure import wasserstein1_1d
from .reference import _rng, _simulate

__all__ = [
    "ConditioningRow",
    "ConditioningReport",
    "CsiszarResult",
    "condition_by_rejection",
    "csiszar_bound_check",
    "StabilityRow",
    "stability_sweep",
    "WeakStabilityRow",
    "weak_stability_run",
]


# ---------------------------------------------------------------------------
# conditioning by rejection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CsiszarResult:
    lhs: float
    rhs: float
    slack: float
    passed: Optional[bool]  # None when inconclusive
    n_bins: int
    n_samples: int

    def to_dict(self):
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "passed": self.passed,
            "n_bins": self.n_bins,
            "n_samples": self.n_samples,
        }


@dataclass(frozen=True)
class ConditioningRow:
    n_particles: int
    relax: float
    acceptance_rate: float
    n_accepted: int
    blocks_drawn: int
    first_particle_mean_curve: np.ndarray
    first_particle_terminal: np.ndarray
    w1_terminal: Optional[float]
    csiszar: Optional[CsiszarResult]

    def to_dict(self):
        return {
            "n_particles": self.n_particles,
            "relax": self.relax,
            "acceptance_rate": self.acceptance_rate,
            "n_accepted": self.n_accepted,
            "blocks_drawn": self.blocks_drawn,
            "first_particle_mean_curve": self.first_particle_mean_curve.tolist(),
            "w1_terminal": self.w1_terminal,
            "csiszar": None if self.csiszar is None else self.csiszar.to_dict(),
        }


@dataclass(frozen=True)
class ConditioningReport:
    rows: tuple

    @property
    def n_values(self):
        return [r.n_particles for r in self.rows]

    @property
    def acceptance_rates(self):
        return [r.acceptance_rate for r in self.rows]

    @property
    def w1_to_oracle(self):
        return [r.w1_terminal for r in self.rows]

    def to_dict(self):
        return {"rows": [r.to_dict() for r in self.rows]}


def _gaussian_quantile_samples(mean, var, k=4096):
    """Deterministic quantile representation of a Gaussian for W1 estimates."""
    u = (np.arange(k) + 0.5) / k
    return mean + math.sqrt(var) * norm.ppf(u)


def condition_by_rejection(spec, constraint, grid, n_particles, target_accepted,
                           relax=0.0, seed=0, oracle=None, max_blocks=5_000_000,
                           chunk_budget=2_000_000):
    """Exact conditioning of one particle via block rejection.

    Draws blocks of ``n_particles`` paths until ``target_accepted`` blocks
    satisfy the empirical constraint max_j (1/N) sum_i psi(x^i_j) <= relax,
    recording the first particle of each accepted block.  Aborts when the
    block budget is exhausted; zero acceptances raise with advice to relax.
    """
    if relax < 0:
        raise ValueError("relax: must be >= 0")
    if spec.dim != 1:
        raise ValueError("condition_by_rejection requires d = 1")
    m_plus_1 = grid.num_intervals + 1
    blocks_per_chunk = max(1, chunk_budget // (n_particles * m_plus_1))
    firsts = []
    accepted = 0
    blocks_drawn = 0
    chunk_index = 0
    while accepted < target_accepted and blocks_drawn < max_blocks:
        n_blocks = min(blocks_per_chunk, max_blocks - blocks_drawn)
        rng = _rng(np.random.SeedSequence((seed, chunk_index)))
        states = _simulate(spec, grid.nodes, n_blocks * n_particles, rng, 1)
        chunk_index += 1
        blocks_drawn += n_blocks
        values = np.asarray(constraint.observable(states[:, :, 0].ravel()), dtype=float)
        values = values.reshape(n_blocks, n_particles, m_plus_1)
        block_means = values.mean(axis=1)
        ok = np.all(block_means <= relax, axis=1)
        if np.any(ok):
            block_states = states.reshape(n_blocks, n_particles, m_plus_1, spec.dim)
            firsts.append(block_states[ok, 0, :, 0])
            accepted += int(ok.sum())
    if accepted == 0:
        raise RuntimeError(
            f"no block of N={n_particles} satisfied the constraint within "
            f"{blocks_drawn} blocks; the event is too rare at this N - increase relax"
        )
    rate = accepted / blocks_drawn
    firsts = np.concatenate(firsts, axis=0)[:target_accepted]
    mean_curve = firsts.mean(axis=0)
    w1 = None
    csiszar = None
    if oracle is not None:
        gauss = _gaussian_quantile_samples(
            oracle.mean_curve(grid.horizon), oracle.var_curve(grid.horizon)
        )
        w1 = wasserstein1_1d(firsts[:, -1], gauss)
        csiszar = csiszar_bound_check(
            firsts[:, -1], rate, n_particles, blocks_drawn, oracle
        )
    return ConditioningRow(
        n_particles=n_particles,
        relax=relax,
        acceptance_rate=rate,
        n_accepted=int(firsts.shape[0]),
        blocks_drawn=blocks_drawn,
        first_particle_mean_curve=mean_curve,
        first_particle_terminal=firsts[:, -1],
        w1_terminal=w1,
        csiszar=csiszar,
    )


def csiszar_bound_check(terminal_samples, acceptance_rate, n_particles,
                        blocks_drawn, oracle, min_samples=500):
    """Quantitative conditioning bound on the terminal marginal.

    lhs: entropy of the binned conditioned terminal marginal relative to the
    binned oracle marginal (Freedman-Diaconis widths); rhs:
    -(1/N) log(acceptance rate) - H(projection | reference).  The bound is
    tested with a slack of 3x a heuristic (binning bias + Monte Carlo)
    error estimate; fewer than ``min_samples`` samples is inconclusive.
    """
    samples = np.asarray(terminal_samples, dtype=float)
    n = samples.size
    if n < min_samples:
        return CsiszarResult(math.nan, math.nan, math.nan, None, 0, n)
    q75, q25 = np.percentile(samples, [75, 25])
    width = 2.0 * (q75 - q25) / n ** (1.0 / 3.0)
    if width <= 0:
        return CsiszarResult(math.nan, math.nan, math.nan, None, 0, n)
    lo, hi = samples.min(), samples.max() + 1e-12
    n_bins = max(2, int(math.ceil((hi - lo) / width)))
    edges = np.linspace(lo, hi, n_bins + 1)
    counts, _ = np.histogram(samples, bins=edges)
    p = counts / n
    mean_t = oracle.mean_curve(oracle.grid.horizon)
    sd_t = math.sqrt(oracle.var_curve(oracle.grid.horizon))
    cdf = norm.cdf((edges - mean_t) / sd_t)
    q = np.diff(cdf)
    pos = p > 0
    lhs = float(np.sum(p[pos] * np.log(p[pos] / q[pos])))
    rhs = -math.log(acceptance_rate) / n_particles - oracle.relative_entropy
    k = int(pos.sum())
    se_rate = math.sqrt(max(1.0 - acceptance_rate, 0.0) /
                        max(blocks_drawn * acceptance_rate, 1.0)) / n_particles
    bias = (k - 1) / (2.0 * n)
    se_lhs = math.sqrt(2.0 * k) / n
    slack = 3.0 * (bias + se_lhs + se_rate)
    return CsiszarResult(lhs, float(rhs), slack, bool(lhs <= rhs + slack), n_bins, n)


# ---------------------------------------------------------------------------
# quantitative stability sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityRow:
    relax: float
    value: float
    mass: float
    entropy_gap: float  # H(base solution | relaxed solution), particle estimate
    converged: bool

    def to_dict(self):
        return {
            "relax": self.relax,
            "value": self.value,
            "mass": self.mass,
            "entropy_gap": self.entropy_gap,
            "converged": self.converged,
        }


def stability_sweep(psi_matrix, relax_values, cfg=None):
    """Solve the relaxed problems (observable shifted by -eps) on the shared
    ensemble, warm-starting each solve from the previous multiplier.

    Returns one row per eps with the attained value, the multiplier mass and
    the particle estimate of H(base solution | relaxed solution).
    """
    cfg = cfg or DualConfig(grad_tol=1e-9)
    psi = np.asarray(psi_matrix, dtype=float)
    relax_values = [float(e) for e in relax_values]
    base = solve_projected_ascent(psi, cfg=cfg)
    w0 = base.measure.weights
    rows = []
    lam = None
    for eps in relax_values:
        sol = solve_projected_ascent(psi - eps, cfg=cfg, warm_start=lam)
        lam = sol.multiplier.atoms
        we = sol.measure.weights
        pos = w0 > 0
        if np.any(we[pos] <= 0):
            gap = math.inf
        else:
            gap = float(np.sum(w0[pos] * np.log(w0[pos] / we[pos])))
        rows.append(
            StabilityRow(
                relax=eps,
                value=sol.primal_value,
                mass=sol.mass,
                entropy_gap=gap,
                converged=sol.converged,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# weak stability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeakStabilityRow:
    k: int
    w1_marginals: np.ndarray
    w1_max: float
    mass: float
    converged: bool

    def to_dict(self):
        return {
            "k": self.k,
            "w1_marginals": self.w1_marginals.tolist(),
            "w1_max": self.w1_max,
            "mass": self.mass,
            "converged": self.converged,
        }


def weak_stability_run(ensemble, constraint, schedule, cfg=None):
    """Solve perturbed instances against a fixed noise realization.

    ``schedule`` is a list of dicts {"k": int, "path_shift": callable t ->
    offset or None, "psi_shift": float}; the reference perturbation adds the
    deterministic offset to every path (exact common random numbers for the
    shipped Gaussian-family perturbations), the observable perturbation adds
    a constant.  Reports per-node W1 distances to the unperturbed solution
    and the multiplier masses.
    """
    from .constraints import evaluate_psi_matrix

    cfg = cfg or DualConfig()
    base_psi = evaluate_psi_matrix(ensemble, constraint)
    base = solve_projected_ascent(base_psi, cfg=cfg)
    nodes = ensemble.grid.nodes
    m_plus_1 = nodes.size
    rows = []
    for entry in schedule:
        k = int(entry["k"])
        shift_fn = entry.get("path_shift")
        psi_shift = float(entry.get("psi_shift", 0.0))
        if shift_fn is None:
            shifted_states = ensemble.states
            shifted = ensemble
        else:
            offsets = np.array([shift_fn(t) for t in nodes])
            from .measure import PathEnsemble

            shifted_states = ensemble.states + offsets[None, :, None]
            shifted = PathEnsemble(ensemble.grid, shifted_states)
        psi = evaluate_psi_matrix(shifted, constraint) + psi_shift
        sol = solve_projected_ascent(psi, cfg=cfg)
        w1 = np.array(
            [
                wasserstein1_1d(
                    ensemble.states_at(j),
                    shifted.states_at(j),
                    base.measure.weights,
                    sol.measure.weights,
                )
                for j in range(m_plus_1)
            ]
        )
        rows.append(
            WeakStabilityRow(
                k=k,
                w1_marginals=w1,
                w1_max=float(w1.max()),
                mass=sol.mass,
                converged=sol.converged,
            )
        )
    return rows
