"""Acceptance suite: every shipped claim, checked at its stated tolerance.

Each criterion is a function returning a :class:`CriterionResult` whose
``artifacts`` dict contains the numbers that were checked (used both for the
human summary and for byte-level determinism comparisons, so no timings go
in there).  ``run_criteria`` executes a subset and prints one PASS/FAIL line
per criterion.

The quick subset covers the deterministic criteria (closed-form regression,
identity, property checks, exact bridge); the full suite adds the Monte
Carlo ones.  All randomness is seeded: reruns are reproducible bit for bit.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import bridge as bridge_mod
from .constraints import EndpointEquality, LinearConstraint, evaluate_psi_matrix
from .dual_solver import DualConfig, dual_gradient, gibbs_free_energy, solve_projected_ascent
from .experiments import condition_by_rejection, stability_sweep
from .hjb import HjbQuery, feynman_kac_gradient, feynman_kac_value_with_se, _exponent_samples
from .measure import Multiplier, TimeGrid
from .reference import (
    corrected_sde_sample,
    drifted_brownian_spec,
    gaussian_oracle_drifted_bm,
    gaussian_oracle_ou,
    ornstein_uhlenbeck_spec,
    sample_paths,
)

__all__ = ["CriterionResult", "run_criteria", "QUICK_CRITERIA", "ALL_CRITERIA"]

MEAN_CONSTRAINT = LinearConstraint(lambda x: x, growth_bound=1.0)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: str
    artifacts: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} criterion {self.number} ({self.name}): {self.details}"


def _bm_case1(grid):
    return gaussian_oracle_drifted_bm(-0.5, 1.0, grid, lambda t: t, lambda t: 1.0,
                                      lambda t: 0.0)


def _bm_case1_spec():
    return drifted_brownian_spec(-0.5, 1.0, lambda t: t, lambda t: 1.0, lambda t: 0.0)


def _weighted_se(psi_column, weights):
    mean = float(np.dot(weights, psi_column))
    return math.sqrt(float(np.sum(weights**2 * (psi_column - mean) ** 2))), mean


# -- criterion 1 ------------------------------------------------------------


def criterion_1():
    """Closed-form regression of the three drifted-BM oracle cases."""
    tol = 1e-10
    grid = TimeGrid.uniform(1.0, 50)
    checks = {}

    sol1 = _bm_case1(grid)
    checks["case1_label"] = sol1.case_label == "terminal_atom"
    checks["case1_terminal_mass"] = abs(sol1.multiplier.atoms[-1] - 0.25) <= tol
    checks["case1_other_mass"] = float(np.abs(sol1.multiplier.atoms[:-1]).max()) <= tol
    checks["case1_grad"] = max(
        abs(sol1.potential_grad(t, 0.0) - 0.25) for t in grid.nodes
    ) <= tol
    checks["case1_initial"] = (
        abs(sol1.initial_mean + 0.75) <= tol and abs(sol1.initial_var - 1.0) <= tol
    )

    sol3 = gaussian_oracle_drifted_bm(1.0, 1.0, grid, lambda t: 0.0, lambda t: 0.0,
                                      lambda t: 0.0)
    checks["case3_label"] = sol3.case_label == "initial_atom"
    checks["case3_atom0"] = abs(sol3.multiplier.atoms[0] - 1.0) <= tol
    checks["case3_other_mass"] = float(np.abs(sol3.multiplier.atoms[1:]).max()) <= tol
    checks["case3_initial"] = (
        abs(sol3.initial_mean) <= tol and abs(sol3.initial_var - 1.0) <= tol
    )

    sol2 = gaussian_oracle_drifted_bm(
        1.0, 1.0, grid, lambda t: 2.0 * t - 0.5 * t**2, lambda t: 2.0 - t, lambda t: -1.0
    )
    tau_expected = math.sqrt(3.0) - 1.0
    checks["case2_label"] = sol2.case_label == "interior_activation"
    checks["case2_tau"] = abs(sol2.activation_time - tau_expected) <= tol

    passed = all(checks.values())
    details = (
        f"case1 mass={sol1.multiplier.atoms[-1]:.12f}, initial=({sol1.initial_mean:.12f}, "
        f"{sol1.initial_var:.1f}); case3 atom0={sol3.multiplier.atoms[0]:.12f}; "
        f"case2 tau={sol2.activation_time:.12f} vs {tau_expected:.12f}"
    )
    return CriterionResult(1, "Gaussian oracle regression", passed, details,
                           {"checks": {k: bool(v) for k, v in checks.items()},
                            "tau": sol2.activation_time})


# -- criterion 2 ------------------------------------------------------------


def criterion_2(seed=2024):
    """Dual-solver recovery of the terminal-atom case at N=20000, M=50."""
    t0 = time.time()
    grid = TimeGrid.uniform(1.0, 50)
    ens = sample_paths(_bm_case1_spec(), grid, 20_000, seed=seed)
    psi = evaluate_psi_matrix(ens, MEAN_CONSTRAINT)
    sol = solve_projected_ascent(psi, cfg=DualConfig(grad_tol=1e-8))
    runtime = time.time() - t0

    mass_ok = abs(sol.mass - 0.25) <= 0.1 * 0.25
    tail_frac = float(sol.multiplier.atoms[-2:].sum()) / sol.mass
    tail_ok = tail_frac >= 0.9
    se_T, mean_T = _weighted_se(psi[:, -1], sol.measure.weights)
    terminal_ok = abs(mean_T) <= 3.0 * se_T
    ses = np.array([_weighted_se(psi[:, j], sol.measure.weights)[0]
                    for j in range(psi.shape[1])])
    feas_ok = float(sol.gradient.max()) <= 3.0 * float(ses.max())
    slack_ok = sol.kkt.max_slackness_residual <= 1e-6 * (1.0 + sol.mass)
    time_ok = runtime <= 60.0
    passed = mass_ok and tail_ok and terminal_ok and feas_ok and slack_ok and time_ok
    details = (
        f"mass={sol.mass:.4f} (target 0.25 +-10%), last-two-node share={tail_frac:.3f}, "
        f"|terminal mean|={abs(mean_T):.2e} vs 3SE={3 * se_T:.2e}, "
        f"slackness={sol.kkt.max_slackness_residual:.2e}, runtime={runtime:.1f}s"
    )
    return CriterionResult(2, "dual-solver terminal-atom recovery", passed, details,
                           {"mass": sol.mass, "tail_frac": tail_frac,
                            "terminal_mean": mean_T, "iterations": sol.iterations})


# -- criterion 3 ------------------------------------------------------------


def criterion_3(seed=97):
    """OU interior-activation recovery: unit density plateau plus unit atom."""
    x0, sigma2, horizon, m = 0.5, 1.0, 1.5, 10
    grid = TimeGrid.uniform(horizon, m)
    oracle = gaussian_oracle_ou(x0, sigma2, grid)
    spec = ornstein_uhlenbeck_spec(x0, sigma2)
    ens = sample_paths(spec, grid, 400_000, seed=seed)
    psi = evaluate_psi_matrix(ens, MEAN_CONSTRAINT)
    sol = solve_projected_ascent(psi, cfg=DualConfig(grad_tol=1e-9, max_iters=20000))

    dt = horizon / m
    tau = oracle.activation_time
    interior = [j for j in range(1, m) if grid.nodes[j] >= tau + dt]
    plateau = sol.multiplier.atoms[interior] / dt
    plateau_ok = bool(np.all(np.abs(plateau - 1.0) <= 0.2))
    atom_est = sol.multiplier.atoms[-1] - 0.5 * dt  # subtract the density's trapezoid share
    atom_ok = abs(atom_est - 1.0) <= 0.15
    passed = plateau_ok and atom_ok and sol.converged
    details = (
        f"tau={tau:.4f}; plateau/dt in [{plateau.min():.3f}, {plateau.max():.3f}] "
        f"(target 1 +-20%), terminal atom={atom_est:.3f} (target 1 +-15%)"
    )
    return CriterionResult(3, "OU interior-activation recovery", passed, details,
                           {"plateau": plateau.tolist(), "atom": atom_est,
                            "tau": tau, "mass": sol.mass})


# -- criterion 4 ------------------------------------------------------------


def criterion_4(seed=11):
    """Primal-dual identity residual below 1e-8 at every iterate.

    The solver asserts the identity at every iterate and aborts on violation,
    so any run of the suite enforces this; here a representative solve
    reports its worst residual explicitly.
    """
    grid = TimeGrid.uniform(1.0, 30)
    ens = sample_paths(_bm_case1_spec(), grid, 5_000, seed=seed)
    psi = evaluate_psi_matrix(ens, MEAN_CONSTRAINT)
    rng = np.random.Generator(np.random.Philox(seed))
    f = rng.standard_normal(ens.n_paths) * 0.3
    sol = solve_projected_ascent(psi, f, DualConfig(keep_trace=True))
    passed = sol.max_identity_residual <= 1e-8
    details = f"max identity residual {sol.max_identity_residual:.2e} over {sol.iterations} iterates"
    return CriterionResult(4, "free-energy identity at every iterate", passed, details,
                           {"max_identity_residual": sol.max_identity_residual})


# -- criterion 5 ------------------------------------------------------------


def criterion_5(seed=5):
    """Concavity of the free energy and gradient-finite-difference agreement."""
    rng = np.random.Generator(np.random.Philox(seed))
    n, nodes = 400, 6
    psi = rng.standard_normal((n, nodes))
    f = 0.5 * rng.standard_normal(n)

    worst_gap = -math.inf
    for _ in range(100):
        lam_a = np.abs(rng.standard_normal(nodes))
        lam_b = np.abs(rng.standard_normal(nodes))
        g_a, _ = gibbs_free_energy(psi, f, lam_a)
        g_b, _ = gibbs_free_energy(psi, f, lam_b)
        g_mid, _ = gibbs_free_energy(psi, f, 0.5 * (lam_a + lam_b))
        worst_gap = max(worst_gap, 0.5 * (g_a + g_b) - g_mid)
    concave_ok = worst_gap <= 1e-10

    eps = 1e-5
    worst_fd = 0.0
    for _ in range(50):
        lam = np.abs(rng.standard_normal(nodes)) + 2.0 * eps
        _, measure = gibbs_free_energy(psi, f, lam)
        grad = dual_gradient(psi, measure)
        for j in range(nodes):
            e = np.zeros(nodes)
            e[j] = eps
            g_plus, _ = gibbs_free_energy(psi, f, lam + e)
            g_minus, _ = gibbs_free_energy(psi, f, lam - e)
            fd = (g_plus - g_minus) / (2.0 * eps)
            worst_fd = max(worst_fd, abs(fd - grad[j]))
    fd_ok = worst_fd <= 1e-6
    passed = concave_ok and fd_ok
    details = (
        f"worst midpoint-concavity gap {worst_gap:.2e} (tol 1e-10); "
        f"worst gradient FD error {worst_fd:.2e} (tol 1e-6)"
    )
    return CriterionResult(5, "concavity and gradient checks", passed, details,
                           {"worst_gap": worst_gap, "worst_fd": worst_fd})


# -- criterion 6 ------------------------------------------------------------


def _mini_bridge_instance():
    """S=4, M=3 chain mean-reverting to a positive level, so the endpoint
    targets (nonpositive means) force the interior constraint to bind."""
    states = np.array([-1.0, -0.2, 0.6, 1.4])
    pull = states + 0.8 * (1.0 - states)  # one-step attractor toward +1
    kernel = np.exp(-0.5 * (states[None, :] - pull[:, None]) ** 2 / 0.4)
    kernel = kernel / kernel.sum(axis=1, keepdims=True)
    kernels = np.repeat(kernel[None, :, :], 3, axis=0)
    ref = bridge_mod.MarkovReference(states, np.full(4, 0.25), kernels)
    targets = EndpointEquality(
        target_initial=np.array([0.4, 0.3, 0.2, 0.1]),
        target_final=np.array([0.35, 0.3, 0.2, 0.15]),
    )
    psi_values = np.tile(states, (4, 1))
    return ref, targets, psi_values


def _brute_force_bridge_entropy(ref, targets, psi_values):
    """Independent primal oracle: constrained entropy minimization over the
    full enumerated path simplex as an exponential-cone program (no message
    passing, no multiplier ascent)."""
    import cvxpy as cp

    _, _, probs, paths = bridge_mod.enumerate_path_measure(
        ref, np.zeros(ref.n_states), np.zeros(ref.n_states),
        Multiplier(np.zeros(ref.n_steps + 1)), psi_values,
    )
    n_paths = probs.size
    m_plus_1 = ref.n_steps + 1
    rows = [np.ones(n_paths)]
    rhs = [1.0]
    for s in range(ref.n_states):
        rows.append((paths[:, 0] == s).astype(float))
        rhs.append(targets.target_initial[s])
        rows.append((paths[:, -1] == s).astype(float))
        rhs.append(targets.target_final[s])
    a_eq = np.stack(rows)
    b_eq = np.asarray(rhs)
    a_in = np.stack([psi_values[j][paths[:, j]] for j in range(m_plus_1)])

    p = cp.Variable(n_paths, nonneg=True)
    # sum of kl_div terms equals the relative entropy on the simplex
    problem = cp.Problem(
        cp.Minimize(cp.sum(cp.kl_div(p, probs))),
        [a_eq @ p == b_eq, a_in @ p <= np.zeros(m_plus_1)],
    )
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # inaccurate-solution warning; status checked below
        problem.solve(
            solver="CLARABEL", tol_gap_abs=1e-11, tol_gap_rel=1e-11,
            tol_feas=1e-11, max_iter=500,
        )
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"brute-force oracle failed: status {problem.status}")
    return float(problem.value), problem


def criterion_6():
    """Exact miniature: message passing vs enumeration, solver vs primal oracle."""
    ref, targets, psi_values = _mini_bridge_instance()

    rng = np.random.Generator(np.random.Philox(42))
    pot0 = rng.standard_normal(4) * 0.5
    potT = rng.standard_normal(4) * 0.5
    atoms = np.zeros(4)
    atoms[2] = 0.7
    marg_fb, logz_fb = bridge_mod.forward_backward(ref, pot0, potT, Multiplier(atoms),
                                                   psi_values)
    marg_en, logz_en, _, _ = bridge_mod.enumerate_path_measure(ref, pot0, potT,
                                                               Multiplier(atoms), psi_values)
    marg_err = float(np.abs(marg_fb - marg_en).max())
    logz_err = abs(logz_fb - logz_en)
    fb_ok = marg_err <= 1e-10 and logz_err <= 1e-10

    cfg = DualConfig(grad_tol=1e-9, slack_tol=1e-8)
    sol = bridge_mod.solve_constrained_bridge(ref, targets, psi_values, cfg,
                                              sinkhorn_tol=1e-10)
    endpoint_ok = sol.endpoint_error <= 1e-8
    slack_ok = sol.kkt.max_slackness_residual <= 1e-8

    oracle_value, _ = _brute_force_bridge_entropy(ref, targets, psi_values)
    value_ok = abs(sol.value - oracle_value) <= 1e-6
    passed = fb_ok and endpoint_ok and slack_ok and value_ok and sol.converged
    details = (
        f"marginal err {marg_err:.1e} (tol 1e-10); entropy {sol.value:.9f} vs "
        f"oracle {oracle_value:.9f} (tol 1e-6); endpoint TV {sol.endpoint_error:.1e}; "
        f"slackness {sol.kkt.max_slackness_residual:.1e}"
    )
    return CriterionResult(6, "bridge brute-force equivalence", passed, details,
                           {"marginal_error": marg_err, "value": sol.value,
                            "oracle_value": oracle_value,
                            "endpoint_error": sol.endpoint_error})


# -- criterion 7 ------------------------------------------------------------


def criterion_7(seed=77):
    """Feynman-Kac closed form: value and gradient of the terminal-atom tilt."""
    grid = TimeGrid.uniform(1.0, 20)
    spec = drifted_brownian_spec(0.0, 0.0, lambda t: 0.0, lambda t: 0.0, lambda t: 0.0)
    atoms = np.zeros(21)
    atoms[-1] = 0.25
    h = 1e-3
    q = HjbQuery(sde=spec, grid=grid, multiplier=Multiplier(atoms),
                 observable=lambda t, x: x, mc_paths=100_000, seed=seed, fd_step=h)
    value, se = feynman_kac_value_with_se(q, 0.0, 0.0)
    target = -0.03125
    value_ok = abs(value - target) <= 3.0 * se

    grad = feynman_kac_gradient(q, 0.0, 0.0)
    plus = _exponent_samples(q, 0.0, h)
    minus = _exponent_samples(q, 0.0, -h)
    diff = np.exp(plus - plus.max()) / np.exp(plus - plus.max()).mean() \
        - np.exp(minus - minus.max()) / np.exp(minus - minus.max()).mean()
    se_grad = float(diff.std(ddof=1) / math.sqrt(diff.size)) / (2.0 * h)
    tol_grad = max(3.0 * se_grad, 10.0 * h**2)
    grad_ok = abs(grad - 0.25) <= tol_grad
    passed = value_ok and grad_ok
    details = (
        f"phi_0(0)={value:.6f} vs {target} (3SE={3 * se:.1e}); "
        f"grad={grad:.8f} vs 0.25 (tol={tol_grad:.1e})"
    )
    return CriterionResult(7, "Feynman-Kac closed form", passed, details,
                           {"value": value, "se": se, "grad": grad})


# -- criterion 8 ------------------------------------------------------------


def _two_route_case(name, spec, oracle, grid, n_dual, n_sde, seed, k_sub=8):
    ens = sample_paths(spec, grid, n_dual, seed=seed)
    psi = evaluate_psi_matrix(ens, MEAN_CONSTRAINT)
    sol = solve_projected_ascent(psi, cfg=DualConfig(grad_tol=1e-8, max_iters=20000))
    w = sol.measure.weights

    corrected = corrected_sde_sample(
        spec, lambda t, x: oracle.potential_grad(t, x), oracle.tilted_initial(),
        grid, n_sde, seed=seed + 1, k_sub=k_sub,
    )
    states = corrected.states[:, :, 0]
    worst = 0.0
    for j in range(grid.num_intervals + 1):
        se_a, mean_a = _weighted_se(psi[:, j], w)
        col = states[:, j]
        mean_b = float(col.mean())
        se_b = float(col.std(ddof=1) / math.sqrt(n_sde))
        gap = abs(mean_a - mean_b)
        limit = 3.0 * math.hypot(se_a, se_b)
        worst = max(worst, gap / limit if limit > 0 else math.inf)
    return name, worst, sol


def criterion_8(seed=880):
    """Two-route consistency on all six Gaussian cases."""
    cases = []
    grid_bm = TimeGrid.uniform(1.0, 40)
    cases.append(("bm_terminal", _bm_case1_spec(), _bm_case1(grid_bm), grid_bm, 60_000, 60_000))
    spec2 = drifted_brownian_spec(1.0, 1.0, lambda t: 2.0 * t - 0.5 * t**2,
                                  lambda t: 2.0 - t, lambda t: -1.0)
    oracle2 = gaussian_oracle_drifted_bm(1.0, 1.0, grid_bm, lambda t: 2.0 * t - 0.5 * t**2,
                                         lambda t: 2.0 - t, lambda t: -1.0)
    cases.append(("bm_interior", spec2, oracle2, grid_bm, 150_000, 60_000))
    spec3 = drifted_brownian_spec(1.0, 1.0, lambda t: 0.0, lambda t: 0.0, lambda t: 0.0)
    oracle3 = gaussian_oracle_drifted_bm(1.0, 1.0, grid_bm, lambda t: 0.0, lambda t: 0.0,
                                         lambda t: 0.0)
    cases.append(("bm_initial", spec3, oracle3, grid_bm, 100_000, 60_000))

    grid_ou1 = TimeGrid.uniform(0.3, 12)
    cases.append(("ou_terminal", ornstein_uhlenbeck_spec(0.5, 1.0),
                  gaussian_oracle_ou(0.5, 1.0, grid_ou1), grid_ou1, 60_000, 60_000))
    grid_ou2 = TimeGrid.uniform(1.5, 30)
    cases.append(("ou_interior", ornstein_uhlenbeck_spec(0.5, 1.0),
                  gaussian_oracle_ou(0.5, 1.0, grid_ou2), grid_ou2, 150_000, 60_000))
    grid_ou3 = TimeGrid.uniform(1.0, 20)
    cases.append(("ou_initial", ornstein_uhlenbeck_spec(2.0, 1.0),
                  gaussian_oracle_ou(2.0, 1.0, grid_ou3), grid_ou3, 250_000, 60_000))

    ratios = {}
    for i, (name, spec, oracle, grid, n_dual, n_sde) in enumerate(cases):
        _, worst, _ = _two_route_case(name, spec, oracle, grid, n_dual, n_sde,
                                      seed=seed + 10 * i)
        ratios[name] = worst
    passed = all(v <= 1.0 for v in ratios.values())
    details = "; ".join(f"{k}: worst |gap|/3SE = {v:.2f}" for k, v in ratios.items())
    return CriterionResult(8, "two-route consistency (six cases)", passed, details,
                           {"ratios": ratios})


# -- criterion 9 ------------------------------------------------------------


def criterion_9(seed=909):
    """Relaxation sweep: value slope equals minus the multiplier mass."""
    grid = TimeGrid.uniform(1.0, 50)
    ens = sample_paths(_bm_case1_spec(), grid, 20_000, seed=seed)
    psi = evaluate_psi_matrix(ens, MEAN_CONSTRAINT)
    eps_values = [0.01 * k for k in range(11)]
    rows = stability_sweep(psi, eps_values, DualConfig(grad_tol=1e-10, max_iters=50000))

    values = [r.value for r in rows]
    masses = [r.mass for r in rows]
    monotone_ok = all(values[k + 1] <= values[k] + 1e-10 for k in range(len(rows) - 1))
    slope_errs = []
    for k in range(len(rows) - 1):
        delta = eps_values[k + 1] - eps_values[k]
        slope = (values[k] - values[k + 1]) / delta
        mass_mid = 0.5 * (masses[k] + masses[k + 1])
        slope_errs.append(abs(slope - mass_mid) / mass_mid)
    slope_ok = max(slope_errs) <= 0.05
    gaps = [r.entropy_gap / r.relax for r in rows if r.relax > 0]
    bound = 1.1 * max(masses)
    gap_ok = all(math.isfinite(g) and g <= bound for g in gaps)
    passed = monotone_ok and slope_ok and gap_ok and all(r.converged for r in rows)
    details = (
        f"worst |slope - mass|/mass = {max(slope_errs):.3%} (tol 5%); values "
        f"non-increasing: {monotone_ok}; max gap/eps = {max(gaps):.4f} <= {bound:.4f}"
    )
    return CriterionResult(9, "relaxation stability identity", passed, details,
                           {"values": values, "masses": masses,
                            "slope_errors": slope_errs, "gap_ratios": gaps})


# -- criterion 10 -----------------------------------------------------------


def criterion_10(seed=1010):
    """Conditioning by rejection: distance to the oracle shrinks with N and
    the quantitative bound holds at every N."""
    t0 = time.time()
    grid = TimeGrid.uniform(1.0, 20)
    spec = _bm_case1_spec()
    oracle = _bm_case1(grid)
    rows = []
    for n in (4, 16, 64):
        rows.append(
            condition_by_rejection(
                spec, MEAN_CONSTRAINT, grid, n_particles=n, target_accepted=600,
                seed=seed + n, oracle=oracle, chunk_budget=4_000_000,
            )
        )
    w1 = [r.w1_terminal for r in rows]
    monotone_ok = w1[0] > w1[1] > w1[2]
    csiszar_ok = all(r.csiszar is not None and r.csiszar.passed for r in rows)
    enough = all(r.n_accepted >= 500 for r in rows)
    runtime = time.time() - t0
    passed = monotone_ok and csiszar_ok and enough and runtime <= 300.0
    details = (
        f"W1 to oracle: {w1[0]:.4f} > {w1[1]:.4f} > {w1[2]:.4f} ({monotone_ok}); "
        f"bound holds at every N: {csiszar_ok}; runtime {runtime:.0f}s"
    )
    return CriterionResult(10, "conditioning-by-rejection trend", passed, details,
                           {"w1": w1,
                            "acceptance_rates": [r.acceptance_rate for r in rows],
                            "csiszar": [r.csiszar.to_dict() for r in rows]})


# -- criterion 11 -----------------------------------------------------------


def criterion_11():
    """Determinism: two quick verification runs produce identical artifacts."""

    from .ioutil import dump_json

    def snapshot():
        results = run_criteria(QUICK_CRITERIA, stream=None)
        return dump_json(
            [
                {"number": r.number, "passed": r.passed, "details": r.details,
                 "artifacts": r.artifacts}
                for r in results
            ]
        )

    first = snapshot()
    second = snapshot()
    passed = first == second
    details = f"two quick runs serialized to {len(first)} bytes; identical: {passed}"
    return CriterionResult(11, "determinism of repeated runs", passed, details,
                           {"bytes": len(first), "identical": passed})


_CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
    11: criterion_11,
}

QUICK_CRITERIA = (1, 4, 5, 6)
ALL_CRITERIA = tuple(range(1, 12))


def run_criteria(numbers=ALL_CRITERIA, stream="stdout"):
    """Run the requested criteria, print one PASS/FAIL line each, and return
    the results."""
    import sys

    out = sys.stdout if stream == "stdout" else stream
    results = []
    for number in numbers:
        t0 = time.time()
        result = _CRITERIA[number]()
        result.elapsed = time.time() - t0
        results.append(result)
        if out is not None:
            print(result.line(), file=out, flush=True)
    return results
