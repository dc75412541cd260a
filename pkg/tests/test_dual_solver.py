import math

import numpy as np
import pytest

from entroproj.constraints import LinearConstraint, evaluate_psi_matrix, variance_cap_constraint
from entroproj.dual_solver import (
    DualConfig,
    DualUnboundedError,
    FixedPointError,
    LinearPathFunctional,
    MarginalInteraction,
    dual_gradient,
    gibbs_free_energy,
    mass_bound,
    primal_value,
    solution_report,
    solve_mean_field,
    solve_projected_ascent,
)
from entroproj.measure import Multiplier, TimeGrid, WeightedMeasure, relative_entropy, tilt_weights
from entroproj.reference import sample_paths


class TestGibbsFreeEnergy:
    def test_zero_multiplier_uniform(self, rng):
        psi = rng.standard_normal((16, 3))
        g, m = gibbs_free_energy(psi, None, np.zeros(3))
        assert g == pytest.approx(0.0)
        np.testing.assert_allclose(m.weights, 1.0 / 16)

    def test_constant_observable_single_node(self):
        psi = np.ones((10, 1))
        for lam in (0.3, 2.0, 17.5):
            g, _ = gibbs_free_energy(psi, None, np.array([lam]))
            assert g == pytest.approx(lam, rel=1e-12)

    def test_case1_oracle_multiplier_matches_gaussian_entropy(
        self, case1_spec, case1_grid, case1_oracle, mean_constraint
    ):
        n = 60_000
        ens = sample_paths(case1_spec, case1_grid, n, seed=17)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        g, _ = gibbs_free_energy(psi, None, case1_oracle.multiplier)
        # at the optimal multiplier the free energy equals the projection's
        # relative entropy (slackness kills the pairing term): 0.0625
        assert g == pytest.approx(case1_oracle.relative_entropy, abs=4.0 / math.sqrt(n))

    def test_rejects_negative_multiplier(self, rng):
        with pytest.raises(ValueError):
            gibbs_free_energy(rng.standard_normal((4, 2)), None, np.array([0.1, -0.1]))


class TestDualGradient:
    def test_symmetric_ensemble_zero_gradient(self, rng):
        block = rng.standard_normal((8, 3))
        psi = np.concatenate([block, -block])
        _, m = gibbs_free_energy(psi, None, np.zeros(3))
        np.testing.assert_allclose(dual_gradient(psi, m), 0.0, atol=1e-15)

    def test_finite_difference(self, rng):
        psi = rng.standard_normal((64, 4))
        f = rng.standard_normal(64) * 0.2
        eps = 1e-5
        for _ in range(10):
            lam = np.abs(rng.standard_normal(4)) + 2 * eps
            _, m = gibbs_free_energy(psi, f, lam)
            grad = dual_gradient(psi, m)
            for j in range(4):
                e = np.zeros(4)
                e[j] = eps
                gp, _ = gibbs_free_energy(psi, f, lam + e)
                gm, _ = gibbs_free_energy(psi, f, lam - e)
                assert (gp - gm) / (2 * eps) == pytest.approx(grad[j], abs=1e-6)

    def test_feasible_at_convergence(self, case1_spec, case1_grid, mean_constraint):
        ens = sample_paths(case1_spec, case1_grid, 5_000, seed=23)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        sol = solve_projected_ascent(psi, cfg=DualConfig(grad_tol=1e-9))
        assert sol.gradient.max() <= 1e-9


class TestSolveProjectedAscent:
    def test_interior_feasibility_keeps_reference(self, case1_spec, case1_grid):
        # observable far below zero everywhere: zero multiplier, uniform tilt
        ens = sample_paths(case1_spec, case1_grid, 2_000, seed=31)
        psi = evaluate_psi_matrix(ens, LinearConstraint(lambda x: x - 10.0))
        sol = solve_projected_ascent(psi)
        assert sol.mass == 0.0
        assert sol.dual_value == pytest.approx(0.0)
        assert sol.primal_value == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(sol.measure.weights, 1.0 / 2_000)
        assert sol.iterations == 0

    def test_case1_recovery(self, case1_spec, case1_grid, mean_constraint):
        ens = sample_paths(case1_spec, case1_grid, 20_000, seed=2024)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        sol = solve_projected_ascent(psi, cfg=DualConfig(grad_tol=1e-8))
        assert sol.converged
        assert sol.mass == pytest.approx(0.25, rel=0.1)
        assert sol.multiplier.atoms[-2:].sum() / sol.mass >= 0.9
        w = sol.measure.weights
        term = psi[:, -1]
        se = math.sqrt(float(np.sum(w**2 * (term - w @ term) ** 2)))
        assert abs(float(w @ term)) <= 3 * se

    def test_case3_mass_on_first_node(self, mean_constraint):
        from entroproj.reference import drifted_brownian_spec

        spec = drifted_brownian_spec(1.0, 1.0, lambda t: 0.0, lambda t: 0.0, lambda t: 0.0)
        grid = TimeGrid.uniform(1.0, 25)
        ens = sample_paths(spec, grid, 60_000, seed=41)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        sol = solve_projected_ascent(psi, cfg=DualConfig(grad_tol=1e-8, max_iters=20000))
        assert sol.converged
        assert sol.mass == pytest.approx(1.0, abs=0.15)
        assert sol.multiplier.atoms[0] / sol.mass >= 0.9
        # all marginal means sit near zero (inactive nodes only by sampling noise)
        assert float(np.abs(sol.gradient).max()) <= 0.02

    def test_monotone_ascent(self, case1_spec, case1_grid, mean_constraint):
        ens = sample_paths(case1_spec, case1_grid, 3_000, seed=5)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        sol = solve_projected_ascent(psi, cfg=DualConfig(keep_trace=True))
        values = [row[1] for row in sol.trace]
        assert all(b >= a - 1e-14 for a, b in zip(values, values[1:]))

    def test_identity_residual_small_at_every_iterate(self, case1_spec, case1_grid,
                                                      mean_constraint):
        ens = sample_paths(case1_spec, case1_grid, 3_000, seed=6)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        sol = solve_projected_ascent(psi)
        assert sol.max_identity_residual <= 1e-10

    def test_mass_cap_diagnoses_infeasible(self, rng):
        # observable bounded below by +0.5: no feasible tilt exists
        psi = 0.5 + rng.random((256, 3))
        with pytest.raises(DualUnboundedError, match="dual unbounded or infeasible"):
            solve_projected_ascent(psi, cfg=DualConfig(mass_cap=50.0, max_iters=100000))

    def test_weak_duality(self, case1_spec, case1_grid, mean_constraint, rng):
        ens = sample_paths(case1_spec, case1_grid, 10_000, seed=7)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        sol = solve_projected_ascent(psi, cfg=DualConfig(grad_tol=1e-9))
        # any feasible competitor tilt upper-bounds the attained dual value
        for theta in (0.3, 0.5, 1.0, 2.0):
            competitor = tilt_weights(theta * psi[:, -1])
            if (competitor.weights @ psi).max() <= 0.0:
                assert sol.dual_value <= relative_entropy(competitor) + 1e-12

    def test_ess_warning(self, rng):
        psi = rng.standard_normal((2_000, 2)) * 30.0  # brutal tilt
        with pytest.warns(RuntimeWarning, match="effective sample size"):
            solve_projected_ascent(psi, cfg=DualConfig(max_iters=3))

    def test_report_is_json_ready(self, case1_spec, case1_grid, mean_constraint):
        import json

        from entroproj.ioutil import to_plain

        ens = sample_paths(case1_spec, case1_grid, 1_000, seed=8)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        cfg = DualConfig()
        sol = solve_projected_ascent(psi, cfg=cfg)
        doc = solution_report(sol, grid=case1_grid, cfg=cfg)
        json.dumps(to_plain(doc))


class TestPrimalValue:
    def test_zero_problem(self, rng):
        psi = rng.standard_normal((32, 3))
        sol = solve_projected_ascent(psi - 100.0)  # wildly feasible
        assert primal_value(sol, psi - 100.0) == pytest.approx(0.0, abs=1e-12)

    def test_identity_holds_everywhere(self, rng):
        psi = rng.standard_normal((128, 4))
        f = rng.standard_normal(128)
        for _ in range(10):
            lam = np.abs(rng.standard_normal(4))
            g, m = gibbs_free_energy(psi, f, lam)
            rhs = relative_entropy(m) + float(m.weights @ f) \
                + float(lam @ dual_gradient(psi, m))
            assert rhs == pytest.approx(g, abs=1e-10)

    def test_slack_pairing_vanishes_at_convergence(self, case1_spec, case1_grid,
                                                   mean_constraint):
        ens = sample_paths(case1_spec, case1_grid, 5_000, seed=9)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        sol = solve_projected_ascent(psi, cfg=DualConfig(grad_tol=1e-10, max_iters=20000))
        pairing = float(sol.multiplier.atoms @ sol.gradient)
        assert sol.primal_value == pytest.approx(relative_entropy(sol.measure) + pairing,
                                                 abs=1e-12)
        assert abs(pairing) <= 1e-9


class TestMassBound:
    def test_reference_witness_zero_bound(self, rng):
        psi = np.full((64, 3), -1.0)  # reference itself strictly feasible, eta = 1
        witness = WeightedMeasure.uniform(64)
        assert mass_bound(witness, 1.0, None, psi) == pytest.approx(0.0)
        sol = solve_projected_ascent(psi)
        assert sol.mass <= 1e-12

    def test_case1_witness(self, case1_spec, case1_grid, mean_constraint):
        n = 50_000
        ens = sample_paths(case1_spec, case1_grid, n, seed=10)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        witness = tilt_weights(0.75 * psi[:, -1])  # pushes the terminal mean to -1
        g = witness.weights @ psi
        eta = -float(g.max())
        assert eta == pytest.approx(1.0, abs=0.05)
        bound = mass_bound(witness, eta, None, psi)
        # explicit Gaussian tilt entropy: theta^2 (s2 + T) / 2 = 0.5625
        assert bound == pytest.approx(0.5625 / eta, abs=0.05)
        sol = solve_projected_ascent(psi)
        assert sol.mass <= bound + 0.05

    def test_scaling_in_eta(self, rng):
        psi = np.full((32, 2), -2.0)
        witness = WeightedMeasure.uniform(32)
        f = rng.standard_normal(32)
        c1 = mass_bound(witness, 1.0, f, psi)
        c2 = mass_bound(witness, 2.0, f, psi)
        assert c1 == pytest.approx(2.0 * c2, rel=1e-12)

    def test_infeasible_witness_rejected(self):
        psi = np.zeros((8, 2))
        psi[:, 1] = 1.0
        with pytest.raises(ValueError, match="node 1"):
            mass_bound(WeightedMeasure.uniform(8), 0.5, None, psi)


class TestMeanField:
    def test_no_interaction_single_outer_step(self, case1_spec, case1_grid,
                                              mean_constraint):
        ens = sample_paths(case1_spec, case1_grid, 4_000, seed=11)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        direct = solve_projected_ascent(psi, cfg=DualConfig())
        outer = solve_mean_field(ens, None, mean_constraint, DualConfig())
        assert outer.outer_iterations == 1
        assert outer.converged
        np.testing.assert_allclose(outer.measure.weights, direct.measure.weights,
                                   atol=1e-12)

    def test_linear_functional_one_outer_step(self, case1_spec, case1_grid,
                                              mean_constraint):
        ens = sample_paths(case1_spec, case1_grid, 4_000, seed=12)
        interaction = LinearPathFunctional(lambda states: 0.4 * states[:, -1, 0])
        sol = solve_mean_field(ens, interaction, mean_constraint, DualConfig())
        assert sol.outer_iterations == 1
        assert sol.converged

    def test_quadratic_self_consistency(self, case1_spec, case1_grid, mean_constraint):
        ens = sample_paths(case1_spec, case1_grid, 2_000, seed=13)
        interaction = MarginalInteraction(lambda z: 0.5 * z**2 - 1.0,
                                          node_index=case1_grid.num_intervals,
                                          strength=0.05)
        cfg = DualConfig(grad_tol=1e-8, outer_damping=1.0)
        sol = solve_mean_field(ens, interaction, mean_constraint, cfg)
        assert sol.converged
        assert "stationary point only" in sol.status
        # refreeze the derivative at the fixed point and re-tilt: the weights
        # must reproduce themselves
        f = interaction.derivative(ens, sol.measure.weights)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        refit = tilt_weights(f + psi @ sol.multiplier.atoms)
        assert 0.5 * np.abs(refit.weights - sol.measure.weights).sum() < 1e-6

    def test_nonconvex_constraint_requires_override(self, case1_spec, case1_grid):
        ens = sample_paths(case1_spec, case1_grid, 500, seed=14)
        constraint = variance_cap_constraint(5.0)
        with pytest.raises(ValueError, match="allow_nonconvex"):
            solve_mean_field(ens, None, constraint, DualConfig())

    def test_nonconvex_constraint_with_override(self, case1_spec):
        grid = TimeGrid.uniform(1.0, 6)
        ens = sample_paths(case1_spec, grid, 800, seed=15)
        constraint = variance_cap_constraint(1.05)  # variance of the reference grows past this
        cfg = DualConfig(grad_tol=1e-6, outer_max=200, outer_damping=0.5)
        sol = solve_mean_field(ens, None, constraint, cfg, allow_nonconvex=True)
        assert "stationary point only" in sol.status
        # the capped variance must be (approximately) enforced at every node
        for j in range(grid.num_intervals + 1):
            v = constraint.evaluate(ens.states_at(j), sol.measure.weights)
            assert v <= 1e-3
