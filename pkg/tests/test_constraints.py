import numpy as np
import pytest

from entroproj.constraints import (
    EndpointEquality,
    LinearConstraint,
    evaluate_psi_matrix,
    constraint_violation,
    linear_as_nonlinear,
    linearize_nonlinear,
    quadratic_interaction,
    quadratic_interaction_constraint,
    variance_cap_constraint,
)
from entroproj.measure import PathEnsemble, TimeGrid, WeightedMeasure


def _ensemble(states):
    states = np.asarray(states, dtype=float)
    grid = TimeGrid.uniform(1.0, states.shape[1] - 1)
    return PathEnsemble(grid, states[:, :, None])


class TestPsiMatrix:
    def test_constant_paths(self):
        ens = _ensemble(np.full((3, 5), 2.0))
        psi = evaluate_psi_matrix(ens, LinearConstraint(lambda x: x))
        np.testing.assert_allclose(psi, 2.0)

    def test_antisymmetric_pair(self, rng):
        path = rng.standard_normal(6)
        ens = _ensemble(np.stack([path, -path]))
        psi = evaluate_psi_matrix(ens, LinearConstraint(lambda x: x))
        np.testing.assert_allclose(psi[0], -psi[1])

    def test_gaussian_second_moment(self):
        rng = np.random.Generator(np.random.Philox(3))
        n = 50_000
        cap = 0.3
        states = rng.standard_normal((n, 3))
        ens = _ensemble(states)
        psi = evaluate_psi_matrix(ens, LinearConstraint(lambda x: 0.5 * x**2 - cap))
        np.testing.assert_allclose(psi.mean(axis=0), 0.5 - cap, atol=4.0 / np.sqrt(n))

    def test_growth_bound_violation(self):
        ens = _ensemble(np.full((2, 3), 10.0))
        c = LinearConstraint(lambda x: x**2, growth_bound=1.0)
        with pytest.raises(ValueError, match="growth bound"):
            evaluate_psi_matrix(ens, c)

    def test_nonfinite_value_reported(self):
        ens = _ensemble(np.zeros((2, 3)))
        c = LinearConstraint(lambda x: np.where(x == 0, np.nan, x))
        with pytest.raises(ValueError, match="non-finite"):
            evaluate_psi_matrix(ens, c)


class TestConstraintViolation:
    def test_symmetric_zero_mean(self, rng):
        path = rng.standard_normal(5)
        ens = _ensemble(np.stack([path, -path]))
        psi = evaluate_psi_matrix(ens, LinearConstraint(lambda x: x))
        g, sup = constraint_violation(psi, WeightedMeasure.uniform(2))
        np.testing.assert_allclose(g, 0.0, atol=1e-15)
        assert sup == pytest.approx(0.0, abs=1e-15)

    def test_dirac_weights_pick_one_path(self, rng):
        values = rng.standard_normal((3, 4))
        ens = _ensemble(values)
        psi = evaluate_psi_matrix(ens, LinearConstraint(lambda x: x))
        m = WeightedMeasure(np.array([0.0, 1.0, 0.0]))
        g, _ = constraint_violation(psi, m)
        np.testing.assert_allclose(g, values[1])

    def test_case1_oracle_weights(self, case1_spec, case1_grid, case1_oracle, mean_constraint):
        from entroproj.reference import sample_paths
        from entroproj.measure import tilt

        ens = sample_paths(case1_spec, case1_grid, 30_000, seed=8)
        psi = evaluate_psi_matrix(ens, mean_constraint)
        potential = psi @ case1_oracle.multiplier.atoms
        m = tilt(ens, potential)
        g, sup = constraint_violation(psi, m)
        curve = case1_oracle.mean_curve_nodes()
        np.testing.assert_allclose(g, curve, atol=0.05)
        assert np.all(g[:-1] < 0)
        assert abs(g[-1]) < 0.05


class TestQuadraticInteraction:
    def test_constant_kernel_centering(self):
        # a constant kernel contributes no direction dependence: the centered
        # derivative (kernel sums minus twice the value) vanishes identically
        value, deriv = quadratic_interaction(lambda z: np.full_like(z, 3.0),
                                             np.array([0.1, 0.7]), np.array([0.5, 0.5]))
        assert value == pytest.approx(3.0)
        np.testing.assert_allclose(deriv, 0.0, atol=1e-14)

    def test_two_atoms_by_hand(self):
        cap = 0.4
        value, deriv = quadratic_interaction(lambda z: 0.5 * z**2 - cap,
                                             np.array([1.0, -1.0]), np.array([0.5, 0.5]))
        assert value == pytest.approx(1.0 - cap)
        np.testing.assert_allclose(deriv, 0.0, atol=1e-14)

    def test_gaussian_variance(self):
        rng = np.random.Generator(np.random.Philox(9))
        n = 4000
        x = rng.standard_normal(n)
        w = np.full(n, 1.0 / n)
        cap = 0.9
        value, _ = quadratic_interaction(lambda z: 0.5 * z**2 - cap, x, w)
        assert value == pytest.approx(1.0 - cap, abs=5.0 / np.sqrt(n))

    def test_dense_cap(self):
        with pytest.raises(ValueError, match="cap"):
            quadratic_interaction(lambda z: z, np.zeros(10), np.full(10, 0.1), cap=5)


class TestLinearize:
    def test_linear_wrap_reproduces_observable(self, rng):
        ens = _ensemble(rng.standard_normal((20, 4)))
        c = LinearConstraint(lambda x: x - 0.3)
        wrapped = linear_as_nonlinear(c)
        w = rng.random(20)
        m = WeightedMeasure(w / w.sum())
        offsets, slopes = linearize_nonlinear(wrapped, ens, m)
        psi = evaluate_psi_matrix(ens, c)
        for j in range(4):
            base = float(np.dot(m.weights, psi[:, j]))
            assert offsets[j] == pytest.approx(base)
            np.testing.assert_allclose(slopes[:, j], psi[:, j] - base, atol=1e-12)

    def test_centered_direction_has_no_correction(self, rng):
        ens = _ensemble(np.stack([rng.standard_normal(4), -rng.standard_normal(4)[::-1]]))
        quad = quadratic_interaction_constraint(lambda z: 0.5 * z**2 - 1.0)
        m = WeightedMeasure.uniform(2)
        offsets, slopes = linearize_nonlinear(quad, ens, m)
        # pairing the slopes against the current weights must vanish
        np.testing.assert_allclose(m.weights @ slopes, 0.0, atol=1e-10)

    @pytest.mark.parametrize("eps", [1e-3, 1e-4])
    def test_directional_finite_difference(self, rng, eps):
        n = 50
        ens = _ensemble(rng.standard_normal((n, 3)))
        quad = quadratic_interaction_constraint(lambda z: 0.5 * z**2 - 0.5)
        w = rng.random(n)
        w /= w.sum()
        m = WeightedMeasure(w)
        offsets, slopes = linearize_nonlinear(quad, ens, m)
        for _ in range(20):
            w2 = rng.random(n)
            w2 /= w2.sum()
            mixed = (1.0 - eps) * w + eps * w2
            for j in range(3):
                values = ens.states_at(j)
                fd = (quad.evaluate(values, mixed) - offsets[j]) / eps
                pairing = float(np.dot(w2 - w, slopes[:, j]))
                assert fd == pytest.approx(pairing, abs=10.0 * eps)

    def test_centering_enforced(self, rng):
        from entroproj.constraints import NonlinearConstraint

        ens = _ensemble(rng.standard_normal((10, 3)))
        bad = NonlinearConstraint(
            evaluate=lambda x, w: 0.0,
            derivative=lambda x, w: np.ones_like(x),  # mean 1, not centered
        )
        with pytest.raises(ValueError, match="centering convention"):
            linearize_nonlinear(bad, ens, WeightedMeasure.uniform(10))


class TestConvexityFlags:
    def test_variance_cap_not_convex_flagged(self):
        assert variance_cap_constraint(1.0).convex_flag is False

    def test_linear_wrap_convexity_holds(self, rng):
        # for constraints carrying convex_flag, midpoint convexity must hold
        ens = _ensemble(rng.standard_normal((30, 3)))
        c = linear_as_nonlinear(LinearConstraint(lambda x: x**3))
        assert c.convex_flag
        for _ in range(50):
            w1, w2 = rng.random(30), rng.random(30)
            w1 /= w1.sum()
            w2 /= w2.sum()
            values = ens.states_at(1)
            mid = c.evaluate(values, 0.5 * (w1 + w2))
            avg = 0.5 * (c.evaluate(values, w1) + c.evaluate(values, w2))
            assert mid <= avg + 1e-10


class TestEndpointEquality:
    def test_targets_validated(self):
        with pytest.raises(ValueError):
            EndpointEquality(np.array([0.5, 0.4]), np.array([0.5, 0.5]))
        eq = EndpointEquality(np.array([0.5, 0.5]), np.array([0.25, 0.75]))
        assert eq.target_initial.sum() == pytest.approx(1.0)
