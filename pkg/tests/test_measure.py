import math

import numpy as np
import pytest

from entroproj.measure import (
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


def _constant_ensemble(value=2.0, n=4, m=4):
    grid = TimeGrid.uniform(1.0, m)
    return PathEnsemble(grid, np.full((n, m + 1, 1), value))


class TestTimeGrid:
    def test_uniform(self):
        grid = TimeGrid.uniform(2.0, 4)
        assert grid.num_intervals == 4
        assert grid.horizon == 2.0
        np.testing.assert_allclose(grid.dt, 0.5)
        assert grid.trapezoid_weights.sum() == pytest.approx(2.0)

    def test_rejects_bad_grids(self):
        with pytest.raises(ValueError):
            TimeGrid([0.0, 1.0])  # one interval only
        with pytest.raises(ValueError):
            TimeGrid([0.1, 0.5, 1.0])  # first node not zero
        with pytest.raises(ValueError):
            TimeGrid([0.0, 0.5, 0.5, 1.0])  # not strictly increasing

    def test_node_index(self):
        grid = TimeGrid.uniform(1.0, 4)
        assert grid.node_index(0.5) == 2
        assert grid.node_index(0.5 + 1e-13) == 2
        assert grid.node_index(0.3) is None


class TestTilt:
    def test_identity_tilt(self):
        m = tilt(_constant_ensemble(n=4), np.zeros(4))
        np.testing.assert_allclose(m.weights, 0.25)
        assert m.log_normalizer == pytest.approx(0.0)

    def test_ratio_forced_by_log_potentials(self):
        m = tilt_weights(np.log([1.0, 3.0]))
        np.testing.assert_allclose(m.weights, [0.75, 0.25])

    def test_constant_shift_invariance(self, rng):
        v = rng.standard_normal(64) * 5.0
        base = tilt_weights(v)
        for shift in (1e3, -1e3, 123.456):
            shifted = tilt_weights(v + shift)
            np.testing.assert_allclose(shifted.weights, base.weights, atol=1e-12)
            assert shifted.log_normalizer == pytest.approx(
                base.log_normalizer - shift, rel=1e-12, abs=1e-9
            )

    def test_overflow_safety(self):
        m = tilt_weights(np.array([-1e5, -1e5 + 1.0]))
        np.testing.assert_allclose(m.weights.sum(), 1.0)
        assert np.all(np.isfinite(m.weights))

    def test_infinite_potential_gives_zero_weight(self):
        m = tilt_weights(np.array([0.0, np.inf, 0.0]))
        np.testing.assert_allclose(m.weights, [0.5, 0.0, 0.5])

    def test_degenerate_tilt(self):
        with pytest.raises(ValueError, match="degenerate tilt"):
            tilt_weights(np.array([np.inf, np.inf]))
        with pytest.raises(ValueError):
            tilt_weights(np.array([0.0, np.nan]))
        with pytest.raises(ValueError):
            tilt_weights(np.array([0.0, -np.inf]))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            tilt(_constant_ensemble(n=4), np.zeros(5))

    def test_permutation_stability(self, rng):
        v = rng.standard_normal(1000)
        perm = rng.permutation(1000)
        a = tilt_weights(v)
        b = tilt_weights(v[perm])
        np.testing.assert_allclose(a.weights[perm], b.weights, atol=1e-12)
        assert a.log_normalizer == pytest.approx(b.log_normalizer, abs=1e-12)


class TestRelativeEntropy:
    def test_uniform_is_zero(self):
        assert relative_entropy(WeightedMeasure.uniform(7)) == pytest.approx(0.0)

    def test_dirac_on_one_of_two(self):
        m = WeightedMeasure(np.array([1.0, 0.0]))
        assert relative_entropy(m) == pytest.approx(math.log(2.0))

    def test_nonnegative_and_zero_iff_uniform(self, rng):
        for _ in range(50):
            w = rng.random(32) + 1e-3
            m = WeightedMeasure(w / w.sum())
            h = relative_entropy(m)
            assert h >= 0.0
            if h < 1e-10:
                np.testing.assert_allclose(m.weights, 1.0 / 32, atol=1e-5)


class TestTimeMarginalMoment:
    def test_normalization(self):
        ens = _constant_ensemble()
        m = WeightedMeasure.uniform(4)
        assert time_marginal_moment(ens, m, lambda x: 1.0, 2) == pytest.approx(1.0)

    def test_constant_path_mean(self):
        ens = _constant_ensemble(2.0)
        m = WeightedMeasure.uniform(4)
        assert time_marginal_moment(ens, m, lambda x: x, 3) == pytest.approx(2.0)

    def test_brownian_clt(self):
        # iid standard Brownian ensemble at t = 1: mean 0 +- 3/sqrt(N)
        n = 40_000
        rng = np.random.Generator(np.random.Philox(5))
        grid = TimeGrid.uniform(1.0, 4)
        increments = rng.standard_normal((n, 4)) * 0.5
        states = np.concatenate([np.zeros((n, 1)), np.cumsum(increments, axis=1)], axis=1)
        ens = PathEnsemble(grid, states[:, :, None])
        m = WeightedMeasure.uniform(n)
        value = time_marginal_moment(ens, m, lambda x: x, 4)
        assert abs(value) <= 3.0 / math.sqrt(n)

    def test_linearity(self, rng):
        n = 100
        grid = TimeGrid.uniform(1.0, 3)
        ens = PathEnsemble(grid, rng.standard_normal((n, 4, 1)))
        w = rng.random(n)
        m = WeightedMeasure(w / w.sum())
        f1, f2 = (lambda x: x), (lambda x: x**2 - 1.0)
        lhs = time_marginal_moment(ens, m, lambda x: 2.0 * f1(x) + 3.0 * f2(x), 1)
        rhs = 2.0 * time_marginal_moment(ens, m, f1, 1) + 3.0 * time_marginal_moment(ens, m, f2, 1)
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_out_of_range_node(self):
        ens = _constant_ensemble()
        with pytest.raises(IndexError):
            time_marginal_moment(ens, WeightedMeasure.uniform(4), lambda x: x, 9)


class TestWasserstein:
    def test_identical(self, rng):
        x = rng.standard_normal(50)
        assert wasserstein1_1d(x, x) == pytest.approx(0.0, abs=1e-14)

    def test_translation_of_diracs(self):
        assert wasserstein1_1d([0.0], [1.0]) == pytest.approx(1.0)

    def test_quantile_coupling_by_hand(self):
        # uniform on {0,1} vs uniform on {0,2}: couple 0-0 and 1-2, mean |gap| 0.5
        assert wasserstein1_1d([0.0, 1.0], [0.0, 2.0]) == pytest.approx(0.5)

    def test_symmetry_and_triangle(self, rng):
        for _ in range(25):
            a, b, c = (rng.standard_normal(20) for _ in range(3))
            wa, wb, wc = (rng.random(20) for _ in range(3))
            d_ab = wasserstein1_1d(a, b, wa, wb)
            d_ba = wasserstein1_1d(b, a, wb, wa)
            d_ac = wasserstein1_1d(a, c, wa, wc)
            d_cb = wasserstein1_1d(c, b, wc, wb)
            assert d_ab == pytest.approx(d_ba, abs=1e-10)
            assert d_ab <= d_ac + d_cb + 1e-10

    def test_empty_input(self):
        with pytest.raises(ValueError):
            wasserstein1_1d([], [1.0])


class TestSerialization:
    def test_binary_roundtrip(self, rng):
        grid = TimeGrid(np.array([0.0, 0.3, 1.0]))
        ens = PathEnsemble(grid, rng.standard_normal((5, 3, 2)))
        back = PathEnsemble.from_binary(ens.to_binary())
        np.testing.assert_array_equal(back.states, ens.states)
        np.testing.assert_array_equal(back.grid.nodes, ens.grid.nodes)

    def test_csv_roundtrip(self, rng):
        grid = TimeGrid.uniform(1.0, 3)
        ens = PathEnsemble(grid, rng.standard_normal((3, 4, 1)))
        back = PathEnsemble.from_csv(ens.to_csv())
        np.testing.assert_allclose(back.states, ens.states)

    def test_csv_refuses_large(self):
        ens = _constant_ensemble(n=5)
        with pytest.raises(ValueError):
            ens.to_csv(max_paths=3)

    def test_measure_json_roundtrip(self, rng):
        w = rng.random(6)
        m = WeightedMeasure(w / w.sum(), log_normalizer=-1.25)
        back = WeightedMeasure.from_json(m.to_json())
        np.testing.assert_array_equal(back.weights, m.weights)
        assert back.log_normalizer == m.log_normalizer

    def test_multiplier_json_roundtrip(self):
        mult = Multiplier(np.array([0.0, 0.5, 0.25]))
        back = Multiplier.from_json(mult.to_json())
        np.testing.assert_array_equal(back.atoms, mult.atoms)
        assert mult.nonzero_pairs() == [(1, 0.5), (2, 0.25)]
        assert mult.mass == pytest.approx(0.75)


class TestValidation:
    def test_ensemble_rejects_nonfinite(self):
        grid = TimeGrid.uniform(1.0, 2)
        states = np.zeros((2, 3, 1))
        states[1, 2, 0] = np.nan
        with pytest.raises(ValueError):
            PathEnsemble(grid, states)

    def test_ensemble_dimension_limits(self):
        grid = TimeGrid.uniform(1.0, 2)
        with pytest.raises(ValueError):
            PathEnsemble(grid, np.zeros((2, 3, 3)))

    def test_weights_must_normalize(self):
        with pytest.raises(ValueError):
            WeightedMeasure(np.array([0.5, 0.6]))

    def test_multiplier_nonnegative(self):
        with pytest.raises(ValueError):
            Multiplier(np.array([0.1, -0.2]))
