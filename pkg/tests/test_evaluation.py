from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from ccyield.chance import ChanceSpec, Constraint, assemble
from ccyield.evaluation import (
    ByoError,
    byo_optimize,
    density_from_samples,
    indicator,
    kde_value,
    mc_yield,
    metric_pdf,
)
from ccyield.gaussmix import make_rng
from ccyield.polyopt import solve
from ccyield.simulators import CountingSimulator, SyntheticSimulator


class TestIndicator:
    def test_all_below(self):
        assert indicator([0.1, 0.2], [1.0, 1.0]) == 1

    def test_one_above(self):
        assert indicator([0.1, 1.2], [1.0, 1.0]) == 0

    def test_threshold_is_inclusive(self):
        assert indicator([1.0, 1.0], [1.0, 1.0]) == 1

    def test_rows(self):
        got = indicator(np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0]]), [1.0, 1.0])
        assert got.tolist() == [1, 0, 1]


class TestMonteCarloYield:
    def test_unbounded_thresholds(self, synthetic):
        # constraints need finite thresholds, the largest float plays the role of +inf
        top = np.finfo(float).max
        spec = ChanceSpec("objective", "max", (Constraint("g1", top, 0.05), Constraint("g2", top, 0.05)))
        est = mc_yield(synthetic.simulator, [0.5, 0.5], synthetic.mixture, spec, 1000)
        assert est.yield_ == 1.0

    def test_reference_optimum(self, synthetic):
        est = mc_yield(synthetic.simulator, [0.9379, -0.0522], synthetic.mixture, synthetic.spec, 10_000, seed=1)
        assert est.yield_ >= 0.99

    def test_mean_only_point(self, synthetic):
        est = mc_yield(synthetic.simulator, [0.9999, 0.0], synthetic.mixture, synthetic.spec, 10_000, seed=1)
        assert est.yield_ == pytest.approx(0.4166, abs=0.03)

    def test_yield_bounded_by_each_constraint(self, synthetic):
        est = mc_yield(synthetic.simulator, [0.99, 0.0], synthetic.mixture, synthetic.spec, 5000, seed=2)
        assert est.yield_ <= np.min(1.0 - est.violations) + 1e-15

    def test_deterministic(self, synthetic):
        a = mc_yield(synthetic.simulator, [0.99, 0.0], synthetic.mixture, synthetic.spec, 1000, seed=9)
        b = mc_yield(synthetic.simulator, [0.99, 0.0], synthetic.mixture, synthetic.spec, 1000, seed=9)
        assert a.yield_ == b.yield_ and np.array_equal(a.metric_means, b.metric_means)

    def test_standard_error_scatter(self, synthetic):
        m = 2000
        ys = [
            mc_yield(synthetic.simulator, [0.9999, 0.0], synthetic.mixture, synthetic.spec, m, seed=s).yield_
            for s in range(8)
        ]
        y = float(np.mean(ys))
        assert max(ys) - min(ys) <= 4 * math.sqrt(y * (1 - y) / m)

    def test_minimum_samples(self, synthetic):
        with pytest.raises(ValueError):
            mc_yield(synthetic.simulator, [0.0, 0.0], synthetic.mixture, synthetic.spec, 99)

    def test_simulator_failure_names_sample(self, synthetic):
        class Broken(SyntheticSimulator):
            def _evaluate_batch(self, x, xi):
                out = super()._evaluate_batch(x, xi)
                out[17] = np.nan
                return out

        with pytest.raises(Exception, match="sample 17"):
            mc_yield(Broken(), [0.0, 0.0], synthetic.mixture, synthetic.spec, 100)


class TestMetricPdf:
    def test_deterministic_metric_single_bin(self):
        dens = density_from_samples(np.full(600, 2.5))
        assert dens.density.size == 1
        assert dens.integral() == pytest.approx(1.0, abs=1e-6)

    def test_histogram_integrates_to_one(self, synthetic):
        pdfs = metric_pdf(synthetic.simulator, [0.9, 0.0], synthetic.mixture, 1000, seed=3)
        assert set(pdfs) == {"objective", "g1", "g2"}
        for d in pdfs.values():
            assert d.integral() == pytest.approx(1.0, abs=1e-6)
            assert np.all(d.kde > 0)

    def test_minimum_samples(self, synthetic):
        with pytest.raises(ValueError):
            metric_pdf(synthetic.simulator, [0.0, 0.0], synthetic.mixture, 499)

    def test_surrogate_matches_simulator_distribution(self, synthetic):
        x = np.array([0.9379, -0.0522])
        xi = synthetic.mixture.sample(1000, make_rng(4))
        truth = synthetic.simulator.evaluate_batch(np.repeat(x[None], 1000, 0), xi)
        surrogate = synthetic.model.evaluate_all(x, xi)
        for k in range(truth.shape[1]):
            assert ks_2samp(surrogate[:, k], truth[:, k], method="asymp").statistic <= 0.05


class TestKde:
    def test_value_at_single_centre(self):
        assert kde_value(np.array([0.2, 0.7]), np.array([[0.2, 0.7]]), 0.3) == pytest.approx(1 / (math.sqrt(2 * math.pi) * 0.3))
        assert kde_value(np.zeros(2), np.zeros((1, 2)), 0.3) == pytest.approx(1.3298, abs=1e-4)

    def test_positive_everywhere(self, rng):
        centres = rng.uniform(0, 1, (20, 3))
        assert np.all(kde_value(rng.uniform(-5, 5, (100, 3)), centres, 0.3) > 0)

    def test_exponent_uses_h_not_h_squared(self):
        # one unit away: exp(-1 / (2 h)) relative to the centre
        ratio = kde_value(np.array([1.0]), np.zeros((1, 1)), 0.3) / kde_value(np.zeros(1), np.zeros((1, 1)), 0.3)
        assert ratio == pytest.approx(math.exp(-1 / 0.6))


class TestByo:
    def test_full_run_accounting(self, synthetic):
        sim = CountingSimulator(synthetic.simulator)
        res = byo_optimize(sim, synthetic.mixture, synthetic.spec, seed=0, tol=0.0)
        assert res.iterations == 20
        assert res.simulations == sim.calls == 20 * (100 + 1)

    def test_early_stop_is_counted(self, synthetic):
        sim = CountingSimulator(synthetic.simulator)
        res = byo_optimize(sim, synthetic.mixture, synthetic.spec, seed=0, tol=10.0)
        assert res.iterations == 2
        assert res.simulations == sim.calls == 2 * 101

    def test_no_pass_samples(self, synthetic):
        spec = ChanceSpec("objective", "max", (Constraint("g1", -50.0, 0.05),))
        sim = CountingSimulator(synthetic.simulator)
        with pytest.raises(ByoError):
            byo_optimize(sim, synthetic.mixture, spec, seed=0)
        assert sim.calls == 100 + 200

    def test_deterministic(self, synthetic):
        a = byo_optimize(synthetic.simulator, synthetic.mixture, synthetic.spec, seed=5, max_iter=3)
        b = byo_optimize(synthetic.simulator, synthetic.mixture, synthetic.spec, seed=5, max_iter=3)
        assert np.array_equal(a.x, b.x) and a.history == b.history

    def test_against_proposed_method(self, synthetic):
        byo = byo_optimize(synthetic.simulator, synthetic.mixture, synthetic.spec, seed=0)
        ours = solve(assemble(synthetic.model, synthetic.spec), seed=0)
        est = mc_yield(synthetic.simulator, byo.x, synthetic.mixture, synthetic.spec, 10_000, seed=1)
        assert est.yield_ >= 0.95
        assert byo.objective <= ours.objective_value + 0.05
