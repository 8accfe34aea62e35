from __future__ import annotations

import math

import numpy as np
import pytest

from ccyield.basis import build_gram_schmidt, build_legendre
from ccyield.quadrature import (
    MomentSystem,
    QuadratureRule,
    QuadratureSettings,
    bcd_solve,
    design_rule,
    nnls_projected_gradient,
    noise_rule,
    prune,
    residual_l1,
)
from ccyield.simulators import MZI_MIXTURE, RING_MIXTURE, SYNTHETIC_MIXTURE


@pytest.fixture(scope="module")
def unit_system():
    return MomentSystem(build_legendre([[-1.0, 1.0]], 2), None, 2)


class TestDesignRule:
    def test_two_point_gauss(self):
        rule = design_rule(build_legendre([[-1.0, 1.0]], 1), 1)
        assert rule.size == 2
        assert np.allclose(np.sort(rule.points[:, 0]), [-1 / math.sqrt(3), 1 / math.sqrt(3)])
        assert np.allclose(rule.weights, 0.5)
        assert rule.residual_l1 < 1e-12

    def test_microring_box(self):
        rule = design_rule(build_legendre([[0.3, 0.6]] * 4, 2), 2)
        assert 14 <= rule.size <= 20
        assert rule.residual_l1 <= 1e-6

    def test_mzi_box(self):
        rule = design_rule(build_legendre([[100.0, 300.0]] * 3, 2), 2)
        assert 8 <= rule.size <= 14
        assert rule.residual_l1 <= 1e-6

    def test_points_stay_in_box(self):
        lb = build_legendre([[0.3, 0.6]] * 4, 2)
        rule = design_rule(lb, 2)
        assert np.all(rule.points >= lb.bounds[:, 0]) and np.all(rule.points <= lb.bounds[:, 1])
        assert np.all(rule.weights > 0)


class TestNoiseRule:
    def test_synthetic(self):
        rule = noise_rule(build_gram_schmidt(SYNTHETIC_MIXTURE, 4), SYNTHETIC_MIXTURE, 2)
        assert 4 <= rule.size <= 8
        assert rule.residual_l1 <= 1e-6

    @pytest.mark.slow
    def test_microring(self):
        rule = noise_rule(build_gram_schmidt(RING_MIXTURE, 4), RING_MIXTURE, 2)
        assert 12 <= rule.size <= 20
        assert rule.residual_l1 <= 1e-6

    def test_order_zero(self):
        rule = noise_rule(build_gram_schmidt(MZI_MIXTURE, 0), MZI_MIXTURE, 0)
        assert rule.size == 1 and rule.weights[0] == 1.0

    def test_wrong_measure(self):
        with pytest.raises(ValueError):
            noise_rule(build_gram_schmidt(SYNTHETIC_MIXTURE, 4), MZI_MIXTURE, 2)

    def test_basis_order_too_low(self):
        with pytest.raises(ValueError):
            MomentSystem(None, build_gram_schmidt(SYNTHETIC_MIXTURE, 2), 2)


class TestJointRule:
    def test_bounds_and_residual(self, synthetic):
        rule = synthetic.joint
        system = MomentSystem(synthetic.design_basis, synthetic.noise_basis, 2)
        assert system.min_points <= rule.size <= system.max_points
        assert 15 <= rule.size <= 25
        assert rule.converged
        assert rule.residual_l1 <= 1e-6

    def test_exactness_transfer(self, synthetic, rng):
        """|E[g] - rule(g)| <= residual_l1 * ||c||_1 for g in the degree-2p span."""
        system = MomentSystem(synthetic.design_basis, synthetic.noise_basis, 2)
        rule = synthetic.joint
        A = system.matrix(rule.points)
        for _ in range(20):
            c = rng.normal(size=system.n_moments)
            exact = c[0]
            approx = c @ A @ rule.weights
            assert abs(exact - approx) <= rule.residual_l1 * np.abs(c).sum() + 1e-15

    def test_serialisation_round_trip(self, synthetic, tmp_path):
        synthetic.joint.save(tmp_path / "rule.json")
        again = QuadratureRule.load(tmp_path / "rule.json")
        assert np.array_equal(again.points, synthetic.joint.points)
        assert np.array_equal(again.weights, synthetic.joint.weights)
        assert again.x.shape == (again.size, 2) and again.xi.shape == (again.size, 2)


class TestBlockCoordinateDescent:
    def test_exact_rule_is_fixed_point(self, unit_system):
        t, w = np.polynomial.legendre.leggauss(3)
        res = bcd_solve(unit_system, t[:, None], w / 2)
        assert np.allclose(res.points[:, 0], t)
        assert np.allclose(res.weights, w / 2)
        assert res.residual_sq < 1e-24

    def test_overcomplete_candidates(self, unit_system, rng):
        pts = rng.uniform(-1, 1, (9, 1))
        res = bcd_solve(unit_system, pts, np.full(9, 1 / 9))
        assert residual_l1(unit_system, res.points, res.weights) <= 1e-10

    def test_history_is_monotone_and_feasible(self, rng):
        system = MomentSystem(build_legendre([[0.0, 2.0]] * 2, 2), None, 2)
        pts = rng.uniform(0, 2, (30, 2))
        res = bcd_solve(system, pts, np.full(30, 1 / 30), max_outer=40)
        assert np.all(np.diff(res.history) <= 1e-15 * np.abs(res.history[:-1]).max())
        assert np.all(res.weights >= 0)
        assert np.all((res.points >= 0) & (res.points <= 2))

    def test_weight_step_recovers_gauss_weights(self, unit_system):
        t, w = np.polynomial.legendre.leggauss(3)
        A = unit_system.matrix(t[:, None])
        got = nnls_projected_gradient(A, unit_system.target, np.full(3, 1 / 3), 500)
        assert np.allclose(got, w / 2, atol=1e-12)


class TestPrune:
    def test_zero_weight_point_removed(self, unit_system):
        t, w = np.polynomial.legendre.leggauss(3)
        pts = np.vstack([t[:, None], [[0.5]]])
        wts = np.append(w / 2, 0.0)
        rule = prune(unit_system, pts, wts)
        assert rule.size == 3
        assert rule.residual_l1 < 1e-12

    def test_lower_bound_rule_unchanged(self, unit_system):
        t, w = np.polynomial.legendre.leggauss(3)
        assert unit_system.min_points == 3
        rule = prune(unit_system, t[:, None], w / 2)
        assert rule.size == 3
        assert np.allclose(np.sort(rule.points[:, 0]), np.sort(t))

    def test_synthetic_tensor_rule(self, synthetic):
        system = MomentSystem(synthetic.design_basis, synthetic.noise_basis, 2)
        r1, r2 = synthetic.design, synthetic.noise
        pts = np.hstack([np.repeat(r1.points, r2.size, axis=0), np.tile(r2.points, (r1.size, 1))])
        w = np.outer(r1.weights, r2.weights).ravel()
        assert pts.shape[0] == 36
        rule = prune(system, *_refined(system, pts, w))
        assert 15 <= rule.size <= 25
        assert rule.residual_l1 <= QuadratureSettings().prune_tol_l1


def _refined(system, pts, w):
    res = bcd_solve(system, pts, w)
    return res.points, res.weights
