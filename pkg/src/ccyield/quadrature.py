"""Optimization-based quadrature in design x noise space.

Rules are found by matching moments of orthonormal bases: the expectation of
every basis function of total degree <= 2p must be reproduced, i.e.
sum_k B_j(z_k) w_k = delta_{1j}. Three stages build the joint rule: a rule for
the design box alone, one for the noise mixture alone, then their tensor
product refined and pruned in the joint space.

The solver is block coordinate descent. A nonnegative least-squares weight
step (an exact active-set solve on the first sweep, warm-started projected
gradient afterwards) alternates with a Levenberg-Marquardt step that moves
the points together with their active weights. Greedy point deletion follows.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import nnls

from .basis import (
    GramSchmidtBasis,
    LegendreBasis,
    count_indices,
    enumerate_indices,
)
from .gaussmix import GaussianMixture, make_rng

log = logging.getLogger(__name__)


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureSettings:
    """Tolerances for rule construction; defaults follow the package design."""

    prune_tol_l1: float = 1e-6
    eager_prune_ratio: float = 1e-6
    rel_decrease: float = 1e-10
    max_outer: int = 500
    abs_tol_sq: float = 1e-22
    noise_box_sigma: float = 6.0
    candidate_factor: int = 10
    design_tol_sq: float = 1e-16
    noise_tol_sq: float = 1e-14
    tensor_limit: int = 10_000
    joint_step: bool = True
    pg_iterations: int = 20
    seed: int = 0


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points (design block first, then noise block) with nonnegative weights."""

    points: np.ndarray
    weights: np.ndarray
    residual_l1: float
    order: int
    d_design: int
    d_noise: int
    converged: bool = True
    history: tuple = field(default=(), repr=False)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def x(self) -> np.ndarray:
        return self.points[:, : self.d_design]

    @property
    def xi(self) -> np.ndarray:
        return self.points[:, self.d_design :]

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "d_design": self.d_design,
            "d_noise": self.d_noise,
            "size": self.size,
            "residual_l1": self.residual_l1,
            "converged": self.converged,
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuadratureRule":
        pts = np.asarray(data["points"], dtype=float).reshape(len(data["weights"]), -1)
        return cls(
            pts,
            np.asarray(data["weights"], dtype=float),
            float(data["residual_l1"]),
            int(data["order"]),
            int(data["d_design"]),
            int(data["d_noise"]),
            bool(data.get("converged", True)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "QuadratureRule":
        return cls.from_dict(json.loads(Path(path).read_text()))


class MomentSystem:
    """Basis functions of total degree <= 2p whose expectations a rule must match.

    Either basis may be None (stage-1 / stage-2 rules). Columns of the joint
    system are the products Phi_alpha(x) Psi_beta(xi) with |alpha|+|beta| <= 2p.
    """

    def __init__(
        self,
        design: LegendreBasis | None,
        noise: GramSchmidtBasis | None,
        order: int,
        noise_box_sigma: float = 6.0,
    ):
        if design is None and noise is None:
            raise ValueError("need at least one basis")
        self.design = design
        self.noise = noise
        self.order = order
        self.d1 = design.dim if design is not None else 0
        self.d2 = noise.dim if noise is not None else 0
        self.dim = self.d1 + self.d2
        if noise is not None and noise.order < 2 * order:
            raise ValueError("noise basis must be built to order 2p")
        joint = enumerate_indices(self.dim, 2 * order).indices
        if self.d1:
            dset = enumerate_indices(self.d1, 2 * order)
            self._a_pos = np.array([dset.position(a) for a in joint[:, : self.d1]])
        if self.d2:
            nset = noise.indices
            self._b_pos = np.array([nset.position(b) for b in joint[:, self.d1 :]])
        self.n_moments = joint.shape[0]
        self.target = np.zeros(self.n_moments)
        self.target[0] = 1.0
        boxes = []
        if design is not None:
            boxes.append(design.bounds)
        if noise is not None:
            boxes.append(noise.measure.bounding_box(noise_box_sigma))
        self.box = np.vstack(boxes)

    @property
    def min_points(self) -> int:
        return count_indices(self.dim, self.order)

    @property
    def max_points(self) -> int:
        return count_indices(self.dim, 2 * self.order)

    def matrix(self, points: np.ndarray) -> np.ndarray:
        """A[j, k] = B_j(z_k), shape (n_moments, M)."""
        return self._eval(points, False)[0]

    def matrix_and_derivative(self, points: np.ndarray):
        """A and dA[j, k, i] = d B_j(z_k) / d z_{k,i}."""
        return self._eval(points, True)

    def _eval(self, points, with_grad):
        pts = np.atleast_2d(points)
        m = pts.shape[0]
        phi = psi = dphi = dpsi = None
        if self.d1:
            x = pts[:, : self.d1]
            phi = self.design.evaluate(x, 2 * self.order)[:, self._a_pos]
            if with_grad:
                dphi = self.design.gradient(x, 2 * self.order)[:, self._a_pos, :]
        if self.d2:
            xi = pts[:, self.d1 :]
            psi = self.noise.evaluate(xi)[:, self._b_pos]
            if with_grad:
                dpsi = self.noise.gradient(xi)[:, self._b_pos, :]
        if phi is None:
            vals, grads = psi, dpsi
        elif psi is None:
            vals, grads = phi, dphi
        else:
            vals = phi * psi
            if with_grad:
                grads = np.concatenate([dphi * psi[:, :, None], phi[:, :, None] * dpsi], axis=2)
        vals = vals.reshape(m, self.n_moments).T
        if not with_grad:
            return vals, None
        return vals, np.transpose(grads, (1, 0, 2))

    def residual(self, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return self.matrix(points) @ weights - self.target


def residual_l1(system: MomentSystem, points: np.ndarray, weights: np.ndarray) -> float:
    """l1 norm of the moment-matching defect (the rule's delta_1)."""
    return float(np.abs(system.residual(points, weights)).sum())


@dataclass
class BcdResult:
    points: np.ndarray
    weights: np.ndarray
    residual_sq: float
    iterations: int
    history: list


def bcd_solve(
    system: MomentSystem,
    points: np.ndarray,
    weights: np.ndarray,
    settings: QuadratureSettings = QuadratureSettings(),
    max_outer: int | None = None,
) -> BcdResult:
    """Block coordinate descent on ||A(z) w - e||^2 with w >= 0 and z in the box.

    Each outer iteration runs an NNLS weight step at fixed points, then one
    projected Levenberg-Marquardt step that moves the points and (with
    ``settings.joint_step``) their active weights together. Both steps are
    accepted only if they do not increase the squared residual, so
    ``history`` is non-increasing.
    """
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("initial weights must be nonnegative")
    lo, hi = system.box[:, 0], system.box[:, 1]
    width = hi - lo
    # optimize in unit-box coordinates so all directions are comparably scaled
    t = (np.clip(np.asarray(points, dtype=float), lo, hi) - lo) / width
    w = weights.copy()
    max_outer = settings.max_outer if max_outer is None else max_outer

    def to_pts(tt):
        return lo + tt * width

    A = system.matrix(to_pts(t))
    r = A @ w - system.target
    f = float(r @ r)
    if not np.isfinite(f):
        raise QuadratureError("non-finite moment residual at the initial rule")
    history = [f]
    lam = 1e-3
    it = 0
    for it in range(1, max_outer + 1):
        f_prev = f
        if f <= settings.abs_tol_sq:
            break
        # weight step: exact NNLS from cold start once, warm projected gradient after
        if it == 1:
            w_new, _ = nnls(A, system.target, maxiter=50 * A.shape[1])
        else:
            w_new = nnls_projected_gradient(A, system.target, w, settings.pg_iterations)
        r_new = A @ w_new - system.target
        f_new = float(r_new @ r_new)
        if f_new <= f:
            w, r, f = w_new, r_new, f_new
        # point step (weights ride along, projected back onto w >= 0)
        A, dA = system.matrix_and_derivative(to_pts(t))
        active = w > 0
        na = int(active.sum())
        Jz = (dA[:, active, :] * (w[None, active, None] * width[None, None, :])).reshape(A.shape[0], -1)
        J = np.hstack([Jz, A[:, active]]) if settings.joint_step else Jz
        JJt = J @ J.T
        scale = max(float(np.trace(JJt)) / JJt.shape[0], 1e-300)
        improved = False
        for _ in range(12):
            try:
                y = np.linalg.solve(JJt + lam * scale * np.eye(JJt.shape[0]), r)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            step = -(J.T @ y)
            t_try = t.copy()
            t_try[active] = np.clip(t[active] + step[: na * system.dim].reshape(na, system.dim), 0.0, 1.0)
            w_try = w.copy()
            if settings.joint_step:
                w_try[active] = np.maximum(w[active] + step[na * system.dim :], 0.0)
            A_try = system.matrix(to_pts(t_try))
            r_try = A_try @ w_try - system.target
            f_try = float(r_try @ r_try)
            if not np.isfinite(f_try):
                raise QuadratureError("non-finite moment residual during point step")
            if f_try < f:
                t, w, A, r, f = t_try, w_try, A_try, r_try, f_try
                lam = max(lam / 10, 1e-14)
                improved = True
                break
            lam *= 10
        history.append(f)
        if not improved and f >= f_prev:
            break
        if f_prev > 0 and (f_prev - f) / f_prev < settings.rel_decrease:
            break
    return BcdResult(to_pts(t), w, f, it, history)


def nnls_projected_gradient(A: np.ndarray, b: np.ndarray, w0: np.ndarray, iterations: int) -> np.ndarray:
    """min ||A w - b||^2 over w >= 0 by projected gradient with exact line search.

    Starts from ``w0`` (clipped to w >= 0); every step is a monotone decrease.
    """
    w = np.maximum(np.asarray(w0, dtype=float), 0.0)
    r = A @ w - b
    for _ in range(iterations):
        g = A.T @ r
        d = -g
        d[(w <= 0) & (g > 0)] = 0.0
        Ad = A @ d
        denom = float(Ad @ Ad)
        if denom <= 0:
            break
        step = -float(r @ Ad) / denom
        neg = d < 0
        if neg.any():
            step = min(step, float(np.min(-w[neg] / d[neg])))
        if step <= 0:
            break
        w = np.maximum(w + step * d, 0.0)
        r = A @ w - b
    return w


def _make_rule(system: MomentSystem, pts, w, converged=True, history=()) -> QuadratureRule:
    keep = w > 0
    pts, w = pts[keep], w[keep]
    if system.d1:
        pts = pts.copy()
        b = system.design.bounds
        pts[:, : system.d1] = np.clip(pts[:, : system.d1], b[:, 0], b[:, 1])
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(
        pts,
        w,
        residual_l1(system, pts, w),
        system.order,
        system.d1,
        system.d2,
        converged,
        tuple(history),
    )


def prune(
    system: MomentSystem,
    points: np.ndarray,
    weights: np.ndarray,
    settings: QuadratureSettings = QuadratureSettings(),
) -> QuadratureRule:
    """Greedy point deletion.

    Points with weight below ``eager_prune_ratio * max(w)`` go first. Then the
    smallest-weight point is removed and the rule re-solved; the deletion is
    kept while the l1 residual stays within ``prune_tol_l1``. Never goes below
    the N^d_p lower bound.
    """
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    keep = w >= settings.eager_prune_ratio * w.max()
    if keep.sum() < pts.shape[0]:
        res = bcd_solve(system, pts[keep], w[keep], settings)
        if residual_l1(system, res.points, res.weights) <= settings.prune_tol_l1:
            pts, w = res.points, res.weights
            pts, w = pts[w > 0], w[w > 0]
    history = []
    while pts.shape[0] > system.min_points:
        drop = int(np.argmin(w))
        trial_pts = np.delete(pts, drop, axis=0)
        trial_w = np.delete(w, drop)
        trial_w *= 1.0 / trial_w.sum()
        res = bcd_solve(system, trial_pts, trial_w, settings)
        err = residual_l1(system, res.points, res.weights)
        if err > settings.prune_tol_l1:
            break
        pts, w = res.points, res.weights
        pts, w = pts[w > 0], w[w > 0]
        history.append((pts.shape[0], err))
        log.debug("pruned to %d points, l1 residual %.3g", pts.shape[0], err)
    return _make_rule(system, pts, w, history=history)


def _gauss_tensor(bounds: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    t, v = np.polynomial.legendre.leggauss(n)
    v = v / 2.0
    d = bounds.shape[0]
    grids = np.meshgrid(*([t] * d), indexing="ij")
    T = np.stack([g.ravel() for g in grids], axis=1)
    W = np.ones(T.shape[0])
    for g in np.meshgrid(*([v] * d), indexing="ij"):
        W *= g.ravel()
    lo, hi = bounds[:, 0], bounds[:, 1]
    return lo + 0.5 * (T + 1.0) * (hi - lo), W


def _smolyak(bounds: np.ndarray, exactness: int) -> tuple[np.ndarray, np.ndarray]:
    """Smolyak combination of Gauss-Legendre rules; weights may be negative."""
    from itertools import product

    d = bounds.shape[0]
    q = exactness // 2  # level l uses l+1 Gauss points, exact to degree 2l+1
    acc: dict[tuple, float] = {}
    for levels in product(range(q + 1), repeat=d):
        s = sum(levels)
        if s > q or s < q - d + 1:
            continue
        coef = (-1) ** (q - s) * _binom(d - 1, q - s)
        rules = [np.polynomial.legendre.leggauss(l + 1) for l in levels]
        for combo in product(*[range(l + 1) for l in levels]):
            key = tuple(round(rules[i][0][c], 14) for i, c in enumerate(combo))
            wt = coef * np.prod([rules[i][1][c] / 2 for i, c in enumerate(combo)])
            acc[key] = acc.get(key, 0.0) + wt
    T = np.array(list(acc.keys()))
    W = np.array(list(acc.values()))
    lo, hi = bounds[:, 0], bounds[:, 1]
    return lo + 0.5 * (T + 1.0) * (hi - lo), W


def _binom(n, k):
    from math import comb

    return comb(n, k) if 0 <= k <= n else 0


def _finish(system: MomentSystem, res: BcdResult, tol_sq: float, what: str,
            settings: QuadratureSettings) -> QuadratureRule:
    if res.residual_sq > tol_sq:
        raise QuadratureError(
            f"{what}: squared moment residual {res.residual_sq:.3g} above {tol_sq:.1g} "
            f"with {res.points.shape[0]} points"
        )
    return prune(system, res.points, res.weights, settings)


def design_rule(
    basis: LegendreBasis, order: int, settings: QuadratureSettings = QuadratureSettings()
) -> QuadratureRule:
    """Nonnegative rule for the uniform density on the design box, exact to degree 2p."""
    system = MomentSystem(basis, None, order, settings.noise_box_sigma)
    n = order + 1
    if n ** basis.dim <= settings.tensor_limit:
        pts, w = _gauss_tensor(basis.bounds, n)
    else:
        pts, w = _smolyak(basis.bounds, 2 * order)
        w = np.maximum(w, 0.0)
    res = bcd_solve(system, pts, w, settings)
    return _finish(system, res, settings.design_tol_sq, "design rule", settings)


def noise_rule(
    basis: GramSchmidtBasis,
    mixture: GaussianMixture,
    order: int,
    settings: QuadratureSettings = QuadratureSettings(),
) -> QuadratureRule:
    """Nonnegative rule for the noise mixture, exact to degree 2p.

    ``basis`` must be orthonormal under ``mixture`` and built to order >= 2p.
    Candidates are mixture samples with equal weights.
    """
    if basis.measure is not mixture and basis.measure.to_dict() != mixture.to_dict():
        raise ValueError("basis was built for a different measure")
    if order == 0:
        pts = mixture.mean()[None, :]
        w = np.ones(1)
        system = MomentSystem(None, basis, order, settings.noise_box_sigma)
        return _make_rule(system, pts, w)
    system = MomentSystem(None, basis, order, settings.noise_box_sigma)
    n_cand = settings.candidate_factor * system.max_points
    pts = mixture.sample(n_cand, make_rng(settings.seed))
    w = np.full(n_cand, 1.0 / n_cand)
    res = bcd_solve(system, pts, w, settings)
    return _finish(system, res, settings.noise_tol_sq, "noise rule", settings)


def joint_rule(
    design: QuadratureRule,
    noise: QuadratureRule,
    design_basis: LegendreBasis,
    noise_basis: GramSchmidtBasis,
    order: int,
    settings: QuadratureSettings = QuadratureSettings(),
) -> QuadratureRule:
    """Co-optimised rule in the joint space, initialised from the tensor product."""
    system = MomentSystem(design_basis, noise_basis, order, settings.noise_box_sigma)
    m1, m2 = design.size, noise.size
    pts = np.hstack([np.repeat(design.points, m2, axis=0), np.tile(noise.points, (m1, 1))])
    w = np.outer(design.weights, noise.weights).ravel()
    res = bcd_solve(system, pts, w, settings)
    rule = prune(system, res.points, res.weights, settings)
    if rule.residual_l1 > settings.prune_tol_l1 or rule.size > system.max_points:
        warnings.warn(
            f"joint rule has {rule.size} points (upper bound {system.max_points}) "
            f"and l1 residual {rule.residual_l1:.3g}",
            RuntimeWarning,
            stacklevel=2,
        )
        rule = QuadratureRule(
            rule.points, rule.weights, rule.residual_l1, rule.order, rule.d_design, rule.d_noise,
            False, rule.history,
        )
    return rule
