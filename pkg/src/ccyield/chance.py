"""Deterministic reformulation of individual chance constraints.

A chance constraint P(y(x, xi) <= u) >= 1 - eps is replaced by Cantelli's
sufficient condition m(x) + kappa(eps) * s(x) <= u with m, s the mean and
standard deviation over xi. In smooth polynomial form this is the pair

    kappa^2 * sum_b v_b(x)^2 <= (u - m(x))^2   and   m(x) <= u,

where the v_b are the variance inner polynomials of the surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import LegendreBasis
from .surrogate import SurrogateModel


def kappa(epsilon: float) -> float:
    """Cantelli scaling sqrt((1 - eps) / eps) for 0 < eps <= 0.5."""
    if not 0.0 < epsilon <= 0.5:
        raise ValueError(f"risk level must lie in (0, 0.5], got {epsilon}")
    return float(np.sqrt((1.0 - epsilon) / epsilon))


@dataclass(frozen=True)
class Constraint:
    """One yield criterion: ``metric <= threshold`` (upper) or ``>=`` (lower)."""

    metric: str
    threshold: float
    epsilon: float
    sense: str = "upper"

    def __post_init__(self):
        if self.sense not in ("upper", "lower"):
            raise ValueError(f"constraint sense must be 'upper' or 'lower', got {self.sense!r}")
        kappa(self.epsilon)
        if not np.isfinite(self.threshold):
            raise ValueError("constraint threshold must be finite")

    @property
    def sign(self) -> float:
        return 1.0 if self.sense == "upper" else -1.0

    @property
    def canonical_threshold(self) -> float:
        return self.sign * self.threshold


@dataclass(frozen=True)
class ChanceSpec:
    """Objective and chance constraints of a yield-aware design problem.

    With ``bonferroni`` set, every risk level is divided by the number of
    constraints so that the joint violation probability stays below the
    given level.
    """

    objective: str
    sense: str = "max"
    constraints: tuple[Constraint, ...] = ()
    bonferroni: bool = False

    def __post_init__(self):
        if self.sense not in ("max", "min"):
            raise ValueError(f"objective sense must be 'max' or 'min', got {self.sense!r}")
        object.__setattr__(self, "constraints", tuple(self.constraints))

    def epsilons(self) -> np.ndarray:
        eps = np.array([c.epsilon for c in self.constraints], dtype=float)
        if self.bonferroni and eps.size:
            eps = eps / eps.size
        return eps

    def with_epsilon(self, epsilon: float) -> "ChanceSpec":
        """Same spec with every risk level set to ``epsilon``."""
        cons = tuple(Constraint(c.metric, c.threshold, epsilon, c.sense) for c in self.constraints)
        return ChanceSpec(self.objective, self.sense, cons, self.bonferroni)

    def canonicalize(self, values: np.ndarray, metric_names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Map metric rows to the upper-bound form.

        Returns:
            (canonical values of shape (n, n_constraints), canonical thresholds)
        """
        values = np.atleast_2d(np.asarray(values, dtype=float))
        names = list(metric_names)
        cols = [names.index(c.metric) for c in self.constraints]
        signs = np.array([c.sign for c in self.constraints])
        thr = np.array([c.canonical_threshold for c in self.constraints])
        return values[:, cols] * signs, thr

    def to_dict(self) -> dict:
        return {
            "objective": {"metric": self.objective, "sense": self.sense},
            "constraints": [
                {"metric": c.metric, "sense": c.sense, "threshold": c.threshold, "epsilon": c.epsilon}
                for c in self.constraints
            ],
            "bonferroni": self.bonferroni,
        }


@dataclass(frozen=True, eq=False)
class ChanceProblem:
    """Smooth polynomial program over the design box.

    All polynomials are coefficient vectors over ``basis``. Constraints are in
    canonical upper-bound form.

    Attributes:
        basis: shared Legendre basis on the design box.
        objective: coefficients of the expected objective.
        sense: "max" or "min".
        means: canonical constraint means, shape (n_c, N).
        variances: variance inner polynomials, shape (n_c, B, N).
        thresholds: canonical thresholds u_i.
        kappas: Cantelli constants; zero for mean-only problems.
        names: constraint metric names.
        mean_only: whether the variance side is dropped.
    """

    basis: LegendreBasis
    objective: np.ndarray
    sense: str
    means: np.ndarray
    variances: np.ndarray
    thresholds: np.ndarray
    kappas: np.ndarray
    names: tuple[str, ...] = ()
    mean_only: bool = False
    scales: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "scales", np.maximum(1.0, np.abs(np.asarray(self.thresholds, dtype=float))))

    @property
    def bounds(self) -> np.ndarray:
        return self.basis.bounds

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def n_constraints(self) -> int:
        return len(self.thresholds)

    def objective_value(self, x) -> np.ndarray | float:
        """Expected objective in the user's sense."""
        return self.basis.evaluate(x) @ self.objective

    def constraint_mean(self, x) -> np.ndarray:
        return self.basis.evaluate(x) @ self.means.T

    def constraint_std(self, x) -> np.ndarray:
        phi = self.basis.evaluate(x)
        v = np.einsum("...n,cbn->...cb", phi, self.variances)
        return np.sqrt(np.sum(v * v, axis=-1))

    def margins(self, x) -> np.ndarray:
        """u_i - m_i(x) - kappa_i * std_i(x); nonnegative iff the i-th pair holds."""
        k = 0.0 if self.mean_only else self.kappas
        return self.thresholds - self.constraint_mean(x) - k * self.constraint_std(x)

    def constraints(self, x) -> np.ndarray:
        """Scaled smooth constraint values g(x) <= 0: variance side first, then mean side."""
        return self.evaluate(np.atleast_2d(np.asarray(x, dtype=float)), False)[1]

    def violation(self, x) -> np.ndarray | float:
        """Largest scaled constraint value, clipped at 0 (0 means feasible)."""
        x = np.asarray(x, dtype=float)
        g = self.evaluate(np.atleast_2d(x), False)[1]
        v = np.maximum(g.max(axis=1), 0.0) if g.shape[1] else np.zeros(g.shape[0])
        return float(v[0]) if x.ndim == 1 else v

    def evaluate(self, x: np.ndarray, with_grad: bool = True):
        """Minimisation form at rows of ``x``.

        Returns (f, g, df, dg) with f the objective to minimise, shape (n,);
        g the scaled constraints, shape (n, n_g); and gradients of shapes
        (n, d) and (n, n_g, d) (None when ``with_grad`` is False).
        """
        phi = self.basis.evaluate(x)
        sgn = -1.0 if self.sense == "max" else 1.0
        f = sgn * (phi @ self.objective)
        m = phi @ self.means.T
        u, s = self.thresholds, self.scales
        g_mean = (m - u) / s
        if self.mean_only:
            g = g_mean
        else:
            v = np.einsum("nk,cbk->ncb", phi, self.variances)
            var = np.sum(v * v, axis=-1)
            g_var = (self.kappas**2 * var - (u - m) ** 2) / s**2
            g = np.concatenate([g_var, g_mean], axis=1)
        if not with_grad:
            return f, g, None, None
        dphi = self.basis.gradient(x)
        df = sgn * np.einsum("nkd,k->nd", dphi, self.objective)
        dm = np.einsum("nkd,ck->ncd", dphi, self.means)
        dg_mean = dm / s[None, :, None]
        if self.mean_only:
            dg = dg_mean
        else:
            dv = np.einsum("nkd,cbk->ncbd", dphi, self.variances)
            dvar = 2.0 * np.einsum("ncb,ncbd->ncd", v, dv)
            dg_var = (self.kappas[None, :, None] ** 2 * dvar + 2.0 * (u - m)[:, :, None] * dm) / (s**2)[None, :, None]
            dg = np.concatenate([dg_var, dg_mean], axis=1)
        return f, g, df, dg

    def to_dict(self) -> dict:
        return {
            "bounds": self.bounds.tolist(),
            "order": self.basis.order,
            "sense": self.sense,
            "objective": self.objective.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "thresholds": np.asarray(self.thresholds).tolist(),
            "kappas": np.asarray(self.kappas).tolist(),
            "names": list(self.names),
            "mean_only": self.mean_only,
        }


def assemble(model: SurrogateModel, spec: ChanceSpec) -> ChanceProblem:
    """Objective mean and Cantelli constraint pairs from a fitted surrogate."""
    return _assemble(model, spec, mean_only=False)


def mean_only_assemble(model: SurrogateModel, spec: ChanceSpec) -> ChanceProblem:
    """Same objective with every chance constraint replaced by m_i(x) <= u_i."""
    return _assemble(model, spec, mean_only=True)


def _assemble(model: SurrogateModel, spec: ChanceSpec, mean_only: bool) -> ChanceProblem:
    for name in [spec.objective] + [c.metric for c in spec.constraints]:
        if name not in model.metric_names:
            raise KeyError(f"metric {name!r} is not fitted in the surrogate (has {list(model.metric_names)})")
    n_design = len(model.design)
    n_noise = len(model.noise) - 1
    nc = len(spec.constraints)
    means = np.zeros((nc, n_design))
    variances = np.zeros((nc, n_noise, n_design))
    for i, c in enumerate(spec.constraints):
        means[i] = c.sign * model.mean_in_x(c.metric)
        variances[i] = c.sign * model.variance_in_x(c.metric)
    eps = spec.epsilons()
    kap = np.array([kappa(e) for e in eps]) if nc else np.zeros(0)
    return ChanceProblem(
        basis=model.design,
        objective=model.mean_in_x(spec.objective),
        sense=spec.sense,
        means=means,
        variances=variances,
        thresholds=np.array([c.canonical_threshold for c in spec.constraints], dtype=float),
        kappas=np.zeros(nc) if mean_only else kap,
        names=tuple(c.metric for c in spec.constraints),
        mean_only=mean_only,
    )
