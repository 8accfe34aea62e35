"""Polynomial-chaos surrogates fitted by projection onto product bases.

A metric y(x, xi) is represented as sum c[a, b] Phi_a(x) Psi_b(xi) over all
(a, b) with |a| + |b| <= p. Because both bases are orthonormal, the mean over
xi is the b = 0 slice and the variance is a sum of squares of the b != 0
slices, each a polynomial in x.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .basis import (
    GramSchmidtBasis,
    LegendreBasis,
    build_legendre,
    enumerate_indices,
)
from .gaussmix import GaussianMixture
from .quadrature import QuadratureRule


class SurrogateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SurrogateModel:
    """Coefficient table c[metric, term] over the joint index set of order p.

    Attributes:
        design: Legendre basis on the design box (order p).
        noise: Gram-Schmidt basis for the noise mixture (order p).
        order: total polynomial order p.
        metric_names: one name per coefficient row.
        coefficients: shape (n_metrics, n_terms); column k belongs to the
            joint multi-index ``terms[k]`` = (alpha, beta).
        simulation_count: number of simulator runs used in the fit.
        residual_l1: moment residual of the rule used for the fit.
    """

    design: LegendreBasis
    noise: GramSchmidtBasis
    order: int
    metric_names: tuple[str, ...]
    coefficients: np.ndarray
    simulation_count: int
    residual_l1: float = 0.0

    def __post_init__(self):
        if self.design.order != self.order or self.noise.order != self.order:
            raise SurrogateError("bases must have the surrogate's order")
        c = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        if c.shape != (len(self.metric_names), self.n_terms):
            raise SurrogateError(
                f"coefficients must have shape ({len(self.metric_names)}, {self.n_terms}), got {c.shape}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "metric_names", tuple(self.metric_names))

    # -- index bookkeeping ---------------------------------------------------

    @property
    def d_design(self) -> int:
        return self.design.dim

    @property
    def d_noise(self) -> int:
        return self.noise.dim

    @cached_property
    def terms(self) -> np.ndarray:
        """Joint exponents (alpha | beta), shape (n_terms, d1 + d2)."""
        return enumerate_indices(self.d_design + self.d_noise, self.order).indices

    @property
    def n_terms(self) -> int:
        return len(enumerate_indices(self.d_design + self.d_noise, self.order))

    def _positions(self) -> tuple[np.ndarray, np.ndarray]:
        return self._term_positions

    @cached_property
    def _term_positions(self) -> tuple[np.ndarray, np.ndarray]:
        t = self.terms
        a = np.array([self.design.indices.position(r) for r in t[:, : self.d_design]])
        b = np.array([self.noise.indices.position(r) for r in t[:, self.d_design :]])
        return a, b

    def metric_index(self, metric: int | str) -> int:
        if isinstance(metric, str):
            try:
                return self.metric_names.index(metric)
            except ValueError:
                raise KeyError(f"metric {metric!r} is not in the model") from None
        if not 0 <= metric < len(self.metric_names):
            raise KeyError(f"metric index {metric} out of range")
        return int(metric)

    def coefficient(self, metric: int | str, alpha: Sequence[int], beta: Sequence[int]) -> float:
        k = enumerate_indices(self.d_design + self.d_noise, self.order).position(tuple(alpha) + tuple(beta))
        return float(self.coefficients[self.metric_index(metric), k])

    # -- statistics in x -----------------------------------------------------

    def mean_in_x(self, metric: int | str) -> np.ndarray:
        """Coefficients over the design basis of E_xi[y](x)."""
        i = self.metric_index(metric)
        a, b = self._positions()
        out = np.zeros(len(self.design))
        sel = b == 0
        out[a[sel]] = self.coefficients[i, sel]
        return out

    def variance_in_x(self, metric: int | str) -> np.ndarray:
        """Inner polynomials v_b(x), one row per noise index b != 0.

        Returns an array of shape (n_noise_terms - 1, n_design_terms); the
        variance over xi at x is the sum of squares of the rows evaluated on
        the design basis.
        """
        i = self.metric_index(metric)
        a, b = self._positions()
        out = np.zeros((len(self.noise) - 1, len(self.design)))
        for k in np.flatnonzero(b != 0):
            out[b[k] - 1, a[k]] = self.coefficients[i, k]
        return out

    def mean(self, metric: int | str, x) -> np.ndarray | float:
        return self.design.evaluate(x) @ self.mean_in_x(metric)

    def variance(self, metric: int | str, x) -> np.ndarray | float:
        v = self.design.evaluate(x) @ self.variance_in_x(metric).T
        return np.sum(v * v, axis=-1)

    def evaluate(self, metric: int | str, x, xi) -> np.ndarray | float:
        """Surrogate value at paired points (x, xi) (broadcast over rows)."""
        i = self.metric_index(metric)
        return self._joint(x, xi) @ self.coefficients[i]

    def evaluate_all(self, x, xi) -> np.ndarray:
        """All metrics at paired points, shape (n, n_metrics)."""
        return self._joint(x, xi) @ self.coefficients.T

    def _joint(self, x, xi) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        single = x.ndim == 1 and xi.ndim == 1
        x2 = np.atleast_2d(x)
        xi2 = np.atleast_2d(xi)
        if x2.shape[0] == 1 and xi2.shape[0] > 1:
            x2 = np.repeat(x2, xi2.shape[0], axis=0)
        if xi2.shape[0] == 1 and x2.shape[0] > 1:
            xi2 = np.repeat(xi2, x2.shape[0], axis=0)
        a, b = self._positions()
        joint = self.design.evaluate(x2)[:, a] * self.noise.evaluate(xi2)[:, b]
        return joint[0] if single else joint

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "design_bounds": self.design.bounds.tolist(),
            "mixture": self.noise.measure.to_dict(),
            "noise_coefficients": self.noise.coefficients.tolist(),
            "metric_names": list(self.metric_names),
            "terms": self.terms.tolist(),
            "coefficients": self.coefficients.tolist(),
            "simulation_count": self.simulation_count,
            "residual_l1": self.residual_l1,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SurrogateModel":
        order = int(data["order"])
        design = build_legendre(data["design_bounds"], order)
        mixture = GaussianMixture.from_dict(data["mixture"])
        coef = np.asarray(data["noise_coefficients"], dtype=float)
        coef.setflags(write=False)
        noise = GramSchmidtBasis(mixture, order, enumerate_indices(mixture.dim, order), coef)
        model = cls(
            design,
            noise,
            order,
            tuple(data["metric_names"]),
            np.asarray(data["coefficients"], dtype=float),
            int(data["simulation_count"]),
            float(data.get("residual_l1", 0.0)),
        )
        if model.terms.tolist() != data["terms"]:
            raise SurrogateError("stored term ordering does not match the index set")
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "SurrogateModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit(
    rule: QuadratureRule,
    outputs,
    design: LegendreBasis,
    noise: GramSchmidtBasis,
    order: int,
    metric_names: Sequence[str] | None = None,
) -> SurrogateModel:
    """Project simulator outputs at the rule's points onto the product basis.

    Args:
        rule: joint quadrature rule whose points were simulated.
        outputs: simulator values, shape (M, n_metrics), row k at rule point k.
        design: design basis of order >= ``order``.
        noise: noise basis of order >= ``order``; truncated if higher.
        order: surrogate order p.
        metric_names: names of the output columns (default m1, m2, ...).

    Raises:
        SurrogateError: on shape mismatch or a non-finite output, naming the
            offending quadrature point.
    """
    y = np.asarray(outputs, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != rule.size:
        raise SurrogateError(f"expected {rule.size} output rows, got {y.shape[0]}")
    bad = np.flatnonzero(~np.all(np.isfinite(y), axis=1))
    if bad.size:
        k = int(bad[0])
        raise SurrogateError(
            f"non-finite simulator output at quadrature point {k}: "
            f"x={rule.x[k].tolist()}, xi={rule.xi[k].tolist()}"
        )
    names = tuple(metric_names) if metric_names is not None else tuple(f"m{i + 1}" for i in range(y.shape[1]))
    if len(names) != y.shape[1]:
        raise SurrogateError("metric_names does not match the output columns")
    if design.order < order or noise.order < order:
        raise SurrogateError("bases must be built to at least the surrogate order")
    design_p = design if design.order == order else build_legendre(design.bounds, order)
    noise_p = noise if noise.order == order else noise.truncate(order)
    shell = SurrogateModel(
        design_p, noise_p, order, names, np.zeros((len(names), _n_terms(design_p, noise_p, order))), rule.size,
        rule.residual_l1,
    )
    joint = shell._joint(rule.x, rule.xi)
    coef = (y * rule.weights[:, None]).T @ joint
    return SurrogateModel(design_p, noise_p, order, names, coef, rule.size, rule.residual_l1)


def _n_terms(design: LegendreBasis, noise: GramSchmidtBasis, order: int) -> int:
    return len(enumerate_indices(design.dim + noise.dim, order))
