"""Multi-index sets and orthonormal polynomial bases.

Design variables get a tensor Legendre basis (orthonormal under the uniform
probability density on their box). Correlated noise gets a basis built by
Gram-Schmidt over graded-lex monomials against a Gaussian-mixture measure,
with all inner products taken from exact mixture moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

from .gaussmix import GaussianMixture


class DegenerateMeasureError(ValueError):
    """Gram-Schmidt hit a (numerically) linearly dependent monomial."""


@dataclass(frozen=True, eq=False)
class MultiIndexSet:
    """All exponent vectors of total degree <= ``order`` in graded-lex order."""

    dim: int
    order: int
    indices: np.ndarray
    _lookup: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.indices.setflags(write=False)
        object.__setattr__(self, "_lookup", {tuple(a): k for k, a in enumerate(self.indices.tolist())})

    def __len__(self) -> int:
        return self.indices.shape[0]

    def __iter__(self):
        return iter(map(tuple, self.indices.tolist()))

    def __getitem__(self, k: int) -> tuple:
        return tuple(self.indices[k].tolist())

    def position(self, alpha: Sequence[int]) -> int:
        """Index of ``alpha`` in the ordering (KeyError if absent)."""
        return self._lookup[tuple(int(a) for a in alpha)]

    @property
    def degrees(self) -> np.ndarray:
        return self.indices.sum(axis=1)


def count_indices(dim: int, order: int) -> int:
    """binomial(dim + order, order): size of a total-degree index set."""
    return comb(dim + order, order)


def enumerate_indices(dim: int, order: int) -> MultiIndexSet:
    """Exponent vectors with |alpha| <= order, sorted by degree then lexicographically.

    Within one degree the vector with the largest leading exponent comes first,
    so (2, 2) gives (0,0), (1,0), (0,1), (2,0), (1,1), (0,2).
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if order < 0:
        raise ValueError("order must be >= 0")
    out: list[tuple[int, ...]] = []
    for deg in range(order + 1):
        out.extend(_compositions(deg, dim))
    return MultiIndexSet(dim, order, np.array(out, dtype=int).reshape(len(out), dim))


def _compositions(total: int, parts: int):
    # lexicographically descending
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _as_points(point, dim: int) -> tuple[np.ndarray, bool]:
    pts = np.asarray(point, dtype=float)
    single = pts.ndim <= 1
    pts = pts.reshape(1, -1) if single else pts
    if pts.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {pts.shape[1]}")
    return pts, single


def _legendre_1d(t: np.ndarray, order: int, with_derivative: bool = False):
    """Orthonormal Legendre values (and d/dt) for degrees 0..order, shape (n, order+1)."""
    n = t.shape[0]
    val = np.empty((n, order + 1))
    val[:, 0] = 1.0
    der = np.zeros((n, order + 1)) if with_derivative else None
    if order >= 1:
        val[:, 1] = np.sqrt(3.0) * t
        if with_derivative:
            der[:, 1] = np.sqrt(3.0)
    for k in range(1, order):
        # phi_{k+1} = (t phi_k - b_k phi_{k-1}) / b_{k+1}, b_k = k / sqrt(4k^2 - 1)
        b_k = k / np.sqrt(4.0 * k * k - 1.0)
        b_k1 = (k + 1) / np.sqrt(4.0 * (k + 1) ** 2 - 1.0)
        val[:, k + 1] = (t * val[:, k] - b_k * val[:, k - 1]) / b_k1
        if with_derivative:
            der[:, k + 1] = (val[:, k] + t * der[:, k] - b_k * der[:, k - 1]) / b_k1
    return val, der


@dataclass(frozen=True, eq=False)
class LegendreBasis:
    """Tensor Legendre basis on a box, orthonormal under the uniform density."""

    bounds: np.ndarray
    order: int
    indices: MultiIndexSet

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def recurrence(self) -> np.ndarray:
        """b_k of phi_{k+1} b_{k+1} = t phi_k - b_k phi_{k-1} on [-1, 1] (a_k are all zero)."""
        k = np.arange(self.order + 1)
        return k / np.sqrt(np.maximum(4.0 * k * k - 1.0, 1.0))

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return (2.0 * x - lo - hi) / (hi - lo)

    def from_unit(self, t: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return 0.5 * (t + 1.0) * (hi - lo) + lo

    def evaluate(self, x, order: int | None = None) -> np.ndarray:
        """Basis values, shape (n, N) (or (N,) for one point).

        ``order`` may exceed the construction order; the returned columns then
        follow ``enumerate_indices(dim, order)``.
        """
        vals, _ = self._eval(x, order, False)
        return vals

    def gradient(self, x, order: int | None = None) -> np.ndarray:
        """d Phi_alpha / d x_i, shape (n, N, dim)."""
        _, grads = self._eval(x, order, True)
        return grads

    def _eval(self, x, order, with_grad):
        pts, single = _as_points(x, self.dim)
        order = self.order if order is None else order
        idx = self.indices if order == self.order else enumerate_indices(self.dim, order)
        t = self.to_unit(pts)
        scale = 2.0 / (self.bounds[:, 1] - self.bounds[:, 0])
        tables = [_legendre_1d(t[:, i], order, with_grad) for i in range(self.dim)]
        vals = np.ones((pts.shape[0], len(idx)))
        for i, (v, _) in enumerate(tables):
            vals *= v[:, idx.indices[:, i]]
        grads = None
        if with_grad:
            grads = np.empty((pts.shape[0], len(idx), self.dim))
            for i in range(self.dim):
                g = np.ones_like(vals)
                for j, (v, dv) in enumerate(tables):
                    g *= (dv * scale[j] if j == i else v)[:, idx.indices[:, j]]
                grads[:, :, i] = g
        if single:
            vals = vals[0]
            grads = grads[0] if grads is not None else None
        return vals, grads


def build_legendre(bounds: Sequence[Sequence[float]], order: int) -> LegendreBasis:
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if b.shape[0] < 1:
        raise ValueError("need at least one design dimension")
    if np.any(b[:, 1] <= b[:, 0]):
        raise ValueError("each interval must satisfy lower < upper")
    b.setflags(write=False)
    return LegendreBasis(b, order, enumerate_indices(b.shape[0], order))


def monomials(xi: np.ndarray, indices: MultiIndexSet) -> np.ndarray:
    """xi^beta for every beta in ``indices``; xi has shape (n, d)."""
    powers = _power_table(xi, indices.order)
    out = np.ones((xi.shape[0], len(indices)))
    for i in range(indices.dim):
        out *= powers[i][:, indices.indices[:, i]]
    return out


def _power_table(xi: np.ndarray, order: int) -> list[np.ndarray]:
    return [xi[:, [i]] ** np.arange(order + 1) for i in range(xi.shape[1])]


@dataclass(frozen=True, eq=False)
class GramSchmidtBasis:
    """Orthonormal polynomials Psi_j = sum_i coefficients[j, i] * xi^{beta_i}."""

    measure: GaussianMixture
    order: int
    indices: MultiIndexSet
    coefficients: np.ndarray

    @property
    def dim(self) -> int:
        return self.indices.dim

    def __len__(self) -> int:
        return len(self.indices)

    def gram_matrix(self) -> np.ndarray:
        """E[Psi_i Psi_j] from exact mixture moments."""
        return self.coefficients @ _moment_matrix(self.measure, self.indices) @ self.coefficients.T

    def truncate(self, order: int) -> "GramSchmidtBasis":
        """The leading sub-basis of total degree <= order (identical functions)."""
        if order > self.order:
            raise ValueError("cannot truncate to a higher order")
        n = count_indices(self.dim, order)
        c = self.coefficients[:n, :n].copy()
        c.setflags(write=False)
        return GramSchmidtBasis(self.measure, order, enumerate_indices(self.dim, order), c)

    def evaluate(self, xi) -> np.ndarray:
        pts, single = _as_points(xi, self.dim)
        vals = monomials(pts, self.indices) @ self.coefficients.T
        return vals[0] if single else vals

    def gradient(self, xi) -> np.ndarray:
        """d Psi_j / d xi_i, shape (n, N, dim)."""
        pts, single = _as_points(xi, self.dim)
        powers = _power_table(pts, self.order)
        idx = self.indices.indices
        grads = np.empty((pts.shape[0], len(self), self.dim))
        for i in range(self.dim):
            dm = np.ones((pts.shape[0], len(self)))
            for j in range(self.dim):
                if j == i:
                    e = idx[:, j]
                    dm *= e * powers[j][:, np.maximum(e - 1, 0)]
                else:
                    dm *= powers[j][:, idx[:, j]]
            grads[:, :, i] = dm @ self.coefficients.T
        return grads[0] if single else grads


def _moment_matrix(measure: GaussianMixture, indices: MultiIndexSet) -> np.ndarray:
    beta = indices.indices
    pair = beta[:, None, :] + beta[None, :, :]
    return measure.raw_moments(pair.reshape(-1, indices.dim)).reshape(len(indices), len(indices))


def build_gram_schmidt(measure: GaussianMixture, order: int, tol: float = 1e-10) -> GramSchmidtBasis:
    """Orthonormalise graded-lex monomials against ``measure``.

    Psi_1 = 1; each later monomial has its projections on the previous Psi
    removed and is normalised. One re-orthogonalisation sweep runs if the
    analytic Gram matrix misses the identity by more than ``tol``.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    indices = enumerate_indices(measure.dim, order)
    gram = _moment_matrix(measure, indices)
    n = len(indices)
    coef = np.zeros((n, n))
    coef[0, 0] = 1.0
    for j in range(1, n):
        v = np.zeros(n)
        v[j] = 1.0
        proj = coef[:j] @ gram[j]  # E[p_j Psi_i]
        v -= proj @ coef[:j]
        coef[j] = _normalise(v, gram, j, indices)
    if np.abs(coef @ gram @ coef.T - np.eye(n)).max() > tol:
        for j in range(1, n):
            v = coef[j].copy()
            v -= (coef[:j] @ gram @ v) @ coef[:j]
            coef[j] = _normalise(v, gram, j, indices)
    coef.setflags(write=False)
    return GramSchmidtBasis(measure, order, indices, coef)


def _normalise(v: np.ndarray, gram: np.ndarray, j: int, indices: MultiIndexSet) -> np.ndarray:
    sq = float(v @ gram @ v)
    # relative to the monomial's own norm, so the check is scale-free
    if not sq > (1e-12) ** 2 * gram[j, j]:
        raise DegenerateMeasureError(
            f"monomial {indices[j]} is numerically dependent on lower-order ones under this measure"
        )
    return v / np.sqrt(sq)


def evaluate_basis(basis: LegendreBasis | GramSchmidtBasis, point) -> np.ndarray:
    """Basis vector at one point, ordered as the basis's index set."""
    return basis.evaluate(np.asarray(point, dtype=float).reshape(-1))
