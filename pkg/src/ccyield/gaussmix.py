"""Gaussian-mixture measure for correlated, non-Gaussian process variations."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Counter-based Philox generator; the one RNG used throughout the package."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Weighted sum of multivariate normal components.

    Args:
        weights: component probabilities, shape (C,).
        means: component means, shape (C, d).
        covariances: component covariances, shape (C, d, d).
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covariances, dtype=float)
        if cov.ndim == 2:
            cov = cov[None]
        if w.ndim != 1 or mu.shape[0] != w.size or cov.shape[0] != w.size:
            raise ValueError("weights, means and covariances disagree on component count")
        d = mu.shape[1]
        if cov.shape[1:] != (d, d):
            raise ValueError(f"covariances must be ({w.size}, {d}, {d}), got {cov.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        chol = np.empty_like(cov)
        for c in range(w.size):
            if not np.allclose(cov[c], cov[c].T, rtol=0, atol=1e-14 * max(1.0, np.abs(cov[c]).max())):
                raise ValueError(f"covariance of component {c} is not symmetric")
            if np.linalg.eigvalsh(cov[c]).min() <= 0:
                raise ValueError(f"covariance of component {c} is not positive definite")
            chol[c] = np.linalg.cholesky(cov[c])
        for name, arr in (("weights", w), ("means", mu), ("covariances", cov), ("_chol", chol)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianMixture":
        return cls(data["weights"], data["means"], data["covariances"])

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def symmetric_pair(cls, offset: Sequence[float], cov: np.ndarray) -> "GaussianMixture":
        """½N(offset, cov) + ½N(-offset, cov), the form used by all benchmarks."""
        offset = np.asarray(offset, dtype=float)
        return cls([0.5, 0.5], [offset, -offset], [cov, cov])

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        """Total covariance: within-component plus between-component spread."""
        m = self.mean()
        dev = self.means - m
        return np.einsum("c,cij->ij", self.weights, self.covariances) + np.einsum(
            "c,ci,cj->ij", self.weights, dev, dev
        )

    def bounding_box(self, n_sigma: float = 6.0) -> np.ndarray:
        """Per-coordinate [lo, hi] covering every component's mean ± n_sigma·std."""
        std = np.sqrt(np.einsum("cii->ci", self.covariances))
        lo = (self.means - n_sigma * std).min(axis=0)
        hi = (self.means + n_sigma * std).max(axis=0)
        return np.stack([lo, hi], axis=1)

    def density(self, xi) -> np.ndarray | float:
        xi = np.asarray(xi, dtype=float)
        scalar = xi.ndim == 1
        pts = np.atleast_2d(xi)
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {pts.shape[1]}")
        out = np.zeros(pts.shape[0])
        for w, mu, L in zip(self.weights, self.means, self._chol):
            z = np.linalg.solve(L, (pts - mu).T)
            logdet = 2.0 * np.log(np.diag(L)).sum()
            out += w * np.exp(-0.5 * (z * z).sum(axis=0) - 0.5 * logdet - 0.5 * self.dim * np.log(2 * np.pi))
        return float(out[0]) if scalar else out

    def sample(self, count: int, rng: np.random.Generator | int) -> np.ndarray:
        """Draw ``count`` i.i.d. samples; an int ``rng`` is used as a Philox seed."""
        if count < 1:
            raise ValueError("count must be >= 1")
        if not isinstance(rng, np.random.Generator):
            rng = make_rng(rng)
        comp = rng.choice(self.n_components, size=count, p=self.weights)
        z = rng.standard_normal((count, self.dim))
        return self.means[comp] + np.einsum("nij,nj->ni", self._chol[comp], z)

    def raw_moment(self, beta: Sequence[int]) -> float:
        """E[prod_i xi_i^beta_i], exact."""
        beta = tuple(int(b) for b in beta)
        if len(beta) != self.dim:
            raise ValueError(f"exponent has length {len(beta)}, mixture dimension is {self.dim}")
        table = self._moment_tables(sum(beta))
        return float(sum(w * t[beta] for w, t in zip(self.weights, table)))

    def raw_moments(self, exponents: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`raw_moment` over rows of ``exponents``."""
        exponents = np.asarray(exponents, dtype=int)
        if exponents.size == 0:
            return np.zeros(exponents.shape[0])
        table = self._moment_tables(int(exponents.sum(axis=1).max()))
        idx = tuple(exponents.T)
        return sum(w * t[idx] for w, t in zip(self.weights, table))

    def _moment_tables(self, order: int) -> list[np.ndarray]:
        return _component_tables(self, max(order, 0))


@lru_cache(maxsize=32)
def _cached_tables(means: bytes, covs: bytes, order: int, d: int, n_comp: int):
    mus = np.frombuffer(means).reshape(n_comp, d)
    sigmas = np.frombuffer(covs).reshape(n_comp, d, d)
    return [gaussian_moment_table(mu, s, order) for mu, s in zip(mus, sigmas)]


def _component_tables(mix: GaussianMixture, order: int) -> list[np.ndarray]:
    return _cached_tables(mix.means.tobytes(), mix.covariances.tobytes(), order, mix.dim, mix.n_components)


def gaussian_moment_table(mu: np.ndarray, cov: np.ndarray, order: int) -> np.ndarray:
    """Dense table T[b_1, ..., b_d] = E[xi^b] for xi ~ N(mu, cov), entries with |b| <= order.

    Built with the recurrence
        m_{b+e_i} = mu_i m_b + sum_j cov_ij b_j m_{b-e_j},
    filling degree by degree. Entries with |b| > order are left at zero.
    """
    d = mu.size
    table = np.zeros((order + 1,) * d)
    table[(0,) * d] = 1.0
    for idx in _indices_by_degree(d, order):
        if sum(idx) == 0:
            continue
        # raise along the first nonzero coordinate
        i = next(k for k, b in enumerate(idx) if b > 0)
        base = list(idx)
        base[i] -= 1
        val = mu[i] * table[tuple(base)]
        for j in range(d):
            if base[j] > 0:
                lower = list(base)
                lower[j] -= 1
                val += cov[i, j] * base[j] * table[tuple(lower)]
        table[idx] = val
    return table


def _indices_by_degree(d: int, order: int):
    from .basis import enumerate_indices

    return map(tuple, enumerate_indices(d, order).indices)
