"""Ground-truth checks: Monte Carlo yield, metric densities and the BYO baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import gaussian_kde, qmc

from .chance import ChanceSpec
from .gaussmix import GaussianMixture, make_rng
from .simulators import Simulator

log = logging.getLogger(__name__)


def indicator(values, thresholds) -> np.ndarray | int:
    """1 where every canonical metric satisfies y_i <= u_i (inclusive), else 0.

    ``values`` is (n_constraints,) or (n, n_constraints).
    """
    v = np.asarray(values, dtype=float)
    u = np.asarray(thresholds, dtype=float)
    ok = np.all(v <= u, axis=-1)
    return ok.astype(int) if v.ndim > 1 else int(ok)


@dataclass(frozen=True)
class YieldEstimate:
    """Monte Carlo yield at one design.

    Attributes:
        x: design point.
        samples: number of noise draws M.
        yield_: fraction of draws meeting every constraint.
        violations: per-constraint violation frequency.
        seed: RNG seed of the draws.
        metric_means: sample mean of every simulator metric.
    """

    x: np.ndarray
    samples: int
    yield_: float
    violations: np.ndarray
    seed: int
    metric_means: np.ndarray

    def to_dict(self, metric_names=None) -> dict:
        d = {
            "x": np.asarray(self.x).tolist(),
            "samples": self.samples,
            "yield": self.yield_,
            "violations": np.asarray(self.violations).tolist(),
            "seed": self.seed,
            "metric_means": np.asarray(self.metric_means).tolist(),
        }
        if metric_names is not None:
            d["metric_names"] = list(metric_names)
        return d


def mc_yield(
    simulator: Simulator,
    x,
    mixture: GaussianMixture,
    spec: ChanceSpec,
    samples: int = 10_000,
    seed: int = 0,
    workers: int = 1,
    return_values: bool = False,
):
    """Yield estimate from ``samples`` mixture draws at design ``x``.

    Returns a :class:`YieldEstimate`, plus the raw metric matrix when
    ``return_values`` is set.
    """
    if samples < 100:
        raise ValueError("at least 100 samples are required")
    x = np.asarray(x, dtype=float)
    xi = mixture.sample(samples, make_rng(seed))
    y = simulator.evaluate_batch(np.repeat(x[None, :], samples, axis=0), xi, workers)
    canon, thr = spec.canonicalize(y, simulator.metric_names)
    passed = indicator(canon, thr) if canon.shape[1] else np.ones(samples, dtype=int)
    est = YieldEstimate(
        x=x,
        samples=samples,
        yield_=float(np.mean(passed)),
        violations=np.mean(canon > thr, axis=0),
        seed=seed,
        metric_means=y.mean(axis=0),
    )
    return (est, y) if return_values else est


@dataclass(frozen=True)
class MetricDensity:
    """Normalised histogram and Gaussian-kernel curve of one metric's samples."""

    edges: np.ndarray
    density: np.ndarray
    grid: np.ndarray
    kde: np.ndarray

    def integral(self) -> float:
        return float(np.sum(self.density * np.diff(self.edges)))

    def histogram_rows(self) -> np.ndarray:
        """(bin centre, density) rows."""
        centres = 0.5 * (self.edges[:-1] + self.edges[1:])
        return np.column_stack([centres, self.density])

    def kde_rows(self) -> np.ndarray:
        return np.column_stack([self.grid, self.kde])


def density_from_samples(values, bins: int = 40, grid_points: int = 200) -> MetricDensity:
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if hi - lo <= 1e-12 * max(1.0, abs(lo)):
        # degenerate metric: one bin of unit mass
        width = max(1e-12, 1e-9 * max(1.0, abs(lo)))
        edges = np.array([lo - width / 2, lo + width / 2])
        dens = np.array([1.0 / width])
        return MetricDensity(edges, dens, np.array([lo]), np.array([1.0 / width]))
    dens, edges = np.histogram(v, bins=bins, density=True)
    grid = np.linspace(lo, hi, grid_points)
    kde = gaussian_kde(v)(grid)
    return MetricDensity(edges, dens, grid, kde)


def metric_pdf(
    simulator: Simulator,
    x,
    mixture: GaussianMixture,
    samples: int = 1000,
    seed: int = 0,
    bins: int = 40,
    workers: int = 1,
) -> dict[str, MetricDensity]:
    """Empirical density of every metric at ``x`` from ``samples`` draws."""
    if samples < 500:
        raise ValueError("at least 500 samples are required")
    x = np.asarray(x, dtype=float)
    xi = mixture.sample(samples, make_rng(seed))
    y = simulator.evaluate_batch(np.repeat(x[None, :], samples, axis=0), xi, workers)
    return {name: density_from_samples(y[:, k], bins) for k, name in enumerate(simulator.metric_names)}


# ---------------------------------------------------------------- BYO baseline


class ByoError(RuntimeError):
    pass


def kde_value(x, centres: np.ndarray, h: float) -> np.ndarray | float:
    """(1/M) sum_i exp(-|x - mu_i|^2 / (2h)) / (sqrt(2 pi) h), as stated for the baseline."""
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    d2 = ((pts[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
    val = np.exp(-d2 / (2.0 * h)).mean(axis=1) / (np.sqrt(2.0 * np.pi) * h)
    return float(val[0]) if x.ndim == 1 else val


def _kde_grad(x: np.ndarray, centres: np.ndarray, h: float):
    diff = x[None, :] - centres
    e = np.exp(-(diff**2).sum(axis=1) / (2.0 * h))
    c = 1.0 / (np.sqrt(2.0 * np.pi) * h * centres.shape[0])
    return c * e.sum(), -c * (e[:, None] * diff).sum(axis=0) / h


@dataclass
class ByoResult:
    """Outcome of the baseline run.

    Attributes:
        x: best passing design recorded (design units).
        objective: simulated objective at ``x`` (nominal noise).
        simulations: simulator invocations actually made.
        iterations: completed EM iterations.
        history: one dict per iteration.
        passed: whether any recorded design passed.
    """

    x: np.ndarray
    objective: float
    simulations: int
    iterations: int
    history: list = field(default_factory=list)
    passed: bool = True

    def to_dict(self) -> dict:
        return {
            "x": np.asarray(self.x).tolist(),
            "objective": self.objective,
            "simulations": self.simulations,
            "iterations": self.iterations,
            "passed": self.passed,
            "history": self.history,
        }


def byo_optimize(
    simulator: Simulator,
    mixture: GaussianMixture,
    spec: ChanceSpec,
    seed: int = 0,
    samples: int = 100,
    bandwidth: float = 0.3,
    max_iter: int = 20,
    tol: float = 1e-6,
    starts: int = 32,
) -> ByoResult:
    """Expectation-maximisation over a kernel density of passing designs.

    Each iteration draws ``samples`` joint (x, xi) points (x uniform on the
    box), keeps the designs that pass every constraint, and maximises the
    kernel density over all passing designs so far. The maximiser is
    simulated once at nominal noise (the mixture mean) to record its
    objective and pass status. The KDE works in box-normalised coordinates
    u = (x - lo) / (hi - lo) so the bandwidth is problem-independent.
    """
    bounds = np.asarray(simulator.bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    d = bounds.shape[0]
    rng = make_rng(seed)
    obj = list(simulator.metric_names).index(spec.objective)
    better = (lambda a, b: a > b) if spec.sense == "max" else (lambda a, b: a < b)
    nominal = mixture.mean()

    pass_u = np.empty((0, d))
    sims = 0
    n_draw = samples
    enlarged = False
    best_x, best_f = None, None
    history = []
    prev_u = None
    it = 0
    for it in range(1, max_iter + 1):
        u = rng.random((n_draw, d))
        xi = mixture.sample(n_draw, rng)
        y = simulator.evaluate_batch(lo + u * (hi - lo), xi)
        sims += n_draw
        canon, thr = spec.canonicalize(y, simulator.metric_names)
        ok = indicator(canon, thr).astype(bool) if canon.shape[1] else np.ones(n_draw, bool)
        pass_u = np.vstack([pass_u, u[ok]])
        if pass_u.shape[0] == 0:
            if enlarged:
                raise ByoError("no passing samples even after doubling the sample size")
            enlarged = True
            n_draw = 2 * samples
            history.append({"iteration": it, "passed_samples": 0, "skipped": True})
            continue
        u_star = _maximise_kde(pass_u, bandwidth, starts, seed + it)
        x_star = lo + u_star * (hi - lo)
        y_star = simulator.evaluate_batch(x_star[None, :], nominal[None, :])[0]
        sims += 1
        c_star, _ = spec.canonicalize(y_star[None, :], simulator.metric_names)
        good = bool(indicator(c_star[0], thr)) if c_star.shape[1] else True
        f_star = float(y_star[obj])
        if good and (best_f is None or better(f_star, best_f)):
            best_x, best_f = x_star, f_star
        history.append(
            {
                "iteration": it,
                "passed_samples": int(pass_u.shape[0]),
                "x": x_star.tolist(),
                "objective": f_star,
                "pass": good,
                "kde": kde_value(u_star, pass_u, bandwidth),
            }
        )
        if prev_u is not None and np.linalg.norm(u_star - prev_u) < tol:
            break
        prev_u = u_star
    if best_x is None:
        last = next((h for h in reversed(history) if "x" in h), None)
        if last is None:
            raise ByoError("no design was ever proposed")
        return ByoResult(np.array(last["x"]), last["objective"], sims, it, history, passed=False)
    return ByoResult(best_x, best_f, sims, it, history)


def _maximise_kde(centres: np.ndarray, h: float, starts: int, seed: int) -> np.ndarray:
    d = centres.shape[1]
    # start from the densest pass samples plus low-discrepancy points
    n_pass = min(starts // 2, centres.shape[0])
    dens = kde_value(centres, centres, h)
    order = np.argsort(-dens, kind="stable")[:n_pass]
    sob = qmc.Sobol(d, scramble=True, seed=np.random.Generator(np.random.Philox(seed)))
    x0 = np.vstack([centres[order], sob.random(starts - n_pass)])
    best, best_val = None, -np.inf
    for s in x0:
        res = minimize(
            lambda v: tuple(-a for a in _kde_grad(v, centres, h)),
            s,
            jac=True,
            method="L-BFGS-B",
            bounds=[(0.0, 1.0)] * d,
        )
        val = -float(res.fun)
        if val > best_val:
            best, best_val = np.clip(res.x, 0.0, 1.0), val
    return best
