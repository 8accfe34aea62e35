"""Global solution of small box-constrained polynomial programs.

Local solves use an augmented Lagrangian for the inequality constraints with
an L-BFGS-B inner solver (which keeps iterates inside the box). Many starts
from a scrambled Sobol sequence cover the box, and the best feasible local
optimum wins. An exhaustive grid search serves as an independent check.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .chance import ChanceProblem

FEASIBILITY_TOL = 1e-6


@dataclass(frozen=True)
class SolverSettings:
    """Augmented-Lagrangian parameters.

    Attributes:
        starts: number of multi-start points.
        penalty: initial penalty weight.
        multiplier: penalty growth factor when infeasibility stalls.
        inner_tol: tolerance of each inner box-constrained solve.
        max_outer: outer (multiplier update) iterations per start.
        feasibility_tol: largest scaled constraint value deemed feasible.
    """

    starts: int = 64
    penalty: float = 10.0
    multiplier: float = 5.0
    inner_tol: float = 1e-8
    max_outer: int = 50
    feasibility_tol: float = FEASIBILITY_TOL


@dataclass(frozen=True)
class SolveResult:
    """Best point found, in design units."""

    x_star: np.ndarray
    objective_value: float
    feasibility_residual: float
    status: str
    starts_used: int
    oracle_agreement: float | None = None

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x_star"] = np.asarray(self.x_star).tolist()
        return d


@dataclass(frozen=True)
class _Local:
    t: np.ndarray
    f: float
    residual: float


class _Scaled:
    """The problem in unit-box coordinates t in [-1, 1]^d with a scaled objective."""

    def __init__(self, problem: ChanceProblem):
        self.problem = problem
        lo, hi = problem.bounds[:, 0], problem.bounds[:, 1]
        self.lo, self.hi = lo, hi
        self.jac = 0.5 * (hi - lo)
        self.fscale = max(1.0, float(np.abs(problem.objective[1:]).sum()))

    def to_x(self, t: np.ndarray) -> np.ndarray:
        return np.clip(self.lo + (t + 1.0) * self.jac, self.lo, self.hi)

    def __call__(self, t: np.ndarray, with_grad: bool = True):
        f, g, df, dg = self.problem.evaluate(self.to_x(t)[None, :], with_grad)
        if not with_grad:
            return f[0] / self.fscale, g[0], None, None
        return f[0] / self.fscale, g[0], df[0] * self.jac / self.fscale, dg[0] * self.jac


def _local_solve(scaled: _Scaled, t0: np.ndarray, settings: SolverSettings) -> _Local:
    ng = scaled.problem.evaluate(scaled.to_x(t0)[None, :], False)[1].shape[1]
    lam = np.zeros(ng)
    rho = settings.penalty
    t = t0.copy()
    bounds = [(-1.0, 1.0)] * t.size
    prev_viol = np.inf

    def lagrangian(tt):
        f, g, df, dg = scaled(tt)
        shifted = np.maximum(0.0, g + lam / rho)
        val = f + 0.5 * rho * float(shifted @ shifted) - float(lam @ lam) / (2.0 * rho)
        grad = df + rho * shifted @ dg
        return val, grad

    for _ in range(settings.max_outer):
        res = minimize(
            lagrangian,
            t,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"ftol": settings.inner_tol * 1e-2, "gtol": settings.inner_tol, "maxiter": 500},
        )
        t_new = np.clip(res.x, -1.0, 1.0)
        _, g, _, _ = scaled(t_new, False)
        viol = float(np.maximum(g, 0.0).max()) if ng else 0.0
        lam_new = np.maximum(0.0, lam + rho * g) if ng else lam
        step = float(np.abs(t_new - t).max())
        lam_change = float(np.abs(lam_new - lam).max()) if ng else 0.0
        t, lam = t_new, lam_new
        if viol <= settings.feasibility_tol and (step <= 1e-10 or lam_change <= settings.inner_tol * max(1.0, np.abs(lam).max(initial=0.0))):
            break
        if viol > 0.25 * prev_viol:
            rho *= settings.multiplier
        prev_viol = viol
    f, g, _, _ = scaled(t, False)
    residual = float(g.max()) if ng else -np.inf
    return _Local(t, float(f), residual)


def _solve_chunk(args):
    problem, starts, settings = args
    scaled = _Scaled(problem)
    return [_local_solve(scaled, t0, settings) for t0 in starts]


def start_points(dim: int, count: int, seed: int) -> np.ndarray:
    """Scrambled Sobol points in [-1, 1]^dim (first ``count`` of the sequence)."""
    sob = qmc.Sobol(dim, scramble=True, seed=np.random.Generator(np.random.Philox(seed)))
    return 2.0 * sob.random(count) - 1.0


def solve(
    problem: ChanceProblem,
    starts: int | None = None,
    seed: int = 0,
    settings: SolverSettings = SolverSettings(),
    workers: int = 1,
) -> SolveResult:
    """Multi-start augmented-Lagrangian solve of ``problem``.

    Returns the feasible local optimum with the best objective (ties go to
    the lower start index). Status is "optimal" when at least two starts
    reach that objective (to 1e-6 relative), "feasible-local" when only one
    does, and "infeasible" with the least-violating point otherwise.
    """
    n = settings.starts if starts is None else starts
    if n < 1:
        raise ValueError("starts must be >= 1")
    t0 = start_points(problem.dim, n, seed)
    if workers > 1 and n > 1:
        chunks = np.array_split(np.arange(n), min(workers, n))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_solve_chunk, [(problem, t0[c], settings) for c in chunks])
            locals_ = [r for part in parts for r in part]
    else:
        locals_ = _solve_chunk((problem, t0, settings))
    scaled = _Scaled(problem)
    return _pick(problem, scaled, locals_, settings)


def _pick(problem, scaled, locals_, settings) -> SolveResult:
    tol = settings.feasibility_tol
    feasible = [k for k, r in enumerate(locals_) if r.residual <= tol]
    if not feasible:
        k = min(range(len(locals_)), key=lambda j: (locals_[j].residual, j))
        r = locals_[k]
        x = scaled.to_x(r.t)
        return SolveResult(x, float(problem.objective_value(x)), r.residual, "infeasible", len(locals_))
    k = min(feasible, key=lambda j: (locals_[j].f, j))
    best = locals_[k]
    agree = sum(1 for j in feasible if locals_[j].f <= best.f + 1e-6 * max(1.0, abs(best.f)))
    x = scaled.to_x(best.t)
    value = float(problem.objective_value(x))
    return SolveResult(x, value, best.residual, "optimal" if agree >= 2 else "feasible-local", len(locals_))


class OracleBudgetError(ValueError):
    pass


def grid_oracle(
    problem: ChanceProblem,
    points_per_dim: int,
    feasibility_tol: float = FEASIBILITY_TOL,
    chunk: int = 200_000,
) -> SolveResult:
    """Best feasible point of a uniform grid over the box (brute force)."""
    d = problem.dim
    if d > 4 or points_per_dim**d > 5_000_000:
        raise OracleBudgetError(f"grid of {points_per_dim}^{d} points exceeds the oracle budget")
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in problem.bounds]
    total = points_per_dim**d
    best_f, best_x, best_res = np.inf, None, np.inf
    least_x, least_res = None, np.inf
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.unravel_index(flat, (points_per_dim,) * d)
        x = np.stack([axes[i][idx[i]] for i in range(d)], axis=1)
        f, g, _, _ = problem.evaluate(x, False)
        gmax = g.max(axis=1) if g.shape[1] else np.full(x.shape[0], -np.inf)
        j = int(np.argmin(gmax))
        if gmax[j] < least_res:
            least_res, least_x = float(gmax[j]), x[j]
        ok = gmax <= feasibility_tol
        if ok.any():
            cand = np.flatnonzero(ok)
            j = int(cand[np.argmin(f[cand])])
            if f[j] < best_f:
                best_f, best_x, best_res = float(f[j]), x[j], float(gmax[j])
    if best_x is None:
        return SolveResult(least_x, float(problem.objective_value(least_x)), least_res, "infeasible", 0)
    return SolveResult(best_x, float(problem.objective_value(best_x)), best_res, "optimal", 0)


def gradient_bound(problem: ChanceProblem) -> np.ndarray:
    """Upper bound of |d objective / d x_i| over the box, per coordinate.

    Uses max |phi_n| = sqrt(2n + 1) and max |phi_n'| = sqrt(2n + 1) n (n + 1) / 2
    for orthonormal Legendre polynomials on [-1, 1].
    """
    basis = problem.basis
    idx = basis.indices.indices
    val = np.sqrt(2.0 * idx + 1.0)
    der = val * idx * (idx + 1) / 2.0
    half = 0.5 * (basis.bounds[:, 1] - basis.bounds[:, 0])
    out = np.zeros(basis.dim)
    for i in range(basis.dim):
        others = np.prod(np.delete(val, i, axis=1), axis=1)
        out[i] = np.sum(np.abs(problem.objective) * der[:, i] * others) / half[i]
    return out


def grid_slack(problem: ChanceProblem, points_per_dim: int) -> float:
    """Objective change bound across half a grid cell in every coordinate."""
    step = (problem.bounds[:, 1] - problem.bounds[:, 0]) / (points_per_dim - 1)
    return float(gradient_bound(problem) @ (0.5 * step))
