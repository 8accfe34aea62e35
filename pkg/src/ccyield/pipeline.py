"""End-to-end runs: rule, simulation, fit, assembly, solve and validation.

Every function takes a validated :class:`RunConfig` and an output directory
and writes its artifacts there. Stage failures are re-raised as
:class:`StageError` carrying the stage name.
"""

from __future__ import annotations

import contextlib
import csv
import datetime as _dt
import json
import logging
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

from .basis import build_gram_schmidt, build_legendre
from .chance import assemble, mean_only_assemble
from .config import RunConfig
from .evaluation import byo_optimize, density_from_samples, mc_yield
from .gaussmix import make_rng
from .polyopt import grid_oracle, solve
from .quadrature import QuadratureRule, design_rule, joint_rule, noise_rule
from .simulators import CountingSimulator
from .surrogate import SurrogateModel, fit

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def build_rule(cfg: RunConfig, out: Path) -> QuadratureRule:
    """Joint rule for the config, reusing ``out/rule.json`` when its key matches."""
    path = out / "rule.json"
    key = cfg.rule_key()
    if path.exists():
        data = json.loads(path.read_text())
        if data.get("key") == key:
            return QuadratureRule.from_dict(data)
    with stage("quadrature"):
        p = cfg.order
        design_basis = build_legendre(cfg.simulator.bounds, p)
        noise_basis = build_gram_schmidt(cfg.mixture, 2 * p)
        r1 = design_rule(design_basis, p, cfg.quadrature)
        r2 = noise_rule(noise_basis, cfg.mixture, p, cfg.quadrature)
        rule = joint_rule(r1, r2, design_basis, noise_basis, p, cfg.quadrature)
    data = rule.to_dict()
    data["key"] = key
    data["stages"] = {"design_points": r1.size, "noise_points": r2.size}
    _write_json(path, data)
    return rule


def build_surrogate(cfg: RunConfig, out: Path, workers: int = 1) -> SurrogateModel:
    rule = build_rule(cfg, out)
    with stage("simulate"):
        y = cfg.simulator.evaluate_batch(rule.x, rule.xi, workers)
    with stage("fit"):
        model = fit(
            rule,
            y,
            build_legendre(cfg.simulator.bounds, cfg.order),
            build_gram_schmidt(cfg.mixture, cfg.order),
            cfg.order,
            cfg.simulator.metric_names,
        )
    model.save(out / "surrogate.json")
    return model


def run_quadrature(cfg: RunConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    rule = build_rule(cfg, out)
    return {"size": rule.size, "residual_l1": rule.residual_l1, "converged": rule.converged}


def run_surrogate(cfg: RunConfig, out: Path, workers: int = 1) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    model = build_surrogate(cfg, out, workers)
    return {"simulations": model.simulation_count, "metrics": list(model.metric_names)}


def run_optimize(cfg: RunConfig, out: Path, workers: int = 1) -> dict:
    """Surrogate-based chance-constrained optimisation plus MC validation.

    Writes results.json, rule.json, surrogate.json, pdf_<metric>.csv and,
    for photonic problems, spectrum.csv.
    """
    out.mkdir(parents=True, exist_ok=True)
    model = build_surrogate(cfg, out, workers)
    rule = QuadratureRule.load(out / "rule.json")
    with stage("assemble"):
        build = mean_only_assemble if cfg.formulation == "mean_only" else assemble
        problem = build(model, cfg.spec)
    with stage("solve"):
        res = solve(problem, seed=cfg.solver_seed, settings=cfg.solver, workers=workers)
        if cfg.grid_check and res.feasible:
            oracle = grid_oracle(problem, cfg.grid_points)
            gap = oracle.objective_value - res.objective_value
            res = type(res)(res.x_star, res.objective_value, res.feasibility_residual, res.status,
                            res.starts_used, float(gap if problem.sense == "max" else -gap))
    results = {
        "method": "mean-only" if cfg.formulation == "mean_only" else "proposed",
        "problem": cfg.problem_name,
        "epsilon": cfg.epsilon_label,
        "spec": cfg.spec.to_dict(),
        "x_star": np.asarray(res.x_star).tolist(),
        "objective": res.objective_value,
        "status": res.status,
        "feasibility_residual": res.feasibility_residual,
        "starts_used": res.starts_used,
        "oracle_gap": res.oracle_agreement,
        "quadrature": {
            "size": rule.size,
            "residual_l1": rule.residual_l1,
            "converged": rule.converged,
        },
        "seeds": {"solver": cfg.solver_seed, "validation": cfg.validation["seed"], "quadrature": cfg.quadrature.seed},
    }
    if res.feasible:
        _validate(cfg, out, res.x_star, results, workers, model)
    else:
        results["simulations"] = {"optimization": model.simulation_count, "validation": 0}
    results["timestamp"] = _timestamp()
    _write_json(out / "results.json", results)
    return results


def _validate(cfg: RunConfig, out: Path, x, results: dict, workers: int, model: SurrogateModel | None) -> None:
    sim, mix, val = cfg.simulator, cfg.mixture, cfg.validation
    with stage("validate"):
        est, y = mc_yield(sim, x, mix, cfg.spec, val["samples"], val["seed"], workers, return_values=True)
        obj = sim.metric_names.index(cfg.spec.objective)
        results["yield"] = est.yield_
        results["violations"] = dict(zip([c.metric for c in cfg.spec.constraints], est.violations.tolist()))
        results["mc_objective"] = float(est.metric_means[obj])
        results["mc_metric_means"] = dict(zip(sim.metric_names, est.metric_means.tolist()))
        n_pdf = min(val["pdf_samples"], val["samples"])
        pdf_values = y[:n_pdf]
        for k, name in enumerate(sim.metric_names):
            dens = density_from_samples(pdf_values[:, k], val["bins"])
            _write_csv(out / f"pdf_{name}.csv", ["value", "density"], dens.histogram_rows())
            _write_csv(out / f"pdf_{name}_kde.csv", ["value", "density"], dens.kde_rows())
        if model is not None:
            xi = mix.sample(val["samples"], make_rng(val["seed"]))[:n_pdf]
            ys = model.evaluate_all(np.asarray(x), xi)
            results["ks_distance"] = {
                name: float(ks_2samp(ys[:, k], pdf_values[:, k], method="asymp").statistic) for k, name in enumerate(sim.metric_names)
            }
        spectrum_draws = 0
        if hasattr(sim, "spectrum"):
            spectrum_draws = _write_spectrum(cfg, out, x)
    results["simulations"] = {
        "optimization": model.simulation_count if model is not None else 0,
        "validation": est.samples,
        "spectrum": spectrum_draws,
    }


def _write_spectrum(cfg: RunConfig, out: Path, x) -> int:
    sim, mix = cfg.simulator, cfg.mixture
    draws = cfg.validation["spectrum_draws"]
    xis = np.vstack([np.zeros(mix.dim), mix.sample(draws, make_rng(cfg.validation["seed"] + 1))]) if draws else np.zeros((1, mix.dim))
    rows = []
    for d, xi in enumerate(xis):
        resp = sim.spectrum(x, xi)
        rows.append(np.column_stack([np.full(resp.freq.size, d), resp.freq, resp.through, resp.drop]))
    _write_csv(out / "spectrum.csv", ["draw", "frequency", "through", "drop"], np.vstack(rows))
    return len(xis)


def _write_csv(path: Path, header, rows: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["%.17g" % v for v in r])


def run_yield(cfg: RunConfig, out: Path, workers: int = 1) -> dict:
    """MC yield at validation.x, or at x_star of out/results.json."""
    out.mkdir(parents=True, exist_ok=True)
    if "x" in cfg.validation:
        x = np.asarray(cfg.validation["x"], dtype=float)
    else:
        path = out / "results.json"
        if not path.exists():
            raise StageError("yield", FileNotFoundError("no validation.x in the config and no results.json in the output directory"))
        x = np.asarray(json.loads(path.read_text())["x_star"], dtype=float)
    with stage("yield"):
        est = mc_yield(cfg.simulator, x, cfg.mixture, cfg.spec, cfg.validation["samples"], cfg.validation["seed"], workers)
    data = est.to_dict(cfg.simulator.metric_names)
    data["violations"] = dict(zip([c.metric for c in cfg.spec.constraints], est.violations.tolist()))
    _write_json(out / "yield.json", data)
    return data


def run_byo(cfg: RunConfig, out: Path, workers: int = 1) -> dict:
    """The kernel-density baseline, reported in the results schema (method "byo")."""
    out.mkdir(parents=True, exist_ok=True)
    b = cfg.byo
    counted = CountingSimulator(cfg.simulator)
    with stage("byo"):
        res = byo_optimize(counted, cfg.mixture, cfg.spec, b["seed"], b["samples"], b["bandwidth"], b["max_iter"], b["tol"], b["starts"])
    results = {
        "method": "byo",
        "problem": cfg.problem_name,
        "epsilon": cfg.epsilon_label,
        "spec": cfg.spec.to_dict(),
        "x_star": np.asarray(res.x).tolist(),
        "objective": res.objective,
        "status": "feasible" if res.passed else "infeasible",
        "iterations": res.iterations,
        "history": res.history,
        "seeds": {"byo": b["seed"], "validation": cfg.validation["seed"]},
    }
    if counted.calls != res.simulations:
        raise StageError("byo", RuntimeError(f"simulation accounting mismatch: {counted.calls} != {res.simulations}"))
    _validate(cfg, out, res.x, results, workers, None)
    results["simulations"]["optimization"] = res.simulations
    results["timestamp"] = _timestamp()
    _write_json(out / "results.json", results)
    return results


COMPARE_COLUMNS = ["method", "epsilon", "simulations", "objective", "mc_objective", "yield"]


def run_compare(results_files: list[Path], out: Path | None = None) -> list[dict]:
    """One table row per results file, in the order given."""
    if len(results_files) < 2:
        raise ValueError("compare needs at least two results")
    rows, problems = [], set()
    for path in results_files:
        data = json.loads(Path(path).read_text())
        missing = [k for k in ("method", "problem", "simulations", "objective") if k not in data]
        if missing:
            raise ValueError(f"{path} is not a results file (missing {missing})")
        problems.add(data["problem"])
        rows.append(
            {
                "method": data["method"],
                "epsilon": data.get("epsilon"),
                "simulations": data["simulations"]["optimization"],
                "objective": data["objective"],
                "mc_objective": data.get("mc_objective"),
                "yield": data.get("yield"),
            }
        )
    if len(problems) > 1:
        raise ValueError(f"cannot compare results of different problems: {sorted(problems)}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "comparison.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, COMPARE_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    return rows
