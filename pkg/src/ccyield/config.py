"""Run configuration: strict JSON schema plus semantic validation."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

import jsonschema
import numpy as np

from .chance import ChanceSpec, Constraint
from .gaussmix import GaussianMixture
from .polyopt import SolverSettings
from .quadrature import QuadratureSettings
from .simulators import BUILTINS, ExternalSimulator, Simulator


class ConfigError(ValueError):
    """Invalid configuration; raised before any simulation runs."""


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_NUM = {"type": "number"}
_INT = {"type": "integer"}
_BOOL = {"type": "boolean"}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _NUM}}

SCHEMA = _obj(
    {
        "problem": _obj(
            {
                "name": {"type": "string"},
                "command": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "bounds": _MATRIX,
                "metrics": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "noise_dim": _INT,
                "timeout": _NUM,
                "n_points": _INT,
                "mixture": _obj(
                    {"weights": {"type": "array", "items": _NUM}, "means": _MATRIX,
                     "covariances": {"type": "array", "items": _MATRIX}},
                    ["weights", "means", "covariances"],
                ),
                "objective": _obj({"metric": {"type": "string"}, "sense": {"enum": ["max", "min"]}}, ["metric"]),
                "constraints": {
                    "type": "array",
                    "items": _obj(
                        {"metric": {"type": "string"}, "sense": {"enum": ["upper", "lower"]},
                         "threshold": _NUM, "epsilon": _NUM},
                        ["metric", "threshold"],
                    ),
                },
                "epsilon": _NUM,
                "bonferroni": _BOOL,
                "formulation": {"enum": ["cantelli", "mean_only"]},
            },
            ["name", "objective"],
        ),
        "surrogate": _obj(
            {
                "order": _INT,
                "quadrature": _obj({f.name: {"type": ["number", "boolean"]} for f in fields(QuadratureSettings)}),
            }
        ),
        "solver": _obj(
            {
                **{f.name: _NUM for f in fields(SolverSettings)},
                "starts": _INT,
                "max_outer": _INT,
                "seed": _INT,
                "grid_check": _BOOL,
                "grid_points": _INT,
            }
        ),
        "validation": _obj(
            {
                "samples": _INT,
                "seed": _INT,
                "pdf_samples": _INT,
                "bins": _INT,
                "spectrum_draws": _INT,
                "x": {"type": "array", "items": _NUM},
            }
        ),
        "byo": _obj(
            {"samples": _INT, "bandwidth": _NUM, "max_iter": _INT, "tol": _NUM, "starts": _INT, "seed": _INT}
        ),
        "output": {"type": "string"},
    },
    ["problem"],
)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration of one pipeline run."""

    raw: dict
    simulator: Simulator
    mixture: GaussianMixture
    spec: ChanceSpec
    formulation: str
    order: int
    quadrature: QuadratureSettings
    solver: SolverSettings
    solver_seed: int
    grid_check: bool
    grid_points: int
    validation: dict
    byo: dict
    output: str | None

    @property
    def problem_name(self) -> str:
        return self.raw["problem"]["name"]

    @property
    def epsilon_label(self):
        eps = sorted({c.epsilon for c in self.spec.constraints})
        return eps[0] if len(eps) == 1 else eps

    def rule_key(self) -> str:
        """Hash of everything the quadrature rule depends on."""
        blob = {
            "bounds": np.asarray(self.simulator.bounds).tolist(),
            "mixture": self.mixture.to_dict(),
            "order": self.order,
            "quadrature": {f.name: getattr(self.quadrature, f.name) for f in fields(QuadratureSettings)},
        }
        return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()


VALIDATION_DEFAULTS = {"samples": 10_000, "seed": 1, "pdf_samples": 1000, "bins": 40, "spectrum_draws": 50}
BYO_DEFAULTS = {"samples": 100, "bandwidth": 0.3, "max_iter": 20, "tol": 1e-6, "starts": 32, "seed": 0}


def load_config(path: str | Path, seed: int | None = None) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data, seed)


def parse_config(data: dict, seed: int | None = None) -> RunConfig:
    """Validate ``data`` against the schema and build a :class:`RunConfig`.

    ``seed`` overrides every seed in the config.
    """
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    data = copy.deepcopy(data)
    prob = data["problem"]
    simulator = _simulator(prob)
    mixture = _mixture(prob)
    if mixture.dim != simulator.noise_dim:
        raise ConfigError(f"mixture dimension {mixture.dim} does not match the problem's noise dimension {simulator.noise_dim}")
    spec = _spec(prob, simulator)

    sur = data.get("surrogate", {})
    order = sur.get("order", 2)
    if not 1 <= order <= 4:
        raise ConfigError("surrogate order must be between 1 and 4")
    qset = QuadratureSettings(**sur.get("quadrature", {}))

    sol = dict(data.get("solver", {}))
    solver_seed = sol.pop("seed", 0)
    grid_check = sol.pop("grid_check", False)
    grid_points = sol.pop("grid_points", 101)
    settings = SolverSettings(**sol)
    if settings.starts < 1:
        raise ConfigError("solver starts must be >= 1")

    val = {**VALIDATION_DEFAULTS, **data.get("validation", {})}
    if val["samples"] < 100:
        raise ConfigError("validation samples must be >= 100")
    if val["pdf_samples"] < 500:
        raise ConfigError("validation pdf_samples must be >= 500")
    if "x" in val and len(val["x"]) != simulator.design_dim:
        raise ConfigError("validation x has the wrong dimension")
    byo = {**BYO_DEFAULTS, **data.get("byo", {})}
    if seed is not None:
        solver_seed = seed
        val["seed"] = seed
        byo["seed"] = seed
        qset = QuadratureSettings(**{**{f.name: getattr(qset, f.name) for f in fields(QuadratureSettings)}, "seed": seed})
    return RunConfig(
        raw=data,
        simulator=simulator,
        mixture=mixture,
        spec=spec,
        formulation=prob.get("formulation", "cantelli"),
        order=order,
        quadrature=qset,
        solver=settings,
        solver_seed=solver_seed,
        grid_check=grid_check,
        grid_points=grid_points,
        validation=val,
        byo=byo,
        output=data.get("output"),
    )


def _simulator(prob: dict) -> Simulator:
    name = prob["name"]
    if name == "external":
        for key in ("command", "bounds", "metrics", "noise_dim", "mixture"):
            if key not in prob:
                raise ConfigError(f"external problems need problem/{key}")
        bounds = _bounds(prob["bounds"])
        return ExternalSimulator(
            prob["command"], bounds, prob["noise_dim"], tuple(prob["metrics"]), timeout=prob.get("timeout", 300.0)
        )
    if name not in BUILTINS:
        raise ConfigError(f"unknown problem {name!r}; choose one of {sorted(BUILTINS)} or 'external'")
    for key in ("command", "metrics", "noise_dim", "timeout"):
        if key in prob:
            raise ConfigError(f"problem/{key} only applies to external problems")
    cls, _ = BUILTINS[name]
    sim = cls() if "n_points" not in prob or name == "synthetic" else cls(n_points=prob["n_points"])
    if "bounds" in prob:
        bounds = _bounds(prob["bounds"])
        if bounds.shape != sim.bounds.shape:
            raise ConfigError(f"{name} needs bounds of shape {sim.bounds.shape}")
        sim.bounds = bounds
    return sim


def _bounds(b) -> np.ndarray:
    arr = np.asarray(b, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise ConfigError("bounds must be a list of [lower, upper] pairs")
    if np.any(arr[:, 0] >= arr[:, 1]):
        raise ConfigError("every bound needs lower < upper")
    return arr


def _mixture(prob: dict) -> GaussianMixture:
    if "mixture" not in prob:
        return BUILTINS[prob["name"]][1]
    try:
        return GaussianMixture.from_dict(prob["mixture"])
    except ValueError as exc:
        raise ConfigError(f"invalid mixture: {exc}") from exc


def _spec(prob: dict, sim: Simulator) -> ChanceSpec:
    names = sim.metric_names
    obj = prob["objective"]
    if obj["metric"] not in names:
        raise ConfigError(f"objective metric {obj['metric']!r} is not one of {list(names)}")
    default_eps = prob.get("epsilon")
    cons = []
    for c in prob.get("constraints", []):
        if c["metric"] not in names:
            raise ConfigError(f"constraint metric {c['metric']!r} is not one of {list(names)}")
        eps = c.get("epsilon", default_eps)
        if eps is None:
            raise ConfigError(f"constraint on {c['metric']!r} has no epsilon and no problem-level default")
        if not 0.0 < eps <= 0.5:
            raise ConfigError(f"epsilon must lie in (0, 0.5], got {eps}")
        cons.append(Constraint(c["metric"], float(c["threshold"]), float(eps), c.get("sense", "upper")))
    return ChanceSpec(obj["metric"], obj.get("sense", "max"), tuple(cons), prob.get("bonferroni", False))
