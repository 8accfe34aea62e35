"""Black-box simulators: (x, xi) -> metric vector.

Built-ins are the two-variable synthetic benchmark, the three-ring add-drop
filter and the third-order Mach-Zehnder lattice. ``ExternalSimulator`` wraps
any executable that speaks a small CSV protocol over stdin/stdout.
"""

from __future__ import annotations

import csv
import hashlib
import io
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import photonics as ph
from .gaussmix import GaussianMixture


class SimulationError(RuntimeError):
    """A simulator failed or returned unusable output."""


class Simulator:
    """Base class. Subclasses implement :meth:`_evaluate_batch`.

    Attributes:
        name: short identifier.
        bounds: design box, shape (d1, 2).
        noise_dim: dimension d2 of xi.
        metric_names: names of the returned metrics, in column order.
        units: unit string per metric.
    """

    name: str = "simulator"
    bounds: np.ndarray
    noise_dim: int
    metric_names: tuple[str, ...]
    units: tuple[str, ...]

    @property
    def design_dim(self) -> int:
        return self.bounds.shape[0]

    def evaluate(self, x, xi) -> np.ndarray:
        """Metrics at one (x, xi) pair, shape (n_metrics,)."""
        return self.evaluate_batch(np.atleast_2d(x), np.atleast_2d(xi))[0]

    def evaluate_batch(self, x, xi, workers: int = 1) -> np.ndarray:
        """Metrics for paired rows of x and xi, shape (n, n_metrics).

        Raises:
            SimulationError: naming the first row with a non-finite metric.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if x.shape[0] == 1 and xi.shape[0] > 1:
            x = np.repeat(x, xi.shape[0], axis=0)
        if x.shape[0] != xi.shape[0]:
            raise ValueError("x and xi must have the same number of rows")
        if x.shape[1] != self.design_dim or xi.shape[1] != self.noise_dim:
            raise ValueError(
                f"{self.name} expects x of dimension {self.design_dim} and xi of dimension {self.noise_dim}"
            )
        if workers > 1 and x.shape[0] > 1:
            parts = np.array_split(np.arange(x.shape[0]), workers)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                out = np.vstack(list(pool.map(lambda p: self._evaluate_batch(x[p], xi[p]), parts)))
        else:
            out = self._evaluate_batch(x, xi)
        bad = np.flatnonzero(~np.all(np.isfinite(out), axis=1))
        if bad.size:
            k = int(bad[0])
            raise SimulationError(f"{self.name}: non-finite metrics at sample {k} (x={x[k].tolist()}, xi={xi[k].tolist()})")
        return out

    def _evaluate_batch(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {
            "name": self.name,
            "bounds": np.asarray(self.bounds).tolist(),
            "noise_dim": self.noise_dim,
            "metrics": list(self.metric_names),
            "units": list(self.units),
        }


class CountingSimulator(Simulator):
    """Wraps a simulator and counts every evaluated (x, xi) row."""

    def __init__(self, inner: Simulator):
        self.inner = inner
        self.name = inner.name
        self.bounds = inner.bounds
        self.noise_dim = inner.noise_dim
        self.metric_names = inner.metric_names
        self.units = inner.units
        self.calls = 0

    def evaluate_batch(self, x, xi, workers: int = 1) -> np.ndarray:
        out = self.inner.evaluate_batch(x, xi, workers)
        self.calls += out.shape[0]
        return out

    def spectrum(self, x, xi):
        return self.inner.spectrum(x, xi)


# ---------------------------------------------------------------- synthetic


class SyntheticSimulator(Simulator):
    """objective = 3 z1 + z2, g1 = z1^2 - z2, g2 = z1^2 + z2 with z = x + xi."""

    name = "synthetic"

    def __init__(self):
        self.bounds = np.array([[-1.0, 1.0], [-1.0, 1.0]])
        self.noise_dim = 2
        self.metric_names = ("objective", "g1", "g2")
        self.units = ("", "", "")

    def _evaluate_batch(self, x, xi):
        z = x + xi
        return np.stack([3.0 * z[:, 0] + z[:, 1], z[:, 0] ** 2 - z[:, 1], z[:, 0] ** 2 + z[:, 1]], axis=1)


SYNTHETIC_MIXTURE = GaussianMixture.symmetric_pair([0.01, 0.01], 1e-4 * np.array([[1.0, 0.75], [0.75, 1.0]]))


# ---------------------------------------------------------------- photonics


class _Photonic(Simulator):
    n_points: int
    ties: str

    def _metrics(self, resp: ph.SpectralResponse) -> list[float]:
        raise NotImplementedError

    def spectrum(self, x, xi) -> ph.SpectralResponse:
        raise NotImplementedError

    def _evaluate_batch(self, x, xi):
        out = np.empty((x.shape[0], len(self.metric_names)))
        for k in range(x.shape[0]):
            try:
                resp = self.spectrum(x[k], xi[k])
                if not (np.all(np.isfinite(resp.through)) and np.all(np.isfinite(resp.drop))):
                    raise SimulationError("non-finite response")
                out[k] = self._metrics(resp)
            except (ph.MetricError, SimulationError) as exc:
                raise SimulationError(f"{self.name}: sample {k} (x={x[k].tolist()}, xi={xi[k].tolist()}): {exc}") from exc
        return out


class MicroringSimulator(_Photonic):
    """Three serially coupled rings; x = field couplings K1..K4 in [0.3, 0.6].

    Metrics are the drop-port 3 dB bandwidth (GHz), extinction ratio (dB) and
    passband roughness (dB).
    """

    name = "microring"

    def __init__(self, n_points: int = 2001, ties: str = "center"):
        self.bounds = np.array([[0.3, 0.6]] * 4)
        self.noise_dim = 4
        self.metric_names = ("bw", "re", "sigma_pass")
        self.units = ("GHz", "dB", "dB")
        self.n_points = n_points
        self.ties = ties

    def spectrum(self, x, xi) -> ph.SpectralResponse:
        k = np.clip(np.asarray(x, dtype=float) + np.asarray(xi, dtype=float), 1e-3, 1.0 - 1e-3)
        return ph.microring_response(k, self.n_points)

    def _metrics(self, resp):
        return [
            ph.bandwidth_3db(resp, "drop", self.ties),
            ph.extinction_ratio(resp, "drop", self.ties),
            ph.roughness(resp, "drop", self.ties),
        ]


RING_MIXTURE = GaussianMixture.symmetric_pair(
    0.006 * np.ones(4),
    0.006**2
    * np.array([[1.0, 0.4, 0.1, 0.4], [0.4, 1.0, 0.4, 0.1], [0.1, 0.4, 1.0, 0.4], [0.4, 0.1, 0.4, 1.0]]),
)


class MZISimulator(_Photonic):
    """Third-order Mach-Zehnder lattice; x = coupler gaps in nm within [100, 300].

    Metrics are the cross-port 3 dB bandwidth (GHz), crosstalk (dB) and peak
    attenuation (dB).
    """

    name = "mzi"

    def __init__(self, n_points: int = 2001, ties: str = "center"):
        self.bounds = np.array([[100.0, 300.0]] * 3)
        self.noise_dim = 3
        self.metric_names = ("bw", "xt", "alpha")
        self.units = ("GHz", "dB", "dB")
        self.n_points = n_points
        self.ties = ties

    def spectrum(self, x, xi) -> ph.SpectralResponse:
        gaps = np.clip(np.asarray(x, dtype=float) + np.asarray(xi, dtype=float), 10.0, 600.0)
        return ph.mzi_response(ph.gap_to_kappa(gaps), self.n_points)

    def _metrics(self, resp):
        return [
            ph.bandwidth_3db(resp, "cross", self.ties),
            ph.crosstalk(resp, "cross", self.ties),
            ph.attenuation(resp, "cross"),
        ]


MZI_MIXTURE = GaussianMixture.symmetric_pair(
    np.ones(3), np.array([[1.0, 0.4, 0.1], [0.4, 1.0, 0.4], [0.1, 0.4, 1.0]])
)


BUILTINS = {
    "synthetic": (SyntheticSimulator, SYNTHETIC_MIXTURE),
    "microring": (MicroringSimulator, RING_MIXTURE),
    "mzi": (MZISimulator, MZI_MIXTURE),
}


# ---------------------------------------------------------------- external


@dataclass
class ExternalSimulator(Simulator):
    """Runs an executable over CSV rows.

    The child reads ``x1..xd1,xi1..xid2`` rows (with header) on stdin and
    writes ``m1..mn`` rows (with header) on stdout, one per input row and in
    the same order, then exits 0. Results are cached by the exact (x, xi)
    bytes unless ``cache`` is False.
    """

    command: Sequence[str]
    bounds: np.ndarray
    noise_dim: int
    metric_names: tuple[str, ...]
    timeout: float = 300.0
    cache: bool = True
    name: str = "external"
    units: tuple[str, ...] = ()
    _store: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        self.metric_names = tuple(self.metric_names)
        if not self.units:
            self.units = ("",) * len(self.metric_names)

    @staticmethod
    def _key(x: np.ndarray, xi: np.ndarray) -> str:
        return hashlib.sha256(np.concatenate([x, xi]).tobytes()).hexdigest()

    def _evaluate_batch(self, x, xi):
        keys = [self._key(a, b) for a, b in zip(x, xi)]
        todo = [k for k, key in enumerate(keys) if not (self.cache and key in self._store)]
        if todo:
            fresh = self._run(x[todo], xi[todo])
            for k, row in zip(todo, fresh):
                if self.cache:
                    self._store[keys[k]] = row
        if not self.cache:
            return fresh
        return np.array([self._store[key] for key in keys])

    def _run(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        buf = io.StringIO()
        header = [f"x{i + 1}" for i in range(x.shape[1])] + [f"xi{i + 1}" for i in range(xi.shape[1])]
        buf.write(",".join(header) + "\n")
        for row in np.hstack([x, xi]):
            buf.write(",".join("%.17g" % v for v in row) + "\n")
        try:
            proc = subprocess.run(
                list(self.command), input=buf.getvalue(), capture_output=True, text=True, timeout=self.timeout
            )
        except subprocess.TimeoutExpired as exc:
            raise SimulationError(f"external simulator timed out after {self.timeout} s") from exc
        except OSError as exc:
            raise SimulationError(f"cannot start external simulator: {exc}") from exc
        if proc.returncode != 0:
            raise SimulationError(f"external simulator exited with code {proc.returncode}: {proc.stderr.strip()[-500:]}")
        rows = list(csv.reader(io.StringIO(proc.stdout)))
        rows = [r for r in rows if r]
        n_m = len(self.metric_names)
        if not rows or len(rows[0]) != n_m:
            raise SimulationError(f"external simulator output header must have {n_m} columns")
        body = rows[1:]
        if len(body) != x.shape[0]:
            raise SimulationError(f"external simulator returned {len(body)} rows for {x.shape[0]} inputs")
        out = np.empty((x.shape[0], n_m))
        for k, r in enumerate(body):
            if len(r) != n_m:
                raise SimulationError(f"malformed output row {k + 1}: expected {n_m} values, got {len(r)}")
            try:
                vals = [float(v) for v in r]
            except ValueError as exc:
                raise SimulationError(f"malformed output row {k + 1}: {exc}") from exc
            if not np.all(np.isfinite(vals)):
                raise SimulationError(f"non-finite value in output row {k + 1}")
            out[k] = vals
        return out
