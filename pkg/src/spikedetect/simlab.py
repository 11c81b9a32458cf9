"""Monte-Carlo comparison of the spike detectors on simulated ARIMA series.

Each replicate simulates a series from a generator, inserts spikes at random
positions, runs the configured detectors and scores them against the known
spike positions. Replicates are aggregated per (generator, method, magnitude,
spike count, threshold) cell into macro-averaged sensitivity and specificity.

Random streams
--------------
Replicate ``r`` of a cell draws from::

    np.random.SeedSequence(seed, spawn_key=(crc32(cell_key), r))

where ``cell_key`` is ``"<generator>|<series_length>|<magnitude>|<n_spikes>"``
(magnitude formatted with ``repr``). The stream depends on nothing else, so
results do not change with the number of workers or the order in which work
completes, and configurations that differ only in threshold or method subset
see the same simulated series.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np
from scipy import signal

from . import ao_detect, arima, kalman, wavelet
from .arima import ArimaModel
from .core import InputError, Method, SpikeSet, TimeSeries, as_series, score, sensitivity, specificity

log = logging.getLogger(__name__)

ALL_METHODS = (Method.ARIMA, Method.KALMAN, Method.WAVELET, Method.AO)
MAGNITUDES = (0.10, 0.20, 0.30, 0.40, 0.50)
SPIKE_COUNTS = tuple(range(1, 11))
FAILURE_FLAG_FRACTION = 0.05

# exceptions a detector may raise on an awkward simulated series
_DETECTOR_ERRORS = (
    arima.ModelError, arima.DegenerateVarianceError, arima.ConvergenceError, arima.SelectionError,
    kalman.FilterDegeneracyError, InputError, np.linalg.LinAlgError, FloatingPointError,
)


# ---------------------------------------------------------------------------
# generators


@dataclass(frozen=True)
class Generator:
    """A named simulation model with the level and spread it should reproduce.

    ``model`` carries the calibrated mean and innovation variance.
    """

    name: str
    label: str
    model: ArimaModel
    target_mean: float
    target_sd: float


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split())


def _acov(phi, theta, sigma2: float, lags: int, horizon: int = 20000) -> np.ndarray:
    """ARMA autocovariances ``gamma_0 .. gamma_lags`` from the MA(infinity) weights."""
    impulse = np.zeros(horizon)
    impulse[0] = 1.0
    psi = signal.lfilter(np.r_[1.0, -np.asarray(theta)], np.r_[1.0, -np.asarray(phi)], impulse)
    return sigma2 * np.array([psi[: horizon - h] @ psi[h:] for h in range(lags + 1)])


def expected_sample_variance(model: ArimaModel, n: int) -> float:
    """``E[S^2]`` of ``n`` consecutive values simulated from ``model``.

    For ``d = 0`` this uses the stationary autocovariances; for ``d > 0`` the
    series is the ``d``-fold cumulative sum of the stationary ARMA part, as in
    :func:`arima.simulate`.
    """
    g = _acov(model.phi, model.theta, model.sigma2, n - 1)
    lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    cov = g[lag]
    S = np.eye(n)
    for _ in range(model.d):
        S = np.tril(np.ones((n, n))) @ S
    cov = S @ cov @ S.T
    C = np.eye(n) - 1.0 / n
    return float(np.trace(C @ cov @ C) / (n - 1))


def calibrate(model: ArimaModel, mean: float, sd: float, n: int = 96) -> ArimaModel:
    """Scale the innovation variance so simulated series have sample SD ``sd``.

    The match is exact in expectation of the sample variance over ``n``
    points. Stationary models get mean ``mean``; integrated models are started
    at ``mean`` by :func:`simulate_series` and carry no drift.
    """
    unit = ArimaModel(model.p, model.d, model.q, model.ar, model.ma, 0.0, 1.0).validate()
    sigma2 = sd ** 2 / expected_sample_variance(unit, n)
    return ArimaModel(model.p, model.d, model.q, model.ar, model.ma, mean if model.d == 0 else 0.0, sigma2)


def _read_generator_rows(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    need = {"name", "label", "p", "d", "q", "ar", "ma", "mean", "sd"}
    if not rows or not need <= set(rows[0]):
        raise InputError(f"generator table needs columns {sorted(need)}")
    return rows


def parse_generators(text: str, series_length: int = 96) -> dict[str, Generator]:
    out = {}
    for i, row in enumerate(_read_generator_rows(text), start=2):
        try:
            base = ArimaModel(int(row["p"]), int(row["d"]), int(row["q"]), _floats(row["ar"]), _floats(row["ma"]))
            mean, sd = float(row["mean"]), float(row["sd"])
            if not sd > 0:
                raise ValueError("sd must be positive")
            model = calibrate(base, mean, sd, series_length)
        except (ValueError, arima.ModelError) as exc:
            raise InputError(f"generator table line {i}: {exc}") from None
        out[row["name"]] = Generator(row["name"], row["label"], model, mean, sd)
    return out


def load_generators(series_length: int = 96) -> dict[str, Generator]:
    """The nine city generators shipped with the package, keyed by name."""
    text = resources.files("spikedetect").joinpath("data/generators.csv").read_text(encoding="utf-8")
    return parse_generators(text, series_length)


def simulate_series(gen: Generator, n: int, rng: np.random.Generator) -> TimeSeries:
    return arima.simulate(gen.model, n, rng, start=gen.target_mean)


# ---------------------------------------------------------------------------
# configuration and reports


@dataclass(frozen=True)
class SimulationConfig:
    generator: Generator
    n_spikes: int
    magnitude_fraction: float
    replicates: int = 200
    seed: int = 0
    series_length: int = 96
    methods: tuple = ALL_METHODS
    threshold_k: float = 2.0
    critical_value: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        if not self.methods:
            raise InputError("at least one method is required")
        if len(set(self.methods)) != len(self.methods):
            raise InputError("duplicate methods")
        if not 1 <= self.n_spikes < self.series_length:
            raise InputError("need 1 <= n_spikes < series_length")
        if not self.magnitude_fraction > 0:
            raise InputError("magnitude_fraction must be positive")
        if self.replicates < 1:
            raise InputError("replicates must be >= 1")
        if not self.threshold_k > 0:
            raise InputError("threshold_k must be positive")

    @property
    def cell_key(self) -> str:
        return f"{self.generator.name}|{self.series_length}|{self.magnitude_fraction!r}|{self.n_spikes}"


def replicate_rng(seed: int, cell_key: str, replicate: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(cell_key.encode("utf-8")), replicate))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class CellResult:
    generator: str
    method: str
    magnitude: float
    n_spikes: int
    threshold: float
    replicates: int
    mean_sensitivity: float
    se_sensitivity: float
    mean_specificity: float
    se_specificity: float
    failures: int

    @property
    def flagged(self) -> bool:
        return self.failures > FAILURE_FLAG_FRACTION * self.replicates


REPORT_COLUMNS = (
    "generator", "method", "magnitude", "n_spikes", "threshold", "replicates",
    "mean_sensitivity", "se_sensitivity", "mean_specificity", "se_specificity", "failures", "flagged",
)


@dataclass(frozen=True)
class SimulationReport:
    cells: tuple
    seed: int
    configs: tuple = field(default=(), compare=False)

    def select(self, **criteria) -> list[CellResult]:
        return [c for c in self.cells if all(getattr(c, k) == v for k, v in criteria.items())]

    def mean(self, metric: str, **criteria) -> float:
        """Unweighted mean of a per-cell metric across the matching cells."""
        cells = self.select(**criteria)
        vals = [getattr(c, metric) for c in cells if not math.isnan(getattr(c, metric))]
        if not vals:
            raise InputError(f"no cells match {criteria}")
        return float(np.mean(vals))

    @property
    def flagged_cells(self) -> list[CellResult]:
        return [c for c in self.cells if c.flagged]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for c in self.cells:
            w.writerow([_fmt(getattr(c, col)) for col in REPORT_COLUMNS])
        return buf.getvalue()

    def to_structured(self) -> str:
        doc = {
            "seed": self.seed,
            "configs": [_config_dict(c) for c in self.configs],
            "cells": [{col: _json_value(getattr(c, col)) for col in REPORT_COLUMNS} for c in self.cells],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def summary_table(self) -> str:
        head = f"{'generator':<14} {'method':<8} {'mag':>5} {'n':>3} {'k':>4} {'sens':>7} {'spec':>7} {'fail':>5}"
        lines = [head]
        for c in self.cells:
            lines.append(
                f"{c.generator:<14} {c.method:<8} {c.magnitude:>5.2f} {c.n_spikes:>3d} {c.threshold:>4.1f} "
                f"{100 * c.mean_sensitivity:>7.2f} {100 * c.mean_specificity:>7.2f} {c.failures:>5d}"
                + ("  FLAGGED" if c.flagged else "")
            )
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _json_value(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


def _config_dict(c: SimulationConfig) -> dict:
    m = c.generator.model
    return {
        "generator": c.generator.name,
        "model": {"order": list(m.order), "ar": list(m.ar), "ma": list(m.ma), "mean": m.mean, "sigma2": m.sigma2},
        "target_mean": c.generator.target_mean,
        "target_sd": c.generator.target_sd,
        "series_length": c.series_length,
        "n_spikes": c.n_spikes,
        "magnitude_fraction": c.magnitude_fraction,
        "replicates": c.replicates,
        "seed": c.seed,
        "methods": [m.value for m in c.methods],
        "threshold_k": c.threshold_k,
        "critical_value": c.critical_value,
    }


# ---------------------------------------------------------------------------
# replicates


def insert_spikes(series, n_spikes: int, magnitude_fraction: float, rng: np.random.Generator) -> tuple[TimeSeries, SpikeSet]:
    """Add ``magnitude_fraction * mean(series)`` at ``n_spikes`` distinct uniform positions."""
    ts = as_series(series)
    n = len(ts)
    if not 0 <= n_spikes <= n:
        raise InputError(f"cannot insert {n_spikes} spikes into a series of length {n}")
    idx = rng.choice(n, size=n_spikes, replace=False)
    y = np.array(ts.values)
    y[idx] += magnitude_fraction * float(np.mean(ts.values))
    return ts.with_values(y), SpikeSet(tuple(idx))


def _detect(method: Method, y: TimeSeries, fit_report, thresholds, critical_value):
    """Spike sets of one method for every requested threshold."""
    if method is Method.AO:
        res = ao_detect.detect_spikes_ao(y, critical_value, fit_report=fit_report)
        return {k: res.spikes for k in thresholds}
    if method is Method.ARIMA:
        res = arima.detect_spikes_arima(y, thresholds[0], fit_report=fit_report)
    elif method is Method.KALMAN:
        res = kalman.detect_spikes_kalman(y, thresholds[0], fit_report=fit_report)
    else:
        res = wavelet.detect_spikes_wavelet(y, thresholds[0])
    return {k: (res.spikes if k == thresholds[0] else res.rethreshold(k).spikes) for k in thresholds}


def run_replicate(gen: Generator, cell_key: str, replicate: int, seed: int, n: int, n_spikes: int,
                  magnitude: float, methods: Sequence[Method], thresholds: Sequence[float], critical_value: float) -> dict:
    """Score one replicate; returns ``{(method, k): (sens, spec) or None}``."""
    rng = replicate_rng(seed, cell_key, replicate)
    clean = simulate_series(gen, n, rng)
    y, truth = insert_spikes(clean, n_spikes, magnitude, rng)
    fit_report = None
    selection_error = None
    if any(m is not Method.WAVELET for m in methods):
        try:
            fit_report = arima.select_order(y)
        except _DETECTOR_ERRORS as exc:
            selection_error = exc
    out = {}
    for m in methods:
        try:
            if m is not Method.WAVELET and selection_error is not None:
                raise selection_error
            spikes = _detect(m, y, fit_report, thresholds, critical_value)
        except _DETECTOR_ERRORS as exc:
            log.debug("replicate %s/%d %s failed: %r", cell_key, replicate, m.value, exc)
            for k in thresholds:
                out[(m, k)] = None
            continue
        for k in thresholds:
            c = score(truth, spikes[k], n)
            out[(m, k)] = (sensitivity(c), specificity(c))
    return out


@dataclass(frozen=True)
class _Task:
    gen: Generator
    cell_key: str
    seed: int
    n: int
    n_spikes: int
    magnitude: float
    methods: tuple
    thresholds: tuple
    critical_value: float
    replicates: tuple


def _run_task(task: _Task) -> list[dict]:
    return [
        run_replicate(task.gen, task.cell_key, r, task.seed, task.n, task.n_spikes, task.magnitude,
                      task.methods, task.thresholds, task.critical_value)
        for r in task.replicates
    ]


def _aggregate(values: list) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return math.nan, math.nan
    se = float(np.std(a, ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return float(np.mean(a)), se


def _group_key(c: SimulationConfig):
    return (c.generator, c.cell_key, c.seed, c.series_length, c.n_spikes, c.magnitude_fraction,
            c.replicates, c.critical_value)


def run_grid(configs: Iterable[SimulationConfig], workers: int = 1, chunk: int = 10) -> SimulationReport:
    """Run every configuration and merge the cells into one report.

    Configurations sharing a cell key, seed and replicate count are simulated
    once; their thresholds are applied to the same detector residuals.
    ``workers > 1`` distributes chunks of replicates over processes; the
    report is identical for any number of workers.
    """
    configs = list(configs)
    if not configs:
        raise InputError("no simulation configurations given")
    if workers < 1:
        raise InputError("workers must be >= 1")
    groups: dict = {}
    for c in configs:
        groups.setdefault(_group_key(c), []).append(c)

    tasks = []
    for key, members in groups.items():
        gen, cell_key, seed, n, n_spikes, magnitude, reps, cv = key
        methods = tuple(m for m in ALL_METHODS if any(m in c.methods for c in members))
        thresholds = tuple(sorted({c.threshold_k for c in members}))
        for start in range(0, reps, chunk):
            tasks.append((key, _Task(gen, cell_key, seed, n, n_spikes, magnitude, methods, thresholds, cv,
                                     tuple(range(start, min(reps, start + chunk))))))

    if workers == 1:
        results = [_run_task(t) for _, t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, [t for _, t in tasks]))

    # tasks are in replicate order within each group, whatever order they ran in
    records: dict = {}
    for (key, _), res in zip(tasks, results):
        records.setdefault(key, []).extend(res)

    cells = []
    for c in configs:
        recs = records[_group_key(c)]
        for m in c.methods:
            vals = [r[(m, c.threshold_k)] for r in recs]
            ok = [v for v in vals if v is not None]
            sens, se_sens = _aggregate([v[0] for v in ok])
            spec, se_spec = _aggregate([v[1] for v in ok])
            cell = CellResult(c.generator.name, m.value, c.magnitude_fraction, c.n_spikes, c.threshold_k,
                              len(vals), sens, se_sens, spec, se_spec, len(vals) - len(ok))
            if cell.flagged:
                log.warning("cell %s %s: %d of %d replicates failed", c.cell_key, m.value, cell.failures, len(vals))
            cells.append(cell)
    return SimulationReport(tuple(cells), configs[0].seed, tuple(configs))


def run_cell(config: SimulationConfig, workers: int = 1) -> SimulationReport:
    return run_grid([config], workers=workers)


def grid(generator: Generator, magnitudes=MAGNITUDES, counts=SPIKE_COUNTS, **kwargs) -> list[SimulationConfig]:
    """Configurations for every (magnitude, count) pair of one generator."""
    return [SimulationConfig(generator, n, mag, **kwargs) for mag in magnitudes for n in counts]
