"""Command-line interface: rate ingestion, spike detection and simulation grids.

Input CSV (UTF-8, comma-delimited, ``.`` decimal separator, header required)::

    month,count,population        or        month,rate
    2005-01,35,100000                       2005-01,35.0

Months are ``YYYY-MM``, sorted and contiguous. All outputs are UTF-8 with
``\\n`` line endings; floats are written in shortest round-trip form.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ao_detect, arima, kalman, simlab, wavelet
from .core import DetectionResult, InputError, Method, TimeSeries, YearMonth

log = logging.getLogger("spikedetect")


class IngestError(InputError):
    """Malformed input file; the message carries the offending line number."""


# ---------------------------------------------------------------------------
# ingestion


@dataclass(frozen=True)
class RateTable:
    """Rows of (month, count, population) or (month, rate), contiguous and sorted."""

    months: tuple
    counts: np.ndarray | None = None
    populations: np.ndarray | None = None
    rates: np.ndarray | None = None

    @property
    def has_counts(self) -> bool:
        return self.counts is not None


def _missing_months(months) -> list[str]:
    have = {m.ordinal() for m in months}
    lo, hi = min(have), max(have)
    return [str(YearMonth.from_ordinal(k)) for k in range(lo, hi + 1) if k not in have]


def check_months(months) -> None:
    """Raise if months are unsorted, duplicated or have gaps (listing the gaps)."""
    ords = [m.ordinal() for m in months]
    for i in range(1, len(ords)):
        if ords[i] == ords[i - 1]:
            raise IngestError(f"duplicate month {months[i]}")
        if ords[i] < ords[i - 1]:
            raise IngestError(f"months not sorted: {months[i]} follows {months[i - 1]}")
    missing = _missing_months(months)
    if missing:
        raise IngestError("missing months: " + ", ".join(missing))


def parse_rate_table(text: str) -> RateTable:
    """Parse the CSV text of a count/population or rate file."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise IngestError("line 1: empty file")
    header = [h.strip().lower() for h in rows[0]]
    if header[:3] == ["month", "count", "population"]:
        kind = "counts"
    elif header[:2] == ["month", "rate"]:
        kind = "rate"
    else:
        raise IngestError(f"line 1: expected header 'month,count,population' or 'month,rate', got {','.join(rows[0])!r}")
    width = 3 if kind == "counts" else 2
    months, a, b = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < width:
            raise IngestError(f"line {lineno}: expected {width} fields, got {len(row)}")
        try:
            months.append(YearMonth.parse(row[0]))
            if kind == "counts":
                count, pop = int(row[1]), int(row[2])
                if count < 0:
                    raise InputError(f"negative count {count}")
                if pop <= 0:
                    raise InputError(f"population must be positive, got {pop}")
                a.append(count)
                b.append(pop)
            else:
                rate = float(row[1])
                if not math.isfinite(rate):
                    raise InputError(f"non-finite rate {row[1]!r}")
                a.append(rate)
        except (ValueError, InputError) as exc:
            raise IngestError(f"line {lineno}: {exc}") from None
    if not months:
        raise IngestError("no data rows")
    check_months(months)
    if kind == "counts":
        return RateTable(tuple(months), np.array(a, dtype=np.int64), np.array(b, dtype=np.int64))
    return RateTable(tuple(months), rates=np.array(a, dtype=float))


def read_rate_table(path) -> RateTable:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from None
    return parse_rate_table(text)


def compute_rates(table: RateTable) -> TimeSeries:
    """Rates per 100,000: ``1e5 * count / population``."""
    if not table.has_counts:
        raise InputError("table has no count/population columns")
    check_months(table.months)
    if np.any(table.populations <= 0):
        raise InputError("population must be positive")
    return TimeSeries(1e5 * table.counts / table.populations, origin=table.months[0])


def table_series(table: RateTable) -> TimeSeries:
    """The series to analyse: computed rates, or the given rate column."""
    if table.has_counts:
        return compute_rates(table)
    return TimeSeries(table.rates, origin=table.months[0])


# ---------------------------------------------------------------------------
# detection


def run_detectors(series: TimeSeries, methods, threshold: float = 2.0, critical_value: float = 3.0) -> dict:
    """Run the requested methods on one series, sharing the ARIMA model selection."""
    methods = [Method(m) for m in methods]
    fit_report = arima.select_order(series) if any(m is not Method.WAVELET for m in methods) else None
    out = {}
    for m in methods:
        if m is Method.ARIMA:
            out[m] = arima.detect_spikes_arima(series, threshold, fit_report=fit_report)
        elif m is Method.KALMAN:
            out[m] = kalman.detect_spikes_kalman(series, threshold, fit_report=fit_report)
        elif m is Method.WAVELET:
            out[m] = wavelet.detect_spikes_wavelet(series, threshold)
        else:
            out[m] = ao_detect.detect_spikes_ao(series, critical_value, fit_report=fit_report)
    return out


def spike_months(series: TimeSeries, result: DetectionResult) -> list[str]:
    return [series.label(i) for i in result.spikes]


def _num(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


def plot_rows(series: TimeSeries, result: DetectionResult) -> list[dict]:
    flags = set(result.spikes)
    return [
        {
            "time": series.label(i),
            "observed": float(series.values[i]),
            "fitted": float(result.fitted[i]),
            "residual": float(result.residuals[i]),
            "spike_flag": int(i in flags),
        }
        for i in range(len(series))
    ]


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def spike_report(name: str, series: TimeSeries, results: dict, fmt: str = "csv") -> str:
    """One line per method listing the calendar months flagged as spikes."""
    if fmt == "csv":
        rows = [[name, m.value, len(r.spikes), ", ".join(spike_months(series, r))] for m, r in results.items()]
        return _csv_text(["series", "method", "n_spikes", "months"], rows)
    doc = {
        "series": name,
        "origin": str(series.origin),
        "length": len(series),
        "methods": {
            m.value: {
                "months": spike_months(series, r),
                "indices": list(r.spikes.indices),
                "threshold_value": r.threshold_value,
                "model": str(r.info["model"]) if "model" in r.info else None,
            }
            for m, r in results.items()
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"


def _json_default(x):
    raise TypeError(f"not serialisable: {x!r}")


def plot_data(series: TimeSeries, result: DetectionResult, fmt: str = "csv") -> str:
    rows = plot_rows(series, result)
    cols = ["time", "observed", "fitted", "residual", "spike_flag"]
    if fmt == "csv":
        return _csv_text(cols, [[r["time"], _num(r["observed"]), _num(r["fitted"]), _num(r["residual"]), r["spike_flag"]] for r in rows])
    return json.dumps(rows, indent=2) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# argument helpers


def parse_int_list(text: str) -> list[int]:
    """``"1..10"``, ``"1,3,5"`` or a mix such as ``"1..3,7"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = (int(x) for x in part.split(".."))
                if hi < lo:
                    raise ValueError
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def parse_magnitudes(text: str) -> list[float]:
    """Percentages such as ``"10,20,50"``; returned as fractions."""
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad magnitude list {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("magnitudes must be positive percentages")
    return [round(v / 100.0, 12) for v in vals]


def resolve_generators(spec: str, series_length: int = 96) -> list[simlab.Generator]:
    """Fixture names (comma-separated, or ``all``) or the path of a generator CSV."""
    if os.path.exists(spec):
        text = Path(spec).read_text(encoding="utf-8")
        return list(simlab.parse_generators(text, series_length).values())
    fixtures = simlab.load_generators(series_length)
    if spec == "all":
        return list(fixtures.values())
    out = []
    for name in spec.split(","):
        name = name.strip()
        if name not in fixtures:
            raise InputError(f"unknown generator {name!r}; available fixtures: {', '.join(fixtures)}")
        out.append(fixtures[name])
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_rates(args) -> int:
    table = read_rate_table(args.input)
    ts = compute_rates(table)
    text = _csv_text(["month", "rate"], [[ts.label(i), _num(v)] for i, v in enumerate(ts.values)])
    if args.out:
        _write(Path(args.out) / "rates.csv", text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_detect(args) -> int:
    table = read_rate_table(args.input)
    series = table_series(table)
    methods = list(simlab.ALL_METHODS) if args.method == "all" else [Method(args.method)]
    try:
        results = run_detectors(series, methods, args.threshold, args.critical_value)
    except simlab._DETECTOR_ERRORS as exc:
        log.error("detection failed: %s", exc)
        return 3
    name = Path(args.input).stem
    ext = "csv" if args.format == "csv" else "json"
    out = Path(args.out)
    _write(out / f"{name}_spikes.{ext}", spike_report(name, series, results, args.format))
    for m, r in results.items():
        _write(out / f"{name}_{m.value}_plot.{ext}", plot_data(series, r, args.format))
    for m, r in results.items():
        months = spike_months(series, r)
        print(f"== {m.value} ==")
        print(", ".join(months) if months else "(no spikes)")
    return 0


def cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else int(np.random.SeedSequence().entropy)
    print(f"seed: {seed}")
    gens = resolve_generators(args.generator, args.length)
    methods = simlab.ALL_METHODS if args.methods == "all" else tuple(Method(m) for m in args.methods.split(","))
    configs = [
        simlab.SimulationConfig(g, n, mag, replicates=args.reps, seed=seed, series_length=args.length,
                                methods=methods, threshold_k=args.threshold, critical_value=args.critical_value)
        for g in gens for mag in args.magnitudes for n in args.counts
    ]
    report = simlab.run_grid(configs, workers=args.workers)
    out = Path(args.out)
    _write(out / "simulation_report.csv", report.to_csv())
    _write(out / "simulation_report.json", report.to_structured())
    sys.stdout.write(report.summary_table())
    if report.flagged_cells:
        for c in report.flagged_cells:
            log.error("cell %s/%s/%g/%d: %d of %d replicates failed", c.generator, c.method, c.magnitude,
                      c.n_spikes, c.failures, c.replicates)
        return 4
    return 0


def cmd_fixtures(args) -> int:
    rows = []
    for g in simlab.load_generators().values():
        m = g.model
        rows.append([g.name, g.label, f"ARIMA({m.p},{m.d},{m.q})", " ".join(map(repr, m.ar)), " ".join(map(repr, m.ma)),
                     repr(g.target_mean), repr(g.target_sd), _num(m.sigma2)])
    sys.stdout.write(_csv_text(["name", "label", "order", "ar", "ma", "mean", "sd", "sigma2"], rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikedetect", description="Spike detection in monthly rate series.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("rates", help="compute rates per 100,000 from month,count,population")
    r.add_argument("input")
    r.add_argument("--out", help="directory for rates.csv (default: stdout)")
    r.set_defaults(func=cmd_rates)

    d = sub.add_parser("detect", help="detect spikes in a series")
    d.add_argument("input")
    d.add_argument("--method", choices=[m.value for m in Method] + ["all"], default="kalman")
    d.add_argument("--threshold", type=float, default=2.0, help="residual SD multiple (default 2.0)")
    d.add_argument("--critical-value", type=float, default=3.0, help="outlier-statistic critical value (default 3.0)")
    d.add_argument("--out", default=".")
    d.add_argument("--format", choices=["csv", "structured"], default="csv")
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("simulate", help="run a Monte-Carlo comparison grid")
    s.add_argument("--generator", default="los_angeles", help="fixture name(s), 'all', or a generator CSV path")
    s.add_argument("--magnitudes", type=parse_magnitudes, default=[0.1, 0.2, 0.3, 0.4, 0.5], help="percent, e.g. 10,50")
    s.add_argument("--counts", type=parse_int_list, default=list(range(1, 11)), help="e.g. 1..10")
    s.add_argument("--reps", type=int, default=200)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--threshold", type=float, default=2.0)
    s.add_argument("--critical-value", type=float, default=3.0)
    s.add_argument("--methods", default="all", help="comma-separated subset of arima,kalman,wavelet,ao")
    s.add_argument("--length", type=int, default=96)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fixtures", help="list the built-in generators")
    f.set_defaults(func=cmd_fixtures)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
