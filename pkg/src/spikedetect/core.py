"""Shared domain types, spike bookkeeping and confusion-matrix metrics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class InputError(ValueError):
    """Raised when caller-supplied data violates a precondition."""


class UndefinedMetricError(ArithmeticError):
    """Raised when a rate has a zero denominator."""


@dataclass(frozen=True)
class YearMonth:
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise InputError(f"month out of range: {self.month}")

    @classmethod
    def parse(cls, text: str) -> "YearMonth":
        try:
            y, m = text.strip().split("-")
            return cls(int(y), int(m))
        except (ValueError, AttributeError):
            raise InputError(f"expected YYYY-MM, got {text!r}") from None

    def ordinal(self) -> int:
        return self.year * 12 + (self.month - 1)

    @classmethod
    def from_ordinal(cls, k: int) -> "YearMonth":
        return cls(k // 12, k % 12 + 1)

    def __add__(self, months: int) -> "YearMonth":
        return YearMonth.from_ordinal(self.ordinal() + int(months))

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


@dataclass(frozen=True)
class TimeSeries:
    """Equally spaced observations anchored at a calendar month.

    Index ``i`` corresponds to ``origin + i`` months; there are no gaps.
    """

    values: np.ndarray
    origin: YearMonth = YearMonth(2005, 1)
    period_label: str = "monthly"

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size < 1:
            raise InputError("series must contain at least one observation")
        if not np.all(np.isfinite(v)):
            raise InputError("series values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def label(self, i: int) -> str:
        return str(self.origin + i)

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(values, self.origin, self.period_label)


def as_series(x) -> TimeSeries:
    if isinstance(x, TimeSeries):
        return x
    return TimeSeries(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SpikeSet:
    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(i < 0 for i in idx):
            raise InputError("spike indices must be non-negative")
        if len(set(idx)) != len(idx):
            raise InputError("duplicate spike indices")
        object.__setattr__(self, "indices", tuple(sorted(idx)))

    @classmethod
    def from_mask(cls, mask) -> "SpikeSet":
        return cls(tuple(np.flatnonzero(np.asarray(mask, dtype=bool))))

    def check_bounds(self, n: int) -> None:
        if self.indices and self.indices[-1] >= n:
            raise InputError(f"spike index {self.indices[-1]} out of range for length {n}")

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i) -> bool:
        return int(i) in set(self.indices)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


class Method(str, enum.Enum):
    ARIMA = "arima"
    KALMAN = "kalman"
    WAVELET = "wavelet"
    AO = "ao"


@dataclass(frozen=True)
class DetectionResult:
    """Output of a single detector run.

    For the three residual-threshold detectors every flagged index satisfies
    ``residuals[i] > threshold_value``. The additive-outlier detector stores
    its test statistics in ``residuals`` and its critical value in
    ``threshold_value``.
    """

    method: Method
    spikes: SpikeSet
    fitted: np.ndarray
    residuals: np.ndarray
    threshold_value: float
    info: dict = field(default_factory=dict, compare=False)

    def rethreshold(self, k_sd: float) -> "DetectionResult":
        """Re-apply the ``k_sd * SD(residuals)`` rule to the stored residuals."""
        if self.method is Method.AO:
            raise InputError("the additive-outlier detector has no residual threshold")
        cut = threshold_cutoff(self.residuals, k_sd, self.info.get("atol", RESIDUAL_ATOL))
        return DetectionResult(
            self.method,
            SpikeSet.from_mask(self.residuals > cut),
            self.fitted,
            self.residuals,
            cut,
            dict(self.info, k_sd=k_sd),
        )


# residual spreads below this are treated as exact fits (no spikes)
RESIDUAL_ATOL = 1e-9


def threshold_cutoff(residuals: np.ndarray, k_sd: float, atol: float = RESIDUAL_ATOL) -> float:
    if math.isinf(k_sd) or residuals.size < 2:
        return math.inf
    return max(float(k_sd * np.std(residuals, ddof=1)), atol)


def threshold_result(method: Method, residuals, fitted, k_sd: float, atol: float = RESIDUAL_ATOL, **info) -> DetectionResult:
    residuals = np.asarray(residuals, dtype=float)
    cut = threshold_cutoff(residuals, k_sd, atol)
    return DetectionResult(
        method,
        SpikeSet.from_mask(residuals > cut),
        np.asarray(fitted, dtype=float),
        residuals,
        cut,
        dict(info, k_sd=k_sd, atol=atol),
    )


def _as_spikes(s) -> SpikeSet:
    return s if isinstance(s, SpikeSet) else SpikeSet(tuple(s))


def score(inserted: SpikeSet | Iterable[int], detected: SpikeSet | Iterable[int], n: int) -> ConfusionCounts:
    """Exact-index confusion counts for one replicate."""
    inserted, detected = _as_spikes(inserted), _as_spikes(detected)
    inserted.check_bounds(n)
    detected.check_bounds(n)
    a, b = set(inserted.indices), set(detected.indices)
    tp = len(a & b)
    fp = len(b - a)
    fn = len(a - b)
    return ConfusionCounts(tp=tp, fp=fp, tn=n - tp - fp - fn, fn=fn)


def sensitivity(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("sensitivity undefined: no inserted spikes")
    return c.tp / (c.tp + c.fn)


def specificity(c: ConfusionCounts) -> float:
    if c.tn + c.fp == 0:
        raise UndefinedMetricError("specificity undefined: no non-spike points")
    return c.tn / (c.tn + c.fp)


def robust_scale(x: Sequence[float]) -> float:
    """MAD about the median divided by 0.6745."""
    x = np.asarray(x, dtype=float)
    return float(np.median(np.abs(x - np.median(x))) / 0.6745)
