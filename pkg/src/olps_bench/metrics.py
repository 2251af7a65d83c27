"""Performance and robustness metrics over portfolio value series.

Conventions, fixed for reproducibility:

* population standard deviation everywhere (ddof = 0);
* division-by-zero cases return explicit sentinels (``math.inf`` /
  ``-math.inf`` / ``UNDEFINED``), never silently propagated NaN;
* CVaR is the empirical tail mean over the worst ``ceil(alpha * n)``
  observations, in the same units as its input series.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .errors import MetricError

#: Explicit sentinel for metrics whose defining quotient is 0/0 or otherwise
#: undefined.  Excluded from interseed aggregation.
UNDEFINED = math.nan

METRIC_NAMES = ("ror", "sortino", "mdd", "cvar", "ir", "ir_trend", "ir_quotient")


def is_sentinel(x: float) -> bool:
    """True for the infinity / UNDEFINED sentinels emitted at division edges."""
    return not math.isfinite(x)


@dataclass(frozen=True, eq=False)
class ValueSeries:
    """Dated portfolio values in currency units; positive, strictly increasing dates."""

    dates: tuple[date, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or len(values) != len(self.dates):
            raise MetricError("values must be one per date")
        if len(values) == 0:
            raise MetricError("value series is empty")
        if not np.isfinite(values).all() or (values <= 0).any():
            raise MetricError("portfolio values must be positive and finite")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise MetricError("dates must be strictly increasing")
        values.flags.writeable = False

    def __len__(self) -> int:
        return len(self.values)

    def to_csv_text(self) -> str:
        lines = ["date,value"]
        lines += [f"{d.isoformat()},{float(v)!r}" for d, v in zip(self.dates, self.values)]
        return "\n".join(lines) + "\n"

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def load_csv(cls, path) -> "ValueSeries":
        dates: list[date] = []
        values: list[float] = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "date,value":
                raise MetricError(f"unexpected value-series header {header!r} in {path}")
            for line in fh:
                if not line.strip():
                    continue
                raw_date, raw_value = line.strip().split(",")
                dates.append(date.fromisoformat(raw_date))
                values.append(float(raw_value))
        return cls(dates=tuple(dates), values=np.asarray(values))


def portfolio_returns(series: ValueSeries | np.ndarray, n: int = 1) -> np.ndarray:
    """Value change over an n-day comparison period, V_t - V_{t-n}, in currency."""
    v = series.values if isinstance(series, ValueSeries) else np.asarray(series, dtype=np.float64)
    if not 1 <= n <= len(v) - 1:
        raise MetricError(f"comparison period n={n} outside 1..{len(v) - 1}")
    return v[n:] - v[:-n]


def rate_of_return(series: ValueSeries | np.ndarray, n: int = 1) -> np.ndarray:
    """Fractional return over an n-day period, independent of the initial funds."""
    v = series.values if isinstance(series, ValueSeries) else np.asarray(series, dtype=np.float64)
    if not 1 <= n <= len(v) - 1:
        raise MetricError(f"comparison period n={n} outside 1..{len(v) - 1}")
    return (v[n:] - v[:-n]) / v[:-n]


def sortino(
    daily_pr: np.ndarray,
    rfr: float = 0.0,
    threshold: float = 0.0,
    annualization_days: int | None = None,
) -> float:
    """Mean excess return over downside deviation.

    The downside deviation sums squared excess returns strictly below
    ``threshold`` but divides by the total observation count.  With no
    downside observations the ratio is the +inf sentinel.  When
    ``annualization_days`` is given the mean scales by it and the deviation
    by its square root.
    """
    x = np.asarray(daily_pr, dtype=np.float64)
    if x.size == 0:
        raise MetricError("sortino needs a non-empty series")
    excess = x - rfr
    mean = float(excess.mean())
    downside = excess[excess < threshold]
    sigma_d = math.sqrt(float((downside**2).sum()) / x.size)
    if annualization_days:
        mean *= annualization_days
        sigma_d *= math.sqrt(annualization_days)
    if sigma_d == 0.0:
        return math.inf
    return mean / sigma_d


def max_drawdown(series: ValueSeries | np.ndarray) -> float:
    """Largest peak-to-trough fractional loss; <= 0, and 0 iff never declining."""
    v = series.values if isinstance(series, ValueSeries) else np.asarray(series, dtype=np.float64)
    if v.size == 0:
        raise MetricError("max_drawdown needs a non-empty series")
    peaks = np.maximum.accumulate(v)
    return float(((v - peaks) / peaks).min())


def cvar(daily_pr: np.ndarray, alpha: float = 0.05) -> float:
    """Expected value over the worst ceil(alpha * n) observations (tail mean)."""
    x = np.asarray(daily_pr, dtype=np.float64)
    if x.size == 0:
        raise MetricError("cvar needs a non-empty series")
    if not 0 < alpha < 1:
        raise MetricError("alpha must lie in (0, 1)")
    if x.size * alpha < 1:
        warnings.warn(
            f"series of {x.size} observations is short for alpha={alpha}; "
            "tail holds a single point",
            stacklevel=2,
        )
    k = max(1, math.ceil(alpha * x.size))
    tail = np.partition(x, k - 1)[:k]
    return float(tail.mean())


def information_ratio(pr: np.ndarray, index_pr: np.ndarray) -> float:
    """Mean active return over its population std versus an index.

    Zero std with nonzero mean yields a signed infinity sentinel; the 0/0
    case (identical series) is defined as 0.
    """
    a = np.asarray(pr, dtype=np.float64)
    b = np.asarray(index_pr, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError("pr and index_pr must be aligned 1-D series")
    if a.size == 0:
        raise MetricError("information_ratio needs non-empty series")
    active = a - b
    mean = float(active.mean())
    std = float(active.std())
    if std == 0.0:
        if mean == 0.0:
            return 0.0
        return math.copysign(math.inf, mean)
    return mean / std


def ir_quotient(ir_backtest: float, ir_validation: float) -> float:
    """Backtest IR over validation IR; UNDEFINED sentinel when the base is 0."""
    if ir_validation == 0.0:
        return UNDEFINED
    return ir_backtest / ir_validation


def monthly_information_ratios(
    pr: np.ndarray, index_pr: np.ndarray, days_per_month: int = 21
) -> np.ndarray:
    """IR over consecutive trading-day blocks; a trailing partial block is dropped."""
    a = np.asarray(pr, dtype=np.float64)
    b = np.asarray(index_pr, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError("pr and index_pr must be aligned")
    months = len(a) // days_per_month
    if months == 0:
        raise MetricError(f"need at least {days_per_month} observations for one month")
    return np.array(
        [
            information_ratio(
                a[m * days_per_month : (m + 1) * days_per_month],
                b[m * days_per_month : (m + 1) * days_per_month],
            )
            for m in range(months)
        ]
    )


def ir_trend(monthly_irs: np.ndarray) -> float:
    """Least-squares slope of monthly IRs against the month index 0..T-1.

    Months whose IR is itself a sentinel make the slope UNDEFINED.
    """
    y = np.asarray(monthly_irs, dtype=np.float64)
    if y.ndim != 1 or y.size < 2:
        raise MetricError("ir_trend needs at least two monthly IR values")
    if not np.isfinite(y).all():
        return UNDEFINED
    t = np.arange(y.size, dtype=np.float64)
    t_centered = t - t.mean()
    return float((t_centered * (y - y.mean())).sum() / (t_centered**2).sum())


# -- interseed aggregation -----------------------------------------------------


@dataclass(frozen=True)
class MetricAggregate:
    """Mean/std across seeds for one metric, sentinels excluded."""

    mean: float
    std: float
    raw: tuple[float, ...]
    excluded: int

    def __post_init__(self):
        if math.isfinite(self.std) and self.std < 0:
            raise MetricError("std must be non-negative")


@dataclass(frozen=True)
class MetricReport:
    """Per-metric interseed aggregates plus the raw per-seed values."""

    seed_count: int
    metrics: dict[str, MetricAggregate] = field(default_factory=dict)

    def __getattr__(self, name: str) -> MetricAggregate:
        try:
            return self.metrics[name]
        except KeyError:
            raise AttributeError(name) from None


def aggregate_seeds(per_seed_metrics: list[dict[str, float]]) -> MetricReport:
    """Population mean/std per metric across seeds; sentinel values are excluded
    from the moments but counted, and kept in the raw tuple."""
    if not per_seed_metrics:
        raise MetricError("no per-seed metrics to aggregate")
    names = list(per_seed_metrics[0])
    for m in per_seed_metrics[1:]:
        if list(m) != names:
            raise MetricError("per-seed metric dictionaries disagree on keys")
    out: dict[str, MetricAggregate] = {}
    for name in names:
        raw = tuple(float(m[name]) for m in per_seed_metrics)
        finite = [x for x in raw if not is_sentinel(x)]
        excluded = len(raw) - len(finite)
        if finite:
            arr = np.asarray(finite)
            mean, std = float(arr.mean()), float(arr.std())
        else:
            mean, std = UNDEFINED, UNDEFINED
        out[name] = MetricAggregate(mean=mean, std=std, raw=raw, excluded=excluded)
    return MetricReport(seed_count=len(per_seed_metrics), metrics=out)
