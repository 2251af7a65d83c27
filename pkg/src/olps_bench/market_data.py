"""Daily OHLCV market data: loading, validation, normalization, splitting, synthesis.

All series live on a shared trading calendar (the union of per-asset dates).
Per-asset values are stored in a dense ``(days, assets, 5)`` float array with
NaN rows before an asset's listing date; after listing, coverage must be a
contiguous suffix of the calendar.  Channel order is fixed:
``open, high, low, close, volume``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .errors import DataError, SplitError, UniverseError

CHANNELS = ("open", "high", "low", "close", "volume")
OPEN, HIGH, LOW, CLOSE, VOLUME = range(5)

DEFAULT_COLUMNS = {name: name for name in ("date",) + CHANNELS}


@dataclass(frozen=True)
class LoadIssue:
    """A row or asset rejected during loading."""

    asset: str
    reason: str
    day: date | None = None
    level: str = "asset"  # "asset" dropped entirely, "row" dropped one bar

    def __str__(self) -> str:
        where = f" on {self.day.isoformat()}" if self.day is not None else ""
        return f"{self.level} rejected: {self.asset}{where}: {self.reason}"


@dataclass(frozen=True, eq=False)
class MarketData:
    """Immutable per-asset daily OHLCV series on a unified trading calendar."""

    assets: tuple[str, ...]
    calendar: tuple[date, ...]
    values: np.ndarray  # (days, assets, 5), NaN before listing
    sectors: dict[str, str] = field(default_factory=dict)
    rejections: tuple[LoadIssue, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.calendar), len(self.assets), 5):
            raise DataError(
                f"values shape {values.shape} does not match "
                f"({len(self.calendar)}, {len(self.assets)}, 5)"
            )
        if len(set(self.assets)) != len(self.assets):
            raise DataError("duplicate asset identifiers")
        if any(b <= a for a, b in zip(self.calendar, self.calendar[1:])):
            raise DataError("calendar dates must be strictly increasing")

        first = _first_defined_indices(values)
        object.__setattr__(self, "_first_indices", first)
        object.__setattr__(self, "_date_index", {d: i for i, d in enumerate(self.calendar)})
        object.__setattr__(self, "_asset_index", {a: i for i, a in enumerate(self.assets)})
        _validate_bars(self.assets, self.calendar, values, first)
        values.flags.writeable = False

    # -- lookups ------------------------------------------------------------

    def date_index(self, day: date) -> int:
        try:
            return self._date_index[day]
        except KeyError:
            raise DataError(f"{day.isoformat()} is not a trading date in the calendar") from None

    def asset_index(self, asset: str) -> int:
        try:
            return self._asset_index[asset]
        except KeyError:
            raise DataError(f"unknown asset {asset!r}") from None

    def first_index(self, asset: str) -> int:
        return int(self._first_indices[self.asset_index(asset)])

    @property
    def listing_start(self) -> dict[str, date]:
        return {a: self.calendar[self.first_index(a)] for a in self.assets}

    def closes(self, assets: tuple[str, ...] | list[str]) -> np.ndarray:
        """(days, len(assets)) close-price matrix for the given assets."""
        cols = [self.asset_index(a) for a in assets]
        return self.values[:, cols, CLOSE]


def _first_defined_indices(values: np.ndarray) -> np.ndarray:
    defined = np.isfinite(values).all(axis=2)  # (days, assets)
    first = np.full(values.shape[1], -1, dtype=np.int64)
    for j in range(values.shape[1]):
        idx = np.flatnonzero(defined[:, j])
        if idx.size == 0:
            raise DataError(f"asset column {j} has no data")
        first[j] = idx[0]
    return first


def _validate_bars(assets, calendar, values, first) -> None:
    defined = np.isfinite(values).all(axis=2)
    mixed = np.isfinite(values).any(axis=2) & ~defined
    for j, asset in enumerate(assets):
        if mixed[:, j].any():
            day = calendar[int(np.flatnonzero(mixed[:, j])[0])]
            raise DataError(f"asset {asset} on {day.isoformat()}: partially defined bar")
        if not defined[first[j]:, j].all():
            gap = first[j] + int(np.flatnonzero(~defined[first[j]:, j])[0])
            raise DataError(
                f"asset {asset} has a gap on {calendar[gap].isoformat()} "
                "(series must cover a contiguous suffix of the calendar)"
            )
        rows = values[first[j]:, j, :]
        if not (rows[:, :VOLUME] > 0).all():
            raise DataError(f"asset {asset}: non-positive price")
        if not (rows[:, VOLUME] >= 0).all():
            raise DataError(f"asset {asset}: negative volume")
        body_low = np.minimum(rows[:, OPEN], rows[:, CLOSE])
        body_high = np.maximum(rows[:, OPEN], rows[:, CLOSE])
        if not ((rows[:, LOW] <= body_low + 1e-12) & (rows[:, HIGH] >= body_high - 1e-12)).all():
            raise DataError(f"asset {asset}: low/high bounds violate open/close range")


@dataclass(frozen=True, eq=False)
class NormalizedSeries:
    """Channel-wise one-step relative changes, x_t = p_t / p_{t-1} - 1.

    Defined from each asset's second listed day onward; NaN elsewhere.  The
    volume channel uses the same ratio with zero previous volume mapping to 0.
    """

    assets: tuple[str, ...]
    calendar: tuple[date, ...]
    values: np.ndarray  # (days, assets, 5)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_date_index", {d: i for i, d in enumerate(self.calendar)})
        object.__setattr__(self, "_asset_index", {a: i for i, a in enumerate(self.assets)})
        # NaN marks "undefined" (day 0 / pre-listing); inf would be a real defect.
        if np.isinf(values).any():
            raise DataError("normalized series contains non-finite values")
        values.flags.writeable = False

    def date_index(self, day: date) -> int:
        try:
            return self._date_index[day]
        except KeyError:
            raise DataError(f"{day.isoformat()} is not a trading date in the calendar") from None

    def asset_index(self, asset: str) -> int:
        try:
            return self._asset_index[asset]
        except KeyError:
            raise DataError(f"unknown asset {asset!r}") from None


def normalize(data: MarketData) -> NormalizedSeries:
    """One-step relative change per channel; volume with zero-previous maps to 0."""
    v = data.values
    out = np.full_like(v, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        out[1:] = v[1:] / v[:-1] - 1.0
    # Zero previous volume would divide to inf/nan; the bar itself is defined,
    # so pin the volume change to 0 there.
    prev_defined = np.isfinite(v[:-1]).all(axis=2)
    cur_defined = np.isfinite(v[1:]).all(axis=2)
    both = prev_defined & cur_defined
    vol_prev_zero = both & (v[:-1, :, VOLUME] == 0.0)
    out[1:, :, VOLUME] = np.where(vol_prev_zero, 0.0, out[1:, :, VOLUME])
    out[1:][~both] = np.nan
    return NormalizedSeries(assets=data.assets, calendar=data.calendar, values=out)


# -- universe sampling -------------------------------------------------------


@dataclass(frozen=True)
class AssetSet:
    """A fixed selection of assets, valid as of a given date."""

    members: tuple[str, ...]
    as_of: date

    def __post_init__(self):
        if len(set(self.members)) != len(self.members):
            raise DataError("asset set contains duplicates")

    def __len__(self) -> int:
        return len(self.members)


def eligible_assets(data: MarketData, as_of: date, lookback: int) -> tuple[str, ...]:
    """Assets listed early enough to supply ``lookback`` trading days before as_of."""
    idx = data.date_index(as_of)
    return tuple(
        a for a in sorted(data.assets) if data.first_index(a) <= idx - lookback
    )


def sample_universe(
    data: MarketData,
    n: int = 20,
    *,
    as_of: date,
    lookback: int,
    rng: np.random.Generator,
) -> AssetSet:
    """Uniformly sample ``n`` eligible assets without replacement.

    Deterministic for a fixed generator state; members returned sorted.
    """
    pool = eligible_assets(data, as_of, lookback)
    if len(pool) < n:
        raise UniverseError(
            f"only {len(pool)} assets eligible at {as_of.isoformat()} "
            f"with {lookback}-day lookback, need {n} (short by {n - len(pool)})"
        )
    members = rng.choice(len(pool), size=n, replace=False)
    return AssetSet(members=tuple(sorted(pool[i] for i in members)), as_of=as_of)


# -- episode splitting -------------------------------------------------------


@dataclass(frozen=True)
class EpisodeWindow:
    """A contiguous span of trading days starting at a calendar position."""

    start: date
    start_index: int
    length: int

    @property
    def end_index(self) -> int:
        return self.start_index + self.length


@dataclass(frozen=True)
class SplitPlan:
    """Non-overlapping training/validation episode windows with leak guards.

    Validation windows, widened by ``guard_gap`` days on both sides, never
    intersect a training window, so neither side's representation lookback can
    read the other side's dates.
    """

    training_episodes: tuple[EpisodeWindow, ...]
    validation_episodes: tuple[EpisodeWindow, ...]
    guard_gap: int

    def __post_init__(self):
        vals = sorted(self.validation_episodes, key=lambda w: w.start_index)
        for a, b in zip(vals, vals[1:]):
            if a.end_index > b.start_index:
                raise SplitError("validation windows overlap")
        for v in self.validation_episodes:
            lo, hi = v.start_index - self.guard_gap, v.end_index + self.guard_gap
            for t in self.training_episodes:
                if t.start_index < hi and lo < t.end_index:
                    raise SplitError(
                        f"training window at {t.start.isoformat()} intersects the "
                        f"guarded validation window at {v.start.isoformat()}"
                    )


def split_periods(
    calendar: tuple[date, ...],
    *,
    episode_length: int = 60,
    validation_count: int,
    lookback: int,
    rng: np.random.Generator,
) -> SplitPlan:
    """Partition the calendar into episode slots and pick validation slots at random.

    Slots start after ``lookback`` days of reserved history.  Training slots
    adjacent to a validation slot are dropped when they fall inside the guard
    band, so validation data can never leak into training observations.
    """
    total = len(calendar)
    n_slots = max(0, (total - lookback)) // episode_length
    if validation_count > n_slots:
        raise SplitError(
            f"cannot place {validation_count} validation windows of {episode_length} days "
            f"on a {total}-day calendar with {lookback}-day lookback "
            f"(maximum feasible: {n_slots})",
            max_feasible=n_slots,
        )
    if validation_count < 0:
        raise SplitError("validation_count must be non-negative")

    starts = [lookback + k * episode_length for k in range(n_slots)]
    val_slots = set()
    if validation_count:
        chosen = rng.choice(n_slots, size=validation_count, replace=False)
        val_slots = {int(k) for k in chosen}

    def window(k: int) -> EpisodeWindow:
        s = starts[k]
        return EpisodeWindow(start=calendar[s], start_index=s, length=episode_length)

    validation = tuple(window(k) for k in sorted(val_slots))
    training = []
    for k in range(n_slots):
        if k in val_slots:
            continue
        s = starts[k]
        blocked = any(
            s < v.end_index + lookback and v.start_index - lookback < s + episode_length
            for v in validation
        )
        if not blocked:
            training.append(window(k))
    return SplitPlan(
        training_episodes=tuple(training),
        validation_episodes=validation,
        guard_gap=lookback,
    )


# -- CSV / manifest loading --------------------------------------------------


def load_ohlcv(path: str | Path, columns: dict[str, str] | None = None) -> MarketData:
    """Load per-asset CSV files from a directory or a JSON manifest.

    CSV contract: header ``date,open,high,low,close,volume``, ISO-8601 dates,
    one row per trading day, file name (minus ``.csv``) = asset identifier.
    A manifest is a JSON file ``{"assets": [{"id", "file", "sector"?}, ...]}``
    with file paths relative to the manifest.

    Assets with malformed bars (non-positive prices, duplicate dates, gaps on
    the union calendar) are rejected and reported in ``MarketData.rejections``;
    rows with unparseable dates are dropped individually.  A missing path or
    an empty surviving universe is fatal.
    """
    path = Path(path)
    colmap = dict(DEFAULT_COLUMNS)
    if columns:
        colmap.update(columns)

    if path.is_file() and path.suffix == ".json":
        manifest = json.loads(path.read_text())
        entries = [
            (e["id"], path.parent / e["file"], e.get("sector"))
            for e in manifest["assets"]
        ]
    elif path.is_dir():
        entries = [(p.stem, p, None) for p in sorted(path.glob("*.csv"))]
    else:
        raise DataError(f"no such data directory or manifest: {path}")
    if not entries:
        raise DataError(f"no asset files found under {path}")

    issues: list[LoadIssue] = []
    parsed: dict[str, dict[date, tuple[float, ...]]] = {}
    sectors: dict[str, str] = {}
    for asset, file, sector in entries:
        if not file.is_file():
            raise DataError(f"missing file for asset {asset}: {file}")
        rows, row_issues, fatal = _parse_asset_csv(asset, file, colmap)
        issues.extend(row_issues)
        if fatal is not None:
            issues.append(fatal)
            continue
        parsed[asset] = rows
        if sector:
            sectors[asset] = sector

    calendar = tuple(sorted({d for rows in parsed.values() for d in rows}))
    if not calendar:
        raise DataError(f"no valid rows in any asset file under {path}")

    date_pos = {d: i for i, d in enumerate(calendar)}
    kept: list[str] = []
    columns_out: list[np.ndarray] = []
    for asset in sorted(parsed):
        rows = parsed[asset]
        col = np.full((len(calendar), 5), np.nan)
        for d, bar in rows.items():
            col[date_pos[d]] = bar
        issue = _check_asset_column(asset, calendar, col)
        if issue is not None:
            issues.append(issue)
            continue
        kept.append(asset)
        columns_out.append(col)

    if not kept:
        raise DataError(f"all {len(entries)} assets were rejected; see rejection list")
    values = np.stack(columns_out, axis=1)
    return MarketData(
        assets=tuple(kept),
        calendar=calendar,
        values=values,
        sectors={a: s for a, s in sectors.items() if a in kept},
        rejections=tuple(issues),
    )


def _parse_asset_csv(asset, file, colmap):
    rows: dict[date, tuple[float, ...]] = {}
    row_issues: list[LoadIssue] = []
    with open(file, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return rows, row_issues, LoadIssue(asset, "empty file")
        missing = [colmap[c] for c in ("date",) + CHANNELS if colmap[c] not in reader.fieldnames]
        if missing:
            return rows, row_issues, LoadIssue(asset, f"missing columns {missing}")
        for record in reader:
            raw_date = record[colmap["date"]]
            try:
                day = date.fromisoformat(raw_date.strip())
            except ValueError:
                row_issues.append(LoadIssue(asset, f"unparseable date {raw_date!r}", level="row"))
                continue
            try:
                bar = tuple(float(record[colmap[c]]) for c in CHANNELS)
            except (TypeError, ValueError):
                return rows, row_issues, LoadIssue(asset, "non-numeric bar", day)
            if day in rows:
                return rows, row_issues, LoadIssue(asset, "duplicate date", day)
            rows[day] = bar
    if not rows:
        return rows, row_issues, LoadIssue(asset, "no parseable rows")
    return rows, row_issues, None


def _check_asset_column(asset, calendar, col) -> LoadIssue | None:
    defined = np.isfinite(col).all(axis=1)
    first = int(np.argmax(defined))
    gap = np.flatnonzero(~defined[first:])
    if gap.size:
        return LoadIssue(asset, "gap in series on the union calendar", calendar[first + int(gap[0])])
    rows = col[first:]
    bad_price = np.flatnonzero((rows[:, :VOLUME] <= 0).any(axis=1))
    if bad_price.size:
        return LoadIssue(asset, "non-positive price", calendar[first + int(bad_price[0])])
    bad_vol = np.flatnonzero(rows[:, VOLUME] < 0)
    if bad_vol.size:
        return LoadIssue(asset, "negative volume", calendar[first + int(bad_vol[0])])
    body_low = np.minimum(rows[:, OPEN], rows[:, CLOSE])
    body_high = np.maximum(rows[:, OPEN], rows[:, CLOSE])
    bad_range = np.flatnonzero((rows[:, LOW] > body_low + 1e-12) | (rows[:, HIGH] < body_high - 1e-12))
    if bad_range.size:
        return LoadIssue(asset, "low/high outside open/close range", calendar[first + int(bad_range[0])])
    return None


def write_ohlcv(data: MarketData, directory: str | Path, *, manifest: bool = True) -> Path:
    """Write per-asset CSVs (+ manifest.json) in the format load_ohlcv reads."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for asset in data.assets:
        j = data.asset_index(asset)
        first = data.first_index(asset)
        with open(directory / f"{asset}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("date",) + CHANNELS)
            for i in range(first, len(data.calendar)):
                bar = data.values[i, j]
                writer.writerow([data.calendar[i].isoformat()] + [repr(float(x)) for x in bar])
    if manifest:
        entries = [
            {"id": a, "file": f"{a}.csv", **({"sector": data.sectors[a]} if a in data.sectors else {})}
            for a in data.assets
        ]
        (directory / "manifest.json").write_text(
            json.dumps({"assets": entries}, indent=2, sort_keys=True) + "\n"
        )
        return directory / "manifest.json"
    return directory


# -- synthetic fixture generation ---------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Geometric-Brownian fixture: per-asset daily log drift/volatility + correlation."""

    assets: tuple[str, ...]
    drift: tuple[float, ...]
    volatility: tuple[float, ...]
    correlation: np.ndarray | None = None  # identity when omitted
    start: date = date(2015, 1, 5)
    initial_price: float = 100.0
    base_volume: float = 1_000_000.0
    listing_delays: tuple[int, ...] | None = None

    @classmethod
    def uniform(
        cls,
        n_assets: int,
        *,
        drift: float = 0.0,
        volatility: float = 0.0,
        correlation: float = 0.0,
        **kwargs,
    ) -> "SyntheticSpec":
        names = tuple(f"SYN{i:03d}" for i in range(n_assets))
        corr = None
        if correlation:
            corr = np.full((n_assets, n_assets), correlation)
            np.fill_diagonal(corr, 1.0)
        return cls(
            assets=names,
            drift=(drift,) * n_assets,
            volatility=(volatility,) * n_assets,
            correlation=corr,
            **kwargs,
        )


def _business_days(start: date, count: int) -> tuple[date, ...]:
    days = []
    d = start
    while len(days) < count:
        if d.weekday() < 5:
            days.append(d)
        d += timedelta(days=1)
    return tuple(days)


def generate_synthetic(spec: SyntheticSpec, days: int, rng: np.random.Generator) -> MarketData:
    """Correlated geometric-Brownian OHLCV fixture.

    With zero volatility, close_t = close_0 * exp(drift * t) exactly, bars are
    body-only (high = max(open, close), low = min), and volume is constant.
    """
    n = len(spec.assets)
    drift = np.asarray(spec.drift, dtype=np.float64)
    vol = np.asarray(spec.volatility, dtype=np.float64)
    if drift.shape != (n,) or vol.shape != (n,):
        raise DataError("drift/volatility length must match asset count")
    if (vol < 0).any():
        raise DataError("volatilities must be non-negative")
    chol = _correlation_root(spec.correlation, n)

    calendar = _business_days(spec.start, days)
    z = rng.standard_normal((days, n)) @ chol.T
    wick_hi = np.abs(rng.standard_normal((days, n)))
    wick_lo = np.abs(rng.standard_normal((days, n)))
    vol_noise = rng.standard_normal((days, n))

    log_close = math.log(spec.initial_price) + np.cumsum(
        np.vstack([np.zeros(n), drift + vol * z[1:]]), axis=0
    )
    close = np.exp(log_close)
    open_ = np.vstack([close[:1], close[:-1]])
    body_hi = np.maximum(open_, close)
    body_lo = np.minimum(open_, close)
    high = body_hi * np.exp(0.5 * vol * wick_hi)
    low = body_lo * np.exp(-0.5 * vol * wick_lo)
    volume = spec.base_volume * np.exp(vol * vol_noise)

    values = np.stack([open_, high, low, close, volume], axis=2)
    if spec.listing_delays is not None:
        if len(spec.listing_delays) != n:
            raise DataError("listing_delays length must match asset count")
        for j, delay in enumerate(spec.listing_delays):
            values[:delay, j, :] = np.nan
    return MarketData(assets=spec.assets, calendar=calendar, values=values)


def _correlation_root(correlation: np.ndarray | None, n: int) -> np.ndarray:
    if correlation is None:
        return np.eye(n)
    corr = np.asarray(correlation, dtype=np.float64)
    if corr.shape != (n, n):
        raise DataError(f"correlation must be {n}x{n}")
    if not np.allclose(corr, corr.T, atol=1e-12):
        raise DataError("correlation matrix must be symmetric")
    eigval, eigvec = np.linalg.eigh(corr)
    if eigval.min() < -1e-8 * max(1.0, eigval.max()):
        raise DataError("correlation matrix is not positive semi-definite")
    return eigvec @ np.diag(np.sqrt(np.clip(eigval, 0.0, None)))
