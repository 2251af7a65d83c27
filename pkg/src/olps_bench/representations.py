"""Observation builders: four market-state tensors for a date and asset set.

Layout is asset-major: each row concatenates per-asset channel blocks, e.g.
``[a0.open, a0.high, ..., a0.volume, a1.open, ...]`` for the price kinds and
eight indicator slots per asset for the ``indicators`` kind.

* ``markovian``   - today's normalized OHLCV, shape (N*5,)
* ``sliding``     - trailing window of normalized OHLCV, shape (window, N*5)
* ``lagged``      - sparse lag set of normalized OHLCV, shape (len(offsets), N*5)
* ``indicators``  - technical features from raw OHLCV, shape (N*8,)
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date

import numpy as np

from .errors import DataError, InsufficientHistoryError
from .market_data import CLOSE, HIGH, LOW, AssetSet, MarketData, NormalizedSeries

KINDS = ("markovian", "sliding", "lagged", "indicators")

#: Per-asset indicator slots, in storage order.
INDICATOR_FEATURES = ("change", "macd", "bb_upper", "bb_lower", "rsi", "cci", "dx", "sma30_ratio")

DEFAULT_LAG_OFFSETS = (1, 2, 3, 4, 5, 10, 15, 20)


@dataclass(frozen=True, eq=False)
class Observation:
    """A finite state tensor for one decision date; buffer is values.ravel()."""

    kind: str
    date: date
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if not np.isfinite(values).all():
            raise DataError(f"{self.kind} observation at {self.date} contains non-finite values")
        values.flags.writeable = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


@dataclass(frozen=True)
class RepresentationSpec:
    """Which observation to build and with what window/lag/warm-up parameters."""

    kind: str = "markovian"
    window: int = 21
    lag_offsets: tuple[int, ...] = DEFAULT_LAG_OFFSETS
    warmup_bars: int = 35

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown representation kind {self.kind!r}")
        if self.window < 1 or self.warmup_bars < 30 or not self.lag_offsets:
            raise DataError("representation parameters out of range")
        if min(self.lag_offsets) < 1:
            raise DataError("lag offsets must be >= 1")

    @property
    def lookback(self) -> int:
        """Trading days of history required before the decision date."""
        if self.kind == "markovian":
            return 1
        if self.kind == "sliding":
            return self.window
        if self.kind == "lagged":
            return max(self.lag_offsets) + 1
        return self.warmup_bars - 1

    def observation_length(self, n_assets: int) -> int:
        length = 1
        for dim in self.value_shape(n_assets):
            length *= dim
        return length

    def value_shape(self, n_assets: int) -> tuple[int, ...]:
        if self.kind == "markovian":
            return (n_assets * 5,)
        if self.kind == "sliding":
            return (self.window, n_assets * 5)
        if self.kind == "lagged":
            return (len(self.lag_offsets), n_assets * 5)
        return (n_assets * len(INDICATOR_FEATURES),)


def asset_count(observation: Observation) -> int:
    """Number of assets encoded in an observation, from its kind and shape."""
    if observation.kind == "indicators":
        return observation.values.size // len(INDICATOR_FEATURES)
    if observation.kind == "markovian":
        return observation.values.size // 5
    return observation.values.shape[1] // 5


def build(
    spec: RepresentationSpec,
    data: MarketData,
    norm: NormalizedSeries,
    t: date,
    assets: AssetSet,
) -> Observation:
    if spec.kind == "markovian":
        return build_markovian(norm, t, assets)
    if spec.kind == "sliding":
        return build_sliding(norm, t, assets, window=spec.window)
    if spec.kind == "lagged":
        return build_lagged(norm, t, assets, offsets=spec.lag_offsets)
    return build_indicators(data, t, assets, warmup=spec.warmup_bars)


def _normalized_rows(
    norm: NormalizedSeries, t: date, assets: AssetSet, offsets: list[int]
) -> np.ndarray:
    """Rows of normalized values at t-offset for each offset; (rows, N, 5)."""
    idx = norm.date_index(t)
    cols = [norm.asset_index(a) for a in assets.members]
    rows = np.empty((len(offsets), len(cols), 5))
    for r, off in enumerate(offsets):
        if idx - off < 0:
            raise InsufficientHistoryError(
                f"need {off} days before {t.isoformat()}, calendar starts too late"
            )
        rows[r] = norm.values[idx - off][cols]
    bad = ~np.isfinite(rows).all(axis=(0, 2))
    if bad.any():
        asset = assets.members[int(np.flatnonzero(bad)[0])]
        raise InsufficientHistoryError(
            f"asset {asset} lacks normalized history for an observation at {t.isoformat()}"
        )
    return rows


def build_markovian(norm: NormalizedSeries, t: date, assets: AssetSet) -> Observation:
    """Today's normalized OHLCV per asset, flattened to (N*5,)."""
    rows = _normalized_rows(norm, t, assets, [0])
    return Observation(kind="markovian", date=t, values=rows[0].reshape(-1))


def build_sliding(
    norm: NormalizedSeries, t: date, assets: AssetSet, window: int = 21
) -> Observation:
    """Trailing month of normalized OHLCV, rows oldest to newest, (window, N*5)."""
    offsets = list(range(window - 1, -1, -1))
    rows = _normalized_rows(norm, t, assets, offsets)
    return Observation(kind="sliding", date=t, values=rows.reshape(window, -1))


def build_lagged(
    norm: NormalizedSeries,
    t: date,
    assets: AssetSet,
    offsets: tuple[int, ...] = DEFAULT_LAG_OFFSETS,
) -> Observation:
    """Sparse lag set of normalized OHLCV, deepest lag first, (len(offsets), N*5)."""
    ordered = sorted(offsets, reverse=True)
    rows = _normalized_rows(norm, t, assets, ordered)
    return Observation(kind="lagged", date=t, values=rows.reshape(len(ordered), -1))


# -- technical indicators -------------------------------------------------------
#
# All features are pure functions of the trailing ``warmup`` raw bars ending at
# the decision date; path-dependent smoothers (EMA, Wilder) are seeded inside
# that window so the output never depends on earlier data.


def build_indicators(
    data: MarketData, t: date, assets: AssetSet, warmup: int = 35
) -> Observation:
    """Per-asset technical features from raw OHLCV, shape (N*8,).

    Slot order per asset: change, MACD/close, Bollinger upper and lower as
    fractional distance from close, RSI, CCI, DX, close/SMA30 - 1.
    """
    idx = data.date_index(t)
    if idx - warmup + 1 < 0:
        raise InsufficientHistoryError(
            f"need {warmup} raw bars up to {t.isoformat()}, calendar starts too late"
        )
    feats = np.empty((len(assets), len(INDICATOR_FEATURES)))
    for i, asset in enumerate(assets.members):
        j = data.asset_index(asset)
        window = data.values[idx - warmup + 1 : idx + 1, j, :]
        if not np.isfinite(window).all():
            raise InsufficientHistoryError(
                f"asset {asset} lacks {warmup} raw bars at {t.isoformat()}"
            )
        feats[i] = asset_indicators(window)
    return Observation(kind="indicators", date=t, values=feats.reshape(-1))


def asset_indicators(window: np.ndarray) -> np.ndarray:
    """The eight indicator features for one asset's (warmup, 5) bar window."""
    high, low, close = window[:, HIGH], window[:, LOW], window[:, CLOSE]
    last = close[-1]
    change = last / close[-2] - 1.0
    macd = (ema(close, 12) - ema(close, 26)) / last
    sma20 = close[-20:].mean()
    sigma20 = close[-20:].std()
    bb_upper = (sma20 + 2.0 * sigma20) / last - 1.0
    bb_lower = (sma20 - 2.0 * sigma20) / last - 1.0
    return np.array(
        [
            change,
            macd,
            bb_upper,
            bb_lower,
            rsi(close, 14),
            cci(high, low, close, 20),
            dx(high, low, close, 14),
            last / close[-30:].mean() - 1.0,
        ]
    )


def ema(values: np.ndarray, n: int) -> float:
    """Exponential moving average, alpha = 2/(n+1), seeded with the first-n SMA."""
    if len(values) < n:
        raise InsufficientHistoryError(f"EMA{n} needs {n} values, got {len(values)}")
    alpha = 2.0 / (n + 1.0)
    out = float(values[:n].mean())
    for x in values[n:]:
        out = alpha * float(x) + (1.0 - alpha) * out
    return out


def rsi(close: np.ndarray, n: int = 14) -> float:
    """Relative strength index with Wilder smoothing; 100 with no losses, 50 flat."""
    deltas = np.diff(close)
    if len(deltas) < n:
        raise InsufficientHistoryError(f"RSI{n} needs {n + 1} closes, got {len(close)}")
    gains = np.clip(deltas, 0.0, None)
    losses = np.clip(-deltas, 0.0, None)
    avg_gain = float(gains[:n].mean())
    avg_loss = float(losses[:n].mean())
    for g, l in zip(gains[n:], losses[n:]):
        avg_gain = (avg_gain * (n - 1) + float(g)) / n
        avg_loss = (avg_loss * (n - 1) + float(l)) / n
    if avg_loss == 0.0 and avg_gain == 0.0:
        return 50.0
    if avg_loss == 0.0:
        return 100.0
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)


def cci(high: np.ndarray, low: np.ndarray, close: np.ndarray, n: int = 20) -> float:
    """Commodity channel index over typical price; 0 when the window is flat."""
    tp = (high[-n:] + low[-n:] + close[-n:]) / 3.0
    sma = tp.mean()
    mad = np.abs(tp - sma).mean()
    denom = 0.015 * mad
    if denom == 0.0:
        return 0.0
    return float((tp[-1] - sma) / denom)


def dx(high: np.ndarray, low: np.ndarray, close: np.ndarray, n: int = 14) -> float:
    """Directional index, 100*|+DI - -DI|/(+DI + -DI); 0 when both DI are 0."""
    up = high[1:] - high[:-1]
    down = low[:-1] - low[1:]
    if len(up) < n:
        raise InsufficientHistoryError(f"DX{n} needs {n + 1} bars, got {len(high)}")
    plus_dm = np.where((up > down) & (up > 0), up, 0.0)
    minus_dm = np.where((down > up) & (down > 0), down, 0.0)
    prev_close = close[:-1]
    tr = np.maximum(
        high[1:] - low[1:],
        np.maximum(np.abs(high[1:] - prev_close), np.abs(low[1:] - prev_close)),
    )
    s_plus = float(plus_dm[:n].sum())
    s_minus = float(minus_dm[:n].sum())
    s_tr = float(tr[:n].sum())
    for p, m, r in zip(plus_dm[n:], minus_dm[n:], tr[n:]):
        s_plus += float(p) - s_plus / n
        s_minus += float(m) - s_minus / n
        s_tr += float(r) - s_tr / n
    if s_tr == 0.0:
        return 0.0
    plus_di = 100.0 * s_plus / s_tr
    minus_di = 100.0 * s_minus / s_tr
    if plus_di + minus_di == 0.0:
        return 0.0
    return 100.0 * abs(plus_di - minus_di) / (plus_di + minus_di)
