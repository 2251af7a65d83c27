"""Comparison baselines: the mean-variance index and heuristic agents.

The benchmark index is a long-only mean-variance allocation over the asset
universe (no cash), recomputed on a fixed rebalance cadence from trailing
daily returns, with buy-and-hold drift in between.  Heuristic agents provide
controls and sanity baselines behind the same agent interface as learners.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date

import numpy as np

from .errors import DataError, InsufficientHistoryError, SolverError
from .market_data import AssetSet, MarketData
from .metrics import ValueSeries
from .representations import asset_count

DEFAULT_INDEX_VALUE = 100_000.0


@dataclass(frozen=True)
class MvoConfig:
    lookback: int = 252
    risk_aversion: float = 1.0
    rebalance_period: float = 21  # trading days; math.inf = never rebalance
    ridge: float | None = None  # default 1e-6 * trace / n, set per call

    def __post_init__(self):
        if self.lookback < 2:
            raise SolverError("lookback must be at least 2 days")
        if not self.risk_aversion > 0:
            raise SolverError("risk aversion must be positive")
        if not self.rebalance_period >= 1:
            raise SolverError("rebalance period must be >= 1 day")


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sorting algorithm).

    Ties sort stably, so symmetric inputs resolve by lower index.
    """
    y = np.asarray(y, dtype=np.float64)
    order = np.argsort(-y, kind="stable")
    u = y[order]
    cumulative = np.cumsum(u) - 1.0
    ranks = np.arange(1, y.size + 1)
    support = np.flatnonzero(u - cumulative / ranks > 0)
    rho = int(support[-1]) + 1
    theta = cumulative[rho - 1] / rho
    return np.clip(y - theta, 0.0, None)


def mvo_weights(
    mean: np.ndarray,
    cov: np.ndarray,
    risk_aversion: float = 1.0,
    ridge: float | None = None,
    *,
    tol: float = 1e-8,
    max_iter: int = 200_000,
) -> np.ndarray:
    """Long-only weights maximizing mean'w - risk_aversion * w'cov w on the simplex.

    Solved by accelerated projected gradient ascent from the uniform start,
    stopping when the weight change falls below ``tol``.  Deterministic in its
    inputs; symmetric problems resolve to symmetric weights.
    """
    mu = np.asarray(mean, dtype=np.float64)
    sigma = np.asarray(cov, dtype=np.float64)
    n = mu.size
    if sigma.shape != (n, n):
        raise SolverError(f"covariance must be {n}x{n}")
    if not (np.isfinite(mu).all() and np.isfinite(sigma).all()):
        raise SolverError("mean/covariance contain non-finite entries")
    if not np.allclose(sigma, sigma.T, atol=1e-10 * max(1.0, float(np.abs(sigma).max()))):
        raise SolverError("covariance must be symmetric")
    sigma = 0.5 * (sigma + sigma.T)
    if ridge is None:
        ridge = 1e-6 * float(np.trace(sigma)) / n
    sigma = sigma + ridge * np.eye(n)
    eigmax = float(np.linalg.eigvalsh(sigma)[-1])
    if eigmax < -1e-10:
        raise SolverError("covariance is not positive semi-definite")
    if n == 1:
        return np.ones(1)

    lipschitz = 2.0 * risk_aversion * max(eigmax, 0.0)
    if lipschitz == 0.0:
        # Degenerate linear objective: best vertex, lowest index on ties.
        w = np.zeros(n)
        w[int(np.argmax(mu))] = 1.0
        return w
    step = 1.0 / lipschitz

    def gradient(w: np.ndarray) -> np.ndarray:
        return mu - 2.0 * risk_aversion * (sigma @ w)

    def objective(w: np.ndarray) -> float:
        return float(mu @ w - risk_aversion * (w @ sigma @ w))

    w = np.full(n, 1.0 / n)
    y = w.copy()
    momentum = 1.0
    best = objective(w)
    for _ in range(max_iter):
        w_next = project_simplex(y + step * gradient(y))
        obj = objective(w_next)
        if obj < best:  # adaptive restart keeps the ascent monotone
            y = w.copy()
            momentum = 1.0
            w_next = project_simplex(y + step * gradient(y))
            obj = objective(w_next)
        momentum_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
        y = w_next + ((momentum - 1.0) / momentum_next) * (w_next - w)
        change = float(np.abs(w_next - w).max())
        w = w_next
        momentum = momentum_next
        best = max(best, obj)
        if change <= tol:
            # At a fixed point of the projected-gradient operator we are done;
            # a small momentum step can stall early, so verify.
            if float(np.abs(project_simplex(w + step * gradient(w)) - w).max()) <= 10 * tol:
                break
    return w


def mvo_index(
    data: MarketData,
    assets: AssetSet,
    period: tuple[date, date],
    config: MvoConfig | None = None,
    *,
    initial_value: float = DEFAULT_INDEX_VALUE,
) -> ValueSeries:
    """Mean-variance index over ``period``: allocate at t=0, rebalance on the
    configured cadence from trailing daily returns, hold shares in between."""
    config = config or MvoConfig()
    start, end = period
    s, e = data.date_index(start), data.date_index(end)
    if e <= s:
        raise DataError("index period must span at least two trading days")
    closes = data.closes(assets.members)
    if s - config.lookback < 0:
        raise InsufficientHistoryError(
            f"index needs {config.lookback} days of history before {start.isoformat()}"
        )
    history = closes[s - config.lookback : e + 1]
    if not np.isfinite(history).all():
        raise InsufficientHistoryError(
            "an index asset lacks data over the lookback or index period"
        )

    values = np.empty(e - s + 1)
    values[0] = initial_value
    shares = np.zeros(len(assets))
    for k in range(e - s + 1):
        idx = s + k
        if k == 0 or (
            math.isfinite(config.rebalance_period) and k % int(config.rebalance_period) == 0
        ):
            window = closes[idx - config.lookback : idx + 1]
            returns = window[1:] / window[:-1] - 1.0
            mean = returns.mean(axis=0)
            cov = np.cov(returns, rowvar=False, bias=True)
            cov = np.atleast_2d(cov)
            value = values[k - 1] if k else initial_value
            weights = mvo_weights(mean, cov, config.risk_aversion, config.ridge)
            shares = weights * value / closes[idx]
        if k:
            values[k] = float(shares @ closes[idx])
    dates = tuple(data.calendar[s : e + 1])
    return ValueSeries(dates=dates, values=values)


# -- heuristic agents ----------------------------------------------------------
#
# All conform to the agent interface: act(observation) -> raw vector of length
# n_assets + 1 (cash first), with n_assets read off the observation so one
# agent works across differently sized universes.  begin_episode/observe hooks
# are optional and used by the stateful ones.


class CashOnlyAgent:
    """Holds everything in cash; flat value at zero cost."""

    def act(self, observation) -> np.ndarray:
        action = np.zeros(asset_count(observation) + 1)
        action[0] = 1.0
        return action


class UniformRebalanceAgent:
    """Rebalances to equal weights over cash and every asset each step."""

    def act(self, observation) -> np.ndarray:
        n = asset_count(observation)
        return np.full(n + 1, 1.0 / (n + 1))


class UniformBuyAndHoldAgent:
    """Buys assets equally on the first step, then rides the drifted weights.

    Final value is the initial capital times the mean of per-asset total gross
    returns (zero turnover after entry, so positive costs charge only once).
    """

    def __init__(self):
        self._drifted: np.ndarray | None = None

    def begin_episode(self, observation) -> None:
        self._drifted = None

    def act(self, observation) -> np.ndarray:
        if self._drifted is None:
            n = asset_count(observation)
            action = np.zeros(n + 1)
            action[1:] = 1.0 / n
            return action
        return self._drifted.copy()

    def observe(self, transition) -> None:
        self._drifted = np.asarray(transition.info["weights_drifted"], dtype=np.float64)


class RandomSimplexAgent:
    """Uniform random simplex allocation each step; reproducible from its seed."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def act(self, observation) -> np.ndarray:
        sample = self.rng.dirichlet(np.ones(asset_count(observation) + 1))
        return sample / sample.sum()


class MvoFollowingAgent:
    """Tracks the mean-variance weights (no cash) on the index's cadence."""

    def __init__(self, data: MarketData, assets: AssetSet, config: MvoConfig | None = None):
        self.data = data
        self.assets = assets
        self.config = config or MvoConfig()
        self._closes = data.closes(assets.members)
        self._steps = 0
        self._weights: np.ndarray | None = None

    def begin_episode(self, observation) -> None:
        self._steps = 0
        self._weights = None

    def act(self, observation) -> np.ndarray:
        cadence = self.config.rebalance_period
        due = self._weights is None or (
            math.isfinite(cadence) and self._steps % int(cadence) == 0
        )
        if due:
            idx = self.data.date_index(observation.date)
            if idx - self.config.lookback < 0:
                raise InsufficientHistoryError(
                    f"MVO agent needs {self.config.lookback} days before "
                    f"{observation.date.isoformat()}"
                )
            window = self._closes[idx - self.config.lookback : idx + 1]
            if not np.isfinite(window).all():
                raise InsufficientHistoryError(
                    f"an asset lacks lookback data at {observation.date.isoformat()}"
                )
            returns = window[1:] / window[:-1] - 1.0
            cov = np.atleast_2d(np.cov(returns, rowvar=False, bias=True))
            self._weights = mvo_weights(
                returns.mean(axis=0), cov, self.config.risk_aversion, self.config.ridge
            )
        self._steps += 1
        action = np.zeros(len(self.assets) + 1)
        action[1:] = self._weights
        return action


def heuristic_agents() -> dict:
    """Registry of built-in agent factories keyed by name.

    Factories take keyword context (n_assets, seed, data, assets, mvo_config,
    ...) and ignore what they do not need.
    """
    return {
        "cash_only": lambda **_: CashOnlyAgent(),
        "uniform_rebalance": lambda **_: UniformRebalanceAgent(),
        "uniform_buy_and_hold": lambda **_: UniformBuyAndHoldAgent(),
        "random": lambda *, seed, **_: RandomSimplexAgent(seed),
        "mvo": lambda *, data, assets, mvo_config=None, **_: MvoFollowingAgent(
            data, assets, mvo_config
        ),
    }
