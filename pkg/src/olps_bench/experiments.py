"""Experiment orchestration: sweep, multi-seed training, backtest, report.

One master seed pins every stochastic choice (synthetic data, episode split,
universe sampling, sweep sampling, agent seeds), so a full pipeline run is
reproducible byte-for-byte regardless of worker scheduling: each parallel job
owns a seed substream derived from the master seed and its own index.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import date
from pathlib import Path

import numpy as np

from . import agents as agents_mod
from . import baselines, metrics, rewards
from .environment import EnvConfig, PortfolioEnv, Trajectory, run_episode
from .errors import BenchmarkError, ConfigError, DataError, MetricError
from .market_data import (
    AssetSet,
    EpisodeWindow,
    MarketData,
    NormalizedSeries,
    SplitPlan,
    SyntheticSpec,
    generate_synthetic,
    load_ohlcv,
    normalize,
    sample_universe,
    split_periods,
)
from .metrics import UNDEFINED, MetricReport, ValueSeries, aggregate_seeds
from .representations import RepresentationSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

#: Minimum guard band (trading days) between training windows and
#: validation/backtest data, so every representation's lookback stays clean
#: even when combinations share one split.
SPLIT_GUARD_FLOOR = 30

#: Diversified US large-cap default universe for backtests on real data.
DEFAULT_BACKTEST_ASSETS = (
    "AAPL", "UNH", "ALLE", "JPM", "XOM",
    "MSFT", "JNJ", "AME", "BAC", "CVX",
    "GOOG", "PFE", "BA", "WFC", "NEE",
    "AMZN", "ABBV", "CAT", "MS", "COP",
)

REPORT_COLUMNS = ("rank", "name", "ror", "sortino", "mdd", "cvar", "ir", "ir_trend", "ir_quotient")

# Seed substreams, one per stochastic concern.
_STREAM_DATA = 0
_STREAM_SPLIT = 1
_STREAM_UNIVERSE_VAL = 2
_STREAM_UNIVERSE_BT = 3
_STREAM_SWEEP = 4
_STREAM_TRAIN = 5


def _rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


# -- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    assets: int = 20
    days: int = 700
    drift: float | tuple[float, ...] = 0.0
    volatility: float | tuple[float, ...] = 0.015
    correlation: float = 0.0
    start: date = date(2015, 1, 5)
    initial_price: float = 100.0
    base_volume: float = 1_000_000.0
    listing_delays: tuple[int, ...] = ()


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 500
    eval_every: int = 50
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("training seeds must be distinct")
        if not self.seeds:
            raise ConfigError("at least one training seed is required")
        if self.episodes < 1 or self.eval_every < 1:
            raise ConfigError("episode counts must be positive")


@dataclass(frozen=True)
class SweepConfig:
    trials: int = 100
    episodes: int = 500
    space: dict = field(
        default_factory=lambda: {
            "learning_rate": {"low": 1e-3, "high": 1e-1, "log": True},
            "concentration": {"low": 10.0, "high": 100.0},
        }
    )

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("sweep needs at least one trial")
        if not self.space:
            raise ConfigError("sweep search space is empty")


@dataclass(frozen=True)
class BacktestConfig:
    start: date | None = None
    end: date | None = None
    days: int = 504  # used when start/end omitted: the calendar's tail
    assets: tuple[str, ...] = ()
    index_lookback: int = 252
    index_rebalance: float = 21
    index_risk_aversion: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 7
    jobs: int = 1
    out: str = "runs/run"
    name: str = ""
    data_source: str = "synthetic"
    data_path: str = ""
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    representation: RepresentationSpec = field(default_factory=RepresentationSpec)
    reward: rewards.RewardSpec = field(default_factory=rewards.RewardSpec)
    initial_capital: float = 100_000.0
    cost_rate: float = 0.0
    projection: str = "softmax"
    episode_length: int = 60
    validation_count: int = 5
    universe_size: int = 20
    agent_kind: str = "reference_pg"
    agent_hyperparameters: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)

    def __post_init__(self):
        if self.data_source not in ("synthetic", "csv"):
            raise ConfigError(f"unknown data source {self.data_source!r}")
        if self.data_source == "csv" and not self.data_path:
            raise ConfigError("csv data source needs data.path")

    @property
    def combination_name(self) -> str:
        return self.name or f"{self.agent_kind}_{self.representation.kind}_{self.reward.kind}"

    @property
    def split_guard(self) -> int:
        return max(SPLIT_GUARD_FLOOR, self.representation.lookback)

    def env_config(self, cost_rate: float | None = None) -> EnvConfig:
        return EnvConfig(
            initial_capital=self.initial_capital,
            cost_rate=self.cost_rate if cost_rate is None else cost_rate,
            projection=self.projection,
            reward=self.reward,
            representation=self.representation,
        )


def _default_raw() -> dict:
    return {
        "run": {"master_seed": 7, "jobs": 1, "out": "runs/run", "name": ""},
        "data": {
            "source": "synthetic",
            "path": "",
            "synthetic": {
                "assets": 20,
                "days": 700,
                "drift": 0.0,
                "volatility": 0.015,
                "correlation": 0.0,
                "start": date(2015, 1, 5),
                "initial_price": 100.0,
                "base_volume": 1_000_000.0,
                "listing_delays": [],
            },
        },
        "representation": {
            "kind": "markovian",
            "window": 21,
            "lag_offsets": [1, 2, 3, 4, 5, 10, 15, 20],
            "warmup_bars": 35,
        },
        "reward": {"kind": "daily_net", "scale": None, "sortino_cap": 10.0},
        "environment": {"initial_capital": 100_000.0, "cost_rate": 0.0, "projection": "softmax"},
        "episodes": {"length": 60, "validation_count": 5},
        "universe": {"size": 20},
        "agent": {"kind": "reference_pg", "hyperparameters": {}},
        "train": {"episodes": 500, "eval_every": 50, "seeds": [0, 1, 2, 3, 4]},
        "sweep": {"trials": 100, "episodes": 500, "space": {}},
        "backtest": {
            "start": "",
            "end": "",
            "days": 504,
            "assets": [],
            "index_lookback": 252,
            "index_rebalance": 21,
            "index_risk_aversion": 1.0,
        },
    }

# Tables whose sub-keys are free-form rather than schema-checked.
_WILDCARD_PATHS = {("agent", "hyperparameters"), ("sweep", "space")}


def _merge_strict(base: dict, incoming: dict, path: tuple[str, ...] = ()) -> None:
    for key, value in incoming.items():
        here = path + (key,)
        if any(here[: len(w)] == w for w in _WILDCARD_PATHS):
            base[key] = value
            continue
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(here)}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge_strict(base[key], value, here)
        else:
            base[key] = value


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply dotted-key overrides (``train.episodes=100``) with type coercion."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, text = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = raw
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ConfigError(f"unknown override key {dotted!r}")
            node = node[k]
        leaf = keys[-1]
        wildcard = any(tuple(keys[: len(w)]) == w for w in _WILDCARD_PATHS)
        if not isinstance(node, dict) or (leaf not in node and not wildcard):
            raise ConfigError(f"unknown override key {dotted!r}")
        node[leaf] = _coerce_override(text, node.get(leaf))
    return raw


def _coerce_override(text: str, current):
    if isinstance(current, bool):
        if text.lower() in ("true", "1"):
            return True
        if text.lower() in ("false", "0"):
            return False
        raise ConfigError(f"expected boolean, got {text!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, date):
        return date.fromisoformat(text)
    if isinstance(current, list):
        return json.loads(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            incoming = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config does not parse: {exc}") from exc
    return config_from_mapping(incoming, overrides or [])


def config_from_mapping(incoming: dict, overrides: list[str] | None = None) -> ExperimentConfig:
    raw = _default_raw()
    _merge_strict(raw, incoming)
    if overrides:
        apply_overrides(raw, overrides)

    syn = raw["data"]["synthetic"]
    synthetic = SyntheticConfig(
        assets=syn["assets"],
        days=syn["days"],
        drift=_scalar_or_tuple(syn["drift"]),
        volatility=_scalar_or_tuple(syn["volatility"]),
        correlation=float(syn["correlation"]),
        start=_as_date(syn["start"]),
        initial_price=float(syn["initial_price"]),
        base_volume=float(syn["base_volume"]),
        listing_delays=tuple(int(x) for x in syn["listing_delays"]),
    )
    reward_kind = raw["reward"]["kind"]
    scale = raw["reward"]["scale"]
    reward = rewards.RewardSpec(
        kind=reward_kind,
        scale=rewards.DEFAULT_SCALES[reward_kind] if scale is None else float(scale),
        sortino_cap=float(raw["reward"]["sortino_cap"]),
    )
    representation = RepresentationSpec(
        kind=raw["representation"]["kind"],
        window=int(raw["representation"]["window"]),
        lag_offsets=tuple(int(x) for x in raw["representation"]["lag_offsets"]),
        warmup_bars=int(raw["representation"]["warmup_bars"]),
    )
    bt = raw["backtest"]
    backtest = BacktestConfig(
        start=_as_date(bt["start"]) if bt["start"] else None,
        end=_as_date(bt["end"]) if bt["end"] else None,
        days=int(bt["days"]),
        assets=tuple(bt["assets"]),
        index_lookback=int(bt["index_lookback"]),
        index_rebalance=float(bt["index_rebalance"]),
        index_risk_aversion=float(bt["index_risk_aversion"]),
    )
    return ExperimentConfig(
        master_seed=int(raw["run"]["master_seed"]),
        jobs=int(raw["run"]["jobs"]),
        out=str(raw["run"]["out"]),
        name=str(raw["run"]["name"]),
        data_source=raw["data"]["source"],
        data_path=str(raw["data"]["path"]),
        synthetic=synthetic,
        representation=representation,
        reward=reward,
        initial_capital=float(raw["environment"]["initial_capital"]),
        cost_rate=float(raw["environment"]["cost_rate"]),
        projection=raw["environment"]["projection"],
        episode_length=int(raw["episodes"]["length"]),
        validation_count=int(raw["episodes"]["validation_count"]),
        universe_size=int(raw["universe"]["size"]),
        agent_kind=raw["agent"]["kind"],
        agent_hyperparameters=dict(raw["agent"]["hyperparameters"]),
        train=TrainConfig(
            episodes=int(raw["train"]["episodes"]),
            eval_every=int(raw["train"]["eval_every"]),
            seeds=tuple(int(s) for s in raw["train"]["seeds"]),
        ),
        sweep=SweepConfig(
            trials=int(raw["sweep"]["trials"]),
            episodes=int(raw["sweep"]["episodes"]),
            space=dict(raw["sweep"]["space"]) or SweepConfig().space,
        ),
        backtest=backtest,
    )


def _scalar_or_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(float(x) for x in value)
    return float(value)


def _as_date(value) -> date:
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value))


def config_snapshot(config: ExperimentConfig) -> str:
    """Deterministic JSON rendering of the resolved configuration."""

    def default(obj):
        if isinstance(obj, date):
            return obj.isoformat()
        if isinstance(obj, tuple):
            return list(obj)
        raise TypeError(f"cannot serialize {obj!r}")

    return json.dumps(asdict(config), sort_keys=True, indent=2, default=default) + "\n"


# -- workspace ---------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationFixture:
    window: EpisodeWindow
    assets: AssetSet
    index_daily_ror: np.ndarray


@dataclass(frozen=True, eq=False)
class Workspace:
    """Everything derived deterministically from one config + master seed."""

    config: ExperimentConfig
    data: MarketData
    norm: NormalizedSeries
    split: SplitPlan
    validation_fixtures: tuple[ValidationFixture, ...]
    backtest_window: EpisodeWindow
    backtest_assets: AssetSet
    backtest_index: ValueSeries


def prepare_market(config: ExperimentConfig) -> MarketData:
    if config.data_source == "csv":
        return load_ohlcv(config.data_path)
    syn = config.synthetic
    n = syn.assets
    drift = syn.drift if isinstance(syn.drift, tuple) else (syn.drift,) * n
    vol = syn.volatility if isinstance(syn.volatility, tuple) else (syn.volatility,) * n
    corr = None
    if syn.correlation:
        corr = np.full((n, n), syn.correlation)
        np.fill_diagonal(corr, 1.0)
    spec = SyntheticSpec(
        assets=tuple(f"SYN{i:03d}" for i in range(n)),
        drift=drift,
        volatility=vol,
        correlation=corr,
        start=syn.start,
        initial_price=syn.initial_price,
        base_volume=syn.base_volume,
        listing_delays=syn.listing_delays or None,
    )
    return generate_synthetic(spec, syn.days, _rng(config.master_seed, _STREAM_DATA))


def build_workspace(config: ExperimentConfig, data: MarketData | None = None) -> Workspace:
    if data is None:
        data = prepare_market(config)
    norm = normalize(data)
    calendar = data.calendar
    guard = config.split_guard

    bt = config.backtest
    if bt.start is not None and bt.end is not None:
        bt_start = data.date_index(bt.start)
        bt_end = data.date_index(bt.end)
    elif bt.start is None and bt.end is None:
        bt_end = len(calendar) - 1
        bt_start = bt_end - bt.days
    else:
        raise ConfigError("backtest start/end must be given together or both omitted")
    if bt_end <= bt_start:
        raise ConfigError("backtest period must span at least two trading days")
    if bt_start - config.representation.lookback < 0:
        raise DataError("representation lookback crosses the start of the data")

    backtest_window = EpisodeWindow(
        start=calendar[bt_start], start_index=bt_start, length=bt_end - bt_start
    )
    universe_n = min(config.universe_size, len(data.assets))
    if bt.assets:
        missing = [a for a in bt.assets if a not in data.assets]
        if missing:
            raise ConfigError(f"backtest assets not in the data: {missing}")
        backtest_assets = AssetSet(members=tuple(bt.assets), as_of=calendar[bt_start])
    elif config.data_source == "csv" and all(a in data.assets for a in DEFAULT_BACKTEST_ASSETS):
        backtest_assets = AssetSet(members=DEFAULT_BACKTEST_ASSETS, as_of=calendar[bt_start])
    else:
        backtest_assets = sample_universe(
            data,
            universe_n,
            as_of=calendar[bt_start],
            lookback=config.representation.lookback,
            rng=_rng(config.master_seed, _STREAM_UNIVERSE_BT),
        )
    if len(backtest_assets) != universe_n:
        raise ConfigError(
            f"backtest universe has {len(backtest_assets)} assets but training uses "
            f"{universe_n}; one network must fit both"
        )

    train_calendar = calendar[: max(0, bt_start - guard)]
    split = split_periods(
        train_calendar,
        episode_length=config.episode_length,
        validation_count=config.validation_count,
        lookback=guard,
        rng=_rng(config.master_seed, _STREAM_SPLIT),
    )

    fixtures = []
    for k, window in enumerate(split.validation_episodes):
        assets = sample_universe(
            data,
            min(config.universe_size, len(data.assets)),
            as_of=window.start,
            lookback=config.representation.lookback,
            rng=_rng(config.master_seed, _STREAM_UNIVERSE_VAL, k),
        )
        index = _window_index(data, assets, window, config)
        index_ror = np.asarray(index.values[1:] / index.values[:-1] - 1.0)
        fixtures.append(
            ValidationFixture(window=window, assets=assets, index_daily_ror=index_ror)
        )

    backtest_index = baselines.mvo_index(
        data,
        backtest_assets,
        (calendar[bt_start], calendar[bt_end]),
        _index_config(config, available_lookback=_available_history(data, backtest_assets, bt_start)),
        initial_value=config.initial_capital,
    )

    ws = Workspace(
        config=config,
        data=data,
        norm=norm,
        split=split,
        validation_fixtures=tuple(fixtures),
        backtest_window=backtest_window,
        backtest_assets=backtest_assets,
        backtest_index=backtest_index,
    )
    verify_schedule(ws)
    return ws


def _available_history(data: MarketData, assets: AssetSet, at_index: int) -> int:
    earliest = max(data.first_index(a) for a in assets.members)
    return at_index - earliest


def _index_config(config: ExperimentConfig, available_lookback: int) -> baselines.MvoConfig:
    # The index lookback is capped to the history every universe member has,
    # so short fixtures and late listings stay usable.
    lookback = max(2, min(config.backtest.index_lookback, available_lookback))
    return baselines.MvoConfig(
        lookback=lookback,
        risk_aversion=config.backtest.index_risk_aversion,
        rebalance_period=config.backtest.index_rebalance,
    )


def _window_index(
    data: MarketData, assets: AssetSet, window: EpisodeWindow, config: ExperimentConfig
) -> ValueSeries:
    end_index = window.start_index + window.length
    return baselines.mvo_index(
        data,
        assets,
        (window.start, data.calendar[end_index]),
        _index_config(
            config, available_lookback=_available_history(data, assets, window.start_index)
        ),
        initial_value=config.initial_capital,
    )


def verify_schedule(ws: Workspace) -> None:
    """Interval arithmetic over the final schedule: no validation or backtest
    date, widened by the guard band, may fall inside a training episode."""
    guard = ws.config.split_guard
    protected = [
        (w.start_index - guard, w.end_index + guard) for w in ws.split.validation_episodes
    ]
    bt = ws.backtest_window
    protected.append((bt.start_index - guard, bt.start_index + bt.length + 1 + guard))
    for t in ws.split.training_episodes:
        for lo, hi in protected:
            if t.start_index < hi and lo < t.end_index:
                raise DataError(
                    f"training episode at {t.start.isoformat()} intersects protected data"
                )


# -- sweep -------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialResult:
    index: int
    params: dict
    score: float
    status: str  # "ok" | "failed"
    error: str = ""


@dataclass(frozen=True)
class SweepResult:
    trials: tuple[TrialResult, ...]

    @property
    def best(self) -> TrialResult:
        ok = [t for t in self.trials if t.status == "ok"]
        if not ok:
            raise BenchmarkError("every sweep trial failed", code="sweep.all_failed")
        return max(ok, key=lambda t: (t.score, -t.index))


def sample_space(space: dict, rng: np.random.Generator) -> dict:
    """Draw one point from the per-parameter search space.

    Continuous entries are ``{low, high, log?}``; discrete ones ``{choices}``.
    """
    out = {}
    for name in sorted(space):
        spec = space[name]
        if "choices" in spec:
            choices = list(spec["choices"])
            out[name] = choices[int(rng.integers(len(choices)))]
        elif "low" in spec and "high" in spec:
            low, high = float(spec["low"]), float(spec["high"])
            if spec.get("log"):
                out[name] = float(np.exp(rng.uniform(np.log(low), np.log(high))))
            else:
                out[name] = float(rng.uniform(low, high))
        else:
            raise ConfigError(f"search-space entry {name!r} needs low/high or choices")
    return out


@dataclass(frozen=True)
class SeedTrainResult:
    seed: int
    checkpoint: bytes | None
    val_score: float
    val_ir: float
    diverged: bool
    episodes_run: int


def _evaluate_validation(ws: Workspace, agent) -> tuple[float, float]:
    """(mean episodic RoR, pooled IR vs the per-window index) on validation."""
    had_training = getattr(agent, "training", None)
    if had_training is not None:
        agent.training = False
    try:
        episode_rors: list[float] = []
        agent_ror: list[np.ndarray] = []
        index_ror: list[np.ndarray] = []
        for fixture in ws.validation_fixtures:
            env = PortfolioEnv(ws.data, ws.norm, fixture.assets, ws.config.env_config())
            traj = run_episode(agent, env, fixture.window)
            values = traj.values
            episode_rors.append(float(values[-1] / values[0] - 1.0))
            agent_ror.append(values[1:] / values[:-1] - 1.0)
            index_ror.append(fixture.index_daily_ror)
        if not episode_rors:
            return 0.0, UNDEFINED
        ir = metrics.information_ratio(np.concatenate(agent_ror), np.concatenate(index_ror))
        return float(np.mean(episode_rors)), ir
    finally:
        if had_training is not None:
            agent.training = had_training


def _build_agent(ws: Workspace, seed: int, params: dict):
    config = ws.config
    hyper = dict(config.agent_hyperparameters)
    hyper.update(params)
    spec = agents_mod.AgentSpec(kind=config.agent_kind, seed=seed, hyperparameters=hyper)
    n = len(ws.backtest_assets)
    return agents_mod.make_agent(
        spec,
        n_assets=n,
        input_dim=config.representation.observation_length(n),
        data=ws.data,
        assets=ws.backtest_assets,
        mvo_config=_index_config(
            config,
            available_lookback=_available_history(
                ws.data, ws.backtest_assets, ws.backtest_window.start_index
            ),
        ),
    )


def _train_seed(
    ws: Workspace,
    params: dict,
    seed: int,
    episodes: int,
    eval_every: int,
    stream: tuple[int, ...],
) -> SeedTrainResult:
    agent = _build_agent(ws, seed, params)
    if not isinstance(agent, agents_mod.ReferencePG):
        score, ir = _evaluate_validation(ws, agent)
        return SeedTrainResult(seed, None, score, ir, diverged=False, episodes_run=0)

    rng = _rng(ws.config.master_seed, *stream)
    windows = ws.split.training_episodes
    if not windows:
        raise ConfigError("split produced no training episodes")
    best: tuple[float, bytes, float] | None = None
    diverged = False
    ran = 0
    for ep in range(episodes):
        window = windows[int(rng.integers(len(windows)))]
        assets = sample_universe(
            ws.data,
            min(ws.config.universe_size, len(ws.data.assets)),
            as_of=window.start,
            lookback=ws.config.representation.lookback,
            rng=rng,
        )
        env = PortfolioEnv(ws.data, ws.norm, assets, ws.config.env_config())
        agent.training = True
        traj = run_episode(agent, env, window, record_observations=True)
        agents_mod.pg_update(agent, traj)
        ran = ep + 1
        if not np.isfinite(agent.net.params).all():
            diverged = True
            break
        if ran % eval_every == 0 or ran == episodes:
            score, ir = _evaluate_validation(ws, agent)
            if math.isfinite(score) and (best is None or score > best[0]):
                best = (score, agents_mod.checkpoint(agent), ir)
    if best is None:
        return SeedTrainResult(seed, None, UNDEFINED, UNDEFINED, diverged=True, episodes_run=ran)
    return SeedTrainResult(
        seed, best[1], best[0], best[2], diverged=diverged, episodes_run=ran
    )


def _sweep_trial(ws: Workspace, trial: int) -> TrialResult:
    params = sample_space(ws.config.sweep.space, _rng(ws.config.master_seed, _STREAM_SWEEP, trial, 0))
    try:
        result = _train_seed(
            ws,
            params,
            seed=trial,
            episodes=ws.config.sweep.episodes,
            eval_every=ws.config.sweep.episodes,  # score once, at the end
            stream=(_STREAM_SWEEP, trial, 1),
        )
        if result.diverged or not math.isfinite(result.val_score):
            return TrialResult(trial, params, -math.inf, "failed", "training diverged")
        return TrialResult(trial, params, result.val_score, "ok")
    except BenchmarkError as exc:
        return TrialResult(trial, params, -math.inf, "failed", str(exc))


def _sweep_trial_job(payload) -> TrialResult:
    ws, trial = payload
    return _sweep_trial(ws, trial)


def run_sweep(ws: Workspace) -> SweepResult:
    """Seeded random-search sweep; every trial scores on the same validation
    windows, and a failed trial is recorded without stopping the sweep."""
    trials = range(ws.config.sweep.trials)
    if ws.config.jobs > 1:
        with ProcessPoolExecutor(max_workers=ws.config.jobs) as pool:
            results = list(pool.map(_sweep_trial_job, [(ws, t) for t in trials]))
    else:
        results = [_sweep_trial(ws, t) for t in trials]
    return SweepResult(trials=tuple(results))


def _train_seed_job(payload) -> SeedTrainResult:
    ws, params, seed = payload
    return _train_seed(
        ws,
        params,
        seed,
        episodes=ws.config.train.episodes,
        eval_every=ws.config.train.eval_every,
        stream=(_STREAM_TRAIN, seed),
    )


def train_multi_seed(ws: Workspace, params: dict) -> list[SeedTrainResult]:
    """Train one agent per configured seed with the given hyperparameters,
    keeping each seed's best validation checkpoint and its validation IR."""
    payloads = [(ws, params, seed) for seed in ws.config.train.seeds]
    if ws.config.jobs > 1:
        with ProcessPoolExecutor(max_workers=ws.config.jobs) as pool:
            return list(pool.map(_train_seed_job, payloads))
    return [_train_seed_job(p) for p in payloads]


# -- backtest ------------------------------------------------------------------------


@dataclass(eq=False)
class CombinationResult:
    name: str
    seeds: tuple[int, ...]
    per_seed: list[dict]
    report: MetricReport
    trajectories: dict[int, Trajectory]


def trajectory_metrics(
    trajectory: Trajectory, index_series: ValueSeries, validation_ir: float
) -> dict:
    """All report metrics for one seed's backtest trajectory."""
    values = np.asarray(trajectory.values)
    if trajectory.dates != index_series.dates:
        raise MetricError("trajectory and index series are not date-aligned")
    daily_pr = values[1:] - values[:-1]
    daily_ror = values[1:] / values[:-1] - 1.0
    index_values = np.asarray(index_series.values)
    index_ror = index_values[1:] / index_values[:-1] - 1.0

    ir = metrics.information_ratio(daily_ror, index_ror)
    try:
        monthly = metrics.monthly_information_ratios(daily_ror, index_ror)
        trend = metrics.ir_trend(monthly) if monthly.size >= 2 else UNDEFINED
    except MetricError:
        trend = UNDEFINED
    return {
        "ror": float(values[-1] / values[0] - 1.0),
        "wealth_multiplier": float(values[-1] / values[0]),
        "sortino": metrics.sortino(daily_pr, annualization_days=252),
        "mdd": metrics.max_drawdown(values),
        "cvar": metrics.cvar(daily_pr),
        "ir": ir,
        "ir_trend": trend,
        "ir_quotient": metrics.ir_quotient(ir, validation_ir),
    }


def run_backtest(ws: Workspace, trained: list[SeedTrainResult] | None = None) -> CombinationResult:
    """One full-period episode per seed against the mean-variance index."""
    config = ws.config
    seeds = config.train.seeds
    if trained is None:
        if config.agent_kind == "reference_pg":
            raise ConfigError("backtesting reference_pg needs trained checkpoints")
        trained = [
            SeedTrainResult(seed, None, UNDEFINED, UNDEFINED, False, 0) for seed in seeds
        ]
        needs_val_ir = True
    else:
        needs_val_ir = False

    per_seed: list[dict] = []
    trajectories: dict[int, Trajectory] = {}
    kept_seeds: list[int] = []
    for result in trained:
        if result.diverged and result.checkpoint is None:
            continue
        if config.agent_kind == "reference_pg":
            agent = agents_mod.restore(result.checkpoint, seed=result.seed)
            agent.training = False
        else:
            agent = _build_agent(ws, result.seed, {})
        val_ir = result.val_ir
        if needs_val_ir:
            _, val_ir = _evaluate_validation(ws, agent)
        env = PortfolioEnv(
            ws.data,
            ws.norm,
            ws.backtest_assets,
            replace(config.env_config(), representation=config.representation),
        )
        trajectory = run_episode(agent, env, ws.backtest_window)
        per_seed.append(trajectory_metrics(trajectory, ws.backtest_index, val_ir))
        trajectories[result.seed] = trajectory
        kept_seeds.append(result.seed)

    if not per_seed:
        raise BenchmarkError("no seed survived training", code="experiments.no_seeds")
    return CombinationResult(
        name=config.combination_name,
        seeds=tuple(kept_seeds),
        per_seed=per_seed,
        report=aggregate_seeds(per_seed),
        trajectories=trajectories,
    )


# -- report emission --------------------------------------------------------------


def _rank_key(combo: CombinationResult):
    mean = combo.report.metrics["ror"].mean
    return (-(mean if math.isfinite(mean) else -math.inf), combo.name)


def format_cell(agg) -> str:
    return f"{agg.mean!r}±{agg.std!r}"


def parse_cell(text: str) -> tuple[float, float]:
    mean, _, std = text.partition("±")
    return float(mean), float(std)


def guarded_write(path: str | Path, content: bytes | str, force: bool = True) -> Path:
    """Write a file, but refuse to replace different existing content without force."""
    path = Path(path)
    data = content.encode() if isinstance(content, str) else content
    if path.exists() and not force and path.read_bytes() != data:
        raise ConfigError(
            f"{path} exists with different content; pass --force to overwrite",
            code="cli.would_overwrite",
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return path


def emit_report(
    combos: list[CombinationResult], out_dir: str | Path, force: bool = True
) -> dict[str, Path]:
    """Write report.csv (ranked by mean RoR), report.json (raw per-seed values,
    including the wealth multiplier), and plotdata.csv (per-day RoR curves)."""
    out_dir = Path(out_dir)
    ranked = sorted(combos, key=_rank_key)

    csv_buf = io.StringIO()
    writer = csv.writer(csv_buf)
    writer.writerow(REPORT_COLUMNS)
    for rank, combo in enumerate(ranked, start=1):
        row = [str(rank), combo.name]
        row += [format_cell(combo.report.metrics[m]) for m in REPORT_COLUMNS[2:]]
        writer.writerow(row)
    csv_path = guarded_write(out_dir / "report.csv", csv_buf.getvalue(), force)

    payload = {
        "combinations": [
            {
                "name": combo.name,
                "rank": rank,
                "seed_count": combo.report.seed_count,
                "seeds": list(combo.seeds),
                "metrics": {
                    name: {
                        "mean": agg.mean,
                        "std": agg.std,
                        "raw": list(agg.raw),
                        "excluded": agg.excluded,
                    }
                    for name, agg in sorted(combo.report.metrics.items())
                },
            }
            for rank, combo in enumerate(ranked, start=1)
        ]
    }
    json_path = guarded_write(
        out_dir / "report.json", json.dumps(payload, sort_keys=True, indent=2) + "\n", force
    )

    plot_buf = io.StringIO()
    writer = csv.writer(plot_buf)
    writer.writerow(["name", "seed", "date", "value", "ror"])
    for combo in ranked:
        for seed in sorted(combo.trajectories):
            trajectory = combo.trajectories[seed]
            v0 = float(trajectory.values[0])
            for day, value in zip(trajectory.dates, trajectory.values):
                writer.writerow(
                    [combo.name, seed, day.isoformat(), repr(float(value)), repr(float(value) / v0 - 1.0)]
                )
    plot_path = guarded_write(out_dir / "plotdata.csv", plot_buf.getvalue(), force)
    return {"csv": csv_path, "json": json_path, "plot": plot_path}


def read_report_csv(path: str | Path) -> list[dict]:
    """Parse report.csv back into {name, rank, metric: (mean, std)} rows."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise MetricError(f"unexpected report columns {reader.fieldnames}")
        for record in reader:
            row = {"rank": int(record["rank"]), "name": record["name"]}
            for m in REPORT_COLUMNS[2:]:
                row[m] = parse_cell(record[m])
            rows.append(row)
    return rows
