"""Benchmarking engine for online portfolio selection agents."""

from .agents import AgentSpec, ReferencePG, agent_act, checkpoint, make_agent, pg_update, restore
from .baselines import MvoConfig, heuristic_agents, mvo_index, mvo_weights, project_simplex
from .environment import (
    Allocation,
    EnvConfig,
    PortfolioEnv,
    PortfolioState,
    Trajectory,
    Transition,
    run_episode,
    validate_action,
)
from .errors import BenchmarkError
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
    write_ohlcv,
)
from .metrics import (
    MetricReport,
    ValueSeries,
    aggregate_seeds,
    cvar,
    information_ratio,
    ir_quotient,
    ir_trend,
    max_drawdown,
    portfolio_returns,
    rate_of_return,
    sortino,
)
from .representations import (
    Observation,
    RepresentationSpec,
    build_indicators,
    build_lagged,
    build_markovian,
    build_sliding,
)
from .rewards import RewardSpec

__version__ = "0.1.0"

__all__ = [
    "AgentSpec",
    "Allocation",
    "AssetSet",
    "BenchmarkError",
    "EnvConfig",
    "EpisodeWindow",
    "MarketData",
    "MetricReport",
    "MvoConfig",
    "NormalizedSeries",
    "Observation",
    "PortfolioEnv",
    "PortfolioState",
    "ReferencePG",
    "RepresentationSpec",
    "RewardSpec",
    "SplitPlan",
    "SyntheticSpec",
    "Trajectory",
    "Transition",
    "ValueSeries",
    "agent_act",
    "aggregate_seeds",
    "checkpoint",
    "cvar",
    "generate_synthetic",
    "heuristic_agents",
    "information_ratio",
    "ir_quotient",
    "ir_trend",
    "load_ohlcv",
    "make_agent",
    "max_drawdown",
    "mvo_index",
    "mvo_weights",
    "normalize",
    "pg_update",
    "portfolio_returns",
    "project_simplex",
    "rate_of_return",
    "restore",
    "run_episode",
    "sample_universe",
    "sortino",
    "split_periods",
    "validate_action",
    "write_ohlcv",
]
