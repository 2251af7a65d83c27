"""Episodic portfolio-selection environment.

An episode walks a fixed window of trading days.  Each step the agent submits
a cash+assets weight vector; the portfolio is rebalanced at the current close,
returns realize at the next close, and the reward function scores the move.
Accounting uses adjusted close only; open/high/low/volume feed observations.

Value update per step, with proportional transaction costs on asset turnover:

    turnover = sum_i |action_i - drifted_i|        (assets only, i >= 1)
    cost     = cost_rate * turnover * V_t
    V_{t+1}  = (V_t - cost) * (action_0 + sum_i action_i * close_{i,t+1} / close_{i,t})
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from . import rewards
from .errors import ActionError, AgentError, DataError
from .market_data import AssetSet, EpisodeWindow, MarketData, NormalizedSeries
from .metrics import ValueSeries
from .representations import Observation, RepresentationSpec, build

#: Tolerance for accepting a raw vector as already on the simplex.
SIMPLEX_ATOL = 1e-6

PROJECTIONS = ("softmax", "clip", "strict")

DEFAULT_INITIAL_CAPITAL = 100_000.0


@dataclass(frozen=True, eq=False)
class Allocation:
    """Length-(N+1) simplex weights; index 0 is cash.

    Construction accepts weights within SIMPLEX_ATOL of the simplex and
    renormalizes them exactly; anything further off belongs in
    :func:`validate_action`.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).copy()
        if w.ndim != 1 or w.size < 2:
            raise ActionError("allocation must be a 1-D vector of cash + assets")
        if not np.isfinite(w).all():
            raise ActionError("allocation contains non-finite weights")
        if (w < -SIMPLEX_ATOL).any() or (w > 1.0 + SIMPLEX_ATOL).any():
            raise ActionError("allocation weights outside [0, 1]")
        total = w.sum()
        if abs(total - 1.0) > SIMPLEX_ATOL:
            raise ActionError(f"allocation weights sum to {total!r}, not 1")
        w = np.clip(w, 0.0, 1.0)
        w /= w.sum()
        object.__setattr__(self, "weights", w)
        w.flags.writeable = False

    @property
    def cash(self) -> float:
        return float(self.weights[0])

    @property
    def asset_weights(self) -> np.ndarray:
        return self.weights[1:]


def validate_action(raw: np.ndarray, projection: str = "softmax") -> Allocation:
    """Map a raw agent output onto the allocation simplex.

    Near-simplex vectors are renormalized exactly; anything else goes through
    the configured projection: softmax (default, for unconstrained scores),
    clip-and-renormalize, or strict rejection.
    """
    v = np.asarray(raw, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ActionError("raw action must be a 1-D vector of cash + assets")
    if not np.isfinite(v).all():
        raise ActionError("raw action contains NaN or infinity")
    on_simplex = (
        (v >= -SIMPLEX_ATOL).all()
        and (v <= 1.0 + SIMPLEX_ATOL).all()
        and abs(v.sum() - 1.0) <= SIMPLEX_ATOL
    )
    if on_simplex:
        return Allocation(v)
    if projection == "strict":
        raise ActionError(
            f"raw action violates the simplex (sum={v.sum()!r}, min={v.min()!r}) "
            "and projection is strict"
        )
    if projection == "softmax":
        z = np.exp(v - v.max())
        return Allocation(z / z.sum())
    if projection == "clip":
        w = np.clip(v, 0.0, None)
        total = w.sum()
        if total == 0.0:
            return Allocation(np.full(v.size, 1.0 / v.size))
        return Allocation(w / total)
    raise ActionError(f"unknown projection {projection!r}")


@dataclass(frozen=True, eq=False)
class PortfolioState:
    """Valuation and post-market-move weights after ``step_index`` steps."""

    value: float
    weights_drifted: np.ndarray
    date: date
    step_index: int
    bankrupt: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights_drifted, dtype=np.float64)
        object.__setattr__(self, "weights_drifted", w)
        if not self.bankrupt and self.value <= 0:
            raise DataError("portfolio value must stay positive unless bankrupt")
        w.flags.writeable = False


@dataclass(frozen=True, eq=False)
class Transition:
    observation: Observation
    reward: float
    done: bool
    info: dict


@dataclass(frozen=True)
class EnvConfig:
    initial_capital: float = DEFAULT_INITIAL_CAPITAL
    cost_rate: float = 0.0
    projection: str = "softmax"
    reward: rewards.RewardSpec = field(default_factory=rewards.RewardSpec)
    representation: RepresentationSpec = field(default_factory=RepresentationSpec)

    def __post_init__(self):
        if self.initial_capital <= 0:
            raise DataError("initial capital must be positive")
        if self.cost_rate < 0:
            raise DataError("cost rate must be non-negative")
        if self.projection not in PROJECTIONS:
            raise DataError(f"unknown projection {self.projection!r}")


class PortfolioEnv:
    """Single-episode environment over immutable market data.

    One instance is single-threaded; many instances may share the same
    MarketData/NormalizedSeries across parallel workers.
    """

    def __init__(
        self,
        data: MarketData,
        norm: NormalizedSeries,
        assets: AssetSet,
        config: EnvConfig | None = None,
    ):
        self.data = data
        self.norm = norm
        self.assets = assets
        self.config = config or EnvConfig()
        self._closes = data.closes(assets.members)  # (days, N)
        self._episode: EpisodeWindow | None = None
        self._state: PortfolioState | None = None
        self._daily_nets: list[float] = []

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def action_size(self) -> int:
        return self.n_assets + 1

    @property
    def state(self) -> PortfolioState:
        if self._state is None:
            raise DataError("environment not reset")
        return self._state

    def _observe(self, day: date) -> Observation:
        return build(self.config.representation, self.data, self.norm, day, self.assets)

    def reset(self, episode: EpisodeWindow) -> tuple[Observation, PortfolioState]:
        """Start an episode: full capital in cash, observation at the start date."""
        if episode.start_index + episode.length >= len(self.data.calendar):
            raise DataError(
                f"episode of {episode.length} steps starting {episode.start.isoformat()} "
                "runs past the end of the calendar"
            )
        if self.data.calendar[episode.start_index] != episode.start:
            raise DataError("episode start date does not match its calendar index")
        observation = self._observe(episode.start)  # raises if lookback unsatisfied
        weights = np.zeros(self.action_size)
        weights[0] = 1.0
        self._episode = episode
        self._daily_nets = []
        self._state = PortfolioState(
            value=self.config.initial_capital,
            weights_drifted=weights,
            date=episode.start,
            step_index=0,
        )
        return observation, self._state

    def step(self, action: Allocation) -> tuple[Transition, PortfolioState]:
        """Rebalance at the current close and realize the next day's returns."""
        if self._episode is None or self._state is None:
            raise DataError("environment not reset")
        state = self._state
        episode = self._episode
        if state.step_index >= episode.length or state.bankrupt:
            raise DataError("episode already finished")
        if action.weights.size != self.action_size:
            raise ActionError(
                f"allocation has {action.weights.size} weights, expected {self.action_size}"
            )

        t_idx = episode.start_index + state.step_index
        next_idx = t_idx + 1
        closes_now = self._closes[t_idx]
        closes_next = self._closes[next_idx]
        if not (np.isfinite(closes_now).all() and np.isfinite(closes_next).all()):
            raise DataError(
                f"market data missing for {self.data.calendar[next_idx].isoformat()}"
            )

        a = action.weights
        turnover = float(np.abs(a[1:] - state.weights_drifted[1:]).sum())
        cost = self.config.cost_rate * turnover * state.value
        gross_per_asset = closes_next / closes_now
        gross = float(a[0] + (a[1:] * gross_per_asset).sum())
        value_next = (state.value - cost) * gross

        step_index = state.step_index + 1
        next_date = self.data.calendar[next_idx]
        bankrupt = value_next <= 0.0
        done = bankrupt or step_index >= episode.length

        drifted = np.empty_like(a)
        if gross > 0:
            drifted[0] = a[0] / gross
            drifted[1:] = a[1:] * gross_per_asset / gross
        else:
            drifted[:] = 0.0
            drifted[0] = 1.0

        daily_net = value_next - state.value
        self._daily_nets.append(daily_net)
        reward = rewards.compute(
            self.config.reward,
            v_prev=state.value,
            v_next=value_next,
            v_initial=self.config.initial_capital,
            step_index=step_index,
            total_steps=episode.length,
            daily_nets=np.asarray(self._daily_nets),
        )

        self._state = PortfolioState(
            value=value_next,
            weights_drifted=drifted,
            date=next_date,
            step_index=step_index,
            bankrupt=bankrupt,
        )
        observation = self._observe(next_date)
        transition = Transition(
            observation=observation,
            reward=reward,
            done=done,
            info={
                "portfolio_value": value_next,
                "date": next_date,
                "daily_net": daily_net,
                "turnover": turnover,
                "weights_drifted": drifted,
                "bankrupt": bankrupt,
            },
        )
        return transition, self._state


@dataclass(eq=False)
class Trajectory:
    """Per-episode log: T+1 dated values, T actions/rewards.

    Record k >= 1 carries the valuation observed after the action submitted on
    the previous record's date.  ``observations`` is populated only when an
    episode is run with ``record_observations=True`` and never serialized.
    """

    dates: tuple[date, ...]
    raw_actions: tuple[np.ndarray, ...]
    allocations: tuple[np.ndarray, ...]
    values: np.ndarray
    rewards: np.ndarray
    daily_nets: np.ndarray
    observations: tuple[Observation, ...] | None = None

    def __post_init__(self):
        steps = len(self.raw_actions)
        if not (
            len(self.dates) == steps + 1 == len(self.values)
            and len(self.allocations) == len(self.rewards) == len(self.daily_nets) == steps
        ):
            raise DataError("trajectory arrays disagree on the step count")

    @property
    def steps(self) -> int:
        return len(self.raw_actions)

    def value_series(self) -> ValueSeries:
        return ValueSeries(dates=self.dates, values=np.asarray(self.values))

    def to_jsonl_text(self) -> str:
        """The step log; first record is the reset valuation with null action."""
        lines = [_record_line(self.dates[0], None, None, self.values[0], None, None)]
        for k in range(self.steps):
            lines.append(
                _record_line(
                    self.dates[k + 1],
                    self.raw_actions[k],
                    self.allocations[k],
                    self.values[k + 1],
                    self.rewards[k],
                    self.daily_nets[k],
                )
            )
        return "".join(lines)

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl_text())

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "Trajectory":
        dates: list[date] = []
        raw_actions: list[np.ndarray] = []
        allocations: list[np.ndarray] = []
        values: list[float] = []
        rewards_: list[float] = []
        daily_nets: list[float] = []
        with open(path) as fh:
            for line_no, line in enumerate(fh):
                if not line.strip():
                    continue
                record = json.loads(line)
                dates.append(date.fromisoformat(record["date"]))
                values.append(float(record["value"]))
                if line_no == 0:
                    if record.get("raw_action") is not None:
                        raise DataError(f"{path}: first record must be the reset valuation")
                    continue
                raw_actions.append(np.asarray(record["raw_action"], dtype=np.float64))
                allocations.append(np.asarray(record["allocation"], dtype=np.float64))
                rewards_.append(float(record["reward"]))
                daily_nets.append(float(record["daily_net"]))
        return cls(
            dates=tuple(dates),
            raw_actions=tuple(raw_actions),
            allocations=tuple(allocations),
            values=np.asarray(values),
            rewards=np.asarray(rewards_),
            daily_nets=np.asarray(daily_nets),
        )


def _record_line(day, raw_action, allocation, value, reward, daily_net) -> str:
    record = {
        "date": day.isoformat(),
        "raw_action": None if raw_action is None else [float(x) for x in raw_action],
        "allocation": None if allocation is None else [float(x) for x in allocation],
        "value": float(value),
        "reward": None if reward is None else float(reward),
        "daily_net": None if daily_net is None else float(daily_net),
    }
    return json.dumps(record) + "\n"


def run_episode(
    agent,
    env: PortfolioEnv,
    episode: EpisodeWindow,
    *,
    record_observations: bool = False,
) -> Trajectory:
    """Drive one agent through one episode and log every step.

    The agent must expose ``act(observation) -> raw action vector`` of length
    N+1; violations abort with a diagnostic.  Optional hooks are honored:
    ``begin_episode(observation)`` after reset and ``observe(transition)``
    after every step.
    """
    observation, state = env.reset(episode)
    begin = getattr(agent, "begin_episode", None)
    if begin is not None:
        begin(observation)
    observe = getattr(agent, "observe", None)
    dates = [state.date]
    values = [state.value]
    raw_actions: list[np.ndarray] = []
    allocations: list[np.ndarray] = []
    rewards_: list[float] = []
    daily_nets: list[float] = []
    observations: list[Observation] = [observation]

    for _ in range(episode.length):
        try:
            raw = np.asarray(agent.act(observation), dtype=np.float64)
        except (ActionError, AgentError):
            raise
        except Exception as exc:
            raise AgentError(f"agent.act failed: {exc!r}") from exc
        if raw.shape != (env.action_size,):
            raise AgentError(
                f"agent returned action of shape {raw.shape}, expected ({env.action_size},)"
            )
        allocation = validate_action(raw, env.config.projection)
        transition, state = env.step(allocation)
        if observe is not None:
            observe(transition)
        raw_actions.append(raw)
        allocations.append(allocation.weights)
        rewards_.append(transition.reward)
        daily_nets.append(transition.info["daily_net"])
        dates.append(state.date)
        values.append(state.value)
        observation = transition.observation
        observations.append(observation)
        if transition.done:
            break

    return Trajectory(
        dates=tuple(dates),
        raw_actions=tuple(raw_actions),
        allocations=tuple(allocations),
        values=np.asarray(values),
        rewards=np.asarray(rewards_),
        daily_nets=np.asarray(daily_nets),
        observations=tuple(observations) if record_observations else None,
    )
