"""Reward functions shaping agent behavior.

Four kinds: per-step net value change, and three episodic rewards paid only at
the terminal step (total value change, rate of return, Sortino ratio of the
episode's daily nets).  Default scales bring typical magnitudes near +-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import metrics
from .errors import ConfigError

KINDS = ("daily_net", "episodic_value", "episodic_ror", "episodic_sortino")

DEFAULT_SCALES = {
    "daily_net": 1e-4,
    "episodic_value": 1e-4,
    "episodic_ror": 1.0,
    "episodic_sortino": 0.1,
}

#: Sortino with zero downside deviation is capped here before scaling;
#: unbounded rewards destabilize learning.
SORTINO_CAP = 10.0


@dataclass(frozen=True)
class RewardSpec:
    kind: str = "daily_net"
    scale: float = DEFAULT_SCALES["daily_net"]
    sortino_cap: float = SORTINO_CAP

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown reward kind {self.kind!r}")
        if not self.scale > 0:
            raise ConfigError("reward scale must be positive")

    @classmethod
    def default(cls, kind: str) -> "RewardSpec":
        return cls(kind=kind, scale=DEFAULT_SCALES[kind])


def daily_net(v_t: float, v_t1: float, scale: float = 1.0) -> float:
    """Net value change over one step."""
    return scale * (v_t1 - v_t)


def episodic_value(
    v_0: float, v_t: float, step_index: int, total_steps: int, scale: float = 1.0
) -> float:
    """Total value change, paid at the terminal step only."""
    if step_index < total_steps:
        return 0.0
    return scale * (v_t - v_0)


def episodic_ror(
    v_0: float, v_t: float, step_index: int, total_steps: int, scale: float = 1.0
) -> float:
    """Episode rate of return, paid at the terminal step; invariant to V_0 scaling."""
    if step_index < total_steps:
        return 0.0
    return scale * (v_t - v_0) / v_0


def episodic_sortino(
    daily_net_series: np.ndarray,
    step_index: int,
    total_steps: int,
    scale: float = 1.0,
    cap: float = SORTINO_CAP,
) -> float:
    """Unannualized Sortino of the episode's daily nets, paid at the terminal step.

    Zero downside deviation (the +inf sentinel from metrics.sortino) is capped.
    """
    if step_index < total_steps:
        return 0.0
    ratio = metrics.sortino(daily_net_series, rfr=0.0, threshold=0.0)
    if math.isinf(ratio):
        ratio = cap
    return scale * min(ratio, cap)


def compute(
    spec: RewardSpec,
    *,
    v_prev: float,
    v_next: float,
    v_initial: float,
    step_index: int,
    total_steps: int,
    daily_nets: np.ndarray,
) -> float:
    """Dispatch to the configured reward; the environment calls this per step."""
    if spec.kind == "daily_net":
        return daily_net(v_prev, v_next, spec.scale)
    if spec.kind == "episodic_value":
        return episodic_value(v_initial, v_next, step_index, total_steps, spec.scale)
    if spec.kind == "episodic_ror":
        return episodic_ror(v_initial, v_next, step_index, total_steps, spec.scale)
    return episodic_sortino(daily_nets, step_index, total_steps, spec.scale, spec.sortino_cap)
