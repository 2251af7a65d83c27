"""Exception hierarchy shared across the package.

Every domain error carries a stable machine-readable ``code`` so the CLI can
print ``error[<code>]: <message>`` and scripts can branch on it.
"""

from __future__ import annotations


class BenchmarkError(Exception):
    """Base class for all domain errors raised by this package."""

    code = "generic"

    def __init__(self, message: str, *, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class DataError(BenchmarkError):
    """Malformed, missing, or inconsistent market data."""

    code = "data.invalid"


class InsufficientHistoryError(DataError):
    """Not enough history before a date to build an observation or estimate."""

    code = "data.insufficient_history"


class UniverseError(DataError):
    """Asset sampling could not satisfy the request."""

    code = "data.universe"


class SplitError(DataError):
    """Episode split request infeasible for the given calendar."""

    code = "data.split_infeasible"

    def __init__(self, message: str, *, max_feasible: int | None = None):
        super().__init__(message)
        self.max_feasible = max_feasible


class ActionError(BenchmarkError):
    """Agent action rejected by the environment."""

    code = "env.invalid_action"


class AgentError(BenchmarkError):
    """Agent violated the agent interface."""

    code = "agent.protocol"


class CheckpointError(AgentError):
    """Checkpoint blob unreadable or from an incompatible version."""

    code = "agent.checkpoint"


class SolverError(BenchmarkError):
    """Numerical solver received invalid inputs."""

    code = "solver.invalid_input"


class ConfigError(BenchmarkError):
    """Experiment configuration missing, malformed, or inconsistent."""

    code = "config.invalid"


class MetricError(BenchmarkError):
    """Metric called outside its domain (empty series, bad alignment)."""

    code = "metrics.domain"
