"""Agent interface, the reference policy-gradient learner, and checkpointing.

Agents expose ``act(observation) -> raw action vector`` of length N+1 and may
implement optional ``begin_episode``/``observe`` hooks.  One integer seed must
determine all of an agent's stochastic behavior.

The reference learner is a small tanh MLP over the flattened observation.  It
emits the softmax of its logits when evaluating; while training it samples a
Dirichlet whose mean is that softmax (fixed concentration), so updates can
backpropagate the score function of a proper density over the simplex.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from .environment import Trajectory
from .errors import AgentError, CheckpointError, ConfigError
from .representations import Observation

CHECKPOINT_MAGIC = b"OPGC"
CHECKPOINT_VERSION = 1

DEFAULT_HIDDEN = (64, 64)


@dataclass(frozen=True)
class AgentSpec:
    """What to build: a builtin name, the reference learner, or an external bridge."""

    kind: str
    seed: int = 0
    hyperparameters: dict = field(default_factory=dict)


class PolicyNet:
    """Tanh MLP with identity output, parameters in one flat float64 vector."""

    def __init__(self, input_dim: int, hidden: tuple[int, ...], output_dim: int,
                 params: np.ndarray | None = None):
        self.input_dim = int(input_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.output_dim = int(output_dim)
        dims = (self.input_dim,) + self.hidden + (self.output_dim,)
        self._shapes = [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]
        self.n_params = sum(o * i + o for o, i in self._shapes)
        if params is None:
            params = np.zeros(self.n_params)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise AgentError(
                f"parameter vector has {params.size} entries, architecture needs {self.n_params}"
            )
        self.params = params

    @classmethod
    def initialize(cls, input_dim, hidden, output_dim, rng: np.random.Generator) -> "PolicyNet":
        """Xavier-scaled hidden layers; zero output layer, so initial logits are 0."""
        net = cls(input_dim, hidden, output_dim)
        for k, (w, b) in enumerate(net._layer_views()):
            if k < len(net._shapes) - 1:
                w[:] = rng.standard_normal(w.shape) * np.sqrt(2.0 / (w.shape[0] + w.shape[1]))
                b[:] = 0.0
        return net

    def _layer_views(self):
        views = []
        offset = 0
        for out_dim, in_dim in self._shapes:
            w = self.params[offset : offset + out_dim * in_dim].reshape(out_dim, in_dim)
            offset += out_dim * in_dim
            b = self.params[offset : offset + out_dim]
            offset += out_dim
            views.append((w, b))
        return views

    def forward(self, x: np.ndarray):
        """Logits plus the activation cache needed by backward()."""
        if x.shape != (self.input_dim,):
            raise AgentError(f"input of shape {x.shape}, expected ({self.input_dim},)")
        activations = [x]
        h = x
        views = self._layer_views()
        for w, b in views[:-1]:
            h = np.tanh(w @ h + b)
            activations.append(h)
        w, b = views[-1]
        logits = w @ h + b
        return logits, activations

    def backward(self, grad_logits: np.ndarray, activations: list[np.ndarray]) -> np.ndarray:
        """Flat parameter gradient for a loss with the given logits gradient."""
        grads = np.zeros_like(self.params)
        views = self._layer_views()
        grad_views = PolicyNet(self.input_dim, self.hidden, self.output_dim, grads)._layer_views()
        delta = grad_logits
        for k in range(len(views) - 1, -1, -1):
            w, _ = views[k]
            gw, gb = grad_views[k]
            gw += np.outer(delta, activations[k])
            gb += delta
            if k > 0:
                delta = (w.T @ delta) * (1.0 - activations[k] ** 2)
        return grads


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def dirichlet_log_density(logits: np.ndarray, action: np.ndarray, concentration: float) -> float:
    """log Dir(action | concentration * softmax(logits))."""
    alpha = concentration * softmax(logits)
    return float(
        gammaln(concentration) - gammaln(alpha).sum() + ((alpha - 1.0) * np.log(action)).sum()
    )


def dirichlet_logits_grad(logits: np.ndarray, action: np.ndarray, concentration: float) -> np.ndarray:
    """d/d logits of the Dirichlet log-density, through the softmax mean."""
    pi = softmax(logits)
    alpha = concentration * pi
    u = np.log(action) - digamma(alpha)
    return concentration * pi * (u - float(pi @ u))


class ReferencePG:
    """Monte-Carlo policy-gradient learner over simplex allocations."""

    def __init__(
        self,
        input_dim: int,
        n_assets: int,
        *,
        seed: int,
        hidden: tuple[int, ...] = DEFAULT_HIDDEN,
        learning_rate: float = 0.05,
        discount: float = 0.99,
        concentration: float = 50.0,
    ):
        if concentration <= 0:
            raise ConfigError("concentration must be positive")
        self.n_assets = int(n_assets)
        self.seed = int(seed)
        self.learning_rate = float(learning_rate)
        self.discount = float(discount)
        self.concentration = float(concentration)
        self.rng = np.random.default_rng(seed)
        self.net = PolicyNet.initialize(input_dim, tuple(hidden), n_assets + 1, self.rng)
        self.training = True
        self.skipped_updates = 0

    def act(self, observation: Observation) -> np.ndarray:
        x = observation.values.reshape(-1)
        logits, _ = self.net.forward(x)
        pi = softmax(logits)
        if not self.training:
            return pi
        sample = self.rng.dirichlet(self.concentration * pi)
        sample = np.clip(sample, 1e-12, None)
        return sample / sample.sum()

    def policy(self, observation: Observation) -> np.ndarray:
        """Deterministic allocation (softmax of logits), regardless of mode."""
        logits, _ = self.net.forward(observation.values.reshape(-1))
        return softmax(logits)


def agent_act(agent, observation: Observation) -> np.ndarray:
    """Protocol-checked action: finite, 1-D, produced without raising."""
    try:
        raw = np.asarray(agent.act(observation), dtype=np.float64)
    except AgentError:
        raise
    except Exception as exc:
        raise AgentError(f"agent.act failed: {exc!r}") from exc
    if raw.ndim != 1 or not np.isfinite(raw).all():
        raise AgentError("agent returned a malformed action vector")
    return raw


def returns_to_go(step_rewards: np.ndarray, discount: float) -> np.ndarray:
    out = np.empty(len(step_rewards))
    acc = 0.0
    for t in range(len(step_rewards) - 1, -1, -1):
        acc = float(step_rewards[t]) + discount * acc
        out[t] = acc
    return out


def pg_update(
    agent: ReferencePG,
    trajectory: Trajectory,
    learning_rate: float | None = None,
    discount: float | None = None,
) -> ReferencePG:
    """One REINFORCE ascent step from a completed episode.

    Uses returns-to-go against the trajectory-mean baseline; the raw actions in
    the trajectory must be the Dirichlet samples the agent emitted.  A
    non-finite gradient skips the update and increments ``skipped_updates``.
    """
    if trajectory.observations is None:
        raise AgentError("trajectory lacks observations; run with record_observations=True")
    lr = agent.learning_rate if learning_rate is None else learning_rate
    gamma = agent.discount if discount is None else discount
    returns = returns_to_go(trajectory.rewards, gamma)
    baseline = float(returns.mean())
    grad = np.zeros_like(agent.net.params)
    for t in range(trajectory.steps):
        x = trajectory.observations[t].values.reshape(-1)
        action = np.clip(trajectory.raw_actions[t], 1e-12, None)
        logits, cache = agent.net.forward(x)
        g_logits = dirichlet_logits_grad(logits, action, agent.concentration)
        grad += (returns[t] - baseline) * agent.net.backward(g_logits, cache)
    if not np.isfinite(grad).all():
        agent.skipped_updates += 1
        return agent
    agent.net.params = agent.net.params + lr * grad
    return agent


# -- checkpointing ----------------------------------------------------------------
#
# Layout (little-endian): 4-byte magic, u16 version, u32 input_dim,
# u16 hidden-layer count, u32 per hidden size, u32 output_dim,
# f64 concentration, u64 parameter count, then the flat f64 parameter vector.


def checkpoint(agent: ReferencePG) -> bytes:
    net = agent.net
    head = struct.pack(
        "<4sHIH" + "I" * len(net.hidden) + "IdQ",
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        net.input_dim,
        len(net.hidden),
        *net.hidden,
        net.output_dim,
        agent.concentration,
        net.n_params,
    )
    return head + np.ascontiguousarray(net.params, dtype="<f8").tobytes()


def restore(blob: bytes, *, seed: int = 0, **hyperparameters) -> ReferencePG:
    """Rebuild an agent that acts identically to the checkpointed one."""
    fixed = struct.calcsize("<4sHIH")
    if len(blob) < fixed:
        raise CheckpointError("checkpoint blob truncated")
    magic, version, input_dim, n_hidden = struct.unpack_from("<4sHIH", blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError("not a policy checkpoint (bad magic)")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    tail_fmt = "<" + "I" * n_hidden + "IdQ"
    if len(blob) < fixed + struct.calcsize(tail_fmt):
        raise CheckpointError("checkpoint blob truncated")
    tail = struct.unpack_from(tail_fmt, blob, fixed)
    hidden = tail[:n_hidden]
    output_dim, concentration, n_params = tail[n_hidden:]
    offset = fixed + struct.calcsize(tail_fmt)
    expected = offset + 8 * n_params
    if len(blob) != expected:
        raise CheckpointError(
            f"checkpoint is {len(blob)} bytes, architecture implies {expected}"
        )
    params = np.frombuffer(blob, dtype="<f8", offset=offset).astype(np.float64)
    agent = ReferencePG(
        input_dim,
        output_dim - 1,
        seed=seed,
        hidden=hidden,
        concentration=concentration,
        **hyperparameters,
    )
    agent.net = PolicyNet(input_dim, hidden, output_dim, params)
    return agent


def make_agent(
    spec: AgentSpec,
    *,
    n_assets: int,
    input_dim: int | None = None,
    data=None,
    assets=None,
    mvo_config=None,
):
    """Build an agent from its spec: builtin, reference learner, or external bridge."""
    from . import baselines  # heuristics live with the other baselines

    builtins = baselines.heuristic_agents()
    if spec.kind in builtins:
        return builtins[spec.kind](
            n_assets=n_assets,
            seed=spec.seed,
            data=data,
            assets=assets,
            mvo_config=mvo_config,
        )
    if spec.kind == "reference_pg":
        if input_dim is None:
            raise ConfigError("reference_pg needs the observation length")
        return ReferencePG(input_dim, n_assets, seed=spec.seed, **spec.hyperparameters)
    if spec.kind == "external":
        try:
            import importlib

            bridge = importlib.import_module("olps_bridge")
        except ImportError as exc:
            raise ConfigError(
                "agent kind 'external' needs the olps-bridge package installed"
            ) from exc
        return bridge.make_external_agent(spec, n_assets=n_assets)
    raise ConfigError(f"unknown agent kind {spec.kind!r}")
