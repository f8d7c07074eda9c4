"""LDSD and ZO-LDSD loop drivers with pluggable x-update rules.

Method names used throughout:

``ldsd``         exact directional derivatives, mean-baseline REINFORCE on mu
``dgd``          same estimator with mu fixed at zero (random directions)
``zo_ldsd``      forward-only: greedy v*, two-point g_x, leave-one-out mu update
``zo_baseline``  forward-only with mu fixed at zero; K=1 is plain ZO-SGD
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .estimators import (
    dgd_estimate,
    reinforce_mu_grad_loo,
    reinforce_mu_grad_mean,
    select_best_direction,
    zo_gradient,
)
from .sampling import (
    DEGENERATE_NORM,
    DegenerateDirectionError,
    SamplingPolicy,
    alignments,
    normalize,
    random_unit,
    sample_directions,
)
from .trace import TraceRecord

METHODS = ("ldsd", "dgd", "zo_ldsd", "zo_baseline")
PLUGINS = ("sgd_momentum", "adamm", "jaguar_sign")
# Resampling rounds before a zero-norm policy is reported as an error.
MAX_RESAMPLE_ROUNDS = 100


@dataclass(frozen=True)
class StepSizes:
    gamma_x: float
    gamma_mu: float = 0.0
    schedule: str = "constant"
    horizon: int | None = None

    def __post_init__(self):
        if not self.gamma_x >= 0:
            raise ValueError("gamma_x must be nonnegative")
        if not self.gamma_mu >= 0:
            raise ValueError("gamma_mu must be nonnegative")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "cosine" and not self.horizon:
            raise ValueError("cosine schedule needs a horizon")

    def gamma_x_at(self, t: int) -> float:
        """Step size for the x-update at 0-based iteration ``t``; mu's step stays constant."""
        if self.schedule == "constant":
            return self.gamma_x
        return 0.5 * self.gamma_x * (1.0 + math.cos(math.pi * min(t, self.horizon) / self.horizon))


@dataclass(frozen=True)
class PluginRule:
    """x-update rule applied to the gradient estimate.

    sgd_momentum: m <- beta m + g;                   dx = -gamma m
    adamm:        Adam moments with bias correction;  dx = -gamma mhat / (sqrt(shat) + floor)
    jaguar_sign:  m <- beta m + (1 - beta) g;         dx = -gamma sign(m)
    """

    kind: str = "sgd_momentum"
    beta: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    floor: float = 1e-8

    def __post_init__(self):
        if self.kind not in PLUGINS:
            raise ValueError(f"unknown plugin {self.kind!r}")
        for name in ("beta", "beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if not self.floor > 0:
            raise ValueError("floor must be positive")

    def init_buffers(self, dim: int) -> dict[str, np.ndarray]:
        if self.kind == "adamm":
            return {"m": np.zeros(dim), "s": np.zeros(dim)}
        return {"m": np.zeros(dim)}


def apply_plugin(rule: PluginRule, buffers: dict[str, np.ndarray], g, gamma: float, t: int):
    """One x-update; ``t`` is the 1-based update count. Returns ``(delta_x, buffers)``."""
    g = np.asarray(g, dtype=np.float64)
    need = ("m", "s") if rule.kind == "adamm" else ("m",)
    missing = [k for k in need if k not in buffers]
    if missing:
        raise ValueError(f"plugin buffers not initialized: {missing}")
    if t < 1:
        raise ValueError("t counts updates from 1")
    if rule.kind == "sgd_momentum":
        m = rule.beta * buffers["m"] + g
        return -gamma * m, {"m": m}
    if rule.kind == "adamm":
        m = rule.beta1 * buffers["m"] + (1 - rule.beta1) * g
        s = rule.beta2 * buffers["s"] + (1 - rule.beta2) * g * g
        mhat = m / (1 - rule.beta1**t)
        shat = s / (1 - rule.beta2**t)
        return -gamma * mhat / (np.sqrt(shat) + rule.floor), {"m": m, "s": s}
    m = rule.beta * buffers["m"] + (1 - rule.beta) * g
    return -gamma * np.sign(m), {"m": m}


@dataclass
class StepInfo:
    g_x: np.ndarray | None
    directions: np.ndarray | None
    grad: np.ndarray | None = None
    skipped: bool = False


@dataclass
class OptimizerState:
    x: np.ndarray
    policy: SamplingPolicy
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    oracle_calls: int = 0
    skipped_steps: int = 0
    degenerate_resamples: int = 0
    last: StepInfo | None = field(default=None, repr=False)

    @classmethod
    def initial(cls, x0, mu0, epsilon: float, plugin: PluginRule | None = None) -> "OptimizerState":
        x0 = np.array(x0, dtype=np.float64)
        buffers = plugin.init_buffers(x0.size) if plugin is not None else {}
        return cls(x0, SamplingPolicy(mu0, epsilon), buffers)


def _sample_nondegenerate(state: OptimizerState, K: int, rng) -> tuple[np.ndarray, int]:
    V = sample_directions(state.policy, K, rng)
    resamples = 0
    for _ in range(MAX_RESAMPLE_ROUNDS):
        bad = ~(np.linalg.norm(V, axis=1) > DEGENERATE_NORM)
        if not bad.any():
            return V, resamples
        resamples += int(bad.sum())
        V[bad] = sample_directions(state.policy, int(bad.sum()), rng)
    raise DegenerateDirectionError("policy keeps producing zero-norm directions")


def ldsd_step(state: OptimizerState, oracle, steps: StepSizes, K: int, rng,
              learn_mu: bool = True) -> OptimizerState:
    """One iteration of LDSD with exact directional derivatives (K calls).

    ``learn_mu=False`` gives the random-direction baseline.
    """
    if not oracle.has_grad:
        raise ValueError("LDSD needs an objective with a gradient")
    learn = learn_mu and steps.gamma_mu > 0
    if learn and K < 2:
        raise ValueError("learning mu with a mean baseline needs K >= 2")
    g = oracle.grad(state.x)
    calls = state.oracle_calls + K
    if not np.linalg.norm(g) > 0:
        return replace(state, t=state.t + 1, oracle_calls=calls, skipped_steps=state.skipped_steps + 1,
                       last=StepInfo(None, None, g, skipped=True))
    V, resampled = _sample_nondegenerate(state, K, rng)
    g_x = dgd_estimate(g, V)
    policy = state.policy
    if learn:
        C = alignments(V, g)
        g_mu = reinforce_mu_grad_mean(policy, V, C).g_mu
        policy = policy.with_mu(policy.mu + steps.gamma_mu * g_mu)
    x = state.x - steps.gamma_x_at(state.t) * g_x
    return replace(state, x=x, policy=policy, t=state.t + 1, oracle_calls=calls,
                   degenerate_resamples=state.degenerate_resamples + resampled,
                   last=StepInfo(g_x, V, g))


def zo_ldsd_step(state: OptimizerState, oracle, steps: StepSizes, K: int, tau: float,
                 plugin: PluginRule, reward_sign: int = -1, rng=None, learn_mu: bool = True,
                 normalized: bool = False) -> OptimizerState:
    """One forward-only iteration: K probes, greedy v*, one backward probe (K+1 calls)."""
    learn = learn_mu and steps.gamma_mu > 0
    if learn and K < 2:
        raise ValueError("leave-one-out baseline needs K >= 2")
    if not tau > 0:
        raise ValueError("tau must be positive")
    V, resampled = _sample_nondegenerate(state, K, rng)
    idx, v_star, probes = select_best_direction(oracle, state.x, V, tau)
    g_x = zo_gradient(oracle, state.x, v_star, tau, forward_value=probes.forward_values[idx],
                      normalized=normalized)
    policy = state.policy
    if learn:
        g_mu = reinforce_mu_grad_loo(policy, probes, reward_sign).g_mu
        policy = policy.with_mu(policy.mu + steps.gamma_mu * g_mu)
    buffers = state.buffers or plugin.init_buffers(state.x.size)
    delta, buffers = apply_plugin(plugin, buffers, g_x, steps.gamma_x_at(state.t), state.t + 1)
    return replace(state, x=state.x + delta, policy=policy, buffers=buffers, t=state.t + 1,
                   oracle_calls=state.oracle_calls + K + 1,
                   degenerate_resamples=state.degenerate_resamples + resampled,
                   last=StepInfo(g_x, V))


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "zo_ldsd"
    K: int = 5
    tau: float = 1e-3
    epsilon: float = 1.0
    gamma_x: float = 1e-3
    gamma_mu: float = 1e-3
    schedule: str = "constant"
    plugin: PluginRule = field(default_factory=PluginRule)
    reward_sign: int = -1
    normalized_zo: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.K < 1:
            raise ValueError("K must be a positive integer")
        if self.learns_mu and self.gamma_mu > 0 and self.K < 2:
            raise ValueError(f"{self.method} with gamma_mu > 0 needs K >= 2")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.reward_sign not in (-1, 1):
            raise ValueError("reward_sign must be +1 or -1")

    @property
    def learns_mu(self) -> bool:
        return self.method in ("ldsd", "zo_ldsd")

    @property
    def calls_per_iteration(self) -> int:
        if self.method in ("ldsd", "dgd"):
            return self.K
        return self.K + 1

    def step_sizes(self, horizon: int | None) -> StepSizes:
        gamma_mu = self.gamma_mu if self.learns_mu else 0.0
        return StepSizes(self.gamma_x, gamma_mu, self.schedule, horizon)


def iterations_for(config: OptimizerConfig, horizon: int | None = None, budget: int | None = None) -> int:
    """Iteration count for a run bounded by exactly one of horizon or oracle budget."""
    if (horizon is None) == (budget is None):
        raise ValueError("set exactly one of horizon and budget")
    if horizon is not None:
        if horizon < 1:
            raise ValueError("horizon must be positive")
        return int(horizon)
    cost = config.calls_per_iteration
    if budget < cost:
        raise ValueError(f"budget {budget} is smaller than one iteration ({cost} calls)")
    return int(budget) // cost


def step(state: OptimizerState, config: OptimizerConfig, oracle, steps: StepSizes, rng) -> OptimizerState:
    if config.method in ("ldsd", "dgd"):
        return ldsd_step(state, oracle, steps, config.K, rng, learn_mu=config.learns_mu)
    return zo_ldsd_step(state, oracle, steps, config.K, config.tau, config.plugin, config.reward_sign,
                        rng, learn_mu=config.learns_mu, normalized=config.normalized_zo)


def _record(state: OptimizerState, oracle, g_prev, run_id: str, seed: int) -> TraceRecord:
    info = state.last
    grad_norm = align_cos = mc_align = None
    if oracle.has_grad:
        grad_norm = float(np.linalg.norm(oracle.grad(state.x)))
        if g_prev is not None and info.g_x is not None and np.linalg.norm(g_prev) > 0:
            gx_norm = np.linalg.norm(info.g_x)
            align_cos = float(np.dot(info.g_x, g_prev) / (gx_norm * np.linalg.norm(g_prev))) if gx_norm > 0 else 0.0
            mc_align = float(np.mean(alignments(info.directions, g_prev)))
    return TraceRecord(run_id, state.t, state.oracle_calls, float(oracle.value_fn(state.x)), grad_norm,
                       align_cos, mc_align, float(np.linalg.norm(state.policy.mu)), info.skipped, seed)


def run(config: OptimizerConfig, oracle, x0, mu0, rng, *, horizon: int | None = None,
        budget: int | None = None, sink: Callable[[TraceRecord], None] | None = None,
        run_id: str = "run", seed: int = 0) -> tuple[OptimizerState, list[TraceRecord]]:
    """Iterate until the horizon or the oracle budget is exhausted.

    One :class:`TraceRecord` is produced per iteration. Telemetry evaluations
    (loss, gradient norm) are not charged to the oracle budget.
    """
    T = iterations_for(config, horizon, budget)
    steps = config.step_sizes(T)
    x0 = np.asarray(x0, dtype=np.float64)
    if not config.learns_mu:
        mu0 = np.zeros_like(x0)
    state = OptimizerState.initial(x0, mu0, config.epsilon, config.plugin)
    records = []
    for _ in range(T):
        g_prev = oracle.grad(state.x) if oracle.has_grad else None
        state = step(state, config, oracle, steps, rng)
        rec = _record(state, oracle, g_prev, run_id, seed)
        records.append(rec)
        if sink is not None:
            sink(rec)
    return state, records


def init_mu(kind: str, dim: int, rng, oracle=None, x0=None, scale: float = 1.0) -> np.ndarray:
    """Initial policy mean: ``random_unit``, ``collinear`` (to grad f(x0)) or ``zero``.

    ``scale`` sets the norm of the nonzero variants.
    """
    if kind == "zero":
        return np.zeros(dim)
    if kind == "random_unit":
        return scale * random_unit(dim, rng)
    if kind == "collinear":
        if oracle is None or not oracle.has_grad:
            raise ValueError("collinear initialization needs an objective with a gradient")
        return scale * normalize(oracle.grad(x0))
    raise ValueError(f"unknown mu_init {kind!r}")
