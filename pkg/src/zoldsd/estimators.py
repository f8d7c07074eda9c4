"""Gradient surrogates: two-point oracle, directional estimator, REINFORCE mu-gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sampling import SamplingPolicy, log_density_grad, normalize, normalize_rows


class NonFiniteProbeError(ArithmeticError):
    """An objective probe returned inf or nan."""


@dataclass(frozen=True)
class ProbeSet:
    """Forward probes f(x + tau v_i) for a batch of directions."""

    directions: np.ndarray
    forward_values: np.ndarray
    tau: float

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if len(self.directions) != len(self.forward_values):
            raise ValueError("directions and forward_values differ in length")
        if not np.all(np.isfinite(self.forward_values)):
            raise NonFiniteProbeError("probe values must be finite")

    @property
    def K(self) -> int:
        return len(self.forward_values)


@dataclass(frozen=True)
class MuGradEstimate:
    g_mu: np.ndarray
    baseline_kind: str
    per_sample_advantages: np.ndarray


def _probe(oracle, x: np.ndarray) -> float:
    val = oracle.value(x)
    if not math.isfinite(val):
        raise NonFiniteProbeError(f"objective returned {val!r}")
    return val


def two_point(oracle, x, v, tau: float) -> float:
    """Central difference (f(x + tau v) - f(x - tau v)) / (2 tau). Two calls."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    fp = _probe(oracle, x + tau * v)
    fm = _probe(oracle, x - tau * v)
    return (fp - fm) / (2.0 * tau)


def dgd_estimate(grad, directions) -> np.ndarray:
    """Average of projections (1/K) sum_k vbar_k <vbar_k, grad> over unit directions."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.linalg.norm(grad) > 0:
        raise ValueError("gradient must be nonzero")
    U = normalize_rows(np.atleast_2d(np.asarray(directions, dtype=np.float64)))
    return (U @ grad) @ U / U.shape[0]


def reinforce_mu_grad_mean(policy: SamplingPolicy, directions, rewards) -> MuGradEstimate:
    """Score-function estimate of grad_mu E[reward] with the batch mean as baseline."""
    V = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    r = np.asarray(rewards, dtype=np.float64)
    K = r.size
    if K < 2:
        raise ValueError("mean baseline needs K >= 2")
    if V.shape[0] != K:
        raise ValueError("directions and rewards differ in length")
    adv = r - r.mean()
    g = adv @ log_density_grad(policy, V) / K
    return MuGradEstimate(g, "mean", adv)


def loo_advantages(values) -> np.ndarray:
    """(K f_i - sum_j f_j) / (K - 1): each value minus the mean of the others."""
    f = np.asarray(values, dtype=np.float64)
    K = f.size
    if K < 2:
        raise ValueError("leave-one-out baseline needs K >= 2")
    return (K * f - f.sum()) / (K - 1)


def reinforce_mu_grad_loo(policy: SamplingPolicy, probes: ProbeSet, reward_sign: int = -1) -> MuGradEstimate:
    """Score-function mu-gradient from forward probes with a leave-one-out baseline.

    ``reward_sign=-1`` (default) treats ``-f`` as the reward, so ascent on mu
    moves it toward directions that decrease f. ``reward_sign=+1`` uses the raw
    probe values as written in the ZO-LDSD pseudocode. No extra oracle calls.
    """
    if reward_sign not in (-1, 1):
        raise ValueError("reward_sign must be +1 or -1")
    adv = reward_sign * loo_advantages(probes.forward_values)
    V = np.atleast_2d(np.asarray(probes.directions, dtype=np.float64))
    g = adv @ log_density_grad(policy, V) / probes.K
    return MuGradEstimate(g, "leave_one_out", adv)


def select_best_direction(oracle, x, directions, tau: float) -> tuple[int, np.ndarray, ProbeSet]:
    """Pick the direction with the smallest forward probe f(x + tau v). K calls.

    Ties go to the lowest index. The returned :class:`ProbeSet` carries every
    probe value so the caller can reuse them.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    V = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if V.shape[0] < 1:
        raise ValueError("need at least one direction")
    x = np.asarray(x, dtype=np.float64)
    values = np.array([_probe(oracle, x + tau * v) for v in V])
    idx = int(np.argmin(values))  # first occurrence on ties
    return idx, V[idx], ProbeSet(V, values, float(tau))


def zo_gradient(oracle, x, v_star, tau: float, forward_value: float | None = None,
                normalized: bool = False) -> np.ndarray:
    """Two-point estimate along ``v_star`` times ``v_star``.

    With ``forward_value`` (the cached f(x + tau v*)) only the backward probe is
    evaluated. ``normalized=True`` returns vbar <vbar, grad> instead, computed
    from the same probes as slope * v / |v|^2.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v_star, dtype=np.float64)
    if forward_value is None:
        slope = two_point(oracle, x, v, tau)
    else:
        if not math.isfinite(forward_value):
            raise NonFiniteProbeError("cached forward probe is not finite")
        slope = (forward_value - _probe(oracle, x - tau * v)) / (2.0 * tau)
    if normalized:
        vbar = normalize(v)
        return slope * vbar / np.linalg.norm(v)
    return slope * v
