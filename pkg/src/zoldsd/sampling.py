"""Gaussian direction sampling and the gradient-alignment functional."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Norms below this are treated as the zero vector.
DEGENERATE_NORM = 1e-30


class DegenerateDirectionError(ValueError):
    """A vector that had to be normalized has (near) zero norm."""


@dataclass(frozen=True)
class SamplingPolicy:
    """Direction distribution N(mu, epsilon^2 I)."""

    mu: np.ndarray
    epsilon: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64)
        if mu.ndim != 1 or mu.size == 0:
            raise ValueError("mu must be a nonempty 1-d vector")
        if not np.all(np.isfinite(mu)):
            raise ValueError("mu must be finite")
        if not (self.epsilon > 0 and np.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def dim(self) -> int:
        return self.mu.size

    def with_mu(self, mu: np.ndarray) -> "SamplingPolicy":
        return SamplingPolicy(mu, self.epsilon)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one named stream of a seeded run.

    Streams with different ``stream`` ids are statistically independent, so
    direction sampling and data shuffling never share draws.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def sample_directions(policy: SamplingPolicy, K: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``K`` directions ``mu + epsilon * z``; returns a (K, d) array."""
    if K < 1:
        raise ValueError(f"K must be a positive integer, got {K}")
    z = rng.standard_normal((K, policy.dim))
    return policy.mu + policy.epsilon * z


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not n > DEGENERATE_NORM:
        raise DegenerateDirectionError(f"cannot normalize vector with norm {n:g}")
    return v / n


def normalize_rows(V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=-1, keepdims=True)
    if np.any(~(norms > DEGENERATE_NORM)):
        raise DegenerateDirectionError("direction batch contains a zero-norm row")
    return V / norms


def alignment(v, g) -> float:
    """Squared cosine between ``v`` and ``g``."""
    c = float(np.dot(normalize(v), normalize(g)))
    return min(c * c, 1.0)


def alignments(V: np.ndarray, g) -> np.ndarray:
    """Row-wise :func:`alignment` for a (K, d) batch."""
    c = normalize_rows(np.atleast_2d(V)) @ normalize(g)
    return np.minimum(c * c, 1.0)


def log_density_grad(policy: SamplingPolicy, v) -> np.ndarray:
    """Score function of the Gaussian w.r.t. its mean: (v - mu) / epsilon^2.

    Accepts a single direction or a (K, d) batch.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != policy.dim:
        raise ValueError(f"dimension mismatch: v has {v.shape[-1]}, mu has {policy.dim}")
    return (v - policy.mu) / policy.epsilon**2


def log_density(policy: SamplingPolicy, v) -> float:
    v = np.asarray(v, dtype=np.float64)
    d = policy.dim
    r = v - policy.mu
    return float(-0.5 * np.dot(r, r) / policy.epsilon**2 - d * np.log(policy.epsilon) - 0.5 * d * np.log(2 * np.pi))


def random_unit(dim: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        z = rng.standard_normal(dim)
        n = np.linalg.norm(z)
        if n > DEGENERATE_NORM:
            return z / n


def with_angle(g, cos_beta: float, rng: np.random.Generator, norm: float = 1.0) -> np.ndarray:
    """Vector of the given norm whose cosine with ``g`` equals ``cos_beta``.

    The orthogonal component points along a random direction.
    """
    if not -1.0 <= cos_beta <= 1.0:
        raise ValueError("cos_beta must lie in [-1, 1]")
    gbar = normalize(g)
    if gbar.size < 2:
        raise ValueError("need at least two dimensions to set an angle")
    while True:
        w = rng.standard_normal(gbar.size)
        w -= np.dot(w, gbar) * gbar
        if np.linalg.norm(w) > 1e-8:
            break
    w = normalize(w)
    return norm * (cos_beta * gbar + np.sqrt(max(0.0, 1.0 - cos_beta**2)) * w)
