"""Numerical checks on expected gradient alignment.

F(mu) = E_{v ~ N(mu, eps^2 I)} [cos^2(v, g)] is estimated by Monte Carlo. The
helpers here cover its value (with standard error), a 2-d landscape grid, the
Hessian of the pointwise alignment psi_a(u) = <a, u/|u|>^2, and multi-step
dynamics of the policy mean under gradient ascent on F.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import reinforce_mu_grad_mean
from .sampling import (
    DegenerateDirectionError,
    SamplingPolicy,
    alignments,
    normalize,
    with_angle,
)

# Largest batch of d-dimensional draws materialized at once.
_CHUNK = 1 << 18

# Step-size constants of the alignment-growth analysis.
GAMMA_MU_DENOM = 640.0
EPS_DENOM = 960.0
GAMMA_X_DENOM = 3.0 * 2**14 * 5**2


@dataclass(frozen=True)
class AlignmentEstimate:
    mean: float
    stderr: float
    n_samples: int


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n))


def alignment_samples(mu, epsilon: float, g, z: np.ndarray) -> np.ndarray:
    """cos^2(mu + eps z_i, g) for each row of ``z`` (common random numbers)."""
    gbar = normalize(g)
    V = np.asarray(mu) + epsilon * z
    norms = np.linalg.norm(V, axis=1)
    if np.any(norms == 0):
        raise DegenerateDirectionError("zero-norm direction in Monte Carlo batch")
    c = (V @ gbar) / norms
    return np.minimum(c * c, 1.0)


def mc_expected_alignment(policy: SamplingPolicy, g, n: int, rng) -> AlignmentEstimate:
    """Sample mean and standard error of cos^2(v, g) over ``n`` draws of the policy."""
    if n < 100:
        raise ValueError("need at least 100 samples")
    g = np.asarray(g, dtype=np.float64)
    if not np.linalg.norm(g) > 0:
        raise DegenerateDirectionError("g must be nonzero")
    d = policy.dim
    chunk = max(1, _CHUNK // d)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        c = alignment_samples(policy.mu, policy.epsilon, g, rng.standard_normal((m, d)))
        total += c.sum()
        total_sq += np.dot(c, c)
        done += m
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    return AlignmentEstimate(float(mean), float(math.sqrt(var / n)), n)


def fd_alignment_gradient(mu, epsilon: float, g, z: np.ndarray, h: float,
                          coords=None) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient of the MC alignment w.r.t. mu, paired draws.

    The same ``z`` is used at mu + h e_i and mu - h e_i, so most of the Monte
    Carlo noise cancels. Returns ``(grad, stderr)`` over the requested coords.
    """
    mu = np.asarray(mu, dtype=np.float64)
    coords = range(mu.size) if coords is None else coords
    grad = []
    se = []
    for i in coords:
        e = np.zeros_like(mu)
        e[i] = h
        diff = (alignment_samples(mu + e, epsilon, g, z) - alignment_samples(mu - e, epsilon, g, z)) / (2 * h)
        m, s = _mean_stderr(diff)
        grad.append(m)
        se.append(s)
    return np.array(grad), np.array(se)


def landscape_grid(g, epsilon: float, mu1_range=(-2.0, 2.0), mu2_range=(-2.0, 2.0),
                   resolution: int = 21, n: int = 2000, rng=None):
    """Expected alignment on a regular grid of 2-d policy means.

    Returns ``(mu1_values, mu2_values, grid)`` where ``grid[i][j]`` is the
    :class:`AlignmentEstimate` at ``(mu1_values[i], mu2_values[j])``.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.size != 2:
        raise ValueError("landscape grid is defined for d = 2")
    if resolution < 3:
        raise ValueError("resolution must be at least 3")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    a = np.linspace(*mu1_range, resolution)
    b = np.linspace(*mu2_range, resolution)
    grid = [[mc_expected_alignment(SamplingPolicy(np.array([u, w]), epsilon), g, n, rng) for w in b] for u in a]
    return a, b, grid


def landscape_rows(a, b, grid) -> list[tuple[float, float, float, float]]:
    return [(float(u), float(w), grid[i][j].mean, grid[i][j].stderr)
            for i, u in enumerate(a) for j, w in enumerate(b)]


def psi(a, u) -> float:
    """Pointwise alignment <a/|a|, u/|u|>^2."""
    c = float(np.dot(normalize(a), normalize(u)))
    return c * c


def psi_grad(a, u) -> np.ndarray:
    """Analytic gradient of psi_a at u: 2 s abar / |u|^2 - 2 s^2 u / |u|^4, s = <abar, u>."""
    abar = normalize(a)
    u = np.asarray(u, dtype=np.float64)
    nu2 = float(np.dot(u, u))
    if not nu2 > 0:
        raise DegenerateDirectionError("u must be nonzero")
    s = float(np.dot(abar, u))
    return 2 * s * abar / nu2 - 2 * s * s * u / nu2**2


def spectral_norm(M: np.ndarray, iters: int = 20_000, tol: float = 1e-14, rng=None) -> float:
    """Largest singular value of a square matrix by power iteration on M^T M.

    Iterating on the positive semidefinite M^T M avoids the sign flipping that
    stalls plain power iteration when +lambda and -lambda are both extreme.
    """
    M = np.asarray(M, dtype=np.float64)
    G = M.T @ M
    rng = np.random.default_rng(0) if rng is None else rng
    x = rng.standard_normal(M.shape[0])
    x /= np.linalg.norm(x)
    for _ in range(iters):
        y = G @ x
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        y /= ny
        done = np.linalg.norm(y - x) <= tol
        x = y
        if done:
            break
    return float(np.linalg.norm(M @ x))


@dataclass(frozen=True)
class PsiProbe:
    a: np.ndarray
    u: np.ndarray
    hessian_norm: float
    bound: float

    @property
    def ratio(self) -> float:
        return self.hessian_norm / self.bound


def numeric_hessian_psi(a, u, h: float | None = None) -> PsiProbe:
    """Central-difference Hessian of psi_a at u; norm by power iteration.

    ``h`` defaults to 1e-4 |u|. The reference bound is 20 / |u|^2.
    """
    a = np.asarray(a, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if abs(np.linalg.norm(a) - 1.0) > 1e-12:
        raise ValueError("a must be a unit vector")
    nu = float(np.linalg.norm(u))
    h = 1e-4 * nu if h is None else h
    if not nu > 10 * h:
        raise ValueError("u is too close to the origin for the finite-difference step")
    d = u.size
    f0 = psi(a, u)
    H = np.empty((d, d))
    E = h * np.eye(d)
    for i in range(d):
        H[i, i] = (psi(a, u + E[i]) - 2 * f0 + psi(a, u - E[i])) / h**2
        for j in range(i + 1, d):
            H[i, j] = H[j, i] = (psi(a, u + E[i] + E[j]) - psi(a, u + E[i] - E[j])
                                 - psi(a, u - E[i] + E[j]) + psi(a, u - E[i] - E[j])) / (4 * h * h)
    return PsiProbe(a, u, spectral_norm(H), 20.0 / nu**2)


def alignment_floor(delta: float, d: int, lipschitz_step: float = 0.0) -> float:
    """cos(delta/(32 d) + L gamma_x + arccos(1 - delta))^2 (1 - 1/e)."""
    return math.cos(delta / (32 * d) + lipschitz_step + math.acos(1 - delta)) ** 2 * (1 - math.exp(-1))


def theoretical_epsilon(d: int, delta: float, M: float) -> float:
    return d ** -1.5 * delta * M / EPS_DENOM


def theoretical_gamma_mu(mu) -> float:
    return float(np.dot(mu, mu)) / GAMMA_MU_DENOM


def theoretical_gamma_x(delta: float, L: float) -> float:
    return delta**2 / (GAMMA_X_DENOM * L)


@dataclass
class DynamicsReport:
    t: list[int] = field(default_factory=list)
    estimates: list[AlignmentEstimate] = field(default_factory=list)
    cos_beta: list[float] = field(default_factory=list)
    mu_norm: list[float] = field(default_factory=list)
    monotone_fraction: float = float("nan")
    floor_value: float = float("nan")
    epsilon: float = float("nan")
    min_mu_ratio: float = float("nan")

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.estimates])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([e.stderr for e in self.estimates])

    def rows(self) -> list[tuple]:
        return [(t, e.mean, e.stderr, c, m) for t, e, c, m in
                zip(self.t, self.estimates, self.cos_beta, self.mu_norm)]


def monotone_fraction(estimates: list[AlignmentEstimate], slack: float = 2.0) -> float:
    """Fraction of consecutive pairs whose change is >= -slack * combined stderr."""
    if len(estimates) < 2:
        return 1.0
    ok = 0
    for prev, cur in zip(estimates, estimates[1:]):
        se = math.hypot(prev.stderr, cur.stderr)
        ok += cur.mean - prev.mean >= -slack * se
    return ok / (len(estimates) - 1)


def dynamics_check(g, *, cos_beta0: float | None = 0.5, mu0=None, horizon: int = 50, n: int = 10_000,
                   schedule: str = "theoretical", delta: float = 0.25, mu_norm0: float = 1.0,
                   epsilon: float | None = None, gamma_mu: float | None = None,
                   mode: str = "fd", fd_h: float | None = None, K: int = 5,
                   oracle=None, x0=None, gamma_x: float | None = None, rng=None) -> DynamicsReport:
    """Track the expected alignment while mu ascends it.

    With ``oracle`` and ``x0`` the gradient direction follows x-updates
    ``x <- x - gamma_x vbar <vbar, grad>`` interleaved with the mu-updates;
    otherwise ``g`` is frozen. ``schedule="theoretical"`` uses
    gamma_mu = |mu|^2 / 640 and eps = d^{-3/2} delta M / 960 with M = |mu0|
    (and gamma_x = delta^2 / (3 2^14 5^2 L) when an oracle is given).
    ``mode="fd"`` ascends a paired central-difference gradient of the MC
    alignment; ``mode="reinforce"`` averages ``n // K`` mean-baseline estimates.

    Each recorded estimate uses fresh draws independent of the update.
    """
    rng = np.random.default_rng() if rng is None else rng
    if oracle is not None:
        if x0 is None:
            raise ValueError("x0 is required with an oracle")
        x = np.asarray(x0, dtype=np.float64)
        g = oracle.grad(x)
    g = np.asarray(g, dtype=np.float64)
    d = g.size
    if mu0 is None:
        if cos_beta0 is None:
            raise ValueError("give mu0 or cos_beta0")
        if schedule == "theoretical" and not (delta <= cos_beta0 <= 1 - delta):
            raise ValueError(f"cos_beta0={cos_beta0} outside the band [{delta}, {1 - delta}]")
        if not 0 < delta < 0.5:
            raise ValueError("delta must lie in (0, 1/2)")
        mu = with_angle(g, cos_beta0, rng, mu_norm0)
    else:
        mu = np.array(mu0, dtype=np.float64)
    M = float(np.linalg.norm(mu))
    if schedule == "theoretical":
        if M == 0:
            eps = 1.0 if epsilon is None else epsilon
        else:
            eps = theoretical_epsilon(d, delta, M)
    elif schedule == "constant":
        if epsilon is None or gamma_mu is None:
            raise ValueError("constant schedule needs epsilon and gamma_mu")
        eps = epsilon
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    if oracle is not None and gamma_x is None:
        if schedule != "theoretical" or oracle.smoothness_hint is None:
            raise ValueError("gamma_x required")
        gamma_x = theoretical_gamma_x(delta, oracle.smoothness_hint)
    h = fd_h if fd_h is not None else 1e-3 * max(eps, 1e-300)

    report = DynamicsReport(epsilon=eps)
    report.floor_value = alignment_floor(delta, d, (oracle.smoothness_hint * gamma_x) if oracle is not None else 0.0)
    min_norm = M
    for t in range(horizon):
        policy = SamplingPolicy(mu, eps)
        report.t.append(t)
        report.estimates.append(mc_expected_alignment(policy, g, n, rng))
        nm = float(np.linalg.norm(mu))
        report.mu_norm.append(nm)
        report.cos_beta.append(float(np.dot(mu, g) / (nm * np.linalg.norm(g))) if nm > 0 else 0.0)
        min_norm = min(min_norm, nm)
        if t == horizon - 1:
            break
        step = theoretical_gamma_mu(mu) if schedule == "theoretical" else gamma_mu
        if step > 0:
            if mode == "fd":
                grad, _ = fd_alignment_gradient(mu, eps, g, rng.standard_normal((n, d)), h)
            elif mode == "reinforce":
                reps = max(1, n // K)
                grad = np.zeros(d)
                for _ in range(reps):
                    V = mu + eps * rng.standard_normal((K, d))
                    grad += reinforce_mu_grad_mean(policy, V, alignments(V, g)).g_mu
                grad /= reps
            else:
                raise ValueError(f"unknown mode {mode!r}")
        if oracle is not None:
            v = normalize(mu + eps * rng.standard_normal(d))
            x = x - gamma_x * v * np.dot(v, g)
            g_new = oracle.grad(x)
            if np.linalg.norm(g_new) > 0:
                g = g_new
        if step > 0:
            mu = mu + step * grad
    report.monotone_fraction = monotone_fraction(report.estimates)
    report.min_mu_ratio = min_norm / M if M > 0 else float("nan")
    return report
