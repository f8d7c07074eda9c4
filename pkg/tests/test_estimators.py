import numpy as np
import pytest

from zoldsd.alignlab import fd_alignment_gradient
from zoldsd.estimators import (
    NonFiniteProbeError,
    ProbeSet,
    dgd_estimate,
    loo_advantages,
    reinforce_mu_grad_loo,
    reinforce_mu_grad_mean,
    select_best_direction,
    two_point,
    zo_gradient,
)
from zoldsd.objective import CountingOracle, ObjectiveOracle, quadratic_objective
from zoldsd.sampling import SamplingPolicy, alignments, make_rng, random_unit


def fn(value_fn, dim):
    return CountingOracle(ObjectiveOracle(value_fn, dim))


half_sq = lambda x: 0.5 * float(np.dot(x, x))


def test_two_point_examples():
    const = fn(lambda x: 7.0, 3)
    assert two_point(const, np.ones(3), np.array([1.0, 2, 3]), 0.1) == 0
    f = fn(half_sq, 2)
    for tau in (1e-3, 0.1, 10.0):
        assert two_point(f, np.array([1.0, 0]), np.array([2.0, 1]), tau) == pytest.approx(2, rel=1e-12)
    assert f.calls == 6


def test_two_point_quartic_second_order():
    f = fn(lambda x: float(x[0] ** 4), 1)
    x, v = np.array([1.0]), np.array([1.0])
    errs = [abs(two_point(f, x, v, tau) - 4.0) for tau in (1e-1, 1e-2, 1e-3)]
    assert 50 <= errs[0] / errs[1] <= 200
    assert errs[0] > errs[1] > errs[2]


def test_two_point_errors():
    f = fn(lambda x: float("nan") if x[0] > 0 else 0.0, 1)
    with pytest.raises(NonFiniteProbeError):
        two_point(f, np.zeros(1), np.ones(1), 0.1)
    with pytest.raises(ValueError):
        two_point(f, np.zeros(1), np.ones(1), 0.0)


def test_dgd_estimate_examples():
    g = np.array([3.0, -1.0, 2.0])
    np.testing.assert_allclose(dgd_estimate(g, [g / np.linalg.norm(g) * 5]), g)
    np.testing.assert_allclose(dgd_estimate(g, [[1.0, 3.0, 0.0]]), 0, atol=1e-15)
    np.testing.assert_allclose(dgd_estimate([1.0, 0.0], [[1, 0], [0, 1]]), [0.5, 0])
    with pytest.raises(ValueError):
        dgd_estimate([0.0, 0.0], [[1, 0]])
    with pytest.raises(ValueError):
        dgd_estimate([1.0, 0.0], [[0, 0]])


def test_mean_baseline_examples():
    rng = make_rng(0)
    p = SamplingPolicy(rng.standard_normal(4), 0.7)
    V = p.mu + 0.7 * rng.standard_normal((5, 4))
    est = reinforce_mu_grad_mean(p, V, np.full(5, 0.3))
    np.testing.assert_array_equal(est.g_mu, 0)
    eps = 0.25
    mu = np.array([0.2, -0.4, 1.0])
    e1 = np.array([1.0, 0, 0])
    est = reinforce_mu_grad_mean(SamplingPolicy(mu, eps), [mu + eps * e1, mu - eps * e1], [1.0, 0.0])
    np.testing.assert_allclose(est.g_mu, e1 / (2 * eps))
    # independent evaluation of (1/K) sum (r_k - mean r)(v_k - mu)/eps^2
    r = rng.uniform(size=5)
    manual = sum((r[k] - r.mean()) * (V[k] - p.mu) / p.epsilon**2 for k in range(5)) / 5
    est = reinforce_mu_grad_mean(p, V, r)
    np.testing.assert_allclose(est.g_mu, manual, rtol=1e-12)
    assert est.baseline_kind == "mean"
    assert abs(est.per_sample_advantages.sum()) <= 1e-10 * 5 * np.abs(r).max()
    with pytest.raises(ValueError):
        reinforce_mu_grad_mean(p, V[:1], r[:1])


def test_mean_baseline_expectation_carries_k_minus_one_over_k():
    # The batch mean includes each sample's own reward, so E[g_mu] = (K-1)/K grad F.
    rng = make_rng(5)
    d, eps, K, reps = 8, 0.3, 5, 40_000
    g = random_unit(d, rng)
    mu = random_unit(d, rng)
    V = mu + eps * rng.standard_normal((reps, K, d))
    C = alignments(V.reshape(-1, d), g).reshape(reps, K)
    est = np.einsum("mk,mkd->md", C - C.mean(axis=1, keepdims=True), (V - mu) / eps**2) / K
    fd, fd_se = fd_alignment_gradient(mu, eps, g, rng.standard_normal((400_000, d)), 1e-3 * eps)
    se = est.std(axis=0, ddof=1) / np.sqrt(reps)
    scaled = est.mean(axis=0) * K / (K - 1)
    assert np.all(np.abs(scaled - fd) <= 5 * np.hypot(se * K / (K - 1), fd_se))


def test_loo_examples():
    p = SamplingPolicy(np.zeros(3), 1.0)
    V = make_rng(1).standard_normal((4, 3))
    est = reinforce_mu_grad_loo(p, ProbeSet(V, np.full(4, 2.5), 1e-3))
    np.testing.assert_array_equal(est.g_mu, 0)
    np.testing.assert_allclose(loo_advantages([3.0, 1.0]), [2.0, -2.0])
    est = reinforce_mu_grad_loo(p, ProbeSet(V[:2], np.array([3.0, 1.0]), 1e-3), reward_sign=1)
    np.testing.assert_allclose(est.per_sample_advantages, [2.0, -2.0])
    with pytest.raises(ValueError):
        loo_advantages([1.0])
    with pytest.raises(ValueError):
        reinforce_mu_grad_loo(p, ProbeSet(V, np.zeros(4), 1e-3), reward_sign=0)


def test_loo_is_twice_mean_baseline_at_k2():
    rng = make_rng(2)
    for _ in range(100):
        d = int(rng.integers(1, 10))
        p = SamplingPolicy(rng.standard_normal(d), float(rng.uniform(0.1, 2)))
        V = p.mu + p.epsilon * rng.standard_normal((2, d))
        f = rng.standard_normal(2)
        loo = reinforce_mu_grad_loo(p, ProbeSet(V, f, 0.1), reward_sign=1).g_mu
        mean = reinforce_mu_grad_mean(p, V, f).g_mu
        np.testing.assert_allclose(loo, 2 * mean, rtol=1e-12, atol=1e-14)
        neg = reinforce_mu_grad_loo(p, ProbeSet(V, f, 0.1)).g_mu
        np.testing.assert_allclose(neg, -loo)


def test_loo_unbiased_on_quadratic():
    # f = |x|^2/2: E f(x + tau v) = |x + tau mu|^2/2 + const, so grad_mu E[-f] = -tau (x + tau mu).
    rng = make_rng(3)
    d, eps, K, tau, reps = 4, 0.5, 5, 0.5, 100_000
    x, mu = rng.standard_normal((2, d))
    V = mu + eps * rng.standard_normal((reps, K, d))
    F = 0.5 * np.sum((x + tau * V) ** 2, axis=2)
    adv = -(K * F - F.sum(axis=1, keepdims=True)) / (K - 1)
    est = np.einsum("mk,mkd->md", adv, (V - mu) / eps**2) / K
    # library path on one batch agrees with the vectorized form
    lib = reinforce_mu_grad_loo(SamplingPolicy(mu, eps), ProbeSet(V[0], F[0], tau)).g_mu
    np.testing.assert_allclose(lib, est[0], rtol=1e-12)
    se = est.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(est.mean(axis=0) + tau * (x + tau * mu)) <= 5 * se)


def test_select_best_direction_examples():
    lin = fn(lambda x: float(x[0]), 2)
    V = np.array([[1.0, 0], [-1, 0], [0, 1]])
    idx, v, probes = select_best_direction(lin, np.zeros(2), V, 1.0)
    assert idx == 1 and np.array_equal(v, [-1, 0])
    np.testing.assert_array_equal(probes.forward_values, [1, -1, 0])
    assert lin.calls == 3
    idx, v, _ = select_best_direction(lin, np.zeros(2), V[:1], 1.0)
    assert idx == 0
    idx, _, _ = select_best_direction(lin, np.zeros(2), [[0, 1.0], [0, -1.0], [-1, 0]], 1.0)
    assert idx == 2
    idx, _, _ = select_best_direction(lin, np.zeros(2), [[0, 1.0], [0, -1.0]], 1.0)
    assert idx == 0


def test_select_best_direction_permutation_covariant():
    f = quadratic_objective(np.arange(1.0, 7.0), np.ones(6))
    rng = make_rng(4)
    for _ in range(50):
        V = rng.standard_normal((7, 6))
        x = rng.standard_normal(6)
        perm = rng.permutation(7)
        i, _, _ = select_best_direction(f, x, V, 0.1)
        j, _, _ = select_best_direction(f, x, V[perm], 0.1)
        assert perm[j] == i


def test_select_rejects_non_finite():
    f = fn(lambda x: float("inf"), 2)
    with pytest.raises(NonFiniteProbeError):
        select_best_direction(f, np.zeros(2), [[1.0, 0]], 0.1)


def test_zo_gradient_examples_and_call_counts():
    const = fn(lambda x: 1.0, 2)
    np.testing.assert_array_equal(zo_gradient(const, np.ones(2), np.array([1.0, 2]), 0.1), 0)
    a = np.array([0.5, -2.0, 1.0])
    lin = fn(lambda x: float(a @ x), 3)
    v = np.array([1.0, 1.0, 3.0])
    np.testing.assert_allclose(zo_gradient(lin, np.ones(3), v, 0.3), (a @ v) * v, rtol=1e-12)
    q = fn(half_sq, 2)
    x, v = np.array([1.0, 0]), np.array([2.0, 1])
    np.testing.assert_allclose(zo_gradient(q, x, v, 0.1), [4, 2], rtol=1e-12)
    assert q.calls == 2
    zo_gradient(q, x, v, 0.1, forward_value=half_sq(x + 0.1 * v))
    assert q.calls == 3
    unit = zo_gradient(q, x, v, 0.1, normalized=True)
    vbar = v / np.linalg.norm(v)
    np.testing.assert_allclose(unit, vbar * (vbar @ x), rtol=1e-12)
