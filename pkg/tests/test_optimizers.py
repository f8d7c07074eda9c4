import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zoldsd.alignlab import dynamics_check
from zoldsd.objective import CountingOracle, ObjectiveOracle, quadratic_objective
from zoldsd.optimizers import (
    OptimizerConfig,
    OptimizerState,
    PluginRule,
    StepSizes,
    apply_plugin,
    init_mu,
    iterations_for,
    ldsd_step,
    run,
    zo_ldsd_step,
)
from zoldsd.sampling import DegenerateDirectionError, make_rng, normalize
from zoldsd.trace import trace_to_csv


def quad(d=6, lo=1.0, hi=3.0):
    return quadratic_objective(np.linspace(lo, hi, d), np.ones(d))


# ---------------------------------------------------------------- plugins

def test_sgd_momentum_plugin():
    rule = PluginRule("sgd_momentum", beta=0.0)
    delta, buf = apply_plugin(rule, rule.init_buffers(2), np.array([1.0, 2.0]), 0.1, 1)
    np.testing.assert_allclose(delta, [-0.1, -0.2])
    rule = PluginRule("sgd_momentum", beta=0.5)
    delta, buf = apply_plugin(rule, {"m": np.array([2.0, 0.0])}, np.array([1.0, 1.0]), 1.0, 3)
    np.testing.assert_allclose(delta, [-2.0, -1.0])


def test_jaguar_sign_plugin():
    rule = PluginRule("jaguar_sign", beta=0.9)
    delta, buf = apply_plugin(rule, {"m": np.array([0.3, -0.2])}, np.zeros(2), 0.01, 5)
    np.testing.assert_allclose(delta, [-0.01, 0.01])
    np.testing.assert_allclose(buf["m"], [0.27, -0.18])


def test_adamm_first_step_is_sign_like():
    rule = PluginRule("adamm", beta1=0.9, beta2=0.999, floor=1e-8)
    g = np.array([3.0, -0.02, 1e-3])
    delta, buf = apply_plugin(rule, rule.init_buffers(3), g, 0.1, 1)
    np.testing.assert_allclose(delta, -0.1 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    np.testing.assert_allclose(buf["m"], 0.1 * g)
    np.testing.assert_allclose(buf["s"], 0.001 * g * g)


def test_plugin_errors():
    with pytest.raises(ValueError, match="not initialized"):
        apply_plugin(PluginRule("adamm"), {"m": np.zeros(2)}, np.ones(2), 0.1, 1)
    with pytest.raises(ValueError):
        apply_plugin(PluginRule(), {"m": np.zeros(2)}, np.ones(2), 0.1, 0)
    with pytest.raises(ValueError):
        PluginRule("sgd_momentum", beta=1.0)
    with pytest.raises(ValueError):
        PluginRule("nesterov")


def test_cosine_schedule_touches_gamma_x_only():
    s = StepSizes(2.0, 0.5, "cosine", horizon=10)
    assert s.gamma_x_at(0) == 2.0
    assert s.gamma_x_at(5) == pytest.approx(1.0)
    assert s.gamma_x_at(10) == pytest.approx(0.0)
    assert s.gamma_mu == 0.5
    with pytest.raises(ValueError):
        StepSizes(1.0, schedule="cosine")


# ---------------------------------------------------------------- LDSD

def test_ldsd_collinear_single_direction_is_gradient_step():
    f = quad()
    x0 = np.zeros(6)
    g = f.grad(x0)
    state = OptimizerState.initial(x0, normalize(g), 1e-12)
    new = ldsd_step(state, f, StepSizes(0.1, 0.0), 1, make_rng(0))
    np.testing.assert_allclose(new.x, x0 - 0.1 * g, rtol=1e-9)
    assert new.oracle_calls == 1 and new.t == 1


def test_ldsd_zero_gamma_x_still_updates_mu():
    f = quad()
    state = OptimizerState.initial(np.zeros(6), np.zeros(6), 1.0)
    new = ldsd_step(state, f, StepSizes(0.0, 0.1), 5, make_rng(1))
    np.testing.assert_array_equal(new.x, state.x)
    assert np.linalg.norm(new.policy.mu) > 0
    assert new.oracle_calls == 5


def test_ldsd_errors_and_skips():
    no_grad = ObjectiveOracle(lambda x: 0.0, 2)
    state = OptimizerState.initial(np.zeros(2), np.zeros(2), 1.0)
    with pytest.raises(ValueError, match="gradient"):
        ldsd_step(state, no_grad, StepSizes(0.1, 0.1), 5, make_rng(0))
    with pytest.raises(ValueError, match="K >= 2"):
        ldsd_step(state, quad(2), StepSizes(0.1, 0.1), 1, make_rng(0))
    f = quadratic_objective([1.0, 1.0], [0.0, 0.0])
    new = ldsd_step(state, f, StepSizes(0.1, 0.1), 5, make_rng(0))
    assert new.skipped_steps == 1 and new.last.skipped
    np.testing.assert_array_equal(new.x, state.x)
    assert new.oracle_calls == 5


class ZeroFirst:
    """Generator stand-in whose first batch is all zeros."""

    def __init__(self):
        self.rng = make_rng(0)
        self.first = True

    def standard_normal(self, shape):
        if self.first:
            self.first = False
            return np.zeros(shape)
        return self.rng.standard_normal(shape)


def test_degenerate_directions_are_resampled_and_counted():
    f = quad(2)
    state = OptimizerState.initial(np.zeros(2), np.zeros(2), 1.0)
    new = ldsd_step(state, f, StepSizes(0.1), 3, ZeroFirst())
    assert new.degenerate_resamples == 3
    assert np.all(np.linalg.norm(new.last.directions, axis=1) > 0)
    state = OptimizerState.initial(np.zeros(2), np.zeros(2), 1e-300)
    with pytest.raises(DegenerateDirectionError):
        ldsd_step(state, f, StepSizes(0.1), 3, make_rng(0))


# ---------------------------------------------------------------- ZO-LDSD

def test_zo_ldsd_plain_update_and_call_count():
    f = CountingOracle(quad())
    state = OptimizerState.initial(np.zeros(6), np.ones(6) / np.sqrt(6), 1.0, PluginRule())
    new = zo_ldsd_step(state, f, StepSizes(0.05, 0.01), 5, 1e-3, PluginRule(), rng=make_rng(2))
    assert f.calls == 6 and new.oracle_calls == 6
    np.testing.assert_allclose(new.x, state.x - 0.05 * new.last.g_x)


def test_zo_ldsd_constant_objective_is_stationary():
    f = ObjectiveOracle(lambda x: 3.0, 4)
    state = OptimizerState.initial(np.ones(4), np.full(4, 0.5), 1.0, PluginRule())
    new = zo_ldsd_step(state, f, StepSizes(1.0, 1.0), 5, 1e-3, PluginRule(), rng=make_rng(3))
    np.testing.assert_array_equal(new.x, state.x)
    np.testing.assert_array_equal(new.policy.mu, state.policy.mu)


def test_zo_ldsd_T_iterations_cost_6T():
    f = CountingOracle(quad())
    cfg = OptimizerConfig("zo_ldsd", K=5, gamma_x=0.01)
    state, recs = run(cfg, f, np.zeros(6), np.zeros(6), make_rng(0), horizon=37)
    assert f.calls == 6 * 37 == state.oracle_calls == recs[-1].oracle_calls
    assert [r.oracle_calls for r in recs] == list(range(6, 6 * 37 + 1, 6))


# ---------------------------------------------------------------- run

def test_budget_examples():
    assert iterations_for(OptimizerConfig("zo_ldsd", K=5), budget=60) == 10
    assert iterations_for(OptimizerConfig("zo_baseline", K=1), budget=60) == 30
    f = CountingOracle(quad())
    _, recs = run(OptimizerConfig("zo_baseline", K=1, gamma_x=0.01), f, np.zeros(6), None, make_rng(0), budget=60)
    assert len(recs) == 30 and f.calls == 60
    with pytest.raises(ValueError, match="smaller"):
        iterations_for(OptimizerConfig("zo_ldsd", K=5), budget=5)
    with pytest.raises(ValueError, match="exactly one"):
        iterations_for(OptimizerConfig(), horizon=3, budget=60)
    with pytest.raises(ValueError, match="exactly one"):
        iterations_for(OptimizerConfig())


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["ldsd", "dgd", "zo_ldsd", "zo_baseline"]), st.integers(2, 7),
       st.integers(1, 200), st.integers(0, 1000))
def test_budget_exactness(method, K, budget_slack, seed):
    cfg = OptimizerConfig(method, K=K, gamma_x=0.01, gamma_mu=0.01)
    budget = cfg.calls_per_iteration + budget_slack
    f = CountingOracle(quad(4))
    state, recs = run(cfg, f, np.zeros(4), np.ones(4) / 2, make_rng(seed), budget=budget)
    T = budget // cfg.calls_per_iteration
    assert len(recs) == T
    assert state.oracle_calls == T * cfg.calls_per_iteration
    if method.startswith("zo"):
        assert f.calls == state.oracle_calls
    assert all(b.oracle_calls > a.oracle_calls for a, b in zip(recs, recs[1:]))


@pytest.mark.parametrize("method", ["ldsd", "dgd", "zo_ldsd", "zo_baseline"])
def test_run_determinism(method):
    f = quad()
    cfg = OptimizerConfig(method, K=3, gamma_x=0.05, gamma_mu=0.01, plugin=PluginRule("adamm"))

    def go():
        rng = make_rng(11)
        _, recs = run(cfg, f, np.zeros(6), init_mu("random_unit", 6, make_rng(11, 1)), rng,
                      horizon=50, run_id="r", seed=11)
        return trace_to_csv(recs)

    assert go().encode() == go().encode()


def test_baselines_keep_mu_at_zero():
    f = quad()
    for method in ("dgd", "zo_baseline"):
        cfg = OptimizerConfig(method, K=5, gamma_x=0.05, gamma_mu=1.0)
        state, recs = run(cfg, f, np.zeros(6), np.ones(6), make_rng(0), horizon=10)
        assert np.all(state.policy.mu == 0) and all(r.mu_norm == 0 for r in recs)


def test_init_mu():
    f = quad()
    rng = make_rng(0)
    assert np.linalg.norm(init_mu("random_unit", 6, rng, scale=0.3)) == pytest.approx(0.3)
    c = init_mu("collinear", 6, rng, f, np.zeros(6))
    np.testing.assert_allclose(c, normalize(f.grad(np.zeros(6))))
    assert not init_mu("zero", 6, rng).any()
    with pytest.raises(ValueError):
        init_mu("collinear", 2, rng, ObjectiveOracle(lambda x: 0.0, 2), np.zeros(2))


def test_trace_fields_for_gradient_free_objective():
    f = ObjectiveOracle(lambda x: float(np.sum(x**2)), 3)
    _, recs = run(OptimizerConfig("zo_ldsd", K=3), f, np.ones(3), np.zeros(3), make_rng(0), horizon=3)
    assert all(r.grad_norm is None and r.align_cos is None and r.mc_alignment is None for r in recs)


# ---------------------------------------------------------------- theory-facing properties

@pytest.mark.parametrize("d", [16, 64, 256])
def test_zero_mean_policy_alignment_rate(d):
    f = quadratic_objective(np.linspace(1, 2, d), np.ones(d))
    cfg = OptimizerConfig("dgd", K=1, gamma_x=0.01)
    _, recs = run(cfg, f, np.zeros(d), None, make_rng(d), horizon=10_000)
    ratio = np.mean([r.mc_alignment for r in recs]) * d
    assert 0.8 <= ratio <= 1.2


def test_collinear_initialization_keeps_alignment_in_theory_regime():
    d = 16
    f = quadratic_objective(np.linspace(1, 2, d), np.ones(d))
    x0 = np.zeros(d)
    rep = dynamics_check(None, mu0=normalize(f.grad(x0)), horizon=100, n=2000, oracle=f, x0=x0,
                         rng=make_rng(0))
    assert np.all(rep.means + 3 * rep.stderrs >= 0.2)
