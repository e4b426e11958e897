import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advmimic.actor_critic import Actor
from advmimic.exploration import OUProcess, ParamNoise, behavior_action


def _long_run(proc, steps, seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(steps)
    # same recursion as OUProcess.step, unrolled for speed
    out = np.empty(steps)
    x = 0.0
    a = 1 - proc.kappa * proc.dt
    s = proc.sigma * np.sqrt(proc.dt)
    for i in range(steps):
        x = a * x + s * z[i]
        out[i] = x
    return out


def test_ou_deterministic_decay():
    ou = OUProcess(1, kappa=0.15, sigma=0.0, dt=1.0)
    ou.x[:] = 1.0
    assert ou.step(np.random.default_rng(0))[0] == pytest.approx(0.85, abs=1e-15)


def test_ou_fixed_point():
    ou = OUProcess(2, sigma=0.0)
    assert np.array_equal(ou.step(np.random.default_rng(0)), np.zeros(2))


def test_ou_step_matches_unrolled_recursion():
    ou = OUProcess(1, kappa=0.3, sigma=0.5, dt=0.5)
    rng = np.random.default_rng(2)
    got = [ou.step(rng)[0] for _ in range(50)]
    ref = _long_run(ou, 50, 2)
    assert np.allclose(got, ref, rtol=1e-13, atol=1e-15)


def test_ou_stationary_statistics():
    ou = OUProcess(1, kappa=0.15, sigma=0.2, dt=1.0)
    xs = _long_run(ou, 1_000_000, 5)[1000:]
    var = xs.var()
    assert abs(var / ou.stationary_variance() - 1) < 0.05
    lag1 = np.corrcoef(xs[:-1], xs[1:])[0, 1]
    assert abs(lag1 / (1 - ou.kappa * ou.dt) - 1) < 0.02


def test_ou_reset():
    ou = OUProcess(2)
    ou.step(np.random.default_rng(0))
    ou.reset()
    assert np.array_equal(ou.x, np.zeros(2))


def _actor(seed=0):
    return Actor(3, 2, 1.0, hidden_sizes=(16, 16), final_init_scale=None,
                 rng=np.random.default_rng(seed))


def test_floor_stddev_keeps_actions_close():
    actor = _actor()
    pn = ParamNoise(stddev=1e-6)
    pn.refresh(actor, np.random.default_rng(0))
    probes = np.random.default_rng(1).normal(size=(50, 3))
    gap = np.max(np.abs(actor(probes) - pn.perturbed(probes)))
    assert gap < 1e-5


def test_refresh_is_seeded():
    actor = _actor()
    a = ParamNoise().refresh(actor, np.random.default_rng(3)).params
    b = ParamNoise().refresh(actor, np.random.default_rng(3)).params
    assert np.array_equal(a, b)


def test_zero_distance_when_unperturbed():
    actor = _actor()
    pn = ParamNoise()
    pn.stddev = 0.0
    pn.refresh(actor, np.random.default_rng(0))
    assert pn.distance(actor, np.ones((4, 3))) == 0.0


def test_adapt_rule():
    actor = _actor()
    probes = np.random.default_rng(0).normal(size=(20, 3))
    pn = ParamNoise(stddev=0.5, target_delta=1e-9, alpha=1.01)
    pn.refresh(actor, np.random.default_rng(0))
    assert pn.adapt(actor, probes) == pytest.approx(0.5 / 1.01)

    pn = ParamNoise(stddev=0.5, target_delta=0.1, alpha=1.01)
    pn.refresh(actor, np.random.default_rng(0))
    pn.target_delta = pn.distance(actor, probes)  # exact tie
    assert pn.adapt(actor, probes) == pytest.approx(0.5 * 1.01)

    pn = ParamNoise(stddev=0.5)
    pn.perturbed = actor.net.copy()
    assert pn.adapt(actor, probes) == pytest.approx(0.5 * 1.01)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1.0), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_adapt_scale_monotone(stddev, d_small, d_extra):
    pn = ParamNoise(stddev=stddev)
    d_large = d_small + d_extra

    def step_for(d):
        pn.stddev = stddev
        pn.distance = lambda *_: d
        return pn.adapt(None, np.ones((1, 1)))

    assert step_for(d_large) <= step_for(d_small)


def test_stddev_is_clamped():
    pn = ParamNoise(stddev=1.0)
    pn.perturbed = _actor().net.copy()
    for _ in range(5):
        pn.adapt(_actor(), np.ones((2, 3)))
    assert pn.stddev == 1.0


def test_behavior_action_without_noise_is_mu():
    actor = _actor()
    pn = ParamNoise()
    pn.stddev = 0.0
    pn.refresh(actor, np.random.default_rng(0))
    ou = OUProcess(2, sigma=0.0)
    s = np.array([0.3, -0.2, 1.0])
    assert np.array_equal(behavior_action(actor, pn, ou, s, np.random.default_rng(0)), actor(s))


def test_behavior_action_is_clipped():
    actor = _actor()
    pn = ParamNoise(stddev=1.0)
    pn.refresh(actor, np.random.default_rng(0))
    ou = OUProcess(2, sigma=50.0)
    rng = np.random.default_rng(1)
    for _ in range(100):
        a = behavior_action(actor, pn, ou, rng.normal(size=3), rng)
        assert np.all(np.abs(a) <= 1.0)


def test_ou_state_persists_between_steps():
    ou = OUProcess(1, kappa=0.15, sigma=1.0)
    rng = np.random.default_rng(0)
    x1 = ou.step(rng)
    x2 = ou.step(rng)
    # second step starts from x1, not from zero
    z2 = (x2 - 0.85 * x1) / 1.0
    assert np.allclose(0.85 * x1 + z2, x2)
    ou.reset()
    assert np.all(ou.x == 0)
