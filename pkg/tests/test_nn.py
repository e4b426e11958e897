import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advmimic.errors import ConfigError, ContractError, NonFiniteError
from advmimic.nn import (
    Adam,
    Mlp,
    MlpSpec,
    average_vectors,
    load_checkpoint,
    perturb,
    polyak_track,
    save_checkpoint,
)
from oracles import central_diff, rel_err, straight_line_mlp


def _random_spec(rng):
    n_hidden = rng.integers(1, 3)
    return MlpSpec(
        input_dim=int(rng.integers(1, 5)),
        hidden_sizes=tuple(int(h) for h in rng.integers(2, 7, size=n_hidden)),
        output_dim=int(rng.integers(1, 4)),
        hidden_activation=str(rng.choice(["relu", "tanh"])),
        output_activation=str(rng.choice(["identity", "tanh", "sigmoid"])),
        layer_norm=tuple(bool(b) for b in rng.integers(0, 2, size=n_hidden)),
    )


def test_param_count_formula():
    spec = MlpSpec(3, (5, 4), 2, layer_norm=(True, False))
    expected = (3 + 1) * 5 + (5 + 1) * 4 + (4 + 1) * 2 + 2 * 5
    assert spec.num_params() == expected
    assert Mlp(spec, rng=np.random.default_rng(0)).params.size == expected


@pytest.mark.parametrize("bad", [
    dict(input_dim=0, hidden_sizes=(3,), output_dim=1),
    dict(input_dim=2, hidden_sizes=(), output_dim=1),
    dict(input_dim=2, hidden_sizes=(3,), output_dim=1, hidden_activation="elu"),
])
def test_spec_rejects_bad_dims(bad):
    with pytest.raises(ConfigError):
        MlpSpec(**bad)


def test_zero_network_outputs_zero():
    net = Mlp(MlpSpec(3, (4,), 2), params=np.zeros(MlpSpec(3, (4,), 2).num_params()))
    out, _ = net.forward(np.array([1.0, -2.0, 5.0]))
    assert np.array_equal(out, np.zeros(2))


def test_layer_norm_constant_preactivation_normalizes_to_zero():
    spec = MlpSpec(2, (4,), 1, hidden_activation="tanh", layer_norm=True)
    net = Mlp(spec, rng=np.random.default_rng(0))
    p = net.unflatten()
    p[(0, "W")][:] = 0.0
    p[(0, "b")][:] = 3.7  # constant pre-activation c * 1
    net.set_params(net.flatten(p))
    _, cache = net.forward(np.array([0.3, -1.2]))
    assert np.all(cache.layers[0]["xhat"] == 0.0)
    assert np.all(np.isfinite(cache.layers[0]["inv"]))


def test_forward_matches_straight_line_2_4_1():
    rng = np.random.default_rng(7)
    for hidden in ("relu", "tanh"):
        spec = MlpSpec(2, (4,), 1, hidden_activation=hidden)
        net = Mlp(spec, rng=rng)
        x = rng.normal(size=2)
        layers = [{role: v for (l, role), v in net.unflatten().items() if l == i} for i in range(2)]
        assert np.max(np.abs(net(x) - straight_line_mlp(x, layers, hidden=hidden))) <= 1e-12


def test_forward_matches_straight_line_with_layer_norm():
    rng = np.random.default_rng(8)
    spec = MlpSpec(3, (5, 4), 2, hidden_activation="relu", output_activation="tanh", layer_norm=True)
    net = Mlp(spec, rng=rng)
    x = rng.normal(size=3)
    layers = [{role: v for (l, role), v in net.unflatten().items() if l == i} for i in range(3)]
    ref = straight_line_mlp(x, layers, hidden="relu", out="tanh", ln=True)
    assert np.max(np.abs(net(x) - ref)) <= 1e-12


def test_forward_rejects_wrong_input_dim():
    net = Mlp(MlpSpec(3, (4,), 1), rng=np.random.default_rng(0))
    with pytest.raises(ContractError):
        net.forward(np.zeros(2))


def test_single_linear_neuron_gradients():
    spec = MlpSpec(1, (1,), 1, hidden_activation="relu")
    net = Mlp(spec, rng=np.random.default_rng(0))
    # make the hidden unit pass-through on positive inputs, output = w * h + b
    p = net.unflatten()
    p[(0, "W")][:] = 1.0
    p[(0, "b")][:] = 0.0
    p[(1, "W")][:] = 2.5
    p[(1, "b")][:] = 0.1
    net.set_params(net.flatten(p))
    out, cache = net.forward(np.array([3.0]))
    assert out[0] == pytest.approx(7.6)
    pg, xg = net.backward(cache, np.array([1.0]))
    g = net.unflatten(pg)
    assert g[(1, "W")][0, 0] == pytest.approx(3.0)
    assert g[(1, "b")][0] == pytest.approx(1.0)
    assert xg[0] == pytest.approx(2.5)


def test_zero_weight_net_has_zero_input_grad():
    spec = MlpSpec(3, (4, 4), 2, hidden_activation="tanh", layer_norm=True)
    net = Mlp(spec, params=np.zeros(spec.num_params()))
    _, cache = net.forward(np.ones(3))
    _, xg = net.backward(cache, np.ones(2))
    assert np.array_equal(xg, np.zeros(3))


def test_backward_matches_finite_differences_on_random_nets():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        spec = _random_spec(rng)
        net = Mlp(spec, rng=rng)
        x = rng.normal(size=(3, spec.input_dim))
        w = rng.normal(size=(3, spec.output_dim))
        _, cache = net.forward(x)
        pg, xg = net.backward(cache, w)

        def f_params(theta):
            return float(np.sum(w * Mlp(spec, params=theta)(x)))

        def f_input(flat):
            return float(np.sum(w * net(flat.reshape(x.shape))))

        assert rel_err(pg, central_diff(f_params, net.params)) <= 1e-5
        assert rel_err(xg.ravel(), central_diff(f_input, x.ravel())) <= 1e-5


def test_stale_cache_is_rejected():
    net = Mlp(MlpSpec(2, (3,), 1), rng=np.random.default_rng(0))
    _, cache = net.forward(np.ones(2))
    net.set_params(net.params + 1.0)
    with pytest.raises(ContractError):
        net.backward(cache, np.ones(1))
    other = net.copy()
    _, cache = net.forward(np.ones(2))
    with pytest.raises(ContractError):
        other.backward(cache, np.ones(1))


def test_input_grad_vjp_matches_finite_differences():
    rng = np.random.default_rng(5)
    for hidden in ("tanh", "relu"):
        spec = MlpSpec(3, (6, 5), 1, hidden_activation=hidden, output_activation="sigmoid")
        net = Mlp(spec, rng=rng)
        x = rng.normal(size=(4, 3))
        adj = rng.normal(size=(4, 3))
        _, cache = net.forward(x)
        gx, pg = net.input_grad_vjp(cache, adj)

        def f(theta):
            m = Mlp(spec, params=theta)
            _, c = m.forward(x)
            return float(np.sum(adj * m.backward(c, np.ones((4, 1)))[1]))

        _, ref_gx = net.backward(cache, np.ones((4, 1)))
        assert np.allclose(gx, ref_gx, rtol=0, atol=1e-14)
        assert rel_err(pg, central_diff(f, net.params)) <= 1e-5


def test_adam_first_step_magnitude_is_lr():
    opt = Adam(3, lr=0.01)
    g = np.array([0.5, -2.0, 1e-3])
    new = opt.step(np.zeros(3), g)
    assert np.allclose(new, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    assert np.allclose(np.abs(new), 0.01, rtol=1e-4)


def test_adam_zero_grad_keeps_params():
    opt = Adam(4)
    p = np.arange(4.0)
    new = opt.step(p, np.zeros(4))
    assert np.array_equal(new, p)
    assert opt.step_count == 1


def test_adam_is_deterministic():
    grads = np.random.default_rng(3).normal(size=(30, 5))
    runs = []
    for _ in range(2):
        opt, p = Adam(5, lr=0.1), np.ones(5)
        for g in grads:
            p = opt.step(p, g)
        runs.append(p)
    assert np.array_equal(runs[0], runs[1])


def test_adam_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        Adam(2).step(np.zeros(2), np.array([1.0, np.nan]))


def test_polyak_cases():
    t, o = np.array([0.0, 2.0]), np.array([1.0, -1.0])
    assert np.array_equal(polyak_track(t, o, 1.0), o)
    assert np.array_equal(polyak_track(t, o, 0.0), t)
    assert polyak_track(np.array([0.0]), np.array([1.0]), 0.005)[0] == pytest.approx(0.005)
    with pytest.raises(ConfigError):
        polyak_track(t, o, 1.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8),
       st.floats(0.0, 1.0))
def test_polyak_contraction(values, tau):
    t = np.array(values)
    o = t[::-1] * 0.5 + 1.0
    new = polyak_track(t, o, tau)
    assert np.allclose(np.abs(new - o), (1 - tau) * np.abs(t - o), rtol=1e-9, atol=1e-9)


def test_perturb_zero_stddev_is_copy():
    p = np.random.default_rng(0).normal(size=10)
    out = perturb(p, 0.0, np.random.default_rng(1))
    assert np.array_equal(out, p) and out is not p


def test_perturb_empirical_stddev():
    rng = np.random.default_rng(11)
    p = np.zeros(3)
    draws = np.stack([perturb(p, 0.3, rng) for _ in range(100_000)])
    assert np.all(np.abs(draws.std(axis=0) / 0.3 - 1.0) < 0.02)


def test_perturb_skips_layer_norm_coordinates():
    net = Mlp(MlpSpec(2, (4, 4), 1, layer_norm=True), rng=np.random.default_rng(0))
    out = perturb(net.params, 5.0, np.random.default_rng(1), mask=net.noise_mask)
    frozen = ~net.noise_mask
    assert frozen.sum() == 16
    assert np.array_equal(out[frozen], net.params[frozen])
    assert np.all(out[~frozen] != net.params[~frozen])


def test_average_cases():
    g = np.random.default_rng(0).normal(size=6)
    assert np.array_equal(average_vectors([g]), g)
    assert np.array_equal(average_vectors([g, -g]), np.zeros(6))
    assert np.array_equal(average_vectors([g] * 4), g)
    with pytest.raises(ContractError):
        average_vectors([])
    with pytest.raises(ContractError):
        average_vectors([g, g[:3]])


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(5)))
def test_average_permutation_invariant(perm):
    vals = [np.random.default_rng(i).normal(size=4) for i in range(5)]
    a = average_vectors(vals)
    b = average_vectors([vals[i] for i in perm])
    assert np.allclose(a, b, rtol=1e-14, atol=1e-15)


def test_flatten_unflatten_roundtrip():
    net = Mlp(MlpSpec(3, (5, 4), 2, layer_norm=(True, True)), rng=np.random.default_rng(4))
    v = np.random.default_rng(9).normal(size=net.params.size)
    assert np.array_equal(net.flatten(net.unflatten(v)), v)
    twin = Mlp(net.spec, rng=np.random.default_rng(5))
    assert twin.layout == net.layout


def test_checkpoint_roundtrip_bitwise(tmp_path):
    net = Mlp(MlpSpec(3, (5,), 2, layer_norm=True), rng=np.random.default_rng(4))
    path = tmp_path / "ck.npz"
    save_checkpoint(path, {"actor": net}, extra={"mu": 1.25})
    nets, extra = load_checkpoint(path)
    assert nets["actor"].spec == net.spec
    assert nets["actor"].params.tobytes() == net.params.tobytes()
    assert float(extra["mu"]) == 1.25
