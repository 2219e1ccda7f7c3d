import numpy as np
import pytest

from qtransfer.errors import ConfigError, NumericalError
from qtransfer import nn


def test_standard_spec_shape_pipeline():
    spec = nn.QNetworkSpec.standard(actions=6)
    h = w = 84
    dims = []
    for layer in spec.conv:
        h, w = layer.out_hw(h, w)
        dims.append((layer.out_channels, h, w))
    assert dims == [(32, 20, 20), (64, 9, 9), (64, 7, 7)]
    assert spec.feature_dim == 3136
    assert spec.hidden_dim == 512


def test_spec_rejects_mismatched_feature_dim():
    with pytest.raises(ConfigError):
        nn.QNetworkSpec(nn.ENCODER_LAYERS, 3000, 512, 6)


def test_spec_rejects_single_action():
    with pytest.raises(ConfigError):
        nn.QNetworkSpec.head_only(8, 8, 1)


def test_conv_layer1_output_shape():
    spec = nn.ConvLayerSpec(4, 32, kernel=8, stride=4)
    x = np.random.default_rng(0).random((4, 84, 84)).astype(np.float32)
    w = np.random.default_rng(1).normal(size=(32, 4, 8, 8)).astype(np.float32)
    b = np.zeros(32, dtype=np.float32)
    y = nn.conv2d_forward(x, spec, w, b)
    assert y.shape == (32, 20, 20)


def test_conv_identity_kernel():
    spec = nn.ConvLayerSpec(1, 1, kernel=1, stride=1)
    x = np.array([[[3.5]]], dtype=np.float32)
    w = np.ones((1, 1, 1, 1), dtype=np.float32)
    b = np.zeros(1, dtype=np.float32)
    y = nn.conv2d_forward(x, spec, w, b)
    assert np.array_equal(y, x)
    gx, gw, gb = nn.conv2d_backward(y, x, spec, w)
    assert np.array_equal(gx, y)


def test_conv_all_ones_sums_window():
    spec = nn.ConvLayerSpec(1, 1, kernel=3, stride=1)
    x = np.ones((1, 3, 3), dtype=np.float32)
    w = np.ones((1, 1, 3, 3), dtype=np.float32)
    b = np.zeros(1, dtype=np.float32)
    y = nn.conv2d_forward(x, spec, w, b)
    assert y.shape == (1, 1, 1)
    assert y[0, 0, 0] == 9.0


def test_conv_zero_grad_out_gives_zero_grads():
    spec = nn.ConvLayerSpec(2, 3, kernel=3, stride=2)
    rng = np.random.default_rng(2)
    x = rng.random((2, 9, 9)).astype(np.float32)
    w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    gx, gw, gb = nn.conv2d_backward(np.zeros((3, 4, 4), np.float32), x, spec, w)
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_shape_mismatch_message_has_both_shapes():
    spec = nn.ConvLayerSpec(4, 32, kernel=8, stride=4)
    x = np.zeros((3, 84, 84), dtype=np.float32)
    w = np.zeros((32, 4, 8, 8), dtype=np.float32)
    with pytest.raises(ConfigError) as exc:
        nn.conv2d_forward(x, spec, w, np.zeros(32, np.float32))
    assert "(3, 84, 84)" in str(exc.value)


def test_linear_identity():
    x = np.array([1.0, -2.0, 3.0], dtype=np.float32)
    w = np.eye(3, dtype=np.float32)
    b = np.zeros(3, dtype=np.float32)
    assert np.array_equal(nn.linear_forward(x, w, b), x)


def test_linear_dimension_mismatch():
    with pytest.raises(ConfigError):
        nn.linear_forward(np.zeros(4, np.float32), np.zeros((2, 3), np.float32),
                          np.zeros(2, np.float32))


def test_relu_values():
    x = np.array([-1.0, 0.0, 2.0], dtype=np.float32)
    assert np.array_equal(nn.relu_forward(x), [0.0, 0.0, 2.0])
    # subgradient at 0 is 0
    g = nn.relu_backward(np.ones(3, np.float32), x)
    assert np.array_equal(g, [0.0, 0.0, 1.0])


def test_huber_zero_when_equal():
    pred = np.array([1.0, 2.0], dtype=np.float32)
    loss, grad = nn.huber_loss(pred, pred.copy())
    assert loss == 0.0
    assert not grad.any()


def test_huber_quadratic_branch():
    loss, grad = nn.huber_loss(np.array([0.5]), np.array([0.0]))
    assert loss == pytest.approx(0.125)
    assert grad[0] == pytest.approx(0.5)


def test_huber_linear_branch():
    loss, grad = nn.huber_loss(np.array([3.0]), np.array([0.0]))
    assert loss == pytest.approx(2.5)
    assert grad[0] == pytest.approx(1.0)


def test_huber_empty_batch():
    with pytest.raises(ConfigError):
        nn.huber_loss(np.zeros(0), np.zeros(0))


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0], dtype=np.float32)}
    before = params["w"].copy()
    state = nn.AdamState.for_params(params)
    for _ in range(5):
        nn.adam_step(params, {"w": np.zeros(2, np.float32)}, state, lr=0.1)
    assert np.array_equal(params["w"], before)


def test_adam_single_step_hand_computed():
    lr = 1e-4
    params = {"w": np.array([1.0], dtype=np.float64)}
    state = nn.AdamState.for_params(params)
    nn.adam_step(params, {"w": np.array([1.0])}, state, lr=lr)
    # m_hat = v_hat = 1 after one step with g=1, so the move is lr/(1+eps)
    expected = 1.0 - lr * 1.0 / (1.0 + nn.ADAM_EPS)
    assert params["w"][0] == pytest.approx(expected, abs=1e-15)


def test_adam_rejects_nonpositive_lr():
    params = {"w": np.zeros(1, np.float32)}
    state = nn.AdamState.for_params(params)
    with pytest.raises(ConfigError):
        nn.adam_step(params, {"w": np.ones(1, np.float32)}, state, lr=0.0)


def test_adam_rejects_frozen_gradients():
    params = {"w": np.zeros(1, np.float32), "f": np.zeros(1, np.float32)}
    state = nn.AdamState.for_params(params, frozen={"f"})
    with pytest.raises(ConfigError):
        nn.adam_step(params, {"f": np.ones(1, np.float32)}, state, lr=0.1)


def test_init_seed_reproducible():
    spec = nn.QNetworkSpec.standard(6)
    a = nn.init_network(spec, seed=7)
    b = nn.init_network(spec, seed=7)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])


def test_init_different_seeds_differ():
    spec = nn.QNetworkSpec.head_only(8, 8, 2)
    a = nn.init_network(spec, seed=1)
    b = nn.init_network(spec, seed=2)
    assert any(not np.array_equal(a.params[n], b.params[n]) for n in a.params)


def test_init_within_fan_in_bound():
    spec = nn.QNetworkSpec.standard(6)
    net = nn.init_network(spec, seed=3)
    for name, shape in spec.param_shapes().items():
        p = net.params[name]
        if name.endswith(".b"):
            assert not p.any()
        else:
            bound = 1.0 / np.sqrt(np.prod(shape[1:]))
            assert np.abs(p).max() <= bound


def test_qnet_zero_weights_zero_output():
    spec = nn.QNetworkSpec.standard(6)
    params = {n: np.zeros(s, np.float32) for n, s in spec.param_shapes().items()}
    net = nn.QNetwork(spec, params)
    state = np.random.default_rng(0).random((4, 84, 84)).astype(np.float32)
    q = nn.qnet_forward(net, state)
    assert q.shape == (6,)
    assert not q.any()


@pytest.mark.parametrize("actions", [6, 7])
def test_qnet_output_length_matches_action_count(actions):
    net = nn.init_network(nn.QNetworkSpec.standard(actions), seed=0)
    state = np.random.default_rng(1).random((4, 84, 84)).astype(np.float32)
    assert nn.qnet_forward(net, state).shape == (actions,)


def test_qnet_forward_deterministic():
    net = nn.init_network(nn.QNetworkSpec.standard(6), seed=11)
    state = np.random.default_rng(5).random((4, 84, 84)).astype(np.float32)
    q1 = nn.qnet_forward(net, state)
    q2 = nn.qnet_forward(net, state)
    assert np.array_equal(q1, q2)


def test_qnet_rejects_wrong_input_shape():
    net = nn.init_network(nn.QNetworkSpec.standard(6), seed=0)
    with pytest.raises(ConfigError):
        nn.qnet_forward(net, np.zeros((4, 80, 84), np.float32))


def test_qnet_batched_matches_single():
    # batched BLAS reductions reorder float sums, so equality is to tolerance
    net = nn.init_network(nn.QNetworkSpec.standard(4), seed=9)
    states = np.random.default_rng(3).random((5, 4, 84, 84)).astype(np.float32)
    batched = net.forward(states)
    for i in range(5):
        np.testing.assert_allclose(batched[i], net.forward(states[i]),
                                   rtol=1e-5, atol=1e-6)


def test_nan_weight_raises_numerical_error():
    net = nn.init_network(nn.QNetworkSpec.head_only(4, 4, 2), seed=0)
    net.params["head2.w"][0, 0] = np.nan
    with pytest.raises(NumericalError):
        net.forward(np.ones(4, np.float32))


def test_backward_excludes_frozen_params():
    spec = nn.QNetworkSpec.head_only(4, 8, 3)
    net = nn.init_network(spec, seed=0, frozen={"head1.w", "head1.b"})
    q, cache = net.forward_cached(np.ones(4, np.float32))
    grads = net.backward(cache, np.ones(3, np.float32))
    assert set(grads) == {"head2.w", "head2.b"}
