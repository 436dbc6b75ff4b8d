import numpy as np
import pytest

from FEATnorm.nn_core import (
    ASCENT,
    DESCENT,
    DenseLayer,
    Gradients,
    Mlp,
    apply_update,
    backward,
    dumps_mlp,
    finite_diff_grad,
    forward,
    gradient_check,
    init_mlp,
    loads_mlp,
    scaled_error,
    softmax_cross_entropy,
)
from FEATnorm.utils import ContractError, OracleError, ParseError, ShapeError, ValidationError


def naive_forward(net, inputs):
    # element by element evaluation, independent of the vectorised path
    out = []
    for row in inputs:
        x = list(row)
        for layer in net.layers:
            y = []
            for j in range(layer.out_dim):
                z = layer.bias[j]
                for i in range(layer.in_dim):
                    z += x[i] * layer.weight[i, j]
                if layer.activation == "relu":
                    z = max(z, 0.0)
                elif layer.activation == "tanh":
                    z = np.tanh(z)
                y.append(z)
            x = y
        out.append(x)
    return np.array(out)


def ce_loss_fn(inputs, labels):
    def loss_fn(net):
        out, _ = forward(net, inputs)
        return softmax_cross_entropy(out, labels)[0]

    return loss_fn


def test_forward_identity():
    net = Mlp([DenseLayer(np.eye(2), np.zeros(2), "identity")])
    out, _ = forward(net, np.array([[1.0, 2.0]]))
    assert np.array_equal(out, [[1.0, 2.0]])


def test_forward_relu_sign():
    net = Mlp([DenseLayer([[1.0], [-1.0]], [0.0], "relu")])
    out, _ = forward(net, np.array([[3.0, 5.0]]))
    assert np.array_equal(out, [[0.0]])


def test_forward_matches_naive_evaluation():
    net = init_mlp([5, 7, 4, 3], ["relu", "tanh", "identity"], seed=2)
    x = np.random.default_rng(0).normal(size=(6, 5))
    out, _ = forward(net, x)
    assert out.shape == (6, 3)
    np.testing.assert_allclose(out, naive_forward(net, x), rtol=1e-12, atol=1e-12)


def test_forward_shape_error_names_both_shapes():
    net = init_mlp([3, 2], "identity", seed=0)
    with pytest.raises(ShapeError, match=r"\(2, 4\).*\(3, 2\)"):
        forward(net, np.zeros((2, 4)))


def test_mlp_rejects_incompatible_layers():
    with pytest.raises(ShapeError):
        Mlp([DenseLayer(np.zeros((2, 3)), np.zeros(3)), DenseLayer(np.zeros((2, 1)), np.zeros(1))])
    with pytest.raises(ValidationError):
        Mlp([])


def test_activation_is_read_only():
    layer = DenseLayer(np.eye(2), np.zeros(2), "tanh")
    with pytest.raises(AttributeError):
        layer.activation = "relu"
    with pytest.raises(ValidationError):
        DenseLayer(np.eye(2), np.zeros(2), "sigmoid")


def test_softmax_cross_entropy_symmetric():
    loss, dlogits = softmax_cross_entropy(np.array([[0.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)
    np.testing.assert_allclose(dlogits, [[-0.5, 0.5]])


def test_softmax_cross_entropy_confident():
    loss, _ = softmax_cross_entropy(np.array([[10.0, -10.0]]), np.array([0]))
    assert loss == pytest.approx(2.06e-9, rel=1e-2)


def test_softmax_cross_entropy_gradient_matches_finite_differences():
    gen = np.random.default_rng(4)
    logits = gen.normal(size=(4, 5))
    labels = gen.integers(0, 5, size=4)
    _, dlogits = softmax_cross_entropy(logits, labels)

    h = 1e-6
    numeric = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        plus = logits.copy()
        plus[idx] += h
        minus = logits.copy()
        minus[idx] -= h
        numeric[idx] = (softmax_cross_entropy(plus, labels)[0] - softmax_cross_entropy(minus, labels)[0]) / (2 * h)
    np.testing.assert_allclose(dlogits, numeric, rtol=1e-6, atol=1e-9)


def test_softmax_cross_entropy_label_errors():
    with pytest.raises(ValidationError):
        softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(ShapeError):
        softmax_cross_entropy(np.zeros((2, 3)), np.array([0]))


def test_backward_identity_layer_by_hand():
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    net = Mlp([DenseLayer(np.eye(2), np.zeros(2), "identity")])
    _, cache = forward(net, x)
    dout = np.array([[1.0, 0.0], [0.0, 1.0]])
    grads, dinput = backward(net, cache, dout)
    np.testing.assert_array_equal(grads.weights[0], x.T @ dout)
    np.testing.assert_array_equal(grads.biases[0], [1.0, 1.0])
    np.testing.assert_array_equal(dinput, dout)


def test_backward_dead_relu_units():
    net = Mlp([DenseLayer([[-1.0, -2.0]], [-1.0, -1.0], "relu")])
    _, cache = forward(net, np.array([[1.0], [2.0]]))
    grads, dinput = backward(net, cache, np.ones((2, 2)))
    assert not np.any(grads.weights[0])
    assert not np.any(grads.biases[0])
    assert not np.any(dinput)


@pytest.mark.parametrize("seed", range(3))
def test_backward_matches_finite_differences(seed):
    net = init_mlp([4, 6, 5, 3], ["tanh", "relu", "identity"], seed=seed)
    gen = np.random.default_rng(seed)
    x = gen.normal(size=(7, 4))
    y = gen.integers(0, 3, size=7)

    out, cache = forward(net, x)
    _, dout = softmax_cross_entropy(out, y)
    analytic, _ = backward(net, cache, dout)
    numeric = finite_diff_grad(ce_loss_fn(x, y), net, step=1e-5)
    for a, n in zip(analytic.arrays(), numeric.arrays()):
        assert np.all(scaled_error(a, n, rtol=1e-4, atol=1e-7) <= 1e-4)


def test_backward_rejects_stale_cache(tanh_net, batch):
    x, y = batch
    out, cache = forward(tanh_net, x)
    _, dout = softmax_cross_entropy(out, y)
    grads, _ = backward(tanh_net, cache, dout)
    apply_update(tanh_net, grads, 0.1)
    with pytest.raises(ContractError):
        backward(tanh_net, cache, dout)


def test_backward_rejects_foreign_cache(tanh_net, batch):
    x, y = batch
    other = tanh_net.copy()
    out, cache = forward(other, x)
    with pytest.raises(ContractError):
        backward(tanh_net, cache, np.zeros_like(out))


def test_backward_counts_calls(tanh_net, batch):
    x, _ = batch
    out, cache = forward(tanh_net, x)
    backward(tanh_net, cache, np.ones_like(out))
    backward(tanh_net, cache, np.ones_like(out))
    assert tanh_net.n_backward == 2


def test_apply_update_arithmetic():
    net = Mlp([DenseLayer([[1.0]], [1.0])])
    grads = Gradients([[[2.0]]], [[2.0]])
    down = apply_update(net.copy(), grads, 0.1, DESCENT)
    up = apply_update(net.copy(), grads, 0.1, ASCENT)
    assert down.layers[0].weight[0, 0] == pytest.approx(0.8)
    assert up.layers[0].weight[0, 0] == pytest.approx(1.2)


def test_apply_update_leaves_zero_gradients_untouched():
    net = Mlp([DenseLayer([[1.0, -0.0]], [0.5, 0.25])])
    grads = Gradients([[[0.0, 0.0]]], [[3.0, 0.0]])
    before = net.copy()
    apply_update(net, grads, 0.5)
    assert net.layers[0].weight.tobytes() == before.layers[0].weight.tobytes()
    assert net.layers[0].bias[1] == 0.25
    assert net.layers[0].bias[0] == pytest.approx(-1.0)


def test_apply_update_validation(tanh_net):
    grads = Gradients.zeros_like(tanh_net)
    with pytest.raises(ValidationError):
        apply_update(tanh_net, grads, 0.0)
    with pytest.raises(ValidationError):
        apply_update(tanh_net, grads, -1.0)
    bad = Gradients.zeros_like(tanh_net)
    bad.weights[0][0, 0] = np.nan
    with pytest.raises(ValidationError):
        apply_update(tanh_net, bad, 0.1)
    small = Gradients.zeros_like(init_mlp([2, 2], "identity", seed=0))
    with pytest.raises(ShapeError):
        apply_update(tanh_net, small, 0.1)


def test_ascent_equals_descent_on_negated_loss(tanh_net, batch):
    x, y = batch
    a = tanh_net.copy()
    b = tanh_net.copy()
    for _ in range(5):
        out, cache = forward(a, x)
        _, dout = softmax_cross_entropy(out, y)
        grads, _ = backward(a, cache, dout)
        apply_update(a, grads, 0.05, ASCENT)

        out, cache = forward(b, x)
        _, dout = softmax_cross_entropy(out, y)
        grads, _ = backward(b, cache, -dout)
        apply_update(b, grads, 0.05, DESCENT)
    assert a.digest() == b.digest()


def test_finite_diff_quadratic():
    net = Mlp([DenseLayer([[3.0]], [0.0])])
    grads = finite_diff_grad(lambda m: m.layers[0].weight[0, 0] ** 2, net, step=1e-5)
    assert grads.weights[0][0, 0] == pytest.approx(6.0, abs=1e-6)
    assert grads.biases[0][0] == 0.0


def test_finite_diff_constant_loss(tanh_net):
    grads = finite_diff_grad(lambda m: 1.5, tanh_net)
    assert all(not np.any(a) for a in grads.arrays())


def test_finite_diff_restores_parameters(tanh_net, batch):
    before = tanh_net.digest()
    finite_diff_grad(ce_loss_fn(*batch), tanh_net)
    assert tanh_net.digest() == before


def test_finite_diff_non_finite_loss_names_parameter():
    net = Mlp([DenseLayer([[1.0]], [0.0])])
    with pytest.raises(OracleError, match="layer 0 weight"):
        finite_diff_grad(lambda m: np.inf, net)
    with pytest.raises(ValidationError):
        finite_diff_grad(lambda m: 0.0, net, step=0.0)


def test_finite_diff_matches_backward_on_tanh_net(tanh_net, batch):
    x, y = batch
    out, cache = forward(tanh_net, x)
    _, dout = softmax_cross_entropy(out, y)
    analytic, _ = backward(tanh_net, cache, dout)
    numeric = finite_diff_grad(ce_loss_fn(x, y), tanh_net)
    for a, n in zip(analytic.arrays(), numeric.arrays()):
        np.testing.assert_allclose(n, a, rtol=1e-4, atol=1e-7)
        np.testing.assert_allclose(a, n, rtol=1e-4, atol=1e-7)


def test_gradient_check_passes_and_detects_corruption(tanh_net, batch):
    result = gradient_check(tanh_net, *batch)
    assert result.passed
    assert result.max_error < 1e-4
    assert result.n_params == tanh_net.n_params

    broken = gradient_check(tanh_net, *batch, corrupt=0.5)
    assert not broken.passed
    assert broken.worst["layer"] == 0
    assert broken.worst["kind"] == "weight"
    assert broken.worst["index"] == [0, 0]


def test_scaled_error_floor():
    assert scaled_error(1e-9, 2e-9, rtol=1e-4, atol=1e-7) <= 1e-4
    assert scaled_error(1.0, 1.001, rtol=1e-4, atol=1e-7) > 1e-4


def test_init_mlp_reproducible():
    a = init_mlp([4, 3, 2], "tanh", seed=9, tag="x")
    b = init_mlp([4, 3, 2], "tanh", seed=9, tag="x")
    c = init_mlp([4, 3, 2], "tanh", seed=9, tag="y")
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
    assert not np.any(a.layers[0].bias)
    assert np.all(np.abs(a.layers[0].weight) <= np.sqrt(6.0 / 7.0))


def test_model_text_round_trip(tanh_net):
    text = dumps_mlp(tanh_net)
    again = loads_mlp(text)
    assert again.digest() == tanh_net.digest()
    assert dumps_mlp(again) == text


def test_model_text_errors_carry_line_numbers(tanh_net):
    lines = dumps_mlp(tanh_net).splitlines()
    lines[4] = "0.1 oops 0.3"
    with pytest.raises(ParseError, match="line 5") as err:
        loads_mlp("\n".join(lines))
    assert err.value.line == 5

    with pytest.raises(ParseError, match="line 1"):
        loads_mlp("layer 2\n")
    with pytest.raises(ParseError, match="unknown activation"):
        loads_mlp("layers 1\nlayer 0 1 1 softplus\nblock 0\n1\n0\n")


def test_model_text_without_layers():
    with pytest.raises(ParseError, match="line 1") as err:
        loads_mlp("layers 0\n")
    assert err.value.line == 1


def test_model_text_non_finite_parameter():
    with pytest.raises(ParseError, match="line 4"):
        loads_mlp("layers 1\nlayer 0 1 1 tanh\nblock 0\nnan\n0\n")
