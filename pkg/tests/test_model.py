import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from nnif import model as nn
from nnif.model import Layer, ModelError, ModelParams

from oracles import central_diff, rel_err


def reference_init(widths, seed):
    rng = np.random.default_rng(seed)
    out = []
    for a, b in zip(widths[:-1], widths[1:]):
        lim = np.sqrt(6.0 / (a + b))
        out.append(rng.uniform(-lim, lim, (b, a)))
    return out


def reference_logits(params, x):
    h = np.asarray(x, dtype=float)
    for k, layer in enumerate(params.layers):
        h = layer.weight @ h + layer.bias
        if k < len(params.layers) - 1:
            h = np.where(h > 0, h, 0.0)
    return h


def linear(w, b=None):
    w = np.asarray(w, dtype=float)
    return ModelParams((Layer(w, np.zeros(w.shape[0]) if b is None else np.asarray(b, float), "identity"),))


def test_init_is_deterministic_and_counts_params():
    a, b = nn.init_model([2, 4, 2], 7), nn.init_model([2, 4, 2], 7)
    assert np.array_equal(a.flat(), b.flat())
    assert a.n_params == 4 * 3 + 2 * 5 == 22


def test_init_matches_reference_script():
    params = nn.init_model([3, 5, 5, 3], 1)
    for layer, w in zip(params.layers, reference_init([3, 5, 5, 3], 1)):
        assert np.array_equal(layer.weight, w)
        assert not layer.bias.any()
    assert [l.activation for l in params.layers] == ["relu", "relu", "identity"]


@pytest.mark.parametrize("widths", [[], [3], [3, 0, 2], [3, -1, 2]])
def test_init_rejects_bad_architecture(widths):
    with pytest.raises(ModelError):
        nn.init_model(widths, 0)


def test_forward_identity_and_zero_maps():
    assert np.array_equal(nn.logits(linear(np.eye(2)), [1.0, 0.0]), [1.0, 0.0])
    zero = nn.init_model([3, 4, 2], 0).with_flat(np.zeros(26))
    assert not nn.logits(zero, [0.3, 0.2, 0.9]).any()


def test_forward_matches_reference():
    params = nn.init_model([4, 6, 5, 3], 11)
    x = np.random.default_rng(0).uniform(0, 1, (5, 4))
    ref = np.stack([reference_logits(params, xi) for xi in x])
    assert np.allclose(nn.logits(params, x), ref, atol=1e-13)


def test_forward_rejects_wrong_dimension():
    with pytest.raises(ModelError):
        nn.forward(nn.init_model([3, 2], 0), np.zeros(4))


def test_loss_known_values():
    flat = linear(np.zeros((10, 3)))
    assert nn.loss(flat, np.ones(3), 4) == pytest.approx(np.log(10), abs=1e-12)
    sharp = linear(np.eye(3) * 50)
    assert nn.loss(sharp, np.eye(3)[1], 1) < 1e-8
    with pytest.raises(ModelError):
        nn.loss(flat, np.ones(3), 10)


def test_loss_matches_logsumexp_oracle():
    params = nn.init_model([3, 4, 3], 5)
    x = np.random.default_rng(1).uniform(0, 1, (8, 3))
    y = np.arange(8) % 3
    z = np.stack([reference_logits(params, xi) for xi in x])
    oracle = logsumexp(z, axis=1) - z[np.arange(8), y]
    assert np.allclose(nn.losses(params, x, y), oracle, atol=1e-13)


def test_param_gradient_finite_differences(tiny_net):
    params, x, y = tiny_net
    fd = central_diff(lambda t: nn.loss(params.with_flat(t), x, y), params.flat(), h=1e-4)
    assert rel_err(nn.grad_params(params, x, y), fd) <= 1e-4


def test_dead_relu_has_zero_incoming_gradient():
    w1 = np.array([[1.0, 1.0], [-1.0, -1.0]])
    params = ModelParams((Layer(w1, np.zeros(2), "relu"), Layer(np.eye(2), np.zeros(2), "identity")))
    g = nn.grad_params(params, np.array([0.5, 0.3]), 0)
    # unit 1 has a negative pre-activation: its weight row and bias get no gradient
    assert g[2] == 0 and g[3] == 0 and g[5] == 0


def test_batch_gradient_is_mean_of_per_example(tiny_net):
    params, x, y = tiny_net
    assert np.allclose(nn.per_example_grads(params, x, y).mean(axis=0), nn.grad_params(params, x, y), atol=1e-15)


def test_input_gradient_linear_closed_form():
    w = np.array([[0.5, -1.0, 2.0], [1.5, 0.2, -0.3]])
    params = linear(w)
    x, y = np.array([0.2, 0.7, 0.1]), 1
    p = nn.softmax(w @ x)
    expected = w.T @ (p - np.eye(2)[y])
    assert np.allclose(nn.grad_input(params, x, y), expected, atol=1e-14)


def test_input_gradient_finite_differences(tiny_net):
    params, x, y = tiny_net
    for xi, yi in zip(x, y):
        fd = central_diff(lambda v: nn.loss(params, v, yi), xi, h=1e-5)
        assert rel_err(nn.grad_input(params, xi, yi), fd) <= 1e-4


def test_input_gradient_of_constant_network_is_zero():
    params = nn.init_model([3, 4, 2], 0).with_flat(np.zeros(26))
    assert not nn.grad_input(params, [0.1, 0.2, 0.3], 1).any()


def test_hvp_zero_and_finite_differences(tiny_net):
    params, x, y = tiny_net
    assert not nn.hvp(params, x, y, np.zeros(22)).any()
    v = np.random.default_rng(2).normal(size=22)
    h = 1e-4
    fd = (nn.grad_params(params.with_flat(params.flat() + h * v), x, y)
          - nn.grad_params(params.with_flat(params.flat() - h * v), x, y)) / (2 * h)
    assert rel_err(nn.hvp(params, x, y, v), fd) <= 1e-3


def test_hessian_of_softmax_regression_closed_form():
    rng = np.random.default_rng(4)
    w, bias = rng.normal(size=(3, 4)), rng.normal(size=3)
    params = linear(w, bias)
    x, y = rng.uniform(0, 1, (5, 4)), rng.integers(0, 3, 5)
    # theta = [W row-major, b]; the augmented matrix [W | b] orders entries as k * (d + 1) + j
    perm = [k * 5 + j for k in range(3) for j in range(4)] + [k * 5 + 4 for k in range(3)]
    expected = np.zeros((15, 15))
    for xi in x:
        p = nn.softmax(w @ xi + bias)
        a = np.r_[xi, 1.0]
        expected += np.kron(np.diag(p) - np.outer(p, p), np.outer(a, a)) / len(x)
    expected = expected[np.ix_(perm, perm)]
    assert np.allclose(nn.hessian(params, x, y), expected, atol=1e-13)


def test_hvp_rejects_bad_input(tiny_net):
    params, x, y = tiny_net
    with pytest.raises(ModelError):
        nn.hvp(params, x, y, np.zeros(5))
    with pytest.raises(ModelError):
        nn.hvp(params, x[:0], y[:0], np.zeros(22))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_hvp_linear_and_symmetric(seed, a, b):
    params = nn.init_model([3, 5, 3], seed % 50)
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(0, 1, (10, 3)), rng.integers(0, 3, 10)
    u, v = rng.normal(size=(2, params.n_params))
    hu, hv = nn.hvp(params, x, y, u), nn.hvp(params, x, y, v)
    combo = nn.hvp(params, x, y, a * u + b * v)
    assert np.linalg.norm(combo - (a * hu + b * hv)) <= 1e-10 * max(1.0, np.linalg.norm(combo))
    assert abs(u @ hv - v @ hu) <= 1e-8 * max(1.0, abs(u @ hv))


def test_hessian_is_symmetric_and_matches_hvp(tiny_net):
    params, x, y = tiny_net
    hmat = nn.hessian(params, x, y)
    v = np.arange(22.0)
    assert np.allclose(hmat, hmat.T, atol=1e-14)
    assert np.allclose(hmat @ v, nn.hvp(params, x, y, v), atol=1e-12)


def test_embedding_hand_case():
    w1 = np.array([[1.0, -1.0], [0.5, 2.0]])
    b1 = np.array([0.0, -1.0])
    params = ModelParams((Layer(w1, b1, "relu"), Layer(np.eye(2), np.zeros(2), "identity")))
    # pre-activations (-0.1, -0.05): both units off
    assert np.array_equal(nn.embedding(params, [0.3, 0.4]), [0.0, 0.0])
    x = np.array([0.6, 0.5])
    assert np.allclose(nn.embedding(params, x), [0.1, 0.3])
    assert np.array_equal(nn.embedding(params, x), nn.forward(params, x).hidden[params.embedding_index])


def test_training_is_deterministic_and_fits_blobs():
    rng = np.random.default_rng(0)
    x = np.r_[rng.normal(0.25, 0.05, (100, 2)), rng.normal(0.75, 0.05, (100, 2))].clip(0, 1)
    y = np.r_[np.zeros(100, int), np.ones(100, int)]
    init = nn.init_model([2, 8, 2], 0)
    hyper = nn.TrainConfig(lr=0.1, epochs=200, batch_size=32, seed=4)
    a, b = nn.train(init, x, y, hyper), nn.train(init, x, y, hyper)
    assert np.array_equal(a.flat(), b.flat())
    assert nn.accuracy(a, x, y) == 1.0


def test_zero_learning_rate_keeps_params(tiny_net):
    params, x, y = tiny_net
    out = nn.train(params, x, y, nn.TrainConfig(lr=0.0, epochs=3))
    assert np.array_equal(out.flat(), params.flat())
    with pytest.raises(ModelError):
        nn.train(params, x[:0], y[:0])


def test_pure_functions_repeat_bit_identically(tiny_net):
    params, x, y = tiny_net
    assert np.array_equal(nn.logits(params, x), nn.logits(params, x))
    assert nn.loss(params, x, y) == nn.loss(params, x, y)


def test_model_roundtrip(tmp_path, tiny_net):
    params = nn.init_model([3, 5, 4, 2], 9)
    nn.save_model(params, tmp_path / "m.bin")
    back = nn.load_model(tmp_path / "m.bin")
    assert np.array_equal(back.flat(), params.flat())
    assert [l.activation for l in back.layers] == [l.activation for l in params.layers]
    (tmp_path / "bad.bin").write_bytes(b"garbage!")
    with pytest.raises(ModelError):
        nn.load_model(tmp_path / "bad.bin")


def test_params_reject_non_finite():
    with pytest.raises(ModelError):
        linear([[np.nan, 0.0], [0.0, 1.0]])
