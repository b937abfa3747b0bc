import numpy as np
import pytest

from nmm.components import FNN, LSTM, RNN, CacheError, Component, fnn_forward, lstm_step, make_component, rnn_step
from nmm.linalg import ShapeError, make_rng, sigmoid
from nmm.notation import ComponentSpec

from helpers import numeric_grad, rel_error


def build(kind, h=3, history=1, emb=4, seed=0, depth=1, identity=False):
    spec = ComponentSpec(kind, h, history, depth)
    comp = make_component(spec, emb, np.float64, identity_input=identity)
    rng = make_rng(seed)
    comp.init_params(rng)
    for k, v in comp.params.items():
        if comp.is_bias(k):
            v[...] = rng.normal(0, 0.1, v.shape)
    return comp


class TestHandOracles:
    def test_fnn_single_step(self):
        ctx = [np.array([[1.0, 2.0]]), np.array([[0.5, -1.0]])]
        weights = [np.array([[1.0], [1.0]]), np.array([[2.0], [1.0]])]
        # 1 + 2 + (1 - 1) - 0.5 = 2.5
        np.testing.assert_array_equal(fnn_forward(ctx, weights, np.array([-0.5])), [[2.5]])
        np.testing.assert_array_equal(fnn_forward(ctx, weights, np.array([-4.0])), [[0.0]])

    def test_rnn_step(self):
        h = rnn_step(np.array([[1.0]]), np.array([[0.5]]), np.array([[2.0]]), np.array([[2.0]]), np.array([-3.0]))
        np.testing.assert_allclose(h, [[0.5]])
        h2 = rnn_step(np.array([[0.3]]), np.array([[0.0]]), None, np.array([[1.0]]))
        np.testing.assert_allclose(h2, sigmoid(np.array([[0.3]])))

    def test_lstm_zero_weights(self):
        n = 2
        Vw, Vh, b = np.zeros((3, 4 * n)), np.zeros((n, 4 * n)), np.zeros(4 * n)
        c_prev = np.array([[1.0, -2.0]])
        h, c, _ = lstm_step(np.ones((1, 3)), np.zeros((1, n)), c_prev, Vw, Vh, b)
        # all gates 0.5, candidate tanh(0) = 0
        np.testing.assert_allclose(c, 0.5 * c_prev)
        np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * c_prev))

    def test_lstm_gate_layout(self):
        comp = build("L", h=2, emb=3)
        gm = comp.gate_matrices()
        np.testing.assert_array_equal(gm["Vw_f"], comp.params["Vw"][:, 2:4])
        np.testing.assert_array_equal(gm["Vh_c"], comp.params["Vh"][:, 6:8])


class TestLSTMProperties:
    def test_cell_growth_bounded(self):
        # |c_t| <= |c_{t-1}| + 1 since f, i in (0, 1) and |tanh| <= 1
        comp = build("L", h=5, emb=4, seed=3)
        for v in comp.params.values():
            v *= 10
        rng = make_rng(1)
        comp.reset_state(2)
        E = rng.normal(size=(2, 30, 4)) * 5
        _, cache = comp.forward(E, 0)
        cs = cache["cs"]
        assert (np.abs(cs[:, 1:]) <= np.abs(cs[:, :-1]) + 1 + 1e-12).all()
        assert np.abs(cache["hs"]).max() <= 1


@pytest.mark.parametrize(
    "kind,history,depth,identity",
    [("F", 2, 1, False), ("F", 4, 1, False), ("F", 3, 2, False), ("R", 1, 1, False), ("R", 1, 1, True),
     ("L", 1, 1, False)],
)
def test_component_gradients(kind, history, depth, identity):
    emb = 3 if identity else 4
    comp = build(kind, h=3, history=history, emb=emb, depth=depth, identity=identity, seed=7)
    rng = make_rng(11)
    B, T = 2, 4
    offset = comp.context_words
    E = rng.normal(size=(B, offset + T, emb))
    dH = rng.normal(size=(B, T, 3))
    comp.reset_state(B)
    comp.forward(rng.normal(size=(B, offset + T, emb)), offset)  # non-zero carried state
    start = comp.get_state()

    def loss():
        comp.set_state(start)
        H, _ = comp.forward(E, offset)
        return float((H * dH).sum())

    comp.set_state(start)
    _, cache = comp.forward(E, offset)
    grads, dE = comp.backward(cache, dH)
    for k, v in comp.params.items():
        assert rel_error(grads[k], numeric_grad(loss, v)) < 1e-6, k
    assert rel_error(dE, numeric_grad(loss, E)) < 1e-6


@pytest.mark.parametrize("kind", ["R", "L"])
def test_window_split_matches_single_window(kind):
    comp = build(kind, h=3, emb=4)
    E = make_rng(2).normal(size=(2, 6, 4))
    comp.reset_state(2)
    H_full, _ = comp.forward(E, 0)
    comp.reset_state(2)
    H_a, _ = comp.forward(E[:, :2], 0)
    H_b, _ = comp.forward(E[:, 2:], 0)
    np.testing.assert_allclose(np.concatenate([H_a, H_b], axis=1), H_full, rtol=0, atol=1e-15)


def test_reset_state_zeroes():
    comp = build("L", h=3, emb=4)
    comp.reset_state(2)
    comp.forward(np.ones((2, 3, 4)), 0)
    assert np.abs(comp.state[0]).sum() > 0
    comp.reset_state(2)
    assert all(not s.any() for s in comp.state)


def test_state_batch_mismatch():
    comp = build("R", h=3, emb=4)
    comp.reset_state(2)
    with pytest.raises(ShapeError):
        comp.forward(np.ones((3, 2, 4)), 0)


def test_fnn_needs_context():
    comp = build("F", h=3, history=4, emb=4)
    with pytest.raises(ShapeError):
        comp.forward(np.ones((1, 3, 4)), 1)


@pytest.mark.parametrize("cls", [FNN, RNN, LSTM])
def test_backward_without_cache(cls):
    kind = cls.kind
    comp = build(kind, history=2 if kind == "F" else 1)
    with pytest.raises(CacheError):
        comp.backward(None, np.zeros((1, 1, 3)))


@pytest.mark.parametrize(
    "spec,emb,identity",
    [(ComponentSpec("F", 7, 5, 2), 3, False), (ComponentSpec("R", 4), 6, False), (ComponentSpec("R", 4), 4, True),
     (ComponentSpec("L", 5), 3, False)],
)
def test_count_matches_arrays(spec, emb, identity):
    comp = make_component(spec, emb, identity_input=identity)
    comp.init_params(make_rng(0))
    assert Component.count(spec, emb, True, identity) == sum(v.size for v in comp.params.values())
    no_bias = sum(v.size for k, v in comp.params.items() if not comp.is_bias(k))
    assert Component.count(spec, emb, False, identity) == no_bias
