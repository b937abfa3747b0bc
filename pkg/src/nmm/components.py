"""Feature-layer component models: FNN, RNN and LSTM.

All three read rows of the shared embedding matrix and emit a hidden
feature vector per position. They are driven over a window of ``T`` steps
for a batch of ``B`` streams at a time:

* ``forward(E_ext, offset)`` takes the embedded window ``E_ext`` of shape
  ``(B, offset + T, emb)``. The first ``offset`` positions hold words from
  before the window, which only feedforward components read. It returns
  features of shape ``(B, T, hidden)`` and a cache.
* ``backward(cache, dH)`` returns the parameter gradients and the gradient
  with respect to ``E_ext``. Recurrent gradients stop at the window start.

Recurrent state lives on the component and is carried from one window to the
next as plain arrays, so it is detached by construction.
"""

from __future__ import annotations

import numpy as np

from .linalg import (
    ShapeError,
    glorot_init,
    relu,
    relu_grad,
    sigmoid,
    sigmoid_grad,
    tanh_grad,
)
from .notation import ComponentSpec


class CacheError(RuntimeError):
    """Backward was called without a matching forward cache."""


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


# -- single-step functional forms -------------------------------------------------


def fnn_forward(contexts, weights, bias=None) -> np.ndarray:
    """``relu(sum_i E^{t-i} V^i + b)`` for one hidden layer.

    ``contexts[i-1]`` is the embedding of the word ``i`` positions back and
    ``weights[i-1]`` its position-specific matrix.
    """
    if len(contexts) != len(weights):
        raise ShapeError(f"FNN expects {len(weights)} context vectors, got {len(contexts)}")
    pre = sum(e @ v for e, v in zip(contexts, weights))
    if bias is not None:
        pre = pre + bias
    return relu(pre)


def rnn_step(e, h_prev, W_in, V, b=None):
    """One Elman step ``sigmoid(e W_in + h_prev V + b)``; ``W_in=None`` feeds ``e`` directly."""
    pre = (e if W_in is None else e @ W_in) + h_prev @ V
    if b is not None:
        pre = pre + b
    return sigmoid(pre)


def lstm_step(e, h_prev, c_prev, Vw, Vh, b=None):
    """One LSTM step. Columns of ``Vw``/``Vh`` are stacked as [input, forget, output, candidate].

    Returns ``(h, c, gates)`` where ``gates`` holds the post-activation
    ``i, f, o, candidate`` and ``tanh(c)`` for reuse by backward.
    """
    n = h_prev.shape[-1]
    a = e @ Vw + h_prev @ Vh
    if b is not None:
        a = a + b
    ifo = sigmoid(a[..., : 3 * n])
    i, f, o = ifo[..., :n], ifo[..., n : 2 * n], ifo[..., 2 * n :]
    g = np.tanh(a[..., 3 * n :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, o, g, tc)


# -- windowed components ----------------------------------------------------------


class Component:
    kind = "?"

    def __init__(self, spec: ComponentSpec, embedding_size: int, dtype=np.float64):
        self.spec = spec
        self.embedding_size = embedding_size
        self.hidden_size = spec.hidden_size
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.state: tuple[np.ndarray, ...] = ()

    @property
    def recurrent(self) -> bool:
        return self.spec.recurrent

    @property
    def context_words(self) -> int:
        """Words before the current one that this component reads."""
        return 0

    def init_params(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def is_bias(self, name: str) -> bool:
        return name.startswith("b")

    def reset_state(self, batch_size: int) -> None:
        raise NotImplementedError

    def get_state(self) -> tuple[np.ndarray, ...]:
        return tuple(s.copy() for s in self.state)

    def set_state(self, state) -> None:
        self.state = tuple(np.array(s, dtype=self.dtype) for s in state)

    def forward(self, E_ext: np.ndarray, offset: int):
        raise NotImplementedError

    def backward(self, cache, dH: np.ndarray):
        raise NotImplementedError

    def _zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    @staticmethod
    def count(spec: ComponentSpec, embedding_size: int, include_biases: bool = True,
              identity_input: bool = False) -> int:
        """Parameter count without building the arrays."""
        h, e = spec.hidden_size, embedding_size
        if spec.kind == "F":
            n = (spec.history - 1) * e * h + (spec.depth - 1) * h * h
            return n + (spec.depth * h if include_biases else 0)
        if spec.kind == "R":
            n = h * h + (0 if identity_input else e * h)
            return n + (h if include_biases else 0)
        n = 4 * e * h + 4 * h * h
        return n + (4 * h if include_biases else 0)


class FNN(Component):
    """Feedforward n-gram component over the last ``history - 1`` words.

    Parameters: ``V1 .. V{N-1}`` (one ``emb x hidden`` matrix per context
    position, ``V1`` for the most recent word), bias ``b1``, and for
    ``depth > 1`` extra ``hidden x hidden`` layers ``D2, b2, ...``.
    State is the id window, kept by the owning model.
    """

    kind = "F"

    @property
    def context_words(self) -> int:
        return self.spec.history - 2

    def init_params(self, rng):
        e, h = self.embedding_size, self.hidden_size
        p = {}
        for i in range(1, self.spec.history):
            p[f"V{i}"] = glorot_init(e, h, rng, self.dtype)
        p["b1"] = np.zeros(h, self.dtype)
        for k in range(2, self.spec.depth + 1):
            p[f"D{k}"] = glorot_init(h, h, rng, self.dtype)
            p[f"b{k}"] = np.zeros(h, self.dtype)
        self.params = p

    def reset_state(self, batch_size):
        self.state = ()

    def context_slices(self, E_ext, offset):
        T = E_ext.shape[1] - offset
        if offset < self.context_words:
            raise ShapeError(
                f"FNN with history {self.spec.history} needs {self.context_words} "
                f"earlier positions, window provides {offset}"
            )
        return [E_ext[:, offset - (i - 1) : offset - (i - 1) + T] for i in range(1, self.spec.history)]

    def forward(self, E_ext, offset):
        ctx = self.context_slices(E_ext, offset)
        p = self.params
        z = sum(c @ p[f"V{i}"] for i, c in enumerate(ctx, 1)) + p["b1"]
        zs, acts = [z], [relu(z)]
        for k in range(2, self.spec.depth + 1):
            z = acts[-1] @ p[f"D{k}"] + p[f"b{k}"]
            zs.append(z)
            acts.append(relu(z))
        cache = {"ctx": ctx, "zs": zs, "acts": acts, "E_shape": E_ext.shape, "offset": offset}
        return acts[-1], cache

    def backward(self, cache, dH):
        if cache is None:
            raise CacheError("FNN backward called without a forward cache")
        p, g = self.params, self._zero_grads()
        zs, acts = cache["zs"], cache["acts"]
        da = dH
        for k in range(self.spec.depth, 1, -1):
            dz = relu_grad(zs[k - 1], da)
            g[f"D{k}"] = _flat(acts[k - 2]).T @ _flat(dz)
            g[f"b{k}"] = _flat(dz).sum(axis=0)
            da = dz @ p[f"D{k}"].T
        dz = relu_grad(zs[0], da)
        dz2 = _flat(dz)
        g["b1"] = dz2.sum(axis=0)
        dE = np.zeros(cache["E_shape"], dtype=dH.dtype)
        offset, T = cache["offset"], dH.shape[1]
        for i, c in enumerate(cache["ctx"], 1):
            g[f"V{i}"] = _flat(c).T @ dz2
            dE[:, offset - (i - 1) : offset - (i - 1) + T] += dz @ p[f"V{i}"].T
        return g, dE


class RNN(Component):
    """Elman recurrence ``H^t = sigmoid(E^{t-1} W_in + H^{t-1} V + b)``.

    With ``identity_input`` the embedding is added directly (no ``W_in``);
    this needs ``embedding_size == hidden_size``.
    """

    kind = "R"

    def __init__(self, spec, embedding_size, dtype=np.float64, identity_input=False):
        super().__init__(spec, embedding_size, dtype)
        if identity_input and embedding_size != spec.hidden_size:
            raise ShapeError("identity input needs embedding_size == hidden_size")
        self.identity_input = identity_input

    def init_params(self, rng):
        e, h = self.embedding_size, self.hidden_size
        p = {}
        if not self.identity_input:
            p["W_in"] = glorot_init(e, h, rng, self.dtype)
        p["V"] = glorot_init(h, h, rng, self.dtype)
        p["b"] = np.zeros(h, self.dtype)
        self.params = p

    def reset_state(self, batch_size):
        self.state = (np.zeros((batch_size, self.hidden_size), self.dtype),)

    def forward(self, E_ext, offset):
        E = E_ext[:, offset:]
        B, T, _ = E.shape
        if not self.state or self.state[0].shape[0] != B:
            raise ShapeError(f"RNN state not initialised for batch size {B}")
        p = self.params
        W_in = p.get("W_in")
        hs = np.empty((B, T + 1, self.hidden_size), dtype=E.dtype)
        hs[:, 0] = self.state[0]
        for t in range(T):
            hs[:, t + 1] = rnn_step(E[:, t], hs[:, t], W_in, p["V"], p["b"])
        self.state = (hs[:, T].copy(),)
        return hs[:, 1:], {"E": E, "hs": hs, "E_shape": E_ext.shape, "offset": offset}

    def backward(self, cache, dH):
        if cache is None:
            raise CacheError("RNN backward called without a forward cache")
        p, g = self.params, self._zero_grads()
        E, hs, offset = cache["E"], cache["hs"], cache["offset"]
        T = E.shape[1]
        dE = np.zeros(cache["E_shape"], dtype=dH.dtype)
        dh_next = np.zeros_like(hs[:, 0])
        for t in reversed(range(T)):
            h = hs[:, t + 1]
            dz = sigmoid_grad(h, dH[:, t] + dh_next)
            if self.identity_input:
                dE[:, offset + t] = dz
            else:
                g["W_in"] += E[:, t].T @ dz
                dE[:, offset + t] = dz @ p["W_in"].T
            g["V"] += hs[:, t].T @ dz
            g["b"] += dz.sum(axis=0)
            dh_next = dz @ p["V"].T
        return g, dE


class LSTM(Component):
    """LSTM without peepholes.

    ``Vw`` (``emb x 4h``) and ``Vh`` (``h x 4h``) hold the input, forget,
    output and candidate matrices side by side; :meth:`gate_matrices` gives
    the eight blocks by name.
    """

    kind = "L"
    GATES = ("i", "f", "o", "c")

    def init_params(self, rng):
        e, h = self.embedding_size, self.hidden_size
        self.params = {
            "Vw": np.concatenate([glorot_init(e, h, rng, self.dtype) for _ in self.GATES], axis=1),
            "Vh": np.concatenate([glorot_init(h, h, rng, self.dtype) for _ in self.GATES], axis=1),
            "b": np.zeros(4 * h, self.dtype),
        }

    def gate_matrices(self) -> dict[str, np.ndarray]:
        h = self.hidden_size
        out = {}
        for k, gate in enumerate(self.GATES):
            out[f"Vw_{gate}"] = self.params["Vw"][:, k * h : (k + 1) * h]
            out[f"Vh_{gate}"] = self.params["Vh"][:, k * h : (k + 1) * h]
        return out

    def reset_state(self, batch_size):
        z = np.zeros((batch_size, self.hidden_size), self.dtype)
        self.state = (z, z.copy())

    def forward(self, E_ext, offset):
        E = E_ext[:, offset:]
        B, T, _ = E.shape
        if not self.state or self.state[0].shape[0] != B:
            raise ShapeError(f"LSTM state not initialised for batch size {B}")
        p, n = self.params, self.hidden_size
        hs = np.empty((B, T + 1, n), dtype=E.dtype)
        cs = np.empty_like(hs)
        hs[:, 0], cs[:, 0] = self.state
        steps = []
        for t in range(T):
            hs[:, t + 1], cs[:, t + 1], gates = lstm_step(
                E[:, t], hs[:, t], cs[:, t], p["Vw"], p["Vh"], p["b"]
            )
            steps.append(gates)
        self.state = (hs[:, T].copy(), cs[:, T].copy())
        cache = {"E": E, "hs": hs, "cs": cs, "gates": steps, "E_shape": E_ext.shape, "offset": offset}
        return hs[:, 1:], cache

    def backward(self, cache, dH):
        if cache is None:
            raise CacheError("LSTM backward called without a forward cache")
        p, g = self.params, self._zero_grads()
        E, hs, cs, offset = cache["E"], cache["hs"], cache["cs"], cache["offset"]
        T = E.shape[1]
        dE = np.zeros(cache["E_shape"], dtype=dH.dtype)
        dh_next = np.zeros_like(hs[:, 0])
        dc_next = np.zeros_like(cs[:, 0])
        for t in reversed(range(T)):
            i, f, o, cand, tc = cache["gates"][t]
            dh = dH[:, t] + dh_next
            dc = dc_next + tanh_grad(tc, dh * o)
            da = np.concatenate(
                [
                    sigmoid_grad(i, dc * cand),
                    sigmoid_grad(f, dc * cs[:, t]),
                    sigmoid_grad(o, dh * tc),
                    tanh_grad(cand, dc * i),
                ],
                axis=1,
            )
            g["Vw"] += E[:, t].T @ da
            g["Vh"] += hs[:, t].T @ da
            g["b"] += da.sum(axis=0)
            dE[:, offset + t] = da @ p["Vw"].T
            dh_next = da @ p["Vh"].T
            dc_next = dc * f
        return g, dE


def make_component(spec: ComponentSpec, embedding_size: int, dtype=np.float64,
                   identity_input: bool = False) -> Component:
    if spec.kind == "F":
        return FNN(spec, embedding_size, dtype)
    if spec.kind == "R":
        return RNN(spec, embedding_size, dtype, identity_input=identity_input)
    return LSTM(spec, embedding_size, dtype)
