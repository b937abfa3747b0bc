"""The neural mixture language model.

One embedding matrix ``U`` feeds every component. Component features are
projected by per-component matrices ``S_m`` into a common mixture layer::

    H_mix = relu(sum_m c_m * H_m S_m + b_mix)
    O     = softmax(H_mix W + b_out)

where ``c_m`` is 1 at evaluation time and, in training, the model-dropout
coefficient: 0 for a dropped component, ``1 / (1 - p_d)`` for a kept
non-recurrent one, 1 for recurrent ones. A spec with ``mixture_size == 0``
has no mixture layer; its single component feeds ``W`` directly, which is
how the standalone FNN/RNN/LSTM baselines are built.
"""

from __future__ import annotations

import numpy as np

from .components import Component, make_component
from .linalg import ShapeError, glorot_init, make_rng, relu, relu_grad, resolve_dtype, softmax_rows
from .notation import MixtureSpec


class DropoutError(ValueError):
    pass


def uses_identity_input(spec: MixtureSpec) -> bool:
    """A standalone RNN whose embedding width equals its hidden width adds ``E`` directly."""
    c = spec.components[0]
    return spec.standalone and c.kind == "R" and c.hidden_size == spec.embedding_size


def count_params(spec: MixtureSpec, include_biases: bool = True) -> int:
    """Exact parameter count from the spec alone."""
    e, V, mix = spec.embedding_size, spec.vocab_size, spec.mixture_size
    identity = uses_identity_input(spec)
    n = V * e
    n += sum(Component.count(c, e, include_biases, identity) for c in spec.components)
    if spec.standalone:
        top = spec.components[0].hidden_size
    else:
        n += sum(c.hidden_size * mix for c in spec.components)
        n += mix if include_biases else 0
        top = mix
    n += top * V + (V if include_biases else 0)
    return n


def param_growth(nop: float, baseline_nop: float) -> float:
    """Relative parameter change versus a baseline, in percent."""
    if baseline_nop <= 0:
        raise ValueError("baseline parameter count must be positive")
    return 100.0 * (nop - baseline_nop) / baseline_nop


def sample_dropout(spec: MixtureSpec, p_d: float, rng: np.random.Generator,
                   batch_size: int = 1) -> np.ndarray:
    """Boolean ``(batch_size, n_components)`` mask of active components.

    Each non-recurrent component is dropped independently per example with
    probability ``p_d``; recurrent components are always active.
    """
    if not 0.0 <= p_d <= 1.0:
        raise DropoutError(f"model dropout probability must lie in [0, 1], got {p_d}")
    mask = np.ones((batch_size, len(spec.components)), dtype=bool)
    for m, c in enumerate(spec.components):
        if not c.recurrent:
            mask[:, m] = rng.random(batch_size) >= p_d
    return mask


class NeuralMixtureModel:
    def __init__(self, spec: MixtureSpec, precision="float64", seed: int = 0, eos_id: int = 0,
                 vocab_hash: str | None = None):
        self.spec = spec
        self.dtype = resolve_dtype(precision)
        self.eos_id = eos_id
        self.vocab_hash = vocab_hash
        identity = uses_identity_input(spec)
        self.components = [
            make_component(c, spec.embedding_size, self.dtype, identity_input=identity)
            for c in spec.components
        ]
        self.context_words = max(c.context_words for c in self.components)
        self.init_params(make_rng(seed))
        self.reset_state(1)

    # -- parameters -------------------------------------------------------------

    def init_params(self, rng: np.random.Generator) -> None:
        spec, dt = self.spec, self.dtype
        self.U = glorot_init(spec.vocab_size, spec.embedding_size, rng, dt)
        for comp in self.components:
            comp.init_params(rng)
        self.S = []
        if not spec.standalone:
            self.S = [glorot_init(c.hidden_size, spec.mixture_size, rng, dt) for c in self.components]
            self.b_mix = np.zeros(spec.mixture_size, dt)
        top = spec.components[0].hidden_size if spec.standalone else spec.mixture_size
        self.W = glorot_init(top, spec.vocab_size, rng, dt)
        self.b_out = np.zeros(spec.vocab_size, dt)

    @property
    def params(self) -> dict[str, np.ndarray]:
        """Every trainable array by name, in declaration order (shared storage)."""
        p = {"U": self.U}
        for m, comp in enumerate(self.components):
            for k, v in comp.params.items():
                p[f"c{m}.{comp.kind}.{k}"] = v
        for m, s in enumerate(self.S):
            p[f"S{m}"] = s
        if not self.spec.standalone:
            p["b_mix"] = self.b_mix
        p["W"] = self.W
        p["b_out"] = self.b_out
        return p

    def is_bias(self, name: str) -> bool:
        if name in ("b_mix", "b_out"):
            return True
        if name.startswith("c"):
            m, _, local = name.split(".", 2)
            return self.components[int(m[1:])].is_bias(local)
        return False

    def component_param_names(self, m: int) -> list[str]:
        comp = self.components[m]
        return [f"c{m}.{comp.kind}.{k}" for k in comp.params]

    def num_params(self, include_biases: bool = True) -> int:
        return sum(v.size for k, v in self.params.items() if include_biases or not self.is_bias(k))

    @property
    def vocab_size(self) -> int:
        return self.spec.vocab_size

    # -- state ------------------------------------------------------------------

    def reset_state(self, batch_size: int) -> None:
        self.prev_ids = np.full((batch_size, self.context_words), self.eos_id, dtype=np.int64)
        for comp in self.components:
            comp.reset_state(batch_size)

    def get_state(self):
        return self.prev_ids.copy(), [c.get_state() for c in self.components]

    def set_state(self, state) -> None:
        prev_ids, comp_states = state
        self.prev_ids = np.array(prev_ids, dtype=np.int64)
        for comp, s in zip(self.components, comp_states):
            comp.set_state(s)

    # -- forward / backward -----------------------------------------------------

    def coefficients(self, mask: np.ndarray | None, p_d: float, batch_size: int) -> np.ndarray:
        """Per-example multiplier applied to each component's features."""
        M = len(self.components)
        coef = np.ones((batch_size, M), dtype=self.dtype)
        if mask is None:
            return coef
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (batch_size, M):
            raise ShapeError(f"dropout mask {mask.shape} does not match batch {batch_size} x {M} components")
        for m, comp in enumerate(self.components):
            if comp.recurrent:
                if not mask[:, m].all():
                    raise DropoutError("recurrent components cannot be dropped")
                continue
            keep = 1.0 / (1.0 - p_d) if p_d < 1.0 else 0.0
            coef[:, m] = np.where(mask[:, m], keep, 0.0)
        return coef

    def forward(self, inputs: np.ndarray, mask: np.ndarray | None = None, p_d: float = 0.0):
        """Run one window of ids ``(B, T)``; returns probabilities ``(B, T, vocab)`` and a cache.

        ``mask=None`` is evaluation mode: every component active, no scaling.
        """
        inputs = np.asarray(inputs, dtype=np.int64)
        B, T = inputs.shape
        if self.prev_ids.shape[0] != B:
            raise ShapeError(f"state is for batch size {self.prev_ids.shape[0]}, got {B}")
        P = self.context_words
        ext_ids = np.concatenate([self.prev_ids, inputs], axis=1)
        E_ext = self.U[ext_ids]
        coef = self.coefficients(mask, p_d, B)

        feats, caches = [], []
        for comp in self.components:
            H, cache = comp.forward(E_ext, P)
            feats.append(H)
            caches.append(cache)

        if self.spec.standalone:
            z_mix = None
            h_mix = feats[0]
        else:
            z_mix = np.zeros((B, T, self.spec.mixture_size), dtype=self.dtype)
            for m, H in enumerate(feats):
                if coef[:, m].any():
                    z_mix += coef[:, m, None, None] * (H @ self.S[m])
            z_mix += self.b_mix
            h_mix = relu(z_mix)

        logits = h_mix @ self.W + self.b_out
        probs = softmax_rows(logits)
        if P:
            self.prev_ids = ext_ids[:, -P:].copy()
        cache = {
            "ext_ids": ext_ids,
            "E_ext": E_ext,
            "coef": coef,
            "feats": feats,
            "comp_caches": caches,
            "z_mix": z_mix,
            "h_mix": h_mix,
            "logits": logits,
            "probs": probs,
        }
        return probs, cache

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        return self.forward(inputs)[0]

    @staticmethod
    def loss(probs: np.ndarray, targets: np.ndarray) -> float:
        """Summed cross-entropy (natural log) over all targets in the window."""
        p = np.take_along_axis(probs, np.asarray(targets)[..., None], axis=-1)[..., 0]
        return float(-np.log(p).sum())

    @staticmethod
    def window_loss(cache, targets: np.ndarray) -> float:
        """Same quantity as :meth:`loss`, from the logits (no underflow to log 0)."""
        logits = cache["logits"]
        top = logits.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(logits - top).sum(axis=-1)) + top[..., 0]
        picked = np.take_along_axis(logits, np.asarray(targets)[..., None], axis=-1)[..., 0]
        return float((lse - picked).sum())

    def backward(self, cache, targets: np.ndarray, scale: float = 1.0) -> dict[str, np.ndarray]:
        """Gradients of ``scale * loss(probs, targets)`` for every entry of :attr:`params`."""
        if cache is None:
            raise RuntimeError("backward called without a forward cache")
        targets = np.asarray(targets, dtype=np.int64)
        probs, h_mix, coef = cache["probs"], cache["h_mix"], cache["coef"]
        if targets.shape != probs.shape[:2]:
            raise ShapeError(f"targets {targets.shape} do not match window {probs.shape[:2]}")

        dlogits = probs.copy()
        np.put_along_axis(
            dlogits, targets[..., None],
            np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1, axis=-1,
        )
        if scale != 1.0:
            dlogits *= scale
        flat_logits = dlogits.reshape(-1, dlogits.shape[-1])
        grads: dict[str, np.ndarray] = {}
        dW = h_mix.reshape(-1, h_mix.shape[-1]).T @ flat_logits
        db_out = flat_logits.sum(axis=0)
        dh_mix = dlogits @ self.W.T

        M = len(self.components)
        if self.spec.standalone:
            dfeats = [dh_mix]
            dS, db_mix = [], None
        else:
            dz = relu_grad(cache["z_mix"], dh_mix)
            flat_dz = dz.reshape(-1, dz.shape[-1])
            db_mix = flat_dz.sum(axis=0)
            dS, dfeats = [], []
            for m in range(M):
                c = coef[:, m, None, None]
                H = cache["feats"][m]
                dS.append((c * H).reshape(-1, H.shape[-1]).T @ flat_dz)
                dfeats.append(c * (dz @ self.S[m].T))

        E_ext = cache["E_ext"]
        dE_ext = np.zeros_like(E_ext)
        comp_grads = []
        for m, comp in enumerate(self.components):
            if not coef[:, m].any():
                comp_grads.append({k: np.zeros_like(v) for k, v in comp.params.items()})
                continue
            g, dE = comp.backward(cache["comp_caches"][m], dfeats[m])
            comp_grads.append(g)
            dE_ext += dE

        dU = np.zeros_like(self.U)
        np.add.at(dU, cache["ext_ids"].ravel(), dE_ext.reshape(-1, E_ext.shape[-1]))
        grads["U"] = dU
        for m, comp in enumerate(self.components):
            for k in comp.params:
                grads[f"c{m}.{comp.kind}.{k}"] = comp_grads[m][k]
        for m, g in enumerate(dS):
            grads[f"S{m}"] = g
        if db_mix is not None:
            grads["b_mix"] = db_mix
        grads["W"] = dW
        grads["b_out"] = db_out
        return grads
