"""Shared fixtures-by-function for the test suite (not collected by pytest)."""

from __future__ import annotations

import numpy as np

from nmm.corpus import EncodedCorpus, build_vocab, encode, tokenize_lines
from nmm.mixture import NeuralMixtureModel
from nmm.notation import MixtureSpec


def tiny_model(text: str, emb=4, mix=5, vocab=8, seed=0, precision="float64", **kw) -> NeuralMixtureModel:
    spec = MixtureSpec.from_text(text, emb, mix, vocab, **kw)
    return NeuralMixtureModel(spec, precision, seed=seed)


def randomize_biases(model: NeuralMixtureModel, rng, scale=0.1) -> None:
    # zero-initialised biases would hide bias-gradient bugs
    for k, v in model.params.items():
        if model.is_bias(k):
            v[...] = rng.normal(0, scale, v.shape)


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8))


def gradient_check(model: NeuralMixtureModel, rng, T=4, batch=2, p_d=0.0, dropout=False) -> dict[str, float]:
    """Relative error of analytic vs numeric gradients for every parameter block.

    A warm-up window runs first so the checked window starts from non-trivial
    carried state.
    """
    V = model.vocab_size
    model.reset_state(batch)
    model.forward(rng.integers(0, V, size=(batch, T)))
    start = model.get_state()
    x = rng.integers(0, V, size=(batch, T))
    y = rng.integers(0, V, size=(batch, T))
    mask = None
    if dropout:
        mask = np.ones((batch, len(model.components)), dtype=bool)
        for m, c in enumerate(model.components):
            if not c.recurrent:
                mask[:, m] = rng.random(batch) >= 0.5

    def loss():
        model.set_state(start)
        probs, _ = model.forward(x, mask, p_d)
        return model.loss(probs, y)

    model.set_state(start)
    _, cache = model.forward(x, mask, p_d)
    grads = model.backward(cache, y)
    return {k: rel_error(grads[k], numeric_grad(loss, v)) for k, v in model.params.items()}


def overfit_corpus(n_tokens: int = 500) -> tuple[EncodedCorpus, int]:
    """Ten random sentences over a 20-word vocabulary, repeated to ``n_tokens`` ids."""
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(20)]
    sents = [" ".join(rng.choice(words, size=rng.integers(4, 9))) for _ in range(10)]
    lines: list[str] = []
    while sum(len(s.split()) + 1 for s in lines) < n_tokens:
        lines.append(sents[len(lines) % len(sents)])
    vocab = build_vocab(tokenize_lines(lines), 100)
    corp = encode(lines, vocab)
    ids = corp.ids[:n_tokens]
    return EncodedCorpus(ids, len(ids), 0), vocab


class UniformModel:
    def __init__(self, vocab_size: int, eos_id: int = 0):
        self.vocab_size = vocab_size
        self.eos_id = eos_id

    def reset_state(self, batch_size):
        pass

    def predict(self, inputs):
        B, T = inputs.shape
        return np.full((B, T, self.vocab_size), 1.0 / self.vocab_size)


class TableModel:
    """Next-word distribution looked up from the previous id."""

    def __init__(self, table: np.ndarray, eos_id: int = 0):
        self.table = np.asarray(table, dtype=np.float64)
        self.vocab_size = self.table.shape[1]
        self.eos_id = eos_id

    def reset_state(self, batch_size):
        pass

    def predict(self, inputs):
        return self.table[inputs]
