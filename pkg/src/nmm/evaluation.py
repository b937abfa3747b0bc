"""Perplexity and linear interpolation of language models.

A "model" here is anything with ``vocab_size``, ``eos_id``,
``reset_state(batch_size)`` and ``predict(inputs) -> probs``. The mixture
model satisfies this, and so do the scripted models used in tests.

Evaluation reads the corpus as one stream. The first token is predicted
from an ``<eos>`` context, so every id in the corpus is a target exactly
once.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EncodedCorpus

PROB_FLOOR = 1e-12


class EvaluationError(ValueError):
    pass


@dataclass
class EvalReport:
    token_count: int
    total_ll: float
    name: str = ""
    nop: int | None = None
    pg: float | None = None

    @property
    def perplexity(self) -> float:
        if not self.token_count:
            return math.nan
        return math.exp(-self.total_ll / self.token_count)

    @property
    def mean_ll(self) -> float:
        return self.total_ll / self.token_count

    def row(self) -> dict:
        return {
            "model": self.name,
            "ppl": f"{self.perplexity:.4f}" if self.token_count else "",
            "nop": "" if self.nop is None else str(self.nop),
            "pg": "" if self.pg is None else f"{self.pg:.2f}",
        }


REPORT_COLUMNS = ["model", "ppl", "nop", "pg"]


def format_table(reports: Sequence[EvalReport]) -> str:
    """Plain-text table with the same columns as the CSV report."""
    rows = [r.row() for r in reports]
    header = {"model": "model", "ppl": "PPL", "nop": "NoP", "pg": "PG(%)"}
    widths = {c: max(len(header[c]), *(len(r[c]) for r in rows)) for c in REPORT_COLUMNS}
    lines = ["  ".join(header[c].ljust(widths[c]) for c in REPORT_COLUMNS)]
    lines.append("  ".join("-" * widths[c] for c in REPORT_COLUMNS))
    for r in rows:
        lines.append("  ".join(r[c].ljust(widths[c]) for c in REPORT_COLUMNS))
    return "\n".join(lines)


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()


def write_report_csv(path: str | Path, reports: Sequence[EvalReport]) -> None:
    Path(path).write_text(reports_to_csv(reports), encoding="utf-8")


def _ids(corpus) -> np.ndarray:
    return corpus.ids if isinstance(corpus, EncodedCorpus) else np.asarray(corpus, dtype=np.int64)


def target_probabilities(model, corpus, block_len: int = 64) -> np.ndarray:
    """Probability the model assigns to each corpus token given its history."""
    ids = _ids(corpus)
    if len(ids) == 0:
        raise EvaluationError("cannot evaluate an empty corpus")
    inputs = np.concatenate([[model.eos_id], ids[:-1]]).astype(np.int64)
    out = np.empty(len(ids), dtype=np.float64)
    model.reset_state(1)
    for start in range(0, len(ids), block_len):
        x = inputs[start : start + block_len][None, :]
        y = ids[start : start + block_len]
        probs = model.predict(x)[0]
        out[start : start + len(y)] = probs[np.arange(len(y)), y]
    return out


def _report(tp: np.ndarray, ids: np.ndarray, eos_id: int, include_eos: bool, name: str) -> EvalReport:
    keep = np.ones(len(ids), dtype=bool) if include_eos else ids != eos_id
    if not keep.any():
        raise EvaluationError("no tokens left to score")
    ll = float(np.log(np.maximum(tp[keep], PROB_FLOOR)).sum())
    return EvalReport(int(keep.sum()), ll, name)


def perplexity(model, corpus, include_eos: bool = True, block_len: int = 64,
               name: str = "") -> EvalReport:
    """Sequential full-corpus perplexity, ``exp(-mean ln p(w_t | history))``."""
    ids = _ids(corpus)
    tp = target_probabilities(model, ids, block_len)
    return _report(tp, ids, model.eos_id, include_eos, name)


def _check_weights(weights: Sequence[float], n_models: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != n_models:
        raise EvaluationError(f"{len(w)} weights for {n_models} models")
    if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
        raise EvaluationError(f"interpolation weights must be non-negative and sum to 1, got {list(w)}")
    return w


def _check_models(models) -> None:
    if len(models) < 2:
        raise EvaluationError("interpolation needs at least two models")
    sizes = {m.vocab_size for m in models}
    if len(sizes) != 1:
        raise EvaluationError(f"models disagree on vocabulary size: {sorted(sizes)}")
    hashes = {getattr(m, "vocab_hash", None) for m in models} - {None}
    if len(hashes) > 1:
        raise EvaluationError("models were trained on different vocabularies")


def mix(probs: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """``sum_k w_k p_k``, accumulated in model order."""
    out = weights[0] * probs[0]
    for w, p in zip(weights[1:], probs[1:]):
        out = out + w * p
    return out


class InterpolatedModel:
    """Linear interpolation of full next-word distributions."""

    def __init__(self, models, weights):
        _check_models(models)
        self.models = list(models)
        self.weights = _check_weights(weights, len(models))
        self.vocab_size = models[0].vocab_size
        self.eos_id = models[0].eos_id

    def reset_state(self, batch_size: int) -> None:
        for m in self.models:
            m.reset_state(batch_size)

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        return mix([m.predict(inputs) for m in self.models], self.weights)


def interpolate_ppl(models, weights, corpus, include_eos: bool = True, name: str = "") -> EvalReport:
    _check_models(models)
    w = _check_weights(weights, len(models))
    ids = _ids(corpus)
    tps = [target_probabilities(m, ids) for m in models]
    return _report(mix(tps, w), ids, models[0].eos_id, include_eos, name)


@dataclass
class GridSearchResult:
    weights: tuple[float, ...]
    report: EvalReport
    candidates: int


def simplex_grid(n_models: int, step: float):
    """All weight vectors on the simplex with resolution ``step``, lexicographically ascending."""
    n = round(1.0 / step)
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise EvaluationError(f"grid step {step} does not divide 1")
    for parts in itertools.product(range(n + 1), repeat=n_models - 1):
        last = n - sum(parts)
        if last >= 0:
            yield tuple(p / n for p in parts) + (last / n,)


def grid_search_weights(models, corpus, step: float = 0.05, include_eos: bool = True) -> GridSearchResult:
    """Pick interpolation weights that minimise perplexity on ``corpus``.

    Ties go to the lexicographically smallest weight vector.
    """
    _check_models(models)
    ids = _ids(corpus)
    tps = [target_probabilities(m, ids) for m in models]
    best, count = None, 0
    for w in simplex_grid(len(models), step):
        count += 1
        rep = _report(mix(tps, w), ids, models[0].eos_id, include_eos, "")
        if best is None or rep.perplexity < best[1].perplexity:
            best = (w, rep)
    return GridSearchResult(best[0], best[1], count)
