"""Joint SGD training of a mixture model.

Every window of ``bptt_steps`` words runs forward through all components,
back-propagates once, and takes one momentum SGD step over every parameter.
Recurrent state is carried (detached) from one window of a stream to the
next and reset at the start of each epoch.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import BatchCursor, EncodedCorpus, batches
from .evaluation import perplexity
from .linalg import make_rng
from .mixture import NeuralMixtureModel, sample_dropout

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """A non-finite loss or gradient; training stops instead of spreading NaN."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.4
    momentum: float = 0.9
    weight_decay: float = 4e-5
    model_dropout: float = 0.4
    batch_size: int = 200
    bptt_steps: int = 5
    max_epochs: int = 40
    min_improvement: float = 1e-3
    clip: float | None = None
    seed: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("learning_rate", "momentum", "weight_decay", "min_improvement"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 <= self.model_dropout <= 1.0:
            raise ValueError(f"model_dropout must lie in [0, 1], got {self.model_dropout}")
        if self.batch_size < 1 or self.bptt_steps < 1 or self.max_epochs < 0:
            raise ValueError("batch_size and bptt_steps must be >= 1, max_epochs >= 0")
        if self.clip is not None and self.clip <= 0:
            raise ValueError("clip must be positive when set")


PRESETS = {
    "ptb": TrainConfig(),
    # large-corpus runs: no momentum, model dropout or weight decay, bigger batches
    "ltcb": TrainConfig(momentum=0.0, weight_decay=0.0, model_dropout=0.0, batch_size=400),
}


@dataclass
class TrainState:
    lr: float
    epoch: int = 0
    step: int = 0
    best_ll: float | None = None
    halving: bool = False
    stopped: bool = False
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def fresh(cls, model: NeuralMixtureModel, config: TrainConfig) -> "TrainState":
        return cls(lr=config.learning_rate, buffers={k: np.zeros_like(v) for k, v in model.params.items()})

    def scalars(self) -> dict:
        return {k: getattr(self, k) for k in ("lr", "epoch", "step", "best_ll", "halving", "stopped")}


@dataclass
class EpochStats:
    train_ce: float
    tokens: int
    seconds: float

    @property
    def tokens_per_sec(self) -> float:
        return self.tokens / self.seconds if self.seconds > 0 else float("inf")


def sgd_step(params: dict, grads: dict, state: TrainState, config: TrainConfig, is_bias=None) -> None:
    """Heavy-ball momentum SGD with L2 weight decay on non-bias parameters, in place.

    ``buffer = momentum * buffer - lr * (grad + decay * param)``, then
    ``param += buffer``.
    """
    lr, mom, wd = state.lr, config.momentum, config.weight_decay
    for name, p in params.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in parameter block {name!r} at step {state.step}")
        if config.clip is not None:
            g = np.clip(g, -config.clip, config.clip)
        if wd and not (is_bias and is_bias(name)):
            g = g + wd * p
        buf = state.buffers[name]
        buf *= mom
        buf -= lr * g
        p += buf
    state.step += 1


def run_epoch(model: NeuralMixtureModel, cursor: BatchCursor, config: TrainConfig,
              state: TrainState, rng: np.random.Generator) -> EpochStats:
    """One pass over the training streams; returns mean per-token cross-entropy."""
    start = time.perf_counter()
    model.reset_state(cursor.batch_size)
    total, tokens = 0.0, 0
    params = model.params
    p_d = config.model_dropout
    for x, y in cursor:
        mask = sample_dropout(model.spec, p_d, rng, cursor.batch_size)
        _, cache = model.forward(x, mask, p_d)
        loss = model.window_loss(cache, y)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite training loss at step {state.step}")
        grads = model.backward(cache, y, scale=1.0 / y.size)
        sgd_step(params, grads, state, config, model.is_bias)
        total += loss
        tokens += y.size
    return EpochStats(total / max(tokens, 1), tokens, time.perf_counter() - start)


def lr_schedule(state: TrainState, valid_ll: float, config: TrainConfig) -> str:
    """Update ``state`` from a validation log-likelihood; returns "keep", "halve" or "stop".

    ``valid_ll`` is the mean per-token log-likelihood. The first epoch whose
    relative gain is below ``min_improvement`` starts halving; from then on
    the rate halves every epoch, and the next small gain ends training.
    """
    if state.best_ll is None:
        state.best_ll = valid_ll
        return "keep"
    gain = (valid_ll - state.best_ll) / abs(state.best_ll) if state.best_ll else valid_ll - state.best_ll
    state.best_ll = max(state.best_ll, valid_ll)
    small = gain < config.min_improvement
    if state.halving and small:
        state.stopped = True
        return "stop"
    if small:
        state.halving = True
    if state.halving:
        state.lr /= 2
        return "halve"
    return "keep"


LOG_COLUMNS = ["epoch", "lr", "train_ce", "valid_ppl", "seconds", "tokens_per_sec"]


def save_training_checkpoint(path, model: NeuralMixtureModel, state: TrainState, config: TrainConfig) -> None:
    meta = {"train_state": state.scalars(), "train_config": asdict(config)}
    save_checkpoint(path, model, meta, {f"momentum:{k}": v for k, v in state.buffers.items()})


def load_training_checkpoint(path, expected_vocab_hash: str | None = None):
    """Returns ``(model, state, config)``; ``state`` is ``None`` for weight-only files."""
    model, meta, extra = load_checkpoint(path, expected_vocab_hash)
    config = TrainConfig(**meta["train_config"]) if "train_config" in meta else None
    state = None
    if "train_state" in meta:
        buffers = {}
        for k, v in model.params.items():
            buf = extra.get(f"momentum:{k}")
            buffers[k] = np.zeros_like(v) if buf is None else buf.astype(v.dtype)
        state = TrainState(buffers=buffers, **meta["train_state"])
    return model, state, config


def train(model: NeuralMixtureModel, train_corpus: EncodedCorpus, valid_corpus: EncodedCorpus,
          config: TrainConfig, state: TrainState | None = None, out_dir: str | Path | None = None,
          include_eos: bool = True) -> list[dict]:
    """Train until the schedule stops or ``max_epochs`` is reached.

    With ``out_dir`` the CSV log, ``last.ckpt`` (resumable) and ``best.ckpt``
    (best validation perplexity) are written there after every epoch. Passing
    a ``state`` restored from ``last.ckpt`` continues the run exactly.
    """
    state = state or TrainState.fresh(model, config)
    cursor = batches(train_corpus, config.batch_size, config.bptt_steps)
    out = Path(out_dir) if out_dir is not None else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.csv" if out else None
    rows: list[dict] = []
    if log_path and state.epoch > 0 and log_path.exists():
        with log_path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))[: state.epoch]

    while state.epoch < config.max_epochs and not state.stopped:
        rng = make_rng([config.seed, state.epoch])
        lr_used = state.lr
        stats = run_epoch(model, cursor, config, state, rng)
        report = perplexity(model, valid_corpus, include_eos=include_eos)
        prev_best = state.best_ll
        decision = lr_schedule(state, report.mean_ll, config)
        state.epoch += 1
        row = {
            "epoch": str(state.epoch),
            "lr": repr(lr_used),
            "train_ce": repr(stats.train_ce),
            "valid_ppl": repr(report.perplexity),
            "seconds": f"{stats.seconds:.3f}",
            "tokens_per_sec": f"{stats.tokens_per_sec:.1f}",
        }
        rows.append(row)
        log.info("epoch %d lr %.4g train_ce %.4f valid_ppl %.3f (%s)", state.epoch, lr_used,
                 stats.train_ce, report.perplexity, decision)
        if out:
            _write_log(log_path, rows)
            save_training_checkpoint(out / "last.ckpt", model, state, config)
            if prev_best is None or report.mean_ll > prev_best:
                save_training_checkpoint(out / "best.ckpt", model, state, config)
    return rows


def _write_log(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def config_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig)]
