import csv

import numpy as np
import pytest

from nmm.corpus import batches, build_vocab, encode, tokenize_lines, toy_text
from nmm.linalg import make_rng
from nmm.mixture import NeuralMixtureModel
from nmm.notation import MixtureSpec
from nmm.training import (
    LOG_COLUMNS,
    NumericalError,
    TrainConfig,
    TrainState,
    lr_schedule,
    run_epoch,
    sgd_step,
    train,
)


def toy_data():
    lines = toy_text(60, 0).splitlines()
    vocab = build_vocab(tokenize_lines(lines), 50)
    return vocab, encode(lines, vocab), encode(toy_text(10, 1), vocab)


class TestSgdStep:
    def test_momentum_and_decay_by_hand(self):
        params = {"w": np.array([1.0]), "b": np.array([1.0])}
        grads = {"w": np.array([0.5]), "b": np.array([0.5])}
        cfg = TrainConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.01)
        state = TrainState(lr=0.1, buffers={k: np.zeros(1) for k in params})
        sgd_step(params, grads, state, cfg, is_bias=lambda k: k == "b")
        # w: buf = -0.1 * (0.5 + 0.01) = -0.051 ; b: buf = -0.05
        np.testing.assert_allclose(params["w"], [0.949])
        np.testing.assert_allclose(params["b"], [0.95])
        sgd_step(params, grads, state, cfg, is_bias=lambda k: k == "b")
        np.testing.assert_allclose(params["w"], [0.949 + 0.9 * -0.051 - 0.1 * (0.5 + 0.00949)])
        np.testing.assert_allclose(params["b"], [0.95 - 0.045 - 0.05])
        assert state.step == 2

    def test_clip(self):
        params, grads = {"w": np.zeros(2)}, {"w": np.array([10.0, -0.5])}
        cfg = TrainConfig(learning_rate=1.0, momentum=0, weight_decay=0, clip=1.0)
        sgd_step(params, grads, TrainState(lr=1.0, buffers={"w": np.zeros(2)}), cfg)
        np.testing.assert_array_equal(params["w"], [-1.0, 0.5])

    def test_nan_gradient_names_block(self):
        params, grads = {"S0": np.zeros(2)}, {"S0": np.array([np.nan, 0.0])}
        state = TrainState(lr=0.1, step=7, buffers={"S0": np.zeros(2)})
        with pytest.raises(NumericalError, match=r"'S0'.*step 7"):
            sgd_step(params, grads, state, TrainConfig())
        assert not params["S0"].any()


class TestSchedule:
    def test_halve_then_stop(self):
        cfg = TrainConfig(min_improvement=0.01)
        st = TrainState(lr=1.0)
        assert lr_schedule(st, -5.0, cfg) == "keep"
        assert lr_schedule(st, -4.0, cfg) == "keep"
        assert lr_schedule(st, -3.99, cfg) == "halve" and st.lr == 0.5
        # once halving has started it continues while gains are large
        assert lr_schedule(st, -3.5, cfg) == "halve" and st.lr == 0.25
        assert lr_schedule(st, -3.6, cfg) == "stop" and st.stopped

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(model_dropout=1.5)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1)


def test_run_epoch_counts_and_decreases():
    vocab, tr, _ = toy_data()
    spec = MixtureSpec.from_text("R8+F8^3", 8, 8, len(vocab))
    model = NeuralMixtureModel(spec, seed=0, eos_id=vocab.eos_id)
    cfg = TrainConfig(learning_rate=0.05, batch_size=4)
    state = TrainState.fresh(model, cfg)
    cur = batches(tr, 4, 5)
    first = run_epoch(model, cur, cfg, state, make_rng(0))
    assert first.tokens == cur.targets_per_epoch
    assert state.step == len(cur)
    for e in range(3):
        last = run_epoch(model, cur, cfg, state, make_rng(e + 1))
    assert last.train_ce < first.train_ce


def test_train_writes_log_and_checkpoints(tmp_path):
    vocab, tr, va = toy_data()
    spec = MixtureSpec.from_text("L4+F4^2", 4, 6, len(vocab))
    model = NeuralMixtureModel(spec, seed=0, eos_id=vocab.eos_id)
    rows = train(model, tr, va, TrainConfig(learning_rate=0.05, batch_size=4, max_epochs=3), out_dir=tmp_path)
    assert len(rows) == 3
    with open(tmp_path / "train_log.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == LOG_COLUMNS
        assert [r["epoch"] for r in reader] == ["1", "2", "3"]
    assert (tmp_path / "last.ckpt").exists() and (tmp_path / "best.ckpt").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    vocab, tr, va = toy_data()
    spec = MixtureSpec.from_text("R4", 4, 4, len(vocab))
    model = NeuralMixtureModel(spec, seed=0, eos_id=vocab.eos_id)
    model.W[...] = np.inf
    with pytest.raises(NumericalError):
        train(model, tr, va, TrainConfig(batch_size=4, max_epochs=1))
