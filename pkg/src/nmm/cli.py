"""Command line interface: ``nmm {build-vocab,train,eval,interp,params}``.

Settings are resolved as defaults < ``--preset`` < ``--config`` file < flags.
``train`` writes the effective settings to ``config.txt`` in the run
directory; that file can be passed back with ``--config`` to rerun.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, VocabMismatchError
from .corpus import (
    CorpusError,
    Vocabulary,
    build_vocab,
    encode_file,
    read_lines,
    split_stats,
    tokenize_lines,
    write_toy_fixture,
)
from .evaluation import (
    EvalReport,
    EvaluationError,
    format_table,
    grid_search_weights,
    interpolate_ppl,
    perplexity,
    reports_to_csv,
    write_report_csv,
)
from .mixture import NeuralMixtureModel, count_params, param_growth
from .notation import MixtureSpec, SpecError
from .training import (
    NumericalError,
    TrainConfig,
    load_training_checkpoint,
    train,
)

log = logging.getLogger("nmm")


class ConfigError(ValueError):
    pass


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    train: str = ""
    valid: str = ""
    test: str = ""
    vocab_cap: int = 10000
    spec: str = "R100+F200^2"
    embedding_size: int = 100
    mixture_size: int = 400
    fnn_depth: int = 1
    precision: str = "float32"
    include_eos: bool = True
    out: str = "runs/nmm"
    # training
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

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def validate(self) -> None:
        for split in ("train", "valid"):
            if not getattr(self, split):
                raise ConfigError(f"no {split} corpus given")
        for split in ("train", "valid", "test"):
            path = getattr(self, split)
            if path and not Path(path).is_file():
                raise ConfigError(f"{split} corpus {path} does not exist")
        if self.vocab_cap < 1 or self.embedding_size < 1 or self.mixture_size < 0:
            raise ConfigError("vocab_cap and embedding_size must be >= 1, mixture_size >= 0")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision}")
        try:
            self.train_config()
            MixtureSpec.from_text(self.spec, self.embedding_size, self.mixture_size, 1, self.fnn_depth)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def dump(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in asdict(self).items())


PRESETS: dict[str, dict] = {
    "ptb": {},
    "ltcb": {
        "vocab_cap": 80000,
        "embedding_size": 200,
        "mixture_size": 600,
        "momentum": 0.0,
        "weight_decay": 0.0,
        "model_dropout": 0.0,
        "batch_size": 400,
    },
    # desk-scale smoke runs on the built-in fixture
    "toy": {
        "embedding_size": 16,
        "mixture_size": 32,
        "learning_rate": 0.05,
        "batch_size": 10,
        "max_epochs": 6,
        "precision": "float64",
    },
}


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    t = str(types[name])
    raw = raw.strip()
    try:
        if t == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if "None" in t and raw.lower() in ("none", ""):
            return None
        if t.startswith("int"):
            return int(raw)
        if t.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def read_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = _coerce(key, raw)
    return values


# -- argument parsing -----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


TRAIN_FLAGS = {
    "train": ("--train", str),
    "valid": ("--valid", str),
    "test": ("--test", str),
    "vocab_cap": ("--cap", int),
    "spec": ("--spec", str),
    "embedding_size": ("--emb", int),
    "mixture_size": ("--mix", int),
    "fnn_depth": ("--fnn-depth", int),
    "precision": ("--precision", str),
    "out": ("--out", str),
    "learning_rate": ("--lr", float),
    "momentum": ("--momentum", float),
    "weight_decay": ("--weight-decay", float),
    "model_dropout": ("--dropout", float),
    "batch_size": ("--batch-size", int),
    "bptt_steps": ("--bptt", int),
    "max_epochs": ("--max-epochs", int),
    "min_improvement": ("--min-improvement", float),
    "clip": ("--clip", float),
    "seed": ("--seed", int),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nmm", description="Neural mixture language models")
    p.add_argument("--version", action="version", version=f"nmm {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    v = sub.add_parser("build-vocab", help="build a vocabulary and report unk rates per split")
    v.add_argument("--train", required=True)
    v.add_argument("--valid")
    v.add_argument("--test")
    v.add_argument("--cap", type=int, default=10000)
    v.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("train", help="train a mixture model")
    t.add_argument("--config", help="key = value settings file")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--toy-fixture", action="store_true", help="train on a generated toy corpus")
    t.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt")
    t.add_argument("--no-eos", dest="include_eos", action="store_const", const=False, default=None,
                   help="leave <eos> targets out of perplexity")
    for key, (flag, typ) in TRAIN_FLAGS.items():
        t.add_argument(flag, dest=key, type=typ, default=None)

    e = sub.add_parser("eval", help="perplexity of a checkpoint on a corpus")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--vocab", help="vocabulary file (default: vocab.tsv next to the checkpoint)")
    e.add_argument("--name")
    e.add_argument("--baseline-nop", type=int)
    e.add_argument("--no-eos", dest="include_eos", action="store_false")
    e.add_argument("--csv", help="also write the report row here")

    i = sub.add_parser("interp", help="linear interpolation of separately trained models")
    i.add_argument("--checkpoint", action="append", required=True, help="repeat for each model")
    i.add_argument("--corpus", required=True)
    i.add_argument("--vocab")
    g = i.add_mutually_exclusive_group()
    g.add_argument("--weights", help="comma separated, summing to 1 (default: uniform)")
    g.add_argument("--tune-on", help="pick weights by grid search on this corpus")
    i.add_argument("--step", type=float, default=0.05)
    i.add_argument("--name", default="LI")
    i.add_argument("--baseline-nop", type=int)
    i.add_argument("--no-eos", dest="include_eos", action="store_false")
    i.add_argument("--csv")

    c = sub.add_parser("params", help="parameter count of a spec (no checkpoint needed)")
    c.add_argument("--spec", required=True)
    c.add_argument("--emb", type=int, required=True)
    c.add_argument("--mix", type=int, required=True, help="mixture layer size; 0 for a standalone model")
    c.add_argument("--vocab", type=int, required=True)
    c.add_argument("--fnn-depth", type=int, default=1)
    c.add_argument("--no-biases", dest="include_biases", action="store_false")
    c.add_argument("--baseline-nop", type=int)
    c.add_argument("--csv")
    return p


# -- commands -------------------------------------------------------------------


def resolve_config(args) -> ExperimentConfig:
    values = asdict(ExperimentConfig())
    preset = args.preset or ("toy" if args.toy_fixture else None)
    if preset:
        values.update(PRESETS[preset])
    if args.config:
        values.update(read_config_file(args.config))
    for key in TRAIN_FLAGS:
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    if args.include_eos is not None:
        values["include_eos"] = args.include_eos
    cfg = ExperimentConfig(**values)
    if args.toy_fixture:
        paths = write_toy_fixture(Path(cfg.out) / "data")
        cfg.train, cfg.valid, cfg.test = (str(paths[s]) for s in ("train", "valid", "test"))
    cfg.validate()
    return cfg


def cmd_build_vocab(args) -> int:
    for split in ("train", "valid", "test"):
        path = getattr(args, split)
        if path and not Path(path).is_file():
            raise ConfigError(f"{split} corpus {path} does not exist")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab = build_vocab(tokenize_lines(read_lines(args.train)), args.cap)
    vocab.save(out / "vocab.tsv")
    stats = [split_stats(s, encode_file(getattr(args, s), vocab))
             for s in ("train", "valid", "test") if getattr(args, s)]
    lines = ["split,tokens,unk,unk_rate"] + [
        f"{s['split']},{s['tokens']},{s['unk']},{s['unk_rate']:.6f}" for s in stats
    ]
    (out / "vocab_stats.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"vocabulary: {len(vocab)} entries (cap {args.cap}) -> {out / 'vocab.tsv'}")
    for s in stats:
        print(f"  {s['split']:<5}  {s['tokens']:>10} tokens  unk {100 * s['unk_rate']:.2f}%")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dump(), encoding="utf-8")

    vocab_path = out / "vocab.tsv"
    if args.resume and vocab_path.exists():
        vocab = Vocabulary.load(vocab_path)
    else:
        vocab = build_vocab(tokenize_lines(read_lines(cfg.train)), cfg.vocab_cap)
        vocab.save(vocab_path)
    train_c = encode_file(cfg.train, vocab)
    valid_c = encode_file(cfg.valid, vocab)
    tc = cfg.train_config()

    state = None
    if args.resume:
        model, state, _ = load_training_checkpoint(out / "last.ckpt", vocab.digest())
    else:
        spec = MixtureSpec.from_text(cfg.spec, cfg.embedding_size, cfg.mixture_size, len(vocab), cfg.fnn_depth)
        model = NeuralMixtureModel(spec, cfg.precision, seed=cfg.seed, eos_id=vocab.eos_id,
                                   vocab_hash=vocab.digest())
    log.info("model %s: %d parameters", model.spec.text, model.num_params())
    rows = train(model, train_c, valid_c, tc, state=state, out_dir=out, include_eos=cfg.include_eos)
    if rows:
        print(f"trained {len(rows)} epochs: train_ce {float(rows[0]['train_ce']):.4f} -> "
              f"{float(rows[-1]['train_ce']):.4f}, valid ppl {float(rows[-1]['valid_ppl']):.3f}")

    if cfg.test and (out / "best.ckpt").exists():
        best, _, _ = load_training_checkpoint(out / "best.ckpt", vocab.digest())
        rep = perplexity(best, encode_file(cfg.test, vocab), include_eos=cfg.include_eos, name=best.spec.text)
        rep.nop = best.num_params()
        write_report_csv(out / "report.csv", [rep])
        print(format_table([rep]))
    return 0


def _load_for_eval(ckpt: str, vocab_arg: str | None):
    vocab_path = Path(vocab_arg) if vocab_arg else Path(ckpt).with_name("vocab.tsv")
    if not vocab_path.is_file():
        raise ConfigError(f"vocabulary file {vocab_path} not found (use --vocab)")
    if not Path(ckpt).is_file():
        raise ConfigError(f"checkpoint {ckpt} does not exist")
    vocab = Vocabulary.load(vocab_path)
    model, _, _ = load_training_checkpoint(ckpt, vocab.digest())
    if model.vocab_size != len(vocab):
        raise ConfigError(f"checkpoint expects {model.vocab_size} words, vocabulary has {len(vocab)}")
    return model, vocab


def _emit(reports: list[EvalReport], csv_path: str | None) -> None:
    print(format_table(reports))
    print()
    print(reports_to_csv(reports), end="")
    if csv_path:
        write_report_csv(csv_path, reports)


def _with_growth(rep: EvalReport, baseline: int | None) -> EvalReport:
    if baseline is not None and rep.nop is not None:
        rep.pg = param_growth(rep.nop, baseline)
    return rep


def cmd_eval(args) -> int:
    if not Path(args.corpus).is_file():
        raise ConfigError(f"corpus {args.corpus} does not exist")
    model, vocab = _load_for_eval(args.checkpoint, args.vocab)
    rep = perplexity(model, encode_file(args.corpus, vocab), include_eos=args.include_eos,
                     name=args.name or model.spec.text)
    rep.nop = model.num_params()
    _emit([_with_growth(rep, args.baseline_nop)], args.csv)
    return 0


def cmd_interp(args) -> int:
    if len(args.checkpoint) < 2:
        raise ConfigError("interpolation needs at least two --checkpoint arguments")
    if not Path(args.corpus).is_file():
        raise ConfigError(f"corpus {args.corpus} does not exist")
    loaded = [_load_for_eval(c, args.vocab) for c in args.checkpoint]
    digests = {v.digest() for _, v in loaded}
    if len(digests) != 1:
        raise ConfigError("checkpoints use different vocabularies")
    models = [m for m, _ in loaded]
    vocab = loaded[0][1]
    if args.tune_on:
        result = grid_search_weights(models, encode_file(args.tune_on, vocab), args.step, args.include_eos)
        weights = result.weights
    elif args.weights:
        try:
            weights = tuple(float(w) for w in args.weights.split(","))
        except ValueError:
            raise ConfigError(f"bad --weights {args.weights!r}") from None
    else:
        weights = tuple(1.0 / len(models) for _ in models)
    try:
        rep = interpolate_ppl(models, weights, encode_file(args.corpus, vocab), args.include_eos, args.name)
    except EvaluationError as exc:
        raise ConfigError(str(exc)) from None
    rep.nop = sum(m.num_params() for m in models)
    print("weights: " + ", ".join(f"{w:g}" for w in weights))
    _emit([_with_growth(rep, args.baseline_nop)], args.csv)
    return 0


def cmd_params(args) -> int:
    spec = MixtureSpec.from_text(args.spec, args.emb, args.mix, args.vocab, args.fnn_depth)
    nop = count_params(spec, include_biases=args.include_biases)
    rep = _with_growth(EvalReport(0, 0.0, spec.text, nop), args.baseline_nop)
    _emit([rep], args.csv)
    return 0


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "eval": cmd_eval,
    "interp": cmd_interp,
    "params": cmd_params,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage().strip())
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, SpecError, CorpusError, VocabMismatchError, FileNotFoundError) as exc:
        print(f"nmm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, CheckpointError, EvaluationError) as exc:
        print(f"nmm {args.command}: failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
