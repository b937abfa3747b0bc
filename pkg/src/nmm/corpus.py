"""Vocabulary, id encoding and stream batching.

Text is assumed to be pre-tokenised: tokens are whitespace separated and
every input line ends with an ``<eos>`` token. Words outside the
frequency-capped vocabulary map to ``<unk>``.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

UNK = "<unk>"
EOS = "<eos>"


class CorpusError(ValueError):
    pass


@dataclass
class Vocabulary:
    id_to_word: list[str]
    counts: list[int]
    word_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        if len(self.id_to_word) != len(self.counts):
            raise CorpusError("id_to_word and counts differ in length")
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise CorpusError("duplicate words in vocabulary")
        for tok in (UNK, EOS):
            if tok not in self.word_to_id:
                raise CorpusError(f"vocabulary lacks reserved token {tok}")

    def __len__(self) -> int:
        return len(self.id_to_word)

    @property
    def unk_id(self) -> int:
        return self.word_to_id[UNK]

    @property
    def eos_id(self) -> int:
        return self.word_to_id[EOS]

    def lookup(self, word: str) -> int:
        return self.word_to_id.get(word, self.unk_id)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_word[i] for i in ids]

    def digest(self) -> str:
        """Stable hash of the id assignment, stored in checkpoints."""
        h = hashlib.sha256()
        for w in self.id_to_word:
            h.update(w.encode("utf-8"))
            h.update(b"\0")
        return h.hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        lines = [f"{w}\t{i}\t{c}\n" for i, (w, c) in enumerate(zip(self.id_to_word, self.counts))]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        words, counts = [], []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: expected word<TAB>id<TAB>count")
            word, idx, count = parts[0], int(parts[1]), int(parts[2])
            if idx != len(words):
                raise CorpusError(f"{path}:{lineno}: ids must be dense and ordered, got {idx}")
            words.append(word)
            counts.append(count)
        return cls(words, counts)


def tokenize_lines(lines: Iterable[str]) -> Iterator[str]:
    """Whitespace tokens with an ``<eos>`` after every line."""
    for line in lines:
        yield from line.split()
        yield EOS


def build_vocab(tokens: Iterable[str], cap: int) -> Vocabulary:
    """Keep the ``cap`` most frequent tokens; ties go to the earlier first occurrence.

    ``<unk>`` and ``<eos>`` are always present and do not compete for the cap.
    Their counts are their own occurrences in the stream.
    """
    if cap < 1:
        raise CorpusError(f"vocabulary cap must be >= 1, got {cap}")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    for pos, tok in enumerate(tokens):
        counts[tok] += 1
        first_seen.setdefault(tok, pos)
    if not counts:
        raise CorpusError("cannot build a vocabulary from an empty token stream")

    ranked = sorted(
        (w for w in counts if w not in (UNK, EOS)),
        key=lambda w: (-counts[w], first_seen[w]),
    )
    kept = ranked[:cap]
    words = [EOS, UNK] + kept
    return Vocabulary(words, [counts.get(w, 0) for w in words])


@dataclass(frozen=True)
class EncodedCorpus:
    ids: np.ndarray
    token_count: int
    unk_count: int

    @property
    def unk_rate(self) -> float:
        return self.unk_count / self.token_count if self.token_count else 0.0

    def __len__(self) -> int:
        return len(self.ids)


def encode(text: str | Iterable[str], vocab: Vocabulary) -> EncodedCorpus:
    """Map text to ids with one ``<eos>`` per line.

    ``token_count`` covers every emitted id, ``<eos>`` included. Tokens that
    are literally ``<unk>`` in the text count as unknown too.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    unk = vocab.unk_id
    ids = [vocab.lookup(tok) for tok in tokenize_lines(lines)]
    arr = np.asarray(ids, dtype=np.int64)
    return EncodedCorpus(arr, len(arr), int(np.count_nonzero(arr == unk)))


def read_lines(path: str | Path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def encode_file(path: str | Path, vocab: Vocabulary) -> EncodedCorpus:
    return encode(read_lines(path), vocab)


class BatchCursor:
    """Iterates (input, target) blocks of shape ``batch_size x bptt_len``.

    The corpus is cut into ``batch_size`` contiguous streams (the tail that
    does not divide evenly is dropped). Block ``k`` of a stream continues
    exactly where block ``k - 1`` stopped, so recurrent state can be carried.
    """

    def __init__(self, ids: np.ndarray, batch_size: int, bptt_len: int):
        if batch_size < 1 or bptt_len < 1:
            raise CorpusError("batch_size and bptt_len must be >= 1")
        if len(ids) < 2 * batch_size:
            raise CorpusError(
                f"corpus of {len(ids)} tokens is too small for {batch_size} streams"
            )
        self.batch_size = batch_size
        self.bptt_len = bptt_len
        stream_len = len(ids) // batch_size
        self.streams = np.asarray(ids[: stream_len * batch_size]).reshape(batch_size, stream_len)
        self.n_blocks = (stream_len - 1) // bptt_len
        self.position = 0

    @property
    def stream_len(self) -> int:
        return self.streams.shape[1]

    @property
    def targets_per_epoch(self) -> int:
        return self.batch_size * self.n_blocks * self.bptt_len

    def __len__(self) -> int:
        return self.n_blocks

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for k in range(self.n_blocks):
            start = k * self.bptt_len
            self.position = start
            x = self.streams[:, start : start + self.bptt_len]
            y = self.streams[:, start + 1 : start + 1 + self.bptt_len]
            yield x, y
        self.position = self.n_blocks * self.bptt_len


def batches(corpus: EncodedCorpus | np.ndarray, batch_size: int, bptt_len: int) -> BatchCursor:
    ids = corpus.ids if isinstance(corpus, EncodedCorpus) else corpus
    return BatchCursor(ids, batch_size, bptt_len)


def split_stats(name: str, corpus: EncodedCorpus) -> dict:
    return {
        "split": name,
        "tokens": corpus.token_count,
        "unk": corpus.unk_count,
        "unk_rate": corpus.unk_rate,
    }


# A tiny deterministic corpus used by the CLI's --toy-fixture and by tests.
_SUBJECTS = ["the cat", "a dog", "the bird", "my friend", "the old man"]
_VERBS = ["sees", "likes", "follows", "finds"]
_OBJECTS = ["the ball", "a tree", "the house", "some food", "the river"]


def toy_text(n_lines: int, seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    lines = []
    for _ in range(n_lines):
        s = _SUBJECTS[rng.integers(len(_SUBJECTS))]
        v = _VERBS[rng.integers(len(_VERBS))]
        o = _OBJECTS[rng.integers(len(_OBJECTS))]
        lines.append(f"{s} {v} {o}")
    return "\n".join(lines) + "\n"


def write_toy_fixture(directory: str | Path, seed: int = 0) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for i, (split, n) in enumerate([("train", 300), ("valid", 40), ("test", 40)]):
        p = directory / f"toy.{split}.txt"
        p.write_text(toy_text(n, seed + i), encoding="utf-8")
        paths[split] = p
    return paths
