import numpy as np
import pytest

from nmm.corpus import (
    EOS,
    UNK,
    BatchCursor,
    CorpusError,
    Vocabulary,
    batches,
    build_vocab,
    encode,
    tokenize_lines,
    toy_text,
    write_toy_fixture,
)

TEXT = "a b c a\nb a d\n"


class TestVocabulary:
    def test_ranking_and_reserved(self):
        v = build_vocab(tokenize_lines(TEXT.splitlines()), cap=2)
        assert v.id_to_word == [EOS, UNK, "a", "b"]
        assert v.eos_id == 0 and v.unk_id == 1
        assert v.lookup("d") == v.unk_id

    def test_ties_go_to_first_occurrence(self):
        v = build_vocab("x y z y x".split(), cap=2)
        # x and y both occur twice, x first
        assert v.id_to_word[2:] == ["x", "y"]

    def test_round_trip(self, tmp_path):
        v = build_vocab(tokenize_lines(TEXT.splitlines()), cap=10)
        v.save(tmp_path / "v.tsv")
        w = Vocabulary.load(tmp_path / "v.tsv")
        assert w.id_to_word == v.id_to_word
        assert w.digest() == v.digest()

    def test_digest_changes_with_cap(self):
        toks = list(tokenize_lines(TEXT.splitlines()))
        assert build_vocab(toks, 1).digest() != build_vocab(toks, 3).digest()

    def test_bad_cap_and_empty(self):
        with pytest.raises(CorpusError):
            build_vocab(["a"], 0)
        with pytest.raises(CorpusError):
            build_vocab([], 5)


class TestEncode:
    def test_counts_include_eos(self):
        v = build_vocab(tokenize_lines(TEXT.splitlines()), cap=2)
        c = encode(TEXT, v)
        assert c.token_count == 9
        assert c.unk_count == 2  # c and d
        assert c.unk_rate == pytest.approx(2 / 9)
        assert v.decode(c.ids[:5]) == ["a", "b", UNK, "a", EOS]

    def test_literal_unk_counts(self):
        v = build_vocab(["a"], 5)
        assert encode("a <unk>", v).unk_count == 1


class TestBatchCursor:
    def test_streams_and_shift(self):
        ids = np.arange(23)
        cur = BatchCursor(ids, batch_size=2, bptt_len=3)
        blocks = list(cur)
        # 11 ids per stream, (11 - 1) // 3 = 3 blocks
        assert len(blocks) == 3 == len(cur)
        x0, y0 = blocks[0]
        np.testing.assert_array_equal(x0, [[0, 1, 2], [11, 12, 13]])
        np.testing.assert_array_equal(y0, [[1, 2, 3], [12, 13, 14]])
        x1, _ = blocks[1]
        np.testing.assert_array_equal(x1[:, 0], [3, 14])
        assert cur.targets_per_epoch == 18

    def test_too_small(self):
        with pytest.raises(CorpusError):
            batches(np.arange(3), 2, 5)

    def test_every_target_once(self):
        ids = np.arange(101)
        cur = BatchCursor(ids, 4, 5)
        ys = np.concatenate([y.ravel() for _, y in cur])
        assert len(set(ys.tolist())) == len(ys) == cur.targets_per_epoch


def test_toy_fixture(tmp_path):
    paths = write_toy_fixture(tmp_path)
    assert set(paths) == {"train", "valid", "test"}
    assert paths["train"].read_text() == toy_text(300, 0)
    assert len(paths["valid"].read_text().splitlines()) == 40
