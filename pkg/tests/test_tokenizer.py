import io
import random

import pytest

from morphprobe.tokenizer import (
    DEFAULT_SPECIALS,
    TruncatedVocabulary,
    Vocabulary,
    VocabularyError,
    load_vocabulary,
    tokenize_sentence,
    tokenize_word,
    train_vocabulary,
)


def make_vocab(pieces, prefix="##", specials=DEFAULT_SPECIALS):
    entries = {}
    for sp in specials:
        entries[sp] = len(entries)
    for piece in pieces:
        if piece not in entries:
            entries[piece] = len(entries)
    return Vocabulary(entries, prefix, specials)


def oracle_segment(vocab_pieces, prefix, unk, word):
    """Leftmost-longest reference: scans the whole piece inventory at every
    position instead of shrinking candidate substrings."""
    if word.startswith(prefix):
        return [unk]
    pieces = []
    pos = 0
    while pos < len(word):
        best = None
        for piece in vocab_pieces:
            if pos == 0:
                surface = piece
                if piece.startswith(prefix):
                    continue
            else:
                if not piece.startswith(prefix):
                    continue
                surface = piece[len(prefix):]
            if surface and word.startswith(surface, pos):
                if best is None or len(surface) > len(best[1]):
                    best = (piece, surface)
        if best is None:
            return [unk]
        pieces.append(best[0])
        pos += len(best[1])
    return pieces


class TestLoadVocabulary:
    def test_four_line_file(self):
        vocab = load_vocabulary(io.StringIO("a\nb\n##b\n[UNK]\n"))
        assert len(vocab) == 4
        assert [vocab.piece_id(p) for p in ("a", "b", "##b", "[UNK]")] == [0, 1, 2, 3]

    def test_duplicate_rejected_naming_line(self):
        with pytest.raises(VocabularyError, match="line 3"):
            load_vocabulary(io.StringIO("a\nb\na\n[UNK]\n"))

    def test_missing_unk_rejected(self):
        with pytest.raises(VocabularyError, match="UNK"):
            load_vocabulary(io.StringIO("a\nb\n"))
        with pytest.raises(VocabularyError, match="UNK"):
            load_vocabulary(io.StringIO("a\n[UNK]\n"), specials=())

    def test_special_with_prefix_rejected(self):
        with pytest.raises(VocabularyError, match="continuation prefix"):
            load_vocabulary(io.StringIO("##UNK\n"), specials=("##UNK",))

    def test_non_dense_ids_rejected(self):
        with pytest.raises(VocabularyError, match="dense"):
            Vocabulary({"[UNK]": 0, "a": 2})


class TestTokenizeWord:
    def test_hungarian_anchor(self):
        vocab = make_vocab(["szállító", "##jármű", "##vek", "##kel"])
        seg = tokenize_word(vocab, "szállítójárművekkel")
        assert seg.pieces == ("szállító", "##jármű", "##vek", "##kel")
        assert not seg.is_unknown

    def test_leftmost_longest(self):
        vocab = make_vocab(["un", "##able", "##a", "a"])
        assert tokenize_word(vocab, "unable").pieces == ("un", "##able")

    def test_word_in_vocab_is_single_piece(self):
        vocab = make_vocab(["un", "##able", "unable"])
        assert tokenize_word(vocab, "unable").pieces == ("unable",)

    def test_unknown_word(self):
        vocab = make_vocab(["a"])
        seg = tokenize_word(vocab, "ab")
        assert seg.is_unknown and seg.pieces == ("[UNK]",)

    def test_empty_word_rejected(self):
        vocab = make_vocab(["a"])
        with pytest.raises(ValueError):
            tokenize_word(vocab, "")

    def test_whitespace_rejected(self):
        vocab = make_vocab(["a"])
        with pytest.raises(ValueError):
            tokenize_word(vocab, "a b")

    def test_overlong_word_becomes_unk(self):
        vocab = make_vocab(["a", "##a"])
        assert tokenize_word(vocab, "a" * 257).is_unknown
        assert not tokenize_word(vocab, "a" * 256).is_unknown

    def test_round_trip_property(self):
        rng = random.Random(20)
        vocab_pieces = ["a", "b", "c", "##a", "##b", "##c", "ab", "##bc", "##ca", "abc"]
        vocab = make_vocab(vocab_pieces)
        for _ in range(500):
            word = "".join(rng.choice("abc") for _ in range(rng.randint(1, 12)))
            seg = tokenize_word(vocab, word)
            if seg.is_unknown:
                continue
            rebuilt = seg.pieces[0] + "".join(p[2:] for p in seg.pieces[1:])
            assert rebuilt == word
            assert not seg.pieces[0].startswith("##")
            assert all(p.startswith("##") for p in seg.pieces[1:])

    def test_matches_oracle_on_random_vocabs(self):
        rng = random.Random(7)
        for _ in range(20):
            alphabet = "abcd"
            pieces = set()
            for _ in range(rng.randint(3, 40)):
                body = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 4)))
                pieces.add(body if rng.random() < 0.5 else "##" + body)
            pieces = sorted(pieces)
            vocab = make_vocab(pieces)
            for _ in range(50):
                word = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 10)))
                expected = oracle_segment(pieces, "##", "[UNK]", word)
                assert list(tokenize_word(vocab, word).pieces) == expected

    def test_greedy_first_piece_is_longest_prefix(self):
        rng = random.Random(99)
        pieces = ["a", "ab", "abc", "b", "##b", "##c", "##bc"]
        vocab = make_vocab(pieces)
        for _ in range(200):
            word = "".join(rng.choice("abc") for _ in range(rng.randint(1, 8)))
            seg = tokenize_word(vocab, word)
            if seg.is_unknown:
                continue
            prefixes = [p for p in pieces if not p.startswith("##") and word.startswith(p)]
            assert seg.pieces[0] == max(prefixes, key=len)

    def test_monotonicity_whole_word_added(self):
        base = make_vocab(["a", "##a", "##b"])
        word = "abab"
        assert len(tokenize_word(base, word).pieces) == 4
        extended = make_vocab(["a", "##a", "##b", word])
        assert tokenize_word(extended, word).pieces == (word,)

    def test_determinism(self):
        vocab = make_vocab(["a", "ab", "##b", "##ab"])
        first = tokenize_word(vocab, "abab")
        for _ in range(10):
            assert tokenize_word(vocab, "abab") == first


class TestTokenizeSentence:
    def test_figure_style_sentence(self):
        vocab = make_vocab(["You", "have", "pati", "##ence", "."])
        pieces, spans = tokenize_sentence(vocab, ["You", "have", "patience", "."])
        assert pieces == ["[CLS]", "You", "have", "pati", "##ence", ".", "[SEP]"]
        assert len(pieces) == 7
        assert spans == [(1, 2), (2, 3), (3, 5), (5, 6)]

    def test_single_word(self):
        vocab = make_vocab(["w"])
        pieces, spans = tokenize_sentence(vocab, ["w"])
        assert pieces == ["[CLS]", "w", "[SEP]"]
        assert spans == [(1, 2)]

    def test_all_unknown(self):
        vocab = make_vocab(["a"])
        pieces, spans = tokenize_sentence(vocab, ["xx", "yy"])
        assert pieces == ["[CLS]", "[UNK]", "[UNK]", "[SEP]"]
        assert spans == [(1, 2), (2, 3)]

    def test_empty_sentence_rejected(self):
        vocab = make_vocab(["a"])
        with pytest.raises(ValueError):
            tokenize_sentence(vocab, [])

    def test_spans_cover_non_special_range(self):
        rng = random.Random(3)
        vocab = make_vocab(["a", "b", "ab", "##a", "##b"])
        for _ in range(100):
            words = [
                "".join(rng.choice("ab") for _ in range(rng.randint(1, 6)))
                for _ in range(rng.randint(1, 5))
            ]
            pieces, spans = tokenize_sentence(vocab, words)
            assert pieces[0] == "[CLS]" and pieces[-1] == "[SEP]"
            cursor = 1
            for start, end in spans:
                assert start == cursor and end > start
                cursor = end
            assert cursor == len(pieces) - 1


class TestTrainVocabulary:
    def test_two_symbol_corpus(self):
        vocab = train_vocabulary({"ab": 10}, target_size=5, specials=("[UNK]", "[CLS]"))
        assert "a" in vocab and "##b" in vocab and "ab" in vocab
        assert len(vocab) == 5

    def test_merge_loop_on_small_corpus(self):
        # {abab:5, ab:3}: pairs (a,##b)=13, (##b,##a)=5, (##a,##b)=5
        # merge1 ab; then (ab,##ab)... hand-run: sequences become
        # abab -> [ab, ##a, ##b] -> second merge picks (##a,##b) -> ##ab
        with pytest.warns(TruncatedVocabulary):
            vocab = train_vocabulary(
                {"abab": 5, "ab": 3}, target_size=10, specials=("[UNK]",)
            )
        pieces = sorted(vocab.entries, key=vocab.piece_id)
        assert pieces[:4] == ["[UNK]", "##a", "##b", "a"]
        assert pieces[4] == "ab"  # (a,##b) count 8 beats the count-5 pairs
        assert pieces[5] == "##ab"  # tie at 5: (##a,##b) < (ab,##a)
        assert pieces[6] == "abab"
        assert len(vocab) == 7  # merges exhausted below target

    def test_target_too_small(self):
        with pytest.raises(VocabularyError, match="minimum"):
            train_vocabulary({"abc": 1}, target_size=4, specials=DEFAULT_SPECIALS)

    def test_truncation_flagged(self):
        with pytest.warns(TruncatedVocabulary):
            vocab = train_vocabulary({"a": 100}, target_size=6)
        assert len(vocab) == 5  # 4 specials + "a"
        assert "a" in vocab

    def test_deterministic(self):
        corpus = {"abab": 4, "baba": 3, "aabb": 2, "ab": 9}
        v1 = train_vocabulary(corpus, target_size=12)
        v2 = train_vocabulary(dict(reversed(list(corpus.items()))), target_size=12)
        assert v1.entries == v2.entries

    def test_trained_vocab_segments_training_words(self):
        corpus = {"abab": 4, "ab": 9, "ba": 2}
        vocab = train_vocabulary(corpus, target_size=11)
        for word in corpus:
            assert not tokenize_word(vocab, word).is_unknown
