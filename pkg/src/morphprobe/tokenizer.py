"""Subword vocabularies, greedy longest-match segmentation, and small-scale
vocabulary training.

The segmentation convention is the usual WordPiece one: the first piece of a
word is a plain vocabulary entry, every following piece carries a continuation
prefix (``##`` by default), and a word that cannot be fully segmented collapses
to the unknown marker.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

DEFAULT_CONTINUATION_PREFIX = "##"
# Role order is fixed: unknown, sentence-start, sentence-end, padding, extras.
DEFAULT_SPECIALS = ("[UNK]", "[CLS]", "[SEP]", "[PAD]")
MAX_WORD_CHARS = 256


class VocabularyError(ValueError):
    """Invalid vocabulary file, constructor argument, or training request."""


class TruncatedVocabulary(UserWarning):
    """Vocabulary training ran out of merge candidates before target_size."""


@dataclass(frozen=True)
class Vocabulary:
    """Immutable subword inventory mapping piece strings to dense ids.

    ``specials`` lists marker strings in role order (UNK, CLS, SEP, PAD,
    extras); only the UNK marker is required, and it must be present in
    ``entries``. Safe to share across threads once constructed.
    """

    entries: dict[str, int]
    continuation_prefix: str = DEFAULT_CONTINUATION_PREFIX
    specials: tuple[str, ...] = DEFAULT_SPECIALS
    _max_match_chars: int = field(init=False, repr=False, compare=False, default=0)

    def __post_init__(self):
        if not self.continuation_prefix:
            raise VocabularyError("continuation prefix must be non-empty")
        if not self.specials:
            raise VocabularyError("missing UNK marker: specials is empty")
        ids = sorted(self.entries.values())
        if ids != list(range(len(self.entries))):
            raise VocabularyError("ids must be dense 0..N-1 and unique")
        for sp in self.specials:
            if sp.startswith(self.continuation_prefix):
                raise VocabularyError(
                    f"special token {sp!r} must not start with the continuation prefix"
                )
        if self.unk_token not in self.entries:
            raise VocabularyError(f"UNK marker {self.unk_token!r} missing from vocabulary")
        max_chars = 0
        for piece in self.entries:
            n = len(piece)
            if piece.startswith(self.continuation_prefix):
                n -= len(self.continuation_prefix)
            max_chars = max(max_chars, n)
        object.__setattr__(self, "_max_match_chars", max_chars)

    @property
    def unk_token(self) -> str:
        return self.specials[0]

    @property
    def cls_token(self) -> str:
        return self.specials[1] if len(self.specials) > 1 else DEFAULT_SPECIALS[1]

    @property
    def sep_token(self) -> str:
        return self.specials[2] if len(self.specials) > 2 else DEFAULT_SPECIALS[2]

    @property
    def pad_token(self) -> str:
        return self.specials[3] if len(self.specials) > 3 else DEFAULT_SPECIALS[3]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, piece: str) -> bool:
        return piece in self.entries

    def piece_id(self, piece: str) -> int:
        return self.entries[piece]


@dataclass(frozen=True)
class Segmentation:
    """One word's ordered subword pieces.

    If ``is_unknown``, ``pieces`` is exactly the UNK marker. Otherwise the
    pieces concatenate back to the word once the continuation prefix is
    stripped from every non-initial piece.
    """

    word: str
    pieces: tuple[str, ...]
    is_unknown: bool = False


def load_vocabulary(
    source: Iterable[str],
    continuation_prefix: str = DEFAULT_CONTINUATION_PREFIX,
    specials: tuple[str, ...] = DEFAULT_SPECIALS,
) -> Vocabulary:
    """Read a one-subword-per-line stream; line number = id.

    Raises VocabularyError naming the line on duplicates or empty lines, and
    when the UNK marker (``specials[0]``) is absent from the file.
    """
    if not specials:
        raise VocabularyError("missing UNK marker: specials is empty")
    entries: dict[str, int] = {}
    for lineno, raw in enumerate(source, start=1):
        piece = raw.rstrip("\r\n")
        if not piece:
            raise VocabularyError(f"empty subword at line {lineno}")
        if piece in entries:
            raise VocabularyError(
                f"duplicate subword {piece!r} at line {lineno} "
                f"(first seen at line {entries[piece] + 1})"
            )
        entries[piece] = lineno - 1
    return Vocabulary(entries, continuation_prefix, tuple(specials))


def _unknown(vocab: Vocabulary, word: str) -> Segmentation:
    return Segmentation(word, (vocab.unk_token,), is_unknown=True)


def tokenize_word(vocab: Vocabulary, word: str) -> Segmentation:
    """Greedy left-to-right longest-match segmentation of one word.

    At each position the longest vocabulary entry matching the remaining
    suffix is consumed (continuation-prefixed entries for non-initial
    positions). If no entry matches at some position, the whole word becomes
    UNK, as do words longer than MAX_WORD_CHARS and words that themselves
    start with the continuation prefix (unrepresentable under the invariant
    that initial pieces carry no prefix).
    """
    if not word:
        raise ValueError("cannot tokenize an empty word")
    if any(ch.isspace() for ch in word):
        raise ValueError(f"word must not contain whitespace: {word!r}")
    if len(word) > MAX_WORD_CHARS or word.startswith(vocab.continuation_prefix):
        return _unknown(vocab, word)

    prefix = vocab.continuation_prefix
    entries = vocab.entries
    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = min(len(word), start + vocab._max_match_chars)
        match = None
        while end > start:
            candidate = word[start:end]
            if start > 0:
                candidate = prefix + candidate
            if candidate in entries:
                match = candidate
                break
            end -= 1
        if match is None:
            return _unknown(vocab, word)
        pieces.append(match)
        start = end
    return Segmentation(word, tuple(pieces), is_unknown=False)


def tokenize_sentence(
    vocab: Vocabulary, words: list[str]
) -> tuple[list[str], list[tuple[int, int]]]:
    """Tokenize a word sequence into a flat subword list wrapped in CLS/SEP.

    Returns the flat piece list and one half-open subword-index span per word.
    Spans are 0-based over the flat list, never overlap, appear in order, and
    jointly cover every non-special position.
    """
    if not words:
        raise ValueError("cannot tokenize an empty sentence")
    pieces: list[str] = [vocab.cls_token]
    spans: list[tuple[int, int]] = []
    for word in words:
        seg = tokenize_word(vocab, word)
        spans.append((len(pieces), len(pieces) + len(seg.pieces)))
        pieces.extend(seg.pieces)
    pieces.append(vocab.sep_token)
    return pieces, spans


def _symbolize(word: str, prefix: str) -> list[str]:
    return [word[0]] + [prefix + ch for ch in word[1:]]


def _strip_prefix(symbol: str, prefix: str) -> str:
    return symbol[len(prefix):] if symbol.startswith(prefix) else symbol


def train_vocabulary(
    word_freqs: Mapping[str, int],
    target_size: int,
    continuation_prefix: str = DEFAULT_CONTINUATION_PREFIX,
    specials: tuple[str, ...] = DEFAULT_SPECIALS,
) -> Vocabulary:
    """Train a vocabulary by frequency-based pair merging (BPE-style loop,
    WordPiece surface conventions).

    The result lists specials first, then all observed single-character
    symbols (word-initial characters bare, word-internal ones prefixed) in
    sorted order, then merged symbols in creation order. Deterministic: the
    most frequent adjacent pair is merged each round, ties broken by the
    lexicographically smallest pair. If the merge loop runs out of candidates
    before reaching ``target_size``, the truncated vocabulary is returned and
    a TruncatedVocabulary warning is issued.
    """
    if not word_freqs:
        raise VocabularyError("cannot train on an empty corpus")
    for word, freq in word_freqs.items():
        if not word or any(ch.isspace() for ch in word):
            raise VocabularyError(f"invalid corpus word: {word!r}")
        if freq < 1:
            raise VocabularyError(f"non-positive frequency for {word!r}: {freq}")

    sequences = {w: _symbolize(w, continuation_prefix) for w in sorted(word_freqs)}
    alphabet = sorted({sym for seq in sequences.values() for sym in seq})
    minimum = len(specials) + len(alphabet)
    if target_size < minimum:
        raise VocabularyError(
            f"target_size {target_size} too small: minimum is {minimum} "
            f"({len(specials)} specials + {len(alphabet)} observed character symbols)"
        )

    vocab_list = list(specials) + alphabet
    known = set(vocab_list)
    while len(vocab_list) < target_size:
        pair_counts: Counter[tuple[str, str]] = Counter()
        for word, seq in sequences.items():
            freq = word_freqs[word]
            for left, right in zip(seq, seq[1:]):
                pair_counts[(left, right)] += freq
        if not pair_counts:
            warnings.warn(
                f"merge candidates exhausted at size {len(vocab_list)} "
                f"(target was {target_size})",
                TruncatedVocabulary,
                stacklevel=2,
            )
            break
        best_count = max(pair_counts.values())
        left, right = min(p for p, c in pair_counts.items() if c == best_count)
        merged = left + _strip_prefix(right, continuation_prefix)
        if merged not in known:
            vocab_list.append(merged)
            known.add(merged)
        for word, seq in sequences.items():
            if len(seq) < 2:
                continue
            out: list[str] = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == left and seq[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            sequences[word] = out

    entries = {piece: idx for idx, piece in enumerate(vocab_list)}
    return Vocabulary(entries, continuation_prefix, tuple(specials))
