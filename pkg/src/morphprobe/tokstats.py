"""Corpus-level measures over segmented words: positional piece entropy,
length statistics, agreement with gold morphological segmentations, and the
piece-count vs. log-frequency-rank profile.

All statistics are token-frequency-weighted and accumulated from exact
integer sums, so results are independent of item order and invariant under
uniform scaling of the frequencies.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

from morphprobe.tokenizer import (
    DEFAULT_CONTINUATION_PREFIX,
    Vocabulary,
    tokenize_word,
)

DEFAULT_UNK = "[UNK]"


@dataclass(frozen=True)
class SegmentedItem:
    word: str
    pieces: tuple[str, ...]
    frequency: int


@dataclass
class SegmentedCorpus:
    """Frequency table of segmented word types.

    Words are unique and frequencies positive. The continuation prefix and
    UNK marker describe the convention the pieces were produced under (dumps
    from other tokenizers are accepted; only these two strings matter here).
    """

    items: list[SegmentedItem]
    continuation_prefix: str = DEFAULT_CONTINUATION_PREFIX
    unk_token: str = DEFAULT_UNK

    def __post_init__(self):
        seen: set[str] = set()
        for item in self.items:
            if item.frequency < 1:
                raise ValueError(f"non-positive frequency for {item.word!r}")
            if not item.pieces:
                raise ValueError(f"empty segmentation for {item.word!r}")
            if item.word in seen:
                raise ValueError(f"duplicate word in corpus: {item.word!r}")
            seen.add(item.word)

    def __len__(self) -> int:
        return len(self.items)

    def total_tokens(self) -> int:
        return sum(item.frequency for item in self.items)

    def is_unknown(self, item: SegmentedItem) -> bool:
        return item.pieces == (self.unk_token,)

    def stripped_pieces(self, item: SegmentedItem) -> tuple[str, ...]:
        """Pieces with the continuation prefix removed from non-initial ones."""
        prefix = self.continuation_prefix
        head = item.pieces[0]
        return (head,) + tuple(
            p[len(prefix):] if p.startswith(prefix) else p for p in item.pieces[1:]
        )


@dataclass(frozen=True)
class LengthStats:
    pct_multi_piece: float
    pieces_mean: float
    pieces_std: float
    first_chars_mean: float
    first_chars_std: float
    last_chars_mean: float
    last_chars_std: float


@dataclass(frozen=True)
class AgreementStats:
    full: float
    first: float
    last: float


@dataclass(frozen=True)
class TokStatsReport:
    """All report fields; agreement fields are None when no gold was given."""

    entropy_first_bits: float
    entropy_last_bits: float
    pct_multi_piece: float
    len_in_pieces_mean: float
    len_in_pieces_std: float
    len_first_chars_mean: float
    len_first_chars_std: float
    len_last_chars_mean: float
    len_last_chars_std: float
    agreement_full: float | None = None
    agreement_first: float | None = None
    agreement_last: float | None = None


@dataclass(frozen=True)
class ProfileRow:
    bucket: int
    piece_count: int
    tokens: int


def _require_nonempty(corpus: SegmentedCorpus):
    if not corpus.items:
        raise ValueError("corpus is empty")


def piece_entropy(corpus: SegmentedCorpus, position: str) -> float:
    """Shannon entropy (bits) of the piece at ``position`` ("first" or
    "last") over the token-frequency-weighted distribution. The continuation
    prefix stays part of the symbol."""
    _require_nonempty(corpus)
    if position not in ("first", "last"):
        raise ValueError(f"position must be 'first' or 'last', got {position!r}")
    idx = 0 if position == "first" else -1
    counts: Counter[str] = Counter()
    for item in corpus.items:
        counts[item.pieces[idx]] += item.frequency
    total = sum(counts.values())
    entropy = 0.0
    # summed in symbol order so the result is independent of item order
    for _, count in sorted(counts.items()):
        p = count / total
        entropy -= p * math.log2(p)
    return entropy


def _weighted_mean_std(sum_w: int, sum_wx: int, sum_wx2: int) -> tuple[float, float]:
    mean = sum_wx / sum_w
    var = sum_wx2 / sum_w - mean * mean
    return mean, math.sqrt(max(var, 0.0))


def length_stats(corpus: SegmentedCorpus) -> LengthStats:
    """Token-weighted piece-count and endpoint character-length statistics.

    Character lengths exclude the continuation prefix; std is the population
    standard deviation.
    """
    _require_nonempty(corpus)
    total = 0
    multi = 0
    s_len = s_len2 = 0
    s_first = s_first2 = 0
    s_last = s_last2 = 0
    for item in corpus.items:
        f = item.frequency
        stripped = corpus.stripped_pieces(item)
        n = len(item.pieces)
        total += f
        if n > 1:
            multi += f
        s_len += f * n
        s_len2 += f * n * n
        first_len = len(stripped[0])
        last_len = len(stripped[-1])
        s_first += f * first_len
        s_first2 += f * first_len * first_len
        s_last += f * last_len
        s_last2 += f * last_len * last_len
    pieces_mean, pieces_std = _weighted_mean_std(total, s_len, s_len2)
    first_mean, first_std = _weighted_mean_std(total, s_first, s_first2)
    last_mean, last_std = _weighted_mean_std(total, s_last, s_last2)
    return LengthStats(
        pct_multi_piece=multi / total,
        pieces_mean=pieces_mean,
        pieces_std=pieces_std,
        first_chars_mean=first_mean,
        first_chars_std=first_std,
        last_chars_mean=last_mean,
        last_chars_std=last_std,
    )


def morph_agreement(
    corpus: SegmentedCorpus, gold: Mapping[str, list[str] | tuple[str, ...]]
) -> AgreementStats:
    """Token-weighted agreement between prefix-stripped segmentations and
    gold morpheme sequences: exact full match, first-morpheme match, and
    last-morpheme match. UNK segmentations disagree everywhere."""
    _require_nonempty(corpus)
    total = 0
    full = first = last = 0
    for item in corpus.items:
        if item.word not in gold:
            raise ValueError(f"word missing from gold segmentation: {item.word!r}")
        f = item.frequency
        total += f
        if corpus.is_unknown(item):
            continue
        morphs = tuple(gold[item.word])
        stripped = corpus.stripped_pieces(item)
        if stripped == morphs:
            full += f
        if stripped[0] == morphs[0]:
            first += f
        if stripped[-1] == morphs[-1]:
            last += f
    return AgreementStats(full=full / total, first=first / total, last=last / total)


def rank_length_profile(corpus: SegmentedCorpus, buckets: int) -> list[ProfileRow]:
    """Aggregate token counts by (log-frequency-rank bucket, piece count).

    Words are ranked by descending frequency with lexicographic tie-break
    (rank 1 = most frequent); a word at rank r lands in bucket
    floor(ln r / ln r_max * buckets), clamped to buckets-1.
    """
    _require_nonempty(corpus)
    if buckets < 1:
        raise ValueError(f"buckets must be >= 1, got {buckets}")
    ordered = sorted(corpus.items, key=lambda it: (-it.frequency, it.word))
    r_max = len(ordered)
    log_r_max = math.log(r_max) if r_max > 1 else None
    cells: Counter[tuple[int, int]] = Counter()
    for rank, item in enumerate(ordered, start=1):
        if log_r_max is None:
            bucket = 0
        else:
            bucket = min(int(math.log(rank) / log_r_max * buckets), buckets - 1)
        cells[(bucket, len(item.pieces))] += item.frequency
    return [
        ProfileRow(bucket=b, piece_count=n, tokens=t)
        for (b, n), t in sorted(cells.items())
    ]


def compute_report(
    corpus: SegmentedCorpus,
    gold: Mapping[str, list[str] | tuple[str, ...]] | None = None,
) -> TokStatsReport:
    lengths = length_stats(corpus)
    agreement = morph_agreement(corpus, gold) if gold is not None else None
    return TokStatsReport(
        entropy_first_bits=piece_entropy(corpus, "first"),
        entropy_last_bits=piece_entropy(corpus, "last"),
        pct_multi_piece=lengths.pct_multi_piece,
        len_in_pieces_mean=lengths.pieces_mean,
        len_in_pieces_std=lengths.pieces_std,
        len_first_chars_mean=lengths.first_chars_mean,
        len_first_chars_std=lengths.first_chars_std,
        len_last_chars_mean=lengths.last_chars_mean,
        len_last_chars_std=lengths.last_chars_std,
        agreement_full=agreement.full if agreement else None,
        agreement_first=agreement.first if agreement else None,
        agreement_last=agreement.last if agreement else None,
    )


# -- corpus construction and serialization ----------------------------------


def segment_corpus(vocab: Vocabulary, word_freqs: Mapping[str, int]) -> SegmentedCorpus:
    """Segment a word-frequency table with ``vocab`` into a SegmentedCorpus."""
    items = [
        SegmentedItem(word, tokenize_word(vocab, word).pieces, freq)
        for word, freq in sorted(word_freqs.items())
    ]
    return SegmentedCorpus(items, vocab.continuation_prefix, vocab.unk_token)


def load_segmented_corpus(
    source: Iterable[str],
    continuation_prefix: str = DEFAULT_CONTINUATION_PREFIX,
    unk_token: str = DEFAULT_UNK,
) -> SegmentedCorpus:
    """Parse TSV lines ``word<TAB>freq<TAB>piece1 piece2 ...``."""
    items = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 3 tab-separated fields")
        word, freq_str, pieces_str = parts
        try:
            freq = int(freq_str)
        except ValueError:
            raise ValueError(f"line {lineno}: bad frequency {freq_str!r}") from None
        pieces = tuple(pieces_str.split(" ")) if pieces_str else ()
        items.append(SegmentedItem(word, pieces, freq))
    return SegmentedCorpus(items, continuation_prefix, unk_token)


def dump_segmented_corpus(corpus: SegmentedCorpus) -> str:
    return "".join(
        f"{it.word}\t{it.frequency}\t{' '.join(it.pieces)}\n" for it in corpus.items
    )


def load_morph_gold(source: Iterable[str]) -> dict[str, tuple[str, ...]]:
    """Parse TSV lines ``word<TAB>morph1 morph2 ...``; the morphemes must
    concatenate back to the word."""
    gold: dict[str, tuple[str, ...]] = {}
    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 2 tab-separated fields")
        word, morphs_str = parts
        morphs = tuple(morphs_str.split(" "))
        if "".join(morphs) != word:
            raise ValueError(
                f"line {lineno}: morphemes {morphs!r} do not concatenate to {word!r}"
            )
        if word in gold:
            raise ValueError(f"line {lineno}: duplicate gold word {word!r}")
        gold[word] = morphs
    return gold


# -- report rendering --------------------------------------------------------

_ROWS = [
    ("Entropy of first piece (bits)", "entropy_first_bits", "{:.2f}"),
    ("Entropy of last piece (bits)", "entropy_last_bits", "{:.2f}"),
    ("More than one piece", "pct_multi_piece", "percent"),
    ("Length in pieces", ("len_in_pieces_mean", "len_in_pieces_std"), "pm"),
    ("Length of first piece (chars)", ("len_first_chars_mean", "len_first_chars_std"), "pm"),
    ("Length of last piece (chars)", ("len_last_chars_mean", "len_last_chars_std"), "pm"),
    ("Agreement with gold morphs", "agreement_full", "{:.2f}"),
    ("Agreement with gold in first piece", "agreement_first", "{:.2f}"),
    ("Agreement with gold in last piece", "agreement_last", "{:.2f}"),
]


def _format_cell(report: TokStatsReport, fields, style) -> str:
    if style == "pm":
        mean = getattr(report, fields[0])
        std = getattr(report, fields[1])
        return f"{mean:.1f}±{std:.1f}"
    value = getattr(report, fields)
    if value is None:
        return "-"
    if style == "percent":
        return f"{100.0 * value:.1f}%"
    return style.format(value)


def render_report_table(reports: Mapping[str, TokStatsReport]) -> str:
    """Aligned text table, one measure per row and one column per corpus."""
    names = list(reports)
    header = [""] + names
    lines = [header]
    for label, fields, style in _ROWS:
        lines.append([label] + [_format_cell(reports[n], fields, style) for n in names])
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    out = []
    for row in lines:
        cells = [row[0].ljust(widths[0])] + [
            row[i].rjust(widths[i]) for i in range(1, len(row))
        ]
        out.append("  ".join(cells).rstrip())
    return "\n".join(out) + "\n"


def report_to_dict(report: TokStatsReport) -> dict:
    return {
        "entropy_first_bits": report.entropy_first_bits,
        "entropy_last_bits": report.entropy_last_bits,
        "pct_multi_piece": report.pct_multi_piece,
        "len_in_pieces_mean": report.len_in_pieces_mean,
        "len_in_pieces_std": report.len_in_pieces_std,
        "len_first_chars_mean": report.len_first_chars_mean,
        "len_first_chars_std": report.len_first_chars_std,
        "len_last_chars_mean": report.len_last_chars_mean,
        "len_last_chars_std": report.len_last_chars_std,
        "agreement_full": report.agreement_full,
        "agreement_first": report.agreement_first,
        "agreement_last": report.agreement_last,
    }


def profile_to_csv(rows: list[ProfileRow]) -> str:
    out = ["bucket,piece_count,tokens"]
    out.extend(f"{r.bucket},{r.piece_count},{r.tokens}" for r in rows)
    return "\n".join(out) + "\n"
