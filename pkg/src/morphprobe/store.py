"""Bit-exact binary container for per-sentence, per-layer subword
representations with word alignment spans.

Layout (all integers little-endian):

    magic "EMBS" | u32 version=1 | u32 num_layers_total | u32 hidden
    | u64 sentence_count | u16 name_len | UTF-8 model name
    per record:
        u64 sentence_id | u32 num_words | u32 num_subwords
        | num_words x (u32 start, u32 end)
        | num_layers_total x num_subwords x hidden little-endian f32

Layer index 0 is the embedding layer; transformer layers follow, so
num_layers_total = transformer layer count + 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

MAGIC = b"EMBS"
VERSION = 1
POOLING_STRATEGIES = ("first", "last", "max", "sum")
LAYER_KINDS = ("embedding", "first", "middle", "highest")


class StoreFormatError(ValueError):
    """Store violates the format; the message includes a byte offset."""


@dataclass(frozen=True)
class StoreHeader:
    num_layers_total: int
    hidden: int
    num_sentences: int
    model_name: str
    version: int = VERSION

    def __post_init__(self):
        if self.version != VERSION:
            raise StoreFormatError(f"unsupported version {self.version}")
        if self.num_layers_total < 1:
            raise StoreFormatError("num_layers_total must be >= 1")
        if self.hidden < 1:
            raise StoreFormatError("hidden size must be > 0")
        if self.num_sentences < 0:
            raise StoreFormatError("sentence count must be >= 0")


@dataclass
class EmbeddingRecord:
    """One sentence's representations: tensor [layers x subwords x hidden]
    and one half-open subword span per word (CLS/SEP excluded)."""

    sentence_id: int
    spans: tuple[tuple[int, int], ...]
    tensor: np.ndarray

    @property
    def num_words(self) -> int:
        return len(self.spans)

    @property
    def num_subwords(self) -> int:
        return int(self.tensor.shape[1])


def validate_spans(spans: tuple[tuple[int, int], ...], num_subwords: int, where: str = ""):
    """Spans must be sorted, non-overlapping and exactly cover
    [1, num_subwords-1)."""
    ctx = f" ({where})" if where else ""
    if num_subwords < 2:
        raise StoreFormatError(f"record needs at least CLS and SEP subwords{ctx}")
    cursor = 1
    for start, end in spans:
        if start != cursor:
            raise StoreFormatError(
                f"span gap or overlap: expected start {cursor}, got {start}{ctx}"
            )
        if end <= start:
            raise StoreFormatError(f"empty span [{start},{end}){ctx}")
        cursor = end
    if cursor != num_subwords - 1:
        raise StoreFormatError(
            f"spans cover [1,{cursor}) but non-special range is "
            f"[1,{num_subwords - 1}){ctx}"
        )


def validate_record(record: EmbeddingRecord, header: StoreHeader):
    tensor = record.tensor
    if tensor.ndim != 3:
        raise StoreFormatError(
            f"record {record.sentence_id}: tensor must be 3-d, got {tensor.ndim}-d"
        )
    layers, subwords, hidden = tensor.shape
    if layers != header.num_layers_total or hidden != header.hidden:
        raise StoreFormatError(
            f"record {record.sentence_id}: tensor shape {tensor.shape} does not "
            f"match header ({header.num_layers_total} layers, hidden {header.hidden})"
        )
    if tensor.dtype != np.float32:
        raise StoreFormatError(
            f"record {record.sentence_id}: tensor dtype must be float32, got {tensor.dtype}"
        )
    if not np.isfinite(tensor).all():
        raise StoreFormatError(f"record {record.sentence_id}: non-finite tensor value")
    validate_spans(record.spans, subwords, where=f"record {record.sentence_id}")


@dataclass
class Store:
    header: StoreHeader
    records: list[EmbeddingRecord]
    _by_id: dict[int, EmbeddingRecord] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {rec.sentence_id: rec for rec in self.records}

    def record(self, sentence_id: int) -> EmbeddingRecord:
        try:
            return self._by_id[sentence_id]
        except KeyError:
            raise KeyError(f"sentence id {sentence_id} not present in store") from None


def write_store(stream: BinaryIO, header: StoreHeader, records: Iterable[EmbeddingRecord]):
    """Serialize a store; rejects records inconsistent with the header and
    non-finite values (extraction bugs should surface at write time)."""
    records = list(records)
    if header.num_sentences != len(records):
        raise StoreFormatError(
            f"header claims {header.num_sentences} sentences, got {len(records)} records"
        )
    name_bytes = header.model_name.encode("utf-8")
    if len(name_bytes) > 0xFFFF:
        raise StoreFormatError("model name too long for u16 length")
    stream.write(MAGIC)
    stream.write(struct.pack("<III", header.version, header.num_layers_total, header.hidden))
    stream.write(struct.pack("<Q", header.num_sentences))
    stream.write(struct.pack("<H", len(name_bytes)))
    stream.write(name_bytes)
    for record in records:
        validate_record(record, header)
        stream.write(struct.pack("<QII", record.sentence_id, record.num_words, record.num_subwords))
        for start, end in record.spans:
            stream.write(struct.pack("<II", start, end))
        tensor = np.ascontiguousarray(record.tensor, dtype="<f4")
        stream.write(tensor.tobytes())


def save_store(path: str | Path, header: StoreHeader, records: Iterable[EmbeddingRecord]):
    with open(path, "wb") as fh:
        write_store(fh, header, records)


class _Reader:
    def __init__(self, stream: BinaryIO):
        self.stream = stream
        self.offset = 0

    def read(self, n: int, what: str) -> bytes:
        data = self.stream.read(n)
        if len(data) != n:
            raise StoreFormatError(
                f"truncated store: wanted {n} bytes for {what} at offset "
                f"{self.offset}, got {len(data)}"
            )
        self.offset += n
        return data

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt), what))


def _read_header(reader: _Reader) -> StoreHeader:
    magic = reader.read(4, "magic")
    if magic != MAGIC:
        raise StoreFormatError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    version, layers, hidden = reader.unpack("<III", "header")
    if version != VERSION:
        raise StoreFormatError(f"unsupported version {version} at offset 4")
    (count,) = reader.unpack("<Q", "sentence count")
    (name_len,) = reader.unpack("<H", "name length")
    name = reader.read(name_len, "model name").decode("utf-8")
    return StoreHeader(
        num_layers_total=layers, hidden=hidden, num_sentences=count, model_name=name
    )


def _read_record(reader: _Reader, header: StoreHeader) -> EmbeddingRecord:
    record_offset = reader.offset
    sentence_id, num_words, num_subwords = reader.unpack("<QII", "record header")
    spans = []
    for _ in range(num_words):
        spans.append(tuple(reader.unpack("<II", "span")))
    n_floats = header.num_layers_total * num_subwords * header.hidden
    raw = reader.read(4 * n_floats, f"tensor of record at offset {record_offset}")
    tensor = np.frombuffer(raw, dtype="<f4").reshape(
        header.num_layers_total, num_subwords, header.hidden
    )
    record = EmbeddingRecord(sentence_id=sentence_id, spans=tuple(spans), tensor=tensor)
    try:
        validate_record(record, header)
    except StoreFormatError as err:
        raise StoreFormatError(f"{err} (record starts at offset {record_offset})") from None
    return record


def iter_store(stream: BinaryIO) -> Iterator[StoreHeader | EmbeddingRecord]:
    """Yield the header, then each record, validating as it goes."""
    reader = _Reader(stream)
    header = _read_header(reader)
    yield header
    for _ in range(header.num_sentences):
        yield _read_record(reader, header)
    if stream.read(1):
        raise StoreFormatError(f"trailing bytes after last record at offset {reader.offset}")


def read_store(stream: BinaryIO) -> tuple[StoreHeader, list[EmbeddingRecord]]:
    items = iter_store(stream)
    header = next(items)
    return header, list(items)


def load_store(path: str | Path) -> Store:
    with open(path, "rb") as fh:
        header, records = read_store(fh)
    return Store(header=header, records=records)


def validate_store(path: str | Path) -> StoreHeader:
    """Stream through a store validating every record; returns the header."""
    with open(path, "rb") as fh:
        items = iter_store(fh)
        header = next(items)
        for _ in items:
            pass
    return header


def pool_subwords(
    record: EmbeddingRecord, word_index: int, layer_index: int, strategy: str = "last"
) -> np.ndarray:
    """Reduce one word's subword rows at one layer to a single vector."""
    if not 0 <= word_index < record.num_words:
        raise ValueError(f"word index {word_index} out of range [0,{record.num_words})")
    layers = record.tensor.shape[0]
    if not 0 <= layer_index < layers:
        raise ValueError(f"layer index {layer_index} out of range [0,{layers})")
    start, end = record.spans[word_index]
    rows = record.tensor[layer_index, start:end]
    if strategy == "first":
        return rows[0].copy()
    if strategy == "last":
        return rows[-1].copy()
    if strategy == "max":
        return rows.max(axis=0)
    if strategy == "sum":
        return rows.sum(axis=0)
    raise ValueError(f"unknown pooling strategy {strategy!r}, expected one of {POOLING_STRATEGIES}")


def layer_index_for(kind: str, num_layers_total: int) -> int:
    """Map a named layer position to a concrete index.

    embedding -> 0, first -> 1, highest -> last; middle -> half-up midpoint
    of the transformer stack (e.g. 13 total -> 6, 17 total -> 8).
    """
    if num_layers_total < 2:
        raise ValueError("need at least an embedding layer and one transformer layer")
    if kind == "embedding":
        return 0
    if kind == "first":
        return 1
    if kind == "middle":
        return num_layers_total // 2
    if kind == "highest":
        return num_layers_total - 1
    raise ValueError(f"unknown layer kind {kind!r}, expected one of {LAYER_KINDS}")
