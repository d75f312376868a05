"""Writer for the EMBS embedding-store format.

Layout (all integers little-endian): magic ``EMBS``, u32 version = 1,
u32 num_layers_total, u32 hidden, u64 sentence count, u16 name length +
UTF-8 model name; per record: u64 sentence_id, u32 num_words,
u32 num_subwords, num_words x (u32 start, u32 end) spans, then
num_layers_total x num_subwords x hidden little-endian float32 values.

The sentence count is patched into the header on close, so records can be
streamed as they are extracted.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMBS"
VERSION = 1
_COUNT_OFFSET = 4 + 4 + 4 + 4  # magic + version + layers + hidden


class StoreWriteError(ValueError):
    pass


class StoreWriter:
    """Streams records into a store file; one writer per file."""

    def __init__(self, path: str | Path, num_layers_total: int, hidden: int, model_name: str):
        if num_layers_total < 1 or hidden < 1:
            raise StoreWriteError("layer count and hidden size must be positive")
        self.num_layers_total = num_layers_total
        self.hidden = hidden
        self.count = 0
        self._fh = open(path, "wb")
        name_bytes = model_name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise StoreWriteError("model name too long")
        self._fh.write(MAGIC)
        self._fh.write(struct.pack("<III", VERSION, num_layers_total, hidden))
        self._fh.write(struct.pack("<Q", 0))  # patched on close
        self._fh.write(struct.pack("<H", len(name_bytes)))
        self._fh.write(name_bytes)

    def add_record(self, sentence_id: int, spans, tensor: np.ndarray):
        tensor = np.ascontiguousarray(tensor, dtype="<f4")
        if tensor.ndim != 3:
            raise StoreWriteError(f"tensor must be [layers, subwords, hidden], got {tensor.shape}")
        layers, num_subwords, hidden = tensor.shape
        if layers != self.num_layers_total or hidden != self.hidden:
            raise StoreWriteError(
                f"tensor shape {tensor.shape} does not match header "
                f"({self.num_layers_total}, *, {self.hidden})"
            )
        if not np.isfinite(tensor).all():
            raise StoreWriteError(f"non-finite value in sentence {sentence_id}")
        cursor = 1
        for start, end in spans:
            if start != cursor or end <= start:
                raise StoreWriteError(f"bad span ({start}, {end}) in sentence {sentence_id}")
            cursor = end
        if cursor != num_subwords - 1:
            raise StoreWriteError(
                f"spans cover [1,{cursor}) but sentence {sentence_id} has "
                f"{num_subwords} subwords"
            )
        self._fh.write(struct.pack("<QII", sentence_id, len(spans), num_subwords))
        for start, end in spans:
            self._fh.write(struct.pack("<II", start, end))
        self._fh.write(tensor.tobytes())
        self.count += 1

    def close(self):
        self._fh.seek(_COUNT_OFFSET)
        self._fh.write(struct.pack("<Q", self.count))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
        return False
