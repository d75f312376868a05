"""Run a pretrained checkpoint over whitespace-tokenized sentences and dump
every hidden layer (embedding layer included) plus word alignment spans.

The model's own tokenizer defines the subword boundaries; alignment comes
from the fast tokenizer's word ids. Sentences the tokenizer cannot align
cleanly (a word mapped to no token, or a non-sentence-shaped special-token
layout) and sentences longer than the length limit are skipped and reported,
never truncated mid-word.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from embextract.store_writer import StoreWriter

logger = logging.getLogger("embextract")

DEFAULT_MAX_SEQ_LEN = 512


class AlignmentError(ValueError):
    pass


@dataclass
class ExtractionJob:
    model: str
    input_path: str
    output_path: str
    batch_size: int = 16
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN
    device: str = "cpu"


@dataclass
class ExtractionSummary:
    model: str
    num_layers_total: int = 0
    hidden: int = 0
    written: int = 0
    skipped: list[tuple[int, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "num_layers_total": self.num_layers_total,
            "hidden": self.hidden,
            "written": self.written,
            "skipped": [{"sentence_id": sid, "reason": why} for sid, why in self.skipped],
        }


def spans_from_word_ids(word_ids: list[int | None], num_words: int) -> list[tuple[int, int]]:
    """Half-open subword spans per word from a fast tokenizer's word ids.

    Expects the sentence shape the store requires: one special token at each
    end (ids None) and every word mapped to one contiguous run in order.
    """
    n = len(word_ids)
    if n < 3 or word_ids[0] is not None or word_ids[-1] is not None:
        raise AlignmentError("sequence does not start and end with special tokens")
    if any(w is None for w in word_ids[1:-1]):
        raise AlignmentError("special token inside the word region")
    spans: list[tuple[int, int]] = []
    expected = 0
    position = 1
    while position < n - 1:
        word = word_ids[position]
        if word != expected:
            raise AlignmentError(f"word {expected} missing from the alignment")
        start = position
        while position < n - 1 and word_ids[position] == word:
            position += 1
        spans.append((start, position))
        expected += 1
    if expected != num_words:
        raise AlignmentError(f"aligned {expected} of {num_words} words")
    return spans


def read_sentences(path: str | Path) -> list[list[str]]:
    """One whitespace-tokenized sentence per line; blank lines are skipped
    but keep their line number, so sentence ids match the input file."""
    sentences = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        words = raw.split()
        sentences.append((lineno, words))
    return sentences


def extract(job: ExtractionJob) -> ExtractionSummary:
    tokenizer = AutoTokenizer.from_pretrained(job.model, use_fast=True)
    if not tokenizer.is_fast:
        raise ValueError(f"model {job.model!r} has no fast tokenizer; alignment needs one")
    model = AutoModel.from_pretrained(job.model)
    model.eval()
    device = torch.device(job.device)
    model.to(device)

    num_layers_total = model.config.num_hidden_layers + 1
    hidden = model.config.hidden_size
    summary = ExtractionSummary(
        model=job.model, num_layers_total=num_layers_total, hidden=hidden
    )

    sentences = [(sid, words) for sid, words in read_sentences(job.input_path) if words]
    writer = StoreWriter(job.output_path, num_layers_total, hidden, job.model)
    try:
        with torch.no_grad():
            for lo in range(0, len(sentences), job.batch_size):
                batch = sentences[lo : lo + job.batch_size]
                _extract_batch(batch, tokenizer, model, device, job, writer, summary)
    finally:
        writer.close()
    for sid, reason in summary.skipped:
        logger.warning("skipped sentence %d: %s", sid, reason)
    summary.written = writer.count
    return summary


def _extract_batch(batch, tokenizer, model, device, job, writer, summary):
    encoding = tokenizer(
        [words for _, words in batch],
        is_split_into_words=True,
        add_special_tokens=True,
        truncation=False,
    )
    keep = []
    for i, (sid, words) in enumerate(batch):
        length = len(encoding["input_ids"][i])
        if length > job.max_seq_len:
            summary.skipped.append((sid, f"{length} subwords exceeds limit {job.max_seq_len}"))
            continue
        try:
            spans = spans_from_word_ids(encoding.word_ids(i), len(words))
        except AlignmentError as err:
            summary.skipped.append((sid, str(err)))
            continue
        keep.append((i, sid, spans, length))
    if not keep:
        return

    features = {
        key: [encoding[key][i] for i, _, _, _ in keep]
        for key in encoding
        if key in ("input_ids", "attention_mask", "token_type_ids")
    }
    padded = tokenizer.pad(features, return_tensors="pt").to(device)
    output = model(**padded, output_hidden_states=True)
    # [layers+1, batch, seq, hidden]
    hidden_states = torch.stack(output.hidden_states).cpu()
    for row, (_, sid, spans, length) in enumerate(keep):
        tensor = hidden_states[:, row, :length, :].numpy().astype(np.float32)
        writer.add_record(sid, spans, tensor)
