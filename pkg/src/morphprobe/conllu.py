"""Minimal CoNLL-U reader: FORM, UPOS and FEATS are all the toolkit needs.

Multiword-token ranges (ids like ``1-2``) and empty nodes (ids like ``1.1``)
are skipped so that token positions match the syntactic word sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

N_COLUMNS = 10


class ConlluError(ValueError):
    """Malformed CoNLL-U input; the message carries the line number."""


@dataclass(frozen=True)
class ConlluToken:
    form: str
    upos: str
    feats: dict[str, str]


def _parse_feats(field: str, lineno: int) -> dict[str, str]:
    if field in ("_", ""):
        return {}
    feats: dict[str, str] = {}
    for part in field.split("|"):
        if "=" not in part:
            raise ConlluError(f"line {lineno}: malformed FEATS entry {part!r}")
        key, value = part.split("=", 1)
        feats[key] = value
    return feats


def parse_conllu(source: Iterable[str]) -> list[list[ConlluToken]]:
    """Parse a CoNLL-U stream into sentences of tokens."""
    sentences: list[list[ConlluToken]] = []
    current: list[ConlluToken] = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            if current:
                sentences.append(current)
                current = []
            continue
        if line.startswith("#"):
            continue
        columns = line.split("\t")
        if len(columns) != N_COLUMNS:
            raise ConlluError(
                f"line {lineno}: expected {N_COLUMNS} tab-separated columns, "
                f"got {len(columns)}"
            )
        token_id = columns[0]
        if "-" in token_id or "." in token_id:
            continue
        if not token_id.isdigit():
            raise ConlluError(f"line {lineno}: bad token id {token_id!r}")
        current.append(
            ConlluToken(form=columns[1], upos=columns[3], feats=_parse_feats(columns[5], lineno))
        )
    if current:
        sentences.append(current)
    return sentences
