"""Shared helpers: deterministic seeding, hashing, canonical JSON."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def derive_seed(global_seed: int, key: str) -> int:
    """Stable 64-bit seed for one job, derived from a global seed and a job key.

    Every source of randomness in the toolkit goes through a generator seeded
    this way, so runs are reproducible and independent of job scheduling.
    """
    payload = f"{global_seed}:{key}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def unit_interval_hash(seed: int, key: str) -> float:
    """Deterministic hash of (seed, key) mapped into [0, 1)."""
    return derive_seed(seed, key) / 2**64


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj) -> str:
    """JSON with sorted keys and fixed separators; byte-stable across runs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
