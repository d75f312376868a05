"""Generation of morphological probing datasets from tagged corpora.

The generator enforces three constraints: fixed split sizes, pairwise
disjointness of target word forms across splits, and a per-split class
imbalance cap. Disjointness is guaranteed by construction: forms are
hash-partitioned into splits (seeded, proportional to the requested sizes)
before any sampling happens.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

from morphprobe.conllu import ConlluToken, parse_conllu
from morphprobe.utils import derive_seed, unit_interval_hash

SPLIT_NAMES = ("train", "dev", "test")
DEFAULT_SIZES = (2000, 200, 2000)
DEFAULT_IMBALANCE_CAP = 3


class DatasetGenerationError(ValueError):
    """The requested dataset cannot be generated from the candidate pool."""


@dataclass(frozen=True)
class MorphTask:
    """One probing task: predict the value of ``feature_key`` for tokens of
    part-of-speech ``upos``."""

    name: str
    upos: str
    feature_key: str
    label_set: tuple[str, ...]

    def __post_init__(self):
        if not self.label_set:
            raise ValueError(f"task {self.name!r} has an empty label set")


@dataclass(frozen=True)
class ProbingInstance:
    sentence: tuple[str, ...]
    target_index: int
    label: str
    target_form: str
    sentence_id: int

    def __post_init__(self):
        if not 0 <= self.target_index < len(self.sentence):
            raise ValueError(
                f"target index {self.target_index} out of range for "
                f"{len(self.sentence)}-word sentence"
            )


@dataclass
class CandidatePool:
    task: MorphTask
    groups: dict[tuple[str, str], list[ProbingInstance]]

    def total(self) -> int:
        return sum(len(v) for v in self.groups.values())


@dataclass
class ProbingDataset:
    task: MorphTask
    train: list[ProbingInstance]
    dev: list[ProbingInstance]
    test: list[ProbingInstance]
    seed: int
    dropped_labels: tuple[str, ...] = ()

    def split(self, name: str) -> list[ProbingInstance]:
        return getattr(self, name)


def discover_labels(
    sentences: Iterable[list[ConlluToken]], upos: str, feature_key: str
) -> tuple[str, ...]:
    """All values the feature takes on tokens of the given POS."""
    values = {
        tok.feats[feature_key]
        for sent in sentences
        for tok in sent
        if tok.upos == upos and feature_key in tok.feats
    }
    return tuple(sorted(values))


def extract_candidates(
    sentences: Iterable[list[ConlluToken]], task: MorphTask
) -> CandidatePool:
    """Scan tagged sentences for candidate instances, grouped by
    (label, lowercased target form). Duplicate sentences are dropped."""
    groups: dict[tuple[str, str], list[ProbingInstance]] = {}
    seen: set[tuple[str, ...]] = set()
    sentence_id = 0
    for sent in sentences:
        forms = tuple(tok.form for tok in sent)
        if forms in seen:
            continue
        seen.add(forms)
        for index, tok in enumerate(sent):
            if tok.upos != task.upos:
                continue
            value = tok.feats.get(task.feature_key)
            if value is None or value not in task.label_set:
                continue
            inst = ProbingInstance(
                sentence=forms,
                target_index=index,
                label=value,
                target_form=tok.form.lower(),
                sentence_id=sentence_id,
            )
            groups.setdefault((value, inst.target_form), []).append(inst)
        sentence_id += 1
    return CandidatePool(task=task, groups=groups)


def _assign_form_splits(
    forms: Iterable[str], sizes: tuple[int, int, int], seed: int
) -> dict[str, str]:
    """Hash-partition forms into splits with probability proportional to the
    requested split sizes. Deterministic given the seed."""
    total = sum(sizes)
    bounds = []
    acc = 0.0
    for size in sizes[:-1]:
        acc += size / total
        bounds.append(acc)
    assignment = {}
    for form in forms:
        u = unit_interval_hash(seed, f"form-split:{form}")
        split = SPLIT_NAMES[-1]
        for name, bound in zip(SPLIT_NAMES, bounds):
            if u < bound:
                split = name
                break
        assignment[form] = split
    return assignment


def _drop_unsupportable_labels(
    labels: list[str],
    avail: Mapping[str, Mapping[str, int]],
    sizes: tuple[int, int, int],
    cap: int,
) -> tuple[list[str], list[str]]:
    """Iteratively remove labels whose support in some split partition falls
    below ceil(split_size / (cap * num_labels))."""
    kept = list(labels)
    dropped: list[str] = []
    while kept:
        thresholds = {
            name: math.ceil(size / (cap * len(kept)))
            for name, size in zip(SPLIT_NAMES, sizes)
        }
        losers = [
            label
            for label in kept
            if any(avail[name][label] < thresholds[name] for name in SPLIT_NAMES)
        ]
        if not losers:
            break
        kept = [label for label in kept if label not in losers]
        dropped.extend(losers)
    return kept, sorted(dropped)


def _allocate(avail: Mapping[str, int], labels: list[str], size: int, cap: int) -> dict[str, int]:
    """Per-label instance counts for one split: as equal as possible, bounded
    by availability, then clipped to cap * min."""
    order = sorted(labels, key=lambda lb: (avail[lb], lb))
    alloc: dict[str, int] = {}
    remaining = size
    left = len(order)
    for label in order:
        count = min(avail[label], remaining // left)
        alloc[label] = count
        remaining -= count
        left -= 1
    floor = min(alloc.values())
    limit = cap * floor
    return {label: min(count, limit) for label, count in alloc.items()}


def sample_splits(
    pool: CandidatePool,
    sizes: tuple[int, int, int] = DEFAULT_SIZES,
    imbalance_cap: int = DEFAULT_IMBALANCE_CAP,
    seed: int = 0,
) -> ProbingDataset:
    """Draw train/dev/test splits satisfying all dataset constraints.

    Labels that cannot support the imbalance cap in every split are removed
    from the task's label set first; if fewer than two labels survive, or a
    split cannot be filled to its requested size, the task is rejected.
    """
    if not pool.groups:
        raise DatasetGenerationError(f"task {pool.task.name!r}: empty candidate pool")
    if any(s < 1 for s in sizes):
        raise DatasetGenerationError(f"split sizes must be positive, got {sizes}")

    forms = sorted({form for (_, form) in pool.groups})
    form_split = _assign_form_splits(forms, sizes, seed)

    labels = sorted({label for (label, _) in pool.groups})
    avail: dict[str, dict[str, int]] = {name: {lb: 0 for lb in labels} for name in SPLIT_NAMES}
    for (label, form), instances in pool.groups.items():
        avail[form_split[form]][label] += len(instances)

    kept, dropped = _drop_unsupportable_labels(labels, avail, sizes, imbalance_cap)
    if len(kept) < 2:
        raise DatasetGenerationError(
            f"task {pool.task.name!r} is ungeneratable: {len(kept)} label(s) left "
            f"after filtering (dropped: {', '.join(dropped) or 'none'})"
        )

    allocations = {}
    shortfalls = {}
    for name, size in zip(SPLIT_NAMES, sizes):
        alloc = _allocate(avail[name], kept, size, imbalance_cap)
        got = sum(alloc.values())
        if got < size:
            shortfalls[name] = size - got
        allocations[name] = alloc
    if shortfalls:
        detail = ", ".join(f"{name}: {n} short" for name, n in sorted(shortfalls.items()))
        raise DatasetGenerationError(
            f"task {pool.task.name!r}: insufficient instances ({detail})"
        )

    by_split_label: dict[tuple[str, str], list[ProbingInstance]] = {}
    for (label, form), instances in pool.groups.items():
        if label not in kept:
            continue
        by_split_label.setdefault((form_split[form], label), []).extend(instances)

    splits: dict[str, list[ProbingInstance]] = {}
    for name in SPLIT_NAMES:
        chosen: list[ProbingInstance] = []
        for label in kept:
            candidates = sorted(
                by_split_label.get((name, label), ()),
                key=lambda inst: (inst.sentence_id, inst.target_index),
            )
            rng = random.Random(derive_seed(seed, f"sample:{name}:{label}"))
            rng.shuffle(candidates)
            chosen.extend(candidates[: allocations[name][label]])
        chosen.sort(key=lambda inst: (inst.sentence_id, inst.target_index))
        splits[name] = chosen

    dataset = ProbingDataset(
        task=replace(pool.task, label_set=tuple(kept)),
        train=splits["train"],
        dev=splits["dev"],
        test=splits["test"],
        seed=seed,
        dropped_labels=tuple(dropped),
    )
    check_dataset(dataset, sizes, imbalance_cap)
    return dataset


def check_dataset(
    dataset: ProbingDataset, sizes: tuple[int, int, int], imbalance_cap: int = DEFAULT_IMBALANCE_CAP
):
    """Verify all dataset invariants; raises DatasetGenerationError if any fail."""
    form_sets = []
    for name, size in zip(SPLIT_NAMES, sizes):
        instances = dataset.split(name)
        if len(instances) != size:
            raise DatasetGenerationError(
                f"split {name} has {len(instances)} instances, expected {size}"
            )
        counts: dict[str, int] = {}
        for inst in instances:
            if inst.label not in dataset.task.label_set:
                raise DatasetGenerationError(
                    f"split {name}: label {inst.label!r} outside task label set"
                )
            counts[inst.label] = counts.get(inst.label, 0) + 1
        if counts and max(counts.values()) > imbalance_cap * min(counts.values()):
            raise DatasetGenerationError(
                f"split {name} violates the {imbalance_cap}:1 imbalance cap: {counts}"
            )
        form_sets.append({inst.target_form for inst in instances})
    for i in range(len(form_sets)):
        for j in range(i + 1, len(form_sets)):
            overlap = form_sets[i] & form_sets[j]
            if overlap:
                raise DatasetGenerationError(
                    f"splits {SPLIT_NAMES[i]} and {SPLIT_NAMES[j]} share "
                    f"{len(overlap)} target form(s), e.g. {sorted(overlap)[:3]}"
                )


def generate_dataset(
    conllu_source: Iterable[str],
    task_spec: str,
    sizes: tuple[int, int, int] = DEFAULT_SIZES,
    imbalance_cap: int = DEFAULT_IMBALANCE_CAP,
    seed: int = 0,
) -> ProbingDataset:
    """End-to-end generation from a CoNLL-U stream and a ``Feature:UPOS``
    task spec (e.g. ``Case:NOUN``)."""
    feature_key, _, upos = task_spec.partition(":")
    if not feature_key or not upos:
        raise DatasetGenerationError(
            f"bad task spec {task_spec!r}, expected FEATURE:UPOS (e.g. Case:NOUN)"
        )
    sentences = parse_conllu(conllu_source)
    labels = discover_labels(sentences, upos, feature_key)
    if not labels:
        raise DatasetGenerationError(
            f"no tokens with UPOS={upos} and feature {feature_key!r} found"
        )
    task = MorphTask(name=task_spec, upos=upos, feature_key=feature_key, label_set=labels)
    pool = extract_candidates(sentences, task)
    return sample_splits(pool, sizes=sizes, imbalance_cap=imbalance_cap, seed=seed)


# -- on-disk format ----------------------------------------------------------


def _instances_to_tsv(instances: list[ProbingInstance]) -> str:
    return "".join(
        f"{inst.sentence_id}\t{inst.target_index}\t{inst.label}\t{' '.join(inst.sentence)}\n"
        for inst in instances
    )


def write_dataset(dataset: ProbingDataset, out_dir: str | Path) -> list[str]:
    """Write one TSV per split plus a JSON manifest; returns written names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in SPLIT_NAMES:
        path = out / f"{name}.tsv"
        path.write_text(_instances_to_tsv(dataset.split(name)), encoding="utf-8")
        written.append(path.name)
    manifest = {
        "task": {
            "name": dataset.task.name,
            "upos": dataset.task.upos,
            "feature_key": dataset.task.feature_key,
            "label_set": list(dataset.task.label_set),
        },
        "sizes": {name: len(dataset.split(name)) for name in SPLIT_NAMES},
        "seed": dataset.seed,
        "dropped_labels": list(dataset.dropped_labels),
    }
    manifest_path = out / "dataset.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    written.append(manifest_path.name)
    return written


def load_dataset(data_dir: str | Path) -> ProbingDataset:
    data = Path(data_dir)
    manifest = json.loads((data / "dataset.json").read_text(encoding="utf-8"))
    task = MorphTask(
        name=manifest["task"]["name"],
        upos=manifest["task"]["upos"],
        feature_key=manifest["task"]["feature_key"],
        label_set=tuple(manifest["task"]["label_set"]),
    )
    splits = {}
    for name in SPLIT_NAMES:
        instances = []
        for lineno, raw in enumerate((data / f"{name}.tsv").read_text(encoding="utf-8").splitlines(), 1):
            parts = raw.split("\t")
            if len(parts) != 4:
                raise DatasetGenerationError(f"{name}.tsv line {lineno}: expected 4 fields")
            sid, idx, label, words = parts
            sentence = tuple(words.split(" "))
            instances.append(
                ProbingInstance(
                    sentence=sentence,
                    target_index=int(idx),
                    label=label,
                    target_form=sentence[int(idx)].lower(),
                    sentence_id=int(sid),
                )
            )
        splits[name] = instances
    return ProbingDataset(
        task=task,
        train=splits["train"],
        dev=splits["dev"],
        test=splits["test"],
        seed=manifest["seed"],
        dropped_labels=tuple(manifest["dropped_labels"]),
    )
