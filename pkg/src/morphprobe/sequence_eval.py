"""Token-level tagging with a classifier shared across positions, plus the
metrics and layer-sweep reports built on top of it: micro POS accuracy and
exact-span, typed NER F1 under BIO2.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from morphprobe import probe
from morphprobe.conllu import parse_conllu
from morphprobe.store import Store, layer_index_for, pool_subwords
from morphprobe.utils import derive_seed


@dataclass(frozen=True)
class TagSequence:
    sentence_id: int
    tags: tuple[str, ...]


@dataclass(frozen=True)
class TaggedSentence:
    sentence_id: int
    words: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        if len(self.words) != len(self.tags):
            raise ValueError(
                f"sentence {self.sentence_id}: {len(self.words)} words but "
                f"{len(self.tags)} tags"
            )


@dataclass(frozen=True)
class SpanF1Report:
    precision: float
    recall: float
    f1: float
    per_type: dict[str, dict[str, int]]  # type -> {gold, pred, correct}


# -- corpus loading ----------------------------------------------------------


def _split_tag(tag: str, where: str) -> tuple[str, str]:
    if tag == "O":
        return "O", ""
    if tag.startswith("B-") or tag.startswith("I-"):
        prefix, entity = tag.split("-", 1)
        if entity:
            return prefix, entity
    raise ValueError(f"unknown tag syntax {tag!r} {where}")


def repair_bio(tags: Sequence[str]) -> tuple[str, ...]:
    """Normalize to BIO2: an I-X following O, nothing, or a different type
    becomes B-X (the usual CoNLL repair)."""
    repaired: list[str] = []
    prev_entity = None
    for i, tag in enumerate(tags):
        prefix, entity = _split_tag(tag, f"at position {i}")
        if prefix == "I" and prev_entity != entity:
            repaired.append(f"B-{entity}")
        else:
            repaired.append(tag)
        prev_entity = entity if prefix in ("B", "I") else None
    return tuple(repaired)


def load_bio_corpus(source: Iterable[str]) -> list[TaggedSentence]:
    """Two-column TSV ``token<TAB>tag`` with blank-line sentence separation;
    tags are repaired to BIO2 on load."""
    sentences: list[TaggedSentence] = []
    words: list[str] = []
    tags: list[str] = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            if words:
                sentences.append(
                    TaggedSentence(len(sentences), tuple(words), repair_bio(tags))
                )
                words, tags = [], []
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected token<TAB>tag")
        words.append(parts[0])
        tags.append(parts[1])
    if words:
        sentences.append(TaggedSentence(len(sentences), tuple(words), repair_bio(tags)))
    return sentences


def load_pos_corpus(source: Iterable[str]) -> list[TaggedSentence]:
    """POS sentences from CoNLL-U (FORM and UPOS columns)."""
    return [
        TaggedSentence(
            sid,
            tuple(tok.form for tok in sent),
            tuple(tok.upos for tok in sent),
        )
        for sid, sent in enumerate(parse_conllu(source))
    ]


# -- metrics -----------------------------------------------------------------


def pos_accuracy(pred: Sequence[TagSequence], gold: Sequence[TagSequence]) -> float:
    """Micro accuracy over all word positions of aligned tag sequences."""
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predicted sequences vs {len(gold)} gold")
    correct = 0
    total = 0
    for p, g in zip(pred, gold):
        if p.sentence_id != g.sentence_id:
            raise ValueError(f"sentence id mismatch: {p.sentence_id} vs {g.sentence_id}")
        if len(p.tags) != len(g.tags):
            raise ValueError(
                f"sentence {p.sentence_id}: {len(p.tags)} predicted tags vs {len(g.tags)} gold"
            )
        total += len(g.tags)
        correct += sum(pt == gt for pt, gt in zip(p.tags, g.tags))
    if total == 0:
        raise ValueError("no positions to score")
    return correct / total


def bio_spans(tags: Sequence[str]) -> set[tuple[str, int, int]]:
    """Maximal (type, start, end) spans under BIO2; end is exclusive.

    An I-X that does not continue a same-type span opens a new span, so raw
    classifier output is scoreable; on well-formed BIO2 this is exactly the
    B-opens / I-continues reading.
    """
    spans: set[tuple[str, int, int]] = set()
    start = None
    entity = None
    for i, tag in enumerate(tags):
        prefix, tag_entity = _split_tag(tag, f"at position {i}")
        if prefix == "O":
            if start is not None:
                spans.add((entity, start, i))
                start, entity = None, None
        elif prefix == "B" or (prefix == "I" and entity != tag_entity):
            if start is not None:
                spans.add((entity, start, i))
            start, entity = i, tag_entity
    if start is not None:
        spans.add((entity, start, len(tags)))
    return spans


def _f1(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def ner_span_f1(pred: Sequence[TagSequence], gold: Sequence[TagSequence]) -> SpanF1Report:
    """Micro precision/recall/F1 over exact typed spans, with per-type
    gold/pred/correct counts. 0/0 ratios are 0."""
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predicted sequences vs {len(gold)} gold")
    per_type: dict[str, dict[str, int]] = {}
    n_gold = n_pred = n_correct = 0
    for p, g in zip(pred, gold):
        if p.sentence_id != g.sentence_id or len(p.tags) != len(g.tags):
            raise ValueError(f"misaligned sequences at sentence {g.sentence_id}")
        p_spans = bio_spans(p.tags)
        g_spans = bio_spans(g.tags)
        n_gold += len(g_spans)
        n_pred += len(p_spans)
        n_correct += len(p_spans & g_spans)
        for entity, _, _ in g_spans:
            per_type.setdefault(entity, {"gold": 0, "pred": 0, "correct": 0})["gold"] += 1
        for span in p_spans:
            counts = per_type.setdefault(span[0], {"gold": 0, "pred": 0, "correct": 0})
            counts["pred"] += 1
            if span in g_spans:
                counts["correct"] += 1
    precision = n_correct / n_pred if n_pred else 0.0
    recall = n_correct / n_gold if n_gold else 0.0
    return SpanF1Report(
        precision=precision,
        recall=recall,
        f1=_f1(precision, recall),
        per_type=per_type,
    )


# -- shared tagger -----------------------------------------------------------


@dataclass
class TaggerRunResult:
    fit: probe.FitResult
    test_metric: float
    metric_name: str
    labels: tuple[str, ...]
    test_report: SpanF1Report | None = None

    def to_dict(self) -> dict:
        out = {
            "history": [
                {
                    "epoch": h.epoch,
                    "train_loss": h.train_loss,
                    "train_metric": h.train_metric,
                    "dev_loss": h.dev_loss,
                    "dev_metric": h.dev_metric,
                }
                for h in self.fit.history
            ],
            "chosen_epoch": self.fit.best_epoch,
            "dev_metric": self.fit.best_dev_metric,
            "metric": self.metric_name,
            "test_metric": self.test_metric,
            "mix_weights": self.fit.mix_weights,
            "labels": list(self.labels),
        }
        if self.test_report is not None:
            out["test_span_counts"] = self.test_report.per_type
            out["test_precision"] = self.test_report.precision
            out["test_recall"] = self.test_report.recall
        return out


def _token_matrix(
    sentences: Sequence[TaggedSentence],
    store: Store,
    pooling: str,
    layer_mode: int | str,
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """One pooled row per word across all sentences, plus (sentence position,
    word index) back-references."""
    layers = store.header.num_layers_total
    rows = []
    where = []
    for pos, sent in enumerate(sentences):
        record = store.record(sent.sentence_id)
        if record.num_words != len(sent.words):
            raise ValueError(
                f"alignment mismatch for sentence {sent.sentence_id}: corpus has "
                f"{len(sent.words)} words, store has {record.num_words} spans"
            )
        for wi in range(len(sent.words)):
            if layer_mode == "mix":
                rows.append(
                    np.stack([pool_subwords(record, wi, li, pooling) for li in range(layers)])
                )
            else:
                rows.append(pool_subwords(record, wi, int(layer_mode), pooling))
            where.append((pos, wi))
    return np.asarray(rows, dtype=np.float64), where


def _predict_tags(
    model: probe.ProbeModel,
    x: np.ndarray,
    where: list[tuple[int, int]],
    sentences: Sequence[TaggedSentence],
    labels: tuple[str, ...],
) -> list[TagSequence]:
    logp = probe.forward(model, x)
    pred_ids = logp.argmax(axis=1)
    tags: list[list[str]] = [["O"] * len(s.words) for s in sentences]
    for (pos, wi), label_id in zip(where, pred_ids):
        tags[pos][wi] = labels[label_id]
    return [
        TagSequence(sent.sentence_id, tuple(seq)) for sent, seq in zip(sentences, tags)
    ]


def train_tagger(
    splits: Mapping[str, Sequence[TaggedSentence]],
    store: Store,
    pooling: str = "last",
    layer_mode: int | str = "mix",
    config: probe.TrainerConfig | None = None,
    metric: str = "accuracy",
) -> TaggerRunResult:
    """Train the shared per-token classifier. Early stopping uses token
    accuracy for POS-style tasks and span F1 for NER (``metric="span_f1"``)."""
    if config is None:
        config = probe.TrainerConfig()
    if metric not in ("accuracy", "span_f1"):
        raise ValueError(f"metric must be 'accuracy' or 'span_f1', got {metric!r}")
    train, dev, test = splits["train"], splits["dev"], splits["test"]
    labels = tuple(sorted({t for sent in train for t in sent.tags}))
    if len(labels) < 2:
        raise ValueError("degenerate corpus: fewer than 2 distinct tags in train")
    label_index = {label: i for i, label in enumerate(labels)}

    def matrices(sentences):
        x, where = _token_matrix(sentences, store, pooling, layer_mode)
        y = np.array(
            [label_index.get(sentences[pos].tags[wi], -1) for pos, wi in where],
            dtype=np.int64,
        )
        return x, y, where

    x_train, y_train, _ = matrices(train)
    if (y_train < 0).any():
        raise ValueError("train split references a tag outside its own tag set")
    x_dev, y_dev, dev_where = matrices(dev)
    x_test, y_test, test_where = matrices(test)

    dev_gold = [TagSequence(s.sentence_id, s.tags) for s in dev]
    test_gold = [TagSequence(s.sentence_id, s.tags) for s in test]

    def dev_scorer(model):
        logp = probe.forward(model, x_dev)
        known = y_dev >= 0
        loss = -float(logp[np.arange(len(y_dev))[known], y_dev[known]].mean())
        if metric == "accuracy":
            return loss, float((logp.argmax(axis=1) == y_dev).mean())
        pred = _predict_tags(model, x_dev, dev_where, dev, labels)
        return loss, ner_span_f1(pred, dev_gold).f1

    result = probe.fit(
        x_train,
        y_train,
        config,
        num_classes=len(labels),
        mode=layer_mode,
        num_layers_total=store.header.num_layers_total,
        dev_scorer=dev_scorer,
    )

    test_report = None
    if metric == "accuracy":
        logp = probe.forward(result.model, x_test)
        test_metric = float((logp.argmax(axis=1) == y_test).mean())
    else:
        pred = _predict_tags(result.model, x_test, test_where, test, labels)
        test_report = ner_span_f1(pred, test_gold)
        test_metric = test_report.f1
    return TaggerRunResult(
        fit=result,
        test_metric=test_metric,
        metric_name=metric,
        labels=labels,
        test_report=test_report,
    )


# -- layer sweep -------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    model: str
    layer: int | str  # concrete layer index, or "mix"
    kinds: tuple[str, ...]  # named positions that collapsed onto this index
    pooling: str
    dev_metric: float
    test_metric: float
    chosen_epoch: int
    seed: int


@dataclass
class SweepJob:
    """One trained run per (model, layer, pooling) cell.

    ``kind`` selects the task: "probe" over a ProbingDataset, or "pos"/"ner"
    over tagged splits. ``layers`` lists named positions ("embedding",
    "first", "middle", "highest"), concrete indices, "mix", or the single
    entry "all" for a full per-layer curve.
    """

    kind: str
    stores: dict[str, Store]
    data: object
    layers: tuple = ("embedding", "first", "middle", "highest")
    poolings: tuple[str, ...] = ("first", "last")
    config: probe.TrainerConfig | None = None


def resolve_layers(layers: tuple, num_layers_total: int) -> list[tuple[int | str, tuple[str, ...]]]:
    """Map requested layer specs to concrete indices, deduplicating named
    positions that collapse onto the same index (small models)."""
    if tuple(layers) == ("all",):
        return [(i, ()) for i in range(num_layers_total)]
    resolved: dict[int | str, list[str]] = {}
    order: list[int | str] = []
    for spec in layers:
        if spec == "mix":
            idx: int | str = "mix"
            name = None
        elif isinstance(spec, int) or (isinstance(spec, str) and spec.isdigit()):
            idx = int(spec)
            if not 0 <= idx < num_layers_total:
                raise ValueError(f"layer index {idx} out of range [0,{num_layers_total})")
            name = None
        else:
            idx = layer_index_for(spec, num_layers_total)
            name = spec
        if idx not in resolved:
            resolved[idx] = []
            order.append(idx)
        if name:
            resolved[idx].append(name)
    return [(idx, tuple(resolved[idx])) for idx in order]


def _run_cell(args) -> SweepCell:
    job, model_name, layer, kinds, pooling = args
    config = job.config or probe.TrainerConfig()
    seed = derive_seed(config.seed, f"{model_name}:{layer}:{pooling}")
    cell_config = replace(config, seed=seed)
    store = job.stores[model_name]
    if job.kind == "probe":
        run = probe.train_probe(job.data, store, pooling=pooling, layer_mode=layer, config=cell_config)
        dev_metric = run.fit.best_dev_metric
        test_metric = run.test_accuracy
        chosen = run.fit.best_epoch
    elif job.kind in ("pos", "ner"):
        metric = "accuracy" if job.kind == "pos" else "span_f1"
        run = train_tagger(
            job.data, store, pooling=pooling, layer_mode=layer, config=cell_config, metric=metric
        )
        dev_metric = run.fit.best_dev_metric
        test_metric = run.test_metric
        chosen = run.fit.best_epoch
    else:
        raise ValueError(f"unknown sweep kind {job.kind!r}")
    return SweepCell(
        model=model_name,
        layer=layer,
        kinds=kinds,
        pooling=pooling,
        dev_metric=dev_metric,
        test_metric=test_metric,
        chosen_epoch=chosen,
        seed=seed,
    )


def layer_sweep(job: SweepJob, jobs: int = 1) -> list[SweepCell]:
    """Train every cell of the sweep; results are sorted by (model, layer,
    pooling) and independent of scheduling."""
    cells = []
    for model_name in sorted(job.stores):
        store = job.stores[model_name]
        for layer, kinds in resolve_layers(tuple(job.layers), store.header.num_layers_total):
            for pooling in job.poolings:
                cells.append((job, model_name, layer, kinds, pooling))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    return sorted(
        results, key=lambda c: (c.model, (1, 0) if c.layer == "mix" else (0, c.layer), c.pooling)
    )


def sweep_to_csv(cells: Sequence[SweepCell]) -> str:
    lines = ["model,layer,kinds,pooling,dev_metric,test_metric,chosen_epoch"]
    for c in cells:
        kinds = ";".join(c.kinds)
        lines.append(
            f"{c.model},{c.layer},{kinds},{c.pooling},{c.dev_metric:.6f},"
            f"{c.test_metric:.6f},{c.chosen_epoch}"
        )
    return "\n".join(lines) + "\n"


def sweep_to_dicts(cells: Sequence[SweepCell]) -> list[dict]:
    return [
        {
            "model": c.model,
            "layer": c.layer,
            "kinds": list(c.kinds),
            "pooling": c.pooling,
            "dev_metric": c.dev_metric,
            "test_metric": c.test_metric,
            "chosen_epoch": c.chosen_epoch,
            "seed": c.seed,
        }
        for c in cells
    ]
