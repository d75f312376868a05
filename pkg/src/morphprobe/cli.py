"""Command-line entry point wiring corpora, vocabularies, stores and configs
into the workflows: tokenization, tokenizer statistics, probing-dataset
generation, store validation, probe/tagger training, layer sweeps and report
assembly.

Every workflow validates its inputs before writing anything, emits a manifest
recording the resolved config, a config hash, input digests and the artifact
list, and never consults wall-clock time or ambient randomness, so reruns of
an unchanged config are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from morphprobe import probe, probe_dataset, sequence_eval, tokenizer, tokstats
from morphprobe import store as store_mod
from morphprobe.utils import canonical_json, sha256_file, sha256_text


class CliError(ValueError):
    """Validation failure; rendered as a machine-readable error report."""


def _fail(workflow: str, message: str) -> int:
    report = {"workflow": workflow, "error": message}
    print(json.dumps(report, ensure_ascii=False), file=sys.stderr)
    return 2


def _require_files(workflow: str, paths: list[str]):
    missing = [p for p in paths if not Path(p).exists()]
    if missing:
        raise CliError(f"missing input path(s): {', '.join(missing)}")


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True) + "\n"


def _write_manifest(out_dir: Path, workflow: str, config: dict, inputs: list[str], artifacts: list[str]):
    manifest = {
        "workflow": workflow,
        "config": config,
        "config_hash": sha256_text(canonical_json(config)),
        "inputs": {p: sha256_file(p) for p in sorted(inputs)},
        "artifacts": sorted(artifacts),
    }
    (out_dir / "manifest.json").write_text(_json_text(manifest), encoding="utf-8")


def load_config_file(path: str) -> dict[str, str]:
    """Key-value config mirroring the CLI flags: one ``key = value`` per
    line, ``#`` comments. Explicit flags override file values."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    """Resolve option values: explicit flag > config file > built-in default."""
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_values:
            resolved[key] = _coerce(file_values[key], default)
        else:
            resolved[key] = default
    return resolved


def _coerce(text: str, default):
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, (list, tuple)):
        return [item.strip() for item in text.split(",") if item.strip()]
    return text


# -- workflows ---------------------------------------------------------------


def cmd_tokenize(args) -> int:
    cfg = _merge_config(
        args,
        {"vocab": None, "input": None, "out": None, "prefix": tokenizer.DEFAULT_CONTINUATION_PREFIX},
    )
    for key in ("vocab", "input", "out"):
        if not cfg[key]:
            raise CliError(f"tokenize: --{key} is required")
    _require_files("tokenize", [cfg["vocab"], cfg["input"]])
    with open(cfg["vocab"], encoding="utf-8") as fh:
        vocab = tokenizer.load_vocabulary(fh, continuation_prefix=cfg["prefix"])
    lines = []
    with open(cfg["input"], encoding="utf-8") as fh:
        for raw in fh:
            for word in raw.split():
                seg = tokenizer.tokenize_word(vocab, word)
                lines.append(f"{word}\t{' '.join(seg.pieces)}\n")
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(lines), encoding="utf-8")
    manifest_dir = out.parent
    _write_manifest(manifest_dir, "tokenize", cfg, [cfg["vocab"], cfg["input"]], [out.name])
    return 0


def cmd_tokstats(args) -> int:
    cfg = _merge_config(
        args,
        {
            "segments": [],
            "gold": None,
            "out": None,
            "prefix": tokenizer.DEFAULT_CONTINUATION_PREFIX,
            "unk": tokstats.DEFAULT_UNK,
            "buckets": 20,
        },
    )
    if not cfg["segments"]:
        raise CliError("tokstats: at least one --segments file is required")
    if not cfg["out"]:
        raise CliError("tokstats: --out is required")
    inputs = list(cfg["segments"]) + ([cfg["gold"]] if cfg["gold"] else [])
    _require_files("tokstats", inputs)

    gold = None
    if cfg["gold"]:
        with open(cfg["gold"], encoding="utf-8") as fh:
            gold = tokstats.load_morph_gold(fh)

    reports = {}
    profiles = {}
    for path in cfg["segments"]:
        name = Path(path).stem
        with open(path, encoding="utf-8") as fh:
            corpus = tokstats.load_segmented_corpus(fh, cfg["prefix"], cfg["unk"])
        reports[name] = tokstats.compute_report(corpus, gold)
        profiles[name] = tokstats.rank_length_profile(corpus, cfg["buckets"])

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    (out_dir / "report.txt").write_text(tokstats.render_report_table(reports), encoding="utf-8")
    artifacts.append("report.txt")
    json_payload = {name: tokstats.report_to_dict(rep) for name, rep in reports.items()}
    (out_dir / "report.json").write_text(_json_text(json_payload), encoding="utf-8")
    artifacts.append("report.json")
    for name, rows in profiles.items():
        fname = f"profile_{name}.csv"
        (out_dir / fname).write_text(tokstats.profile_to_csv(rows), encoding="utf-8")
        artifacts.append(fname)
    _write_manifest(out_dir, "tokstats", cfg, inputs, artifacts)
    return 0


def cmd_genprobe(args) -> int:
    cfg = _merge_config(
        args,
        {
            "conllu": None,
            "task": None,
            "train": 2000,
            "dev": 200,
            "test": 2000,
            "seed": 0,
            "cap": probe_dataset.DEFAULT_IMBALANCE_CAP,
            "out": None,
        },
    )
    for key in ("conllu", "task", "out"):
        if not cfg[key]:
            raise CliError(f"genprobe: --{key} is required")
    _require_files("genprobe", [cfg["conllu"]])
    with open(cfg["conllu"], encoding="utf-8") as fh:
        dataset = probe_dataset.generate_dataset(
            fh,
            cfg["task"],
            sizes=(cfg["train"], cfg["dev"], cfg["test"]),
            imbalance_cap=cfg["cap"],
            seed=cfg["seed"],
        )
    out_dir = Path(cfg["out"])
    artifacts = probe_dataset.write_dataset(dataset, out_dir)
    _write_manifest(out_dir, "genprobe", cfg, [cfg["conllu"]], artifacts)
    return 0


def cmd_extract_check(args) -> int:
    cfg = _merge_config(args, {"store": None})
    if not cfg["store"]:
        raise CliError("extract-check: --store is required")
    _require_files("extract-check", [cfg["store"]])
    header = store_mod.validate_store(cfg["store"])
    print(
        json.dumps(
            {
                "model_name": header.model_name,
                "num_layers_total": header.num_layers_total,
                "hidden": header.hidden,
                "num_sentences": header.num_sentences,
                "valid": True,
            },
            ensure_ascii=False,
        )
    )
    return 0


def _parse_layer(text: str):
    return "mix" if text == "mix" else int(text)


def cmd_probe_train(args) -> int:
    cfg = _merge_config(
        args,
        {
            "data": None,
            "store": None,
            "pool": "last",
            "layer": "mix",
            "seed": 0,
            "out": None,
        },
    )
    for key in ("data", "store", "out"):
        if not cfg[key]:
            raise CliError(f"probe train: --{key} is required")
    data_dir = Path(cfg["data"])
    inputs = [str(data_dir / f"{name}.tsv") for name in probe_dataset.SPLIT_NAMES]
    inputs.append(str(data_dir / "dataset.json"))
    inputs.append(cfg["store"])
    _require_files("probe train", inputs)
    dataset = probe_dataset.load_dataset(data_dir)
    store = store_mod.load_store(cfg["store"])
    config = probe.TrainerConfig(seed=cfg["seed"])
    result = probe.train_probe(
        dataset,
        store,
        pooling=cfg["pool"],
        layer_mode=_parse_layer(str(cfg["layer"])),
        config=config,
    )
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(_json_text(result.to_dict()), encoding="utf-8")
    _write_manifest(out.parent, "probe-train", cfg, inputs, [out.name])
    return 0


def cmd_tag_train(args) -> int:
    cfg = _merge_config(
        args,
        {
            "kind": "pos",
            "train": None,
            "dev": None,
            "test": None,
            "store": None,
            "pool": "last",
            "layer": "mix",
            "seed": 0,
            "out": None,
        },
    )
    for key in ("train", "dev", "test", "store", "out"):
        if not cfg[key]:
            raise CliError(f"tag train: --{key} is required")
    if cfg["kind"] not in ("pos", "ner"):
        raise CliError(f"tag train: --kind must be pos or ner, got {cfg['kind']!r}")
    inputs = [cfg["train"], cfg["dev"], cfg["test"], cfg["store"]]
    _require_files("tag train", inputs)
    loader = sequence_eval.load_pos_corpus if cfg["kind"] == "pos" else sequence_eval.load_bio_corpus
    splits = {}
    offset = 0
    for name in ("train", "dev", "test"):
        with open(cfg[name], encoding="utf-8") as fh:
            sentences = loader(fh)
        splits[name] = [
            sequence_eval.TaggedSentence(s.sentence_id + offset, s.words, s.tags)
            for s in sentences
        ]
        offset += len(sentences)
    store = store_mod.load_store(cfg["store"])
    config = probe.TrainerConfig(seed=cfg["seed"])
    metric = "accuracy" if cfg["kind"] == "pos" else "span_f1"
    result = sequence_eval.train_tagger(
        splits,
        store,
        pooling=cfg["pool"],
        layer_mode=_parse_layer(str(cfg["layer"])),
        config=config,
        metric=metric,
    )
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(_json_text(result.to_dict()), encoding="utf-8")
    _write_manifest(out.parent, "tag-train", cfg, inputs, [out.name])
    return 0


def cmd_sweep(args) -> int:
    cfg = _merge_config(
        args,
        {
            "kind": "probe",
            "data": None,
            "train": None,
            "dev": None,
            "test": None,
            "stores": [],
            "layers": ["embedding", "first", "middle", "highest"],
            "pool": ["first", "last"],
            "seed": 0,
            "jobs": 1,
            "out": None,
        },
    )
    if not cfg["stores"]:
        raise CliError("sweep: at least one --stores NAME=FILE is required")
    if not cfg["out"]:
        raise CliError("sweep: --out is required")
    store_paths = {}
    for item in cfg["stores"]:
        name, _, path = item.partition("=")
        if not path:
            raise CliError(f"sweep: bad --stores entry {item!r}, expected NAME=FILE")
        store_paths[name] = path
    inputs = list(store_paths.values())

    if cfg["kind"] == "probe":
        if not cfg["data"]:
            raise CliError("sweep: --data is required for probe sweeps")
        data_dir = Path(cfg["data"])
        inputs.extend(str(data_dir / f"{n}.tsv") for n in probe_dataset.SPLIT_NAMES)
        inputs.append(str(data_dir / "dataset.json"))
        _require_files("sweep", inputs)
        data = probe_dataset.load_dataset(data_dir)
    elif cfg["kind"] in ("pos", "ner"):
        for key in ("train", "dev", "test"):
            if not cfg[key]:
                raise CliError(f"sweep: --{key} is required for {cfg['kind']} sweeps")
        inputs.extend([cfg["train"], cfg["dev"], cfg["test"]])
        _require_files("sweep", inputs)
        loader = sequence_eval.load_pos_corpus if cfg["kind"] == "pos" else sequence_eval.load_bio_corpus
        data = {}
        offset = 0
        for name in ("train", "dev", "test"):
            with open(cfg[name], encoding="utf-8") as fh:
                sentences = loader(fh)
            data[name] = [
                sequence_eval.TaggedSentence(s.sentence_id + offset, s.words, s.tags)
                for s in sentences
            ]
            offset += len(sentences)
    else:
        raise CliError(f"sweep: unknown kind {cfg['kind']!r}")

    stores = {name: store_mod.load_store(path) for name, path in store_paths.items()}
    job = sequence_eval.SweepJob(
        kind=cfg["kind"],
        stores=stores,
        data=data,
        layers=tuple(cfg["layers"]),
        poolings=tuple(cfg["pool"]),
        config=probe.TrainerConfig(seed=cfg["seed"]),
    )
    cells = sequence_eval.layer_sweep(job, jobs=cfg["jobs"])

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.csv").write_text(sequence_eval.sweep_to_csv(cells), encoding="utf-8")
    (out_dir / "sweep.json").write_text(
        _json_text(sequence_eval.sweep_to_dicts(cells)), encoding="utf-8"
    )
    _write_manifest(out_dir, "sweep", cfg, inputs, ["sweep.csv", "sweep.json"])
    return 0


def cmd_report(args) -> int:
    cfg = _merge_config(args, {"inputs": [], "out": None})
    if not cfg["inputs"] or not cfg["out"]:
        raise CliError("report: --inputs and --out are required")
    _require_files("report", cfg["inputs"])
    rows = []
    for path in cfg["inputs"]:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(payload, list):  # sweep.json
            rows.extend(payload)
        else:  # single training result
            rows.append(
                {
                    "model": Path(path).stem,
                    "layer": "",
                    "kinds": [],
                    "pooling": "",
                    "dev_metric": payload.get("dev_metric", payload.get("dev_accuracy")),
                    "test_metric": payload.get("test_metric", payload.get("test_accuracy")),
                    "chosen_epoch": payload.get("chosen_epoch"),
                }
            )
    rows.sort(key=lambda r: (str(r.get("model")), str(r.get("layer")), str(r.get("pooling"))))
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["model,layer,pooling,dev_metric,test_metric,chosen_epoch"]
    for r in rows:
        lines.append(
            f"{r.get('model')},{r.get('layer')},{r.get('pooling')},"
            f"{r.get('dev_metric')},{r.get('test_metric')},{r.get('chosen_epoch')}"
        )
    (out_dir / "combined.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(out_dir, "report", cfg, cfg["inputs"], ["combined.csv"])
    return 0


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphprobe",
        description="Subword tokenization analysis and layerwise probing toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="key-value config file; flags override it")

    p = sub.add_parser("tokenize", help="segment a corpus with a vocabulary file")
    p.add_argument("--vocab")
    p.add_argument("--input")
    p.add_argument("--out")
    p.add_argument("--prefix")
    add_config(p)
    p.set_defaults(func=cmd_tokenize, workflow="tokenize")

    p = sub.add_parser("tokstats", help="corpus measures over segmented words")
    p.add_argument("--segments", nargs="+")
    p.add_argument("--gold")
    p.add_argument("--out")
    p.add_argument("--prefix")
    p.add_argument("--unk")
    p.add_argument("--buckets", type=int)
    add_config(p)
    p.set_defaults(func=cmd_tokstats, workflow="tokstats")

    p = sub.add_parser("genprobe", help="generate a morphological probing dataset")
    p.add_argument("--conllu")
    p.add_argument("--task", help="FEATURE:UPOS, e.g. Case:NOUN")
    p.add_argument("--train", type=int)
    p.add_argument("--dev", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--cap", type=int)
    p.add_argument("--out")
    add_config(p)
    p.set_defaults(func=cmd_genprobe, workflow="genprobe")

    p = sub.add_parser("extract-check", help="validate an embedding store file")
    p.add_argument("--store")
    add_config(p)
    p.set_defaults(func=cmd_extract_check, workflow="extract-check")

    p = sub.add_parser("probe", help="probe workflows")
    probe_sub = p.add_subparsers(dest="subcommand", required=True)
    pt = probe_sub.add_parser("train", help="train a probing classifier")
    pt.add_argument("--data")
    pt.add_argument("--store")
    pt.add_argument("--pool", choices=store_mod.POOLING_STRATEGIES)
    pt.add_argument("--layer", help="layer index or 'mix'")
    pt.add_argument("--seed", type=int)
    pt.add_argument("--out")
    add_config(pt)
    pt.set_defaults(func=cmd_probe_train, workflow="probe-train")

    p = sub.add_parser("tag", help="tagging workflows")
    tag_sub = p.add_subparsers(dest="subcommand", required=True)
    tt = tag_sub.add_parser("train", help="train a shared token tagger")
    tt.add_argument("--kind", choices=("pos", "ner"))
    tt.add_argument("--train")
    tt.add_argument("--dev")
    tt.add_argument("--test")
    tt.add_argument("--store")
    tt.add_argument("--pool", choices=store_mod.POOLING_STRATEGIES)
    tt.add_argument("--layer", help="layer index or 'mix'")
    tt.add_argument("--seed", type=int)
    tt.add_argument("--out")
    add_config(tt)
    tt.set_defaults(func=cmd_tag_train, workflow="tag-train")

    p = sub.add_parser("sweep", help="train one run per (model, layer, pooling) cell")
    p.add_argument("--kind", choices=("probe", "pos", "ner"))
    p.add_argument("--data")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--test")
    p.add_argument("--stores", nargs="+", metavar="NAME=FILE")
    p.add_argument("--layers", nargs="+", help="named positions, indices, 'mix', or 'all'")
    p.add_argument("--pool", nargs="+", choices=store_mod.POOLING_STRATEGIES)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    add_config(p)
    p.set_defaults(func=cmd_sweep, workflow="sweep")

    p = sub.add_parser("report", help="combine training/sweep results into one table")
    p.add_argument("--inputs", nargs="+")
    p.add_argument("--out")
    add_config(p)
    p.set_defaults(func=cmd_report, workflow="report")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    workflow = getattr(args, "workflow", args.command)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, KeyError) as err:
        return _fail(workflow, str(err))


if __name__ == "__main__":
    sys.exit(main())
