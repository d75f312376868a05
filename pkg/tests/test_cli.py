import json
import random

import numpy as np
import pytest

from conftest import build_record, build_store
from morphprobe.cli import main
from morphprobe.store import save_store
from test_probe_dataset import synth_corpus


def run(argv, capsys=None):
    code = main(argv)
    return code


@pytest.fixture
def vocab_file(tmp_path):
    path = tmp_path / "vocab.txt"
    pieces = ["[UNK]", "[CLS]", "[SEP]", "[PAD]", "a", "b", "ab", "##a", "##b", "##ab"]
    path.write_text("\n".join(pieces) + "\n", encoding="utf-8")
    return path


def write_synthetic_store(path, n_sentences, layers, hidden, words_per_sentence=3, seed=0):
    rng = np.random.default_rng(seed)
    records = []
    for sid in range(n_sentences):
        pieces = [int(rng.integers(1, 3)) for _ in range(words_per_sentence)]
        records.append(
            build_record(
                sid, pieces, layers, hidden, lambda wi, li: rng.standard_normal(hidden)
            )
        )
    store = build_store(records, layers, hidden, name="synthetic")
    save_store(path, store.header, store.records)
    return store


class TestTokenize:
    def test_tsv_output(self, tmp_path, vocab_file):
        corpus = tmp_path / "corpus.txt"
        corpus.write_text("ab ba\naa\n", encoding="utf-8")
        out = tmp_path / "out" / "segments.tsv"
        assert run(["tokenize", "--vocab", str(vocab_file), "--input", str(corpus), "--out", str(out)]) == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "ab\tab"
        assert lines[1] == "ba\tb ##a"
        assert lines[2] == "aa\ta ##a"
        manifest = json.loads((out.parent / "manifest.json").read_text())
        assert manifest["workflow"] == "tokenize"
        assert str(vocab_file) in manifest["inputs"]

    def test_missing_input_fails_without_artifacts(self, tmp_path, vocab_file, capsys):
        out = tmp_path / "result" / "x.tsv"
        code = run(
            ["tokenize", "--vocab", str(vocab_file), "--input", str(tmp_path / "nope.txt"), "--out", str(out)]
        )
        assert code == 2
        err = json.loads(capsys.readouterr().err)
        assert "missing input" in err["error"]
        assert not out.parent.exists()


class TestTokstats:
    def write_inputs(self, tmp_path):
        seg = tmp_path / "toy.tsv"
        seg.write_text("ab\t3\ta ##b\nc\t1\tc\n", encoding="utf-8")
        gold = tmp_path / "gold.tsv"
        gold.write_text("ab\ta b\nc\tc\n", encoding="utf-8")
        return seg, gold

    def test_report_and_profile(self, tmp_path):
        seg, gold = self.write_inputs(tmp_path)
        out = tmp_path / "stats"
        code = run(
            ["tokstats", "--segments", str(seg), "--gold", str(gold), "--out", str(out), "--buckets", "2"]
        )
        assert code == 0
        table = (out / "report.txt").read_text()
        assert "Entropy of first piece (bits)" in table and "toy" in table
        payload = json.loads((out / "report.json").read_text())
        assert payload["toy"]["pct_multi_piece"] == 0.75
        assert payload["toy"]["agreement_full"] == 1.0
        profile = (out / "profile_toy.csv").read_text().splitlines()
        assert profile[0] == "bucket,piece_count,tokens"

    def test_idempotent_reruns(self, tmp_path):
        seg, gold = self.write_inputs(tmp_path)
        out = tmp_path / "stats"
        names = ("report.txt", "report.json", "profile_toy.csv", "manifest.json")
        argv = ["tokstats", "--segments", str(seg), "--gold", str(gold), "--out", str(out)]
        assert run(argv) == 0
        first = {name: (out / name).read_bytes() for name in names}
        assert run(argv) == 0
        for name in names:
            assert (out / name).read_bytes() == first[name]
        # metric files are also location-independent
        other = tmp_path / "elsewhere"
        argv2 = ["tokstats", "--segments", str(seg), "--gold", str(gold), "--out", str(other)]
        assert run(argv2) == 0
        for name in names[:-1]:
            assert (other / name).read_bytes() == first[name]


class TestGenprobe:
    def test_generates_dataset_dir(self, tmp_path):
        rng = random.Random(0)
        conllu = tmp_path / "corpus.conllu"
        conllu.write_text(synth_corpus(rng, 2600, ["Acc", "Nom"], 2000), encoding="utf-8")
        out = tmp_path / "ds"
        code = run(
            [
                "genprobe", "--conllu", str(conllu), "--task", "Case:NOUN",
                "--train", "300", "--dev", "30", "--test", "90", "--seed", "5",
                "--out", str(out),
            ]
        )
        assert code == 0
        manifest = json.loads((out / "dataset.json").read_text())
        assert manifest["sizes"] == {"train": 300, "dev": 30, "test": 90}
        assert len((out / "train.tsv").read_text().splitlines()) == 300


class TestExtractCheck:
    def test_valid_store(self, tmp_path, capsys):
        path = tmp_path / "s.embs"
        write_synthetic_store(path, 3, layers=2, hidden=4)
        assert run(["extract-check", "--store", str(path)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["valid"] is True
        assert payload["num_layers_total"] == 2

    def test_corrupt_store_rejected(self, tmp_path, capsys):
        path = tmp_path / "bad.embs"
        write_synthetic_store(path, 1, layers=2, hidden=4)
        data = bytearray(path.read_bytes())
        data[0] = 0x58
        path.write_bytes(bytes(data))
        assert run(["extract-check", "--store", str(path)]) == 2
        err = json.loads(capsys.readouterr().err)
        assert "magic" in err["error"]


def make_probe_data(tmp_path, store_path, n_train=60, n_dev=20, n_test=20, layers=3, hidden=6):
    """Dataset dir + store whose class signal is coordinate 0 of the vector."""
    rng = np.random.default_rng(1)
    total = n_train + n_dev + n_test
    records = []
    rows = {"train": [], "dev": [], "test": []}
    split_of = ["train"] * n_train + ["dev"] * n_dev + ["test"] * n_test
    for sid in range(total):
        label = "Pos" if sid % 2 else "Neg"
        sign = 1.0 if label == "Pos" else -1.0

        def fill(wi, li, sign=sign):
            vec = rng.standard_normal(hidden) * 0.3
            if wi == 1:
                vec[0] = 3.0 * sign
            return vec

        records.append(build_record(sid, [1, 2, 1], layers, hidden, fill))
        # forms kept disjoint across splits by numbering
        form = f"w{sid}"
        rows[split_of[sid]].append(f"{sid}\t1\t{label}\tleft {form} right")
    store = build_store(records, layers, hidden)
    save_store(store_path, store.header, store.records)
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    for name, lines in rows.items():
        (data_dir / f"{name}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest = {
        "task": {"name": "Case:NOUN", "upos": "NOUN", "feature_key": "Case",
                 "label_set": ["Neg", "Pos"]},
        "sizes": {"train": n_train, "dev": n_dev, "test": n_test},
        "seed": 0,
        "dropped_labels": [],
    }
    (data_dir / "dataset.json").write_text(json.dumps(manifest), encoding="utf-8")
    return data_dir


class TestProbeTrain:
    def test_trains_and_writes_json(self, tmp_path):
        store_path = tmp_path / "s.embs"
        data_dir = make_probe_data(tmp_path, store_path)
        out = tmp_path / "result.json"
        code = run(
            [
                "probe", "train", "--data", str(data_dir), "--store", str(store_path),
                "--pool", "last", "--layer", "1", "--seed", "3", "--out", str(out),
            ]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["test_accuracy"] >= 0.95
        assert payload["chosen_epoch"] >= 1
        assert payload["mix_weights"] is None

    def test_mix_layer_flag(self, tmp_path):
        store_path = tmp_path / "s.embs"
        data_dir = make_probe_data(tmp_path, store_path)
        out = tmp_path / "result.json"
        code = run(
            [
                "probe", "train", "--data", str(data_dir), "--store", str(store_path),
                "--layer", "mix", "--seed", "3", "--out", str(out),
            ]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert len(payload["mix_weights"]) == 3
        assert sum(payload["mix_weights"]) == pytest.approx(1.0, abs=1e-6)


def write_tagging_files(tmp_path, store_path, kind="pos"):
    rng = np.random.default_rng(2)
    tags = ["N", "V"] if kind == "pos" else ["O", "B-PER"]
    records, lines = [], {"train": [], "dev": [], "test": []}
    boundaries = [("train", 0, 50), ("dev", 50, 65), ("test", 65, 80)]
    for sid in range(80):
        n_words = 3
        word_tags = [tags[int(rng.integers(0, 2))] for _ in range(n_words)]

        def fill(wi, li, word_tags=word_tags):
            vec = rng.standard_normal(4) * 0.2
            vec[tags.index(word_tags[wi])] += 3.0
            return vec

        records.append(build_record(sid, [1] * n_words, 2, 4, fill))
        split = next(name for name, lo, hi in boundaries if lo <= sid < hi)
        if kind == "pos":
            body = "\n".join(
                f"{i+1}\tw{sid}_{i}\t_\t{t}\t_\t_\t0\troot\t_\t_"
                for i, t in enumerate(word_tags)
            )
        else:
            body = "\n".join(f"w{sid}_{i}\t{t}" for i, t in enumerate(word_tags))
        lines[split].append(body)
    store = build_store(records, 2, 4)
    save_store(store_path, store.header, store.records)
    paths = {}
    for name, chunks in lines.items():
        path = tmp_path / f"{name}.{kind}"
        path.write_text("\n\n".join(chunks) + "\n", encoding="utf-8")
        paths[name] = path
    return paths


class TestTagTrain:
    def test_pos_training(self, tmp_path):
        store_path = tmp_path / "s.embs"
        paths = write_tagging_files(tmp_path, store_path, "pos")
        out = tmp_path / "tag.json"
        code = run(
            [
                "tag", "train", "--kind", "pos",
                "--train", str(paths["train"]), "--dev", str(paths["dev"]),
                "--test", str(paths["test"]), "--store", str(store_path),
                "--layer", "1", "--seed", "0", "--out", str(out),
            ]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["metric"] == "accuracy"
        assert payload["test_metric"] >= 0.9


class TestSweep:
    def test_two_model_sweep_row_count(self, tmp_path):
        store_a = tmp_path / "a.embs"
        store_b = tmp_path / "b.embs"
        paths = write_tagging_files(tmp_path, store_a, "pos")
        # second model: same corpus shape, different store (5 layers)
        rng = np.random.default_rng(3)
        records = []
        for sid in range(80):
            records.append(
                build_record(sid, [1, 1, 1], 5, 4, lambda wi, li: rng.standard_normal(4))
            )
        sb = build_store(records, 5, 4, name="other")
        save_store(store_b, sb.header, sb.records)
        out = tmp_path / "sweep"
        code = run(
            [
                "sweep", "--kind", "pos",
                "--train", str(paths["train"]), "--dev", str(paths["dev"]),
                "--test", str(paths["test"]),
                "--stores", f"modelA={store_a}", f"modelB={store_b}",
                "--layers", "embedding", "first", "middle", "highest",
                "--pool", "first", "last",
                "--seed", "1", "--out", str(out),
            ]
        )
        assert code == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        # modelA has 2 layers (4 kinds collapse to 2) and modelB 5 (4 distinct):
        # (2 + 4) layers x 2 poolings
        assert len(lines) == 1 + (2 + 4) * 2
        payload = json.loads((out / "sweep.json").read_text())
        assert {row["model"] for row in payload} == {"modelA", "modelB"}

    def test_sweep_idempotent(self, tmp_path):
        store_a = tmp_path / "a.embs"
        paths = write_tagging_files(tmp_path, store_a, "pos")
        outs = [tmp_path / "r1", tmp_path / "r2"]
        for out in outs:
            code = run(
                [
                    "sweep", "--kind", "pos",
                    "--train", str(paths["train"]), "--dev", str(paths["dev"]),
                    "--test", str(paths["test"]), "--stores", f"m={store_a}",
                    "--layers", "embedding", "highest", "--pool", "last",
                    "--seed", "1", "--out", str(out),
                ]
            )
            assert code == 0
        assert (outs[0] / "sweep.csv").read_bytes() == (outs[1] / "sweep.csv").read_bytes()
        assert (outs[0] / "sweep.json").read_bytes() == (outs[1] / "sweep.json").read_bytes()


class TestConfigFile:
    def test_flags_override_config(self, tmp_path, vocab_file):
        corpus = tmp_path / "c.txt"
        corpus.write_text("ab\n", encoding="utf-8")
        config = tmp_path / "run.cfg"
        config.write_text(
            f"vocab = {vocab_file}\ninput = {corpus}\nout = {tmp_path/'from_config.tsv'}\n",
            encoding="utf-8",
        )
        # config supplies everything
        assert run(["tokenize", "--config", str(config)]) == 0
        assert (tmp_path / "from_config.tsv").exists()
        # explicit flag wins over the config value
        out2 = tmp_path / "flag_wins.tsv"
        assert run(["tokenize", "--config", str(config), "--out", str(out2)]) == 0
        assert out2.exists()


class TestReport:
    def test_combines_sweep_and_single_runs(self, tmp_path):
        sweep_json = tmp_path / "sweep.json"
        sweep_json.write_text(
            json.dumps(
                [
                    {"model": "a", "layer": 0, "kinds": [], "pooling": "last",
                     "dev_metric": 0.5, "test_metric": 0.6, "chosen_epoch": 3, "seed": 1}
                ]
            ),
            encoding="utf-8",
        )
        single = tmp_path / "probe_run.json"
        single.write_text(
            json.dumps({"dev_accuracy": 0.9, "test_accuracy": 0.8, "chosen_epoch": 2}),
            encoding="utf-8",
        )
        out = tmp_path / "combined"
        assert run(["report", "--inputs", str(sweep_json), str(single), "--out", str(out)]) == 0
        lines = (out / "combined.csv").read_text().splitlines()
        assert lines[0] == "model,layer,pooling,dev_metric,test_metric,chosen_epoch"
        assert len(lines) == 3
