import json

import pytest

from mkpnet.cli import main
from mkpnet.config import ConfigError, RunConfig, parse_config
from mkpnet.data import read_corpus

TINY_RUN = {
    "model": {"d": 8, "n_layers": 1, "n_heads": 2, "max_len": 24, "d_z": 4, "d_label": 4, "d_c": 4},
    "trainer": {"epochs": 1, "batch_size": 32, "seed": 3},
    "data": {"synth": {"n_train": 60, "n_dev": 30, "n_test": 30, "seed": 2, "noise": 0.0}},
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(TINY_RUN))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "c.json").write_text(json.dumps(TINY_RUN))
    assert main(["gen-data", "--config", str(root / "c.json"), "--out", str(root / "d")]) == 0
    assert main(["train", "--config", str(root / "c.json"), "--data", str(root / "d"), "--out", str(root / "m")]) == 0
    return root


class TestConfig:
    def test_defaults_materialised(self):
        d = parse_config({}).to_dict()
        assert d["trainer"]["alpha"] == 0.9 and d["model"]["d"] == 64 and d["enrich"]["core"] == 3.0

    @pytest.mark.parametrize("doc", [{"modle": {}}, {"trainer": {"alpah": 1}}, {"data": {"synth": {"n": 3}}},
                                     {"trainer": {"alpha": 2}}])
    def test_rejects(self, doc):
        with pytest.raises(ConfigError):
            parse_config(doc)

    def test_roundtrip(self):
        cfg = parse_config(TINY_RUN)
        assert parse_config(json.loads(cfg.dumps())) == cfg
        assert isinstance(cfg, RunConfig)


class TestExitCodes:
    def test_usage(self, capsys):
        assert main([]) == 1
        assert main(["bogus"]) == 1
        assert main(["train", "--out", "x"]) == 1          # --config missing
        assert "required" in capsys.readouterr().err

    def test_data_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"model": {"dd": 1}}')
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert main(["train", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2

    def test_numeric_failure(self, cfg_path, tmp_path):
        doc = json.loads(cfg_path.read_text())
        doc["trainer"]["lr"] = 1e300
        cfg_path.write_text(json.dumps(doc))
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 3


class TestCommands:
    def test_gen_data_byte_identical(self, tmp_path, capsys):
        for d in ("a", "b"):
            assert main(["gen-data", "--seed", "7", "--n-train", "40", "--n-dev", "30", "--n-test", "30",
                         "--out", str(tmp_path / d)]) == 0
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert "manifest.json" in files and "ere_train.jsonl" in files and "config.resolved.json" in files
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert str(tmp_path / "a" / "manifest.json") in capsys.readouterr().out
        corpus, _ = read_corpus(tmp_path / "a")
        assert len(corpus["ERE"]["train"]) == 40

    def test_train_outputs(self, trained):
        names = {p.name for p in (trained / "m").iterdir()}
        assert {"params.json", "params.bin", "vocab.txt", "model.json", "train_log.jsonl",
                "config.resolved.json"} <= names
        resolved = json.loads((trained / "m" / "config.resolved.json").read_text())
        assert resolved["trainer"]["alpha"] == 0.9 and resolved["model"]["d"] == 8
        log = [json.loads(x) for x in (trained / "m" / "train_log.jsonl").read_text().splitlines()]
        assert {r["type"] for r in log} == {"step", "epoch"}

    def test_eval_and_oracle(self, trained, tmp_path):
        m, d = str(trained / "m"), str(trained / "d")
        assert main(["eval", "--model", m, "--data", d, "--out", str(tmp_path / "e")]) == 0
        assert main(["eval", "--model", m, "--data", d, "--oracle-coarse", "--out", str(tmp_path / "o")]) == 0
        row = (tmp_path / "o" / "report.tsv").read_text().splitlines()[1].split("\t")
        assert float(row[3]) == 1.0

    def test_predict(self, trained, tmp_path):
        out = tmp_path / "p"
        assert main(["predict", "--model", str(trained / "m"), "--input", str(trained / "d" / "drr_test.jsonl"),
                     "--task", "DRR", "--out", str(out)]) == 0
        lines = [json.loads(x) for x in (out / "predictions.jsonl").read_text().splitlines()]
        assert len(lines) == 30 and 0 < lines[0]["probability"] <= 1

    def test_enrich(self, trained, tmp_path):
        (tmp_path / "nodes.tsv").write_text("id\ttext\na\tper orders two hamburgers\nb\tper is so hungry\n"
                                            "c\tper goes to the restaurant\n")
        (tmp_path / "edges.tsv").write_text("event1\tevent2\trelation\tprobability\tfrequency\tconfidence\ttier"
                                            "\tsource\na\tb\tReason\t1.0\t4\t4.0\tcore\texplicit\n")
        (tmp_path / "cands.tsv").write_text("a\tc\t9\nc\tb\t5\na\tc\t1\n")
        args = ["enrich", "--model", str(trained / "m"), "--nodes", str(tmp_path / "nodes.tsv"),
                "--edges", str(tmp_path / "edges.tsv"), "--candidates", str(tmp_path / "cands.tsv")]
        assert main(args + ["--tier", "core", "--out", str(tmp_path / "o")]) == 0
        rows = (tmp_path / "o" / "edges.core.tsv").read_text().splitlines()
        assert rows[1].startswith("a\tb\tReason") and len(rows) >= 2
        (tmp_path / "bad.tsv").write_text("a\tzzz\t2\n")
        bad = args[:-1] + [str(tmp_path / "bad.tsv"), "--out", str(tmp_path / "x")]
        assert main(bad) == 2

    def test_oracle_without_coarse_is_rejected(self, tmp_path):
        doc = {**TINY_RUN, "ablation": {"use_coarse": False, "gold_coarse_at_test": True}}
        (tmp_path / "c.json").write_text(json.dumps(doc))
        assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2

    def test_ablate_seven_rows(self, trained, tmp_path):
        assert main(["ablate", "--config", str(trained / "c.json"), "--data", str(trained / "d"),
                     "--out", str(tmp_path / "r")]) == 0
        rows = [r.split("\t") for r in (tmp_path / "r" / "report.tsv").read_text().splitlines()]
        assert rows[0] == ["config", "acc", "f1", "coarse_acc", "coarse_f1", "delta_acc", "delta_f1"]
        names = [r[0] for r in rows[1:]]
        assert len(names) == 7 and names[-1] == "MKPNet w/o SA*"
        assert rows[names.index("MKPNet w/o KP") + 1][5] == "0.0000"
        assert float(rows[-1][3]) == 1.0
