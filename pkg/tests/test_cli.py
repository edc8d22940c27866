"""Command-line surface: wiring, exit codes, clobber protection, artifacts."""

import json
from pathlib import Path

import pytest

from sessrec.cli import main


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "corpus"
    code = main(["synth", "--n-items", "30", "--n-sessions", "200",
                 "--seed", "3", "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, corpus_dir):
    out = tmp_path_factory.mktemp("runs") / "run1"
    code = main(["train", "--corpus", str(corpus_dir), "--out", str(out),
                 "--d", "8", "--heads", "2", "--epochs", "1",
                 "--batch-size", "64", "--topk-sessions", "2",
                 "--beta", "0.5", "--seed", "5", "--max-position", "16"])
    assert code == 0
    return out


class TestSynthAndPreprocess:
    def test_synth_writes_corpus(self, corpus_dir):
        for name in ("vocabulary.txt", "train.txt", "test.txt", "stats.txt"):
            assert (corpus_dir / name).exists()

    def test_refuses_clobber_without_force(self, corpus_dir):
        code = main(["synth", "--n-items", "30", "--n-sessions", "200",
                     "--out", str(corpus_dir)])
        assert code == 2

    def test_force_overwrites_identically(self, corpus_dir):
        before = (corpus_dir / "train.txt").read_bytes()
        code = main(["synth", "--n-items", "30", "--n-sessions", "200",
                     "--seed", "3", "--out", str(corpus_dir), "--force"])
        assert code == 0
        assert (corpus_dir / "train.txt").read_bytes() == before

    def test_preprocess_raw_file(self, tmp_path):
        raw = tmp_path / "clicks.tsv"
        lines = []
        for s in range(30):
            for j in range(3):
                lines.append(f"s{s}\ti{(s + j) % 6}\t{s * 10 + j}\n")
        raw.write_text("".join(lines))
        out = tmp_path / "corpus"
        code = main(["preprocess", "--input", str(raw), "--out", str(out),
                     "--min-item-freq", "2", "--test-fraction", "0.2"])
        assert code == 0
        stats = dict(line.split("=") for line in
                     (out / "stats.txt").read_text().splitlines())
        assert int(stats["items"]) > 0
        assert int(stats["train_examples"]) > 0

    def test_preprocess_synthetic_flag(self, tmp_path):
        out = tmp_path / "corpus"
        code = main(["preprocess", "--synthetic", "--n-items", "20",
                     "--n-sessions", "150", "--out", str(out)])
        assert code == 0
        assert (out / "stats.txt").exists()

    def test_missing_input_is_io_error(self, tmp_path):
        code = main(["preprocess", "--input", str(tmp_path / "nope.tsv"),
                     "--out", str(tmp_path / "c")])
        assert code == 3

    def test_no_input_is_config_error(self, tmp_path):
        code = main(["preprocess", "--out", str(tmp_path / "c")])
        assert code == 2


class TestTrain:
    def test_run_dir_artifacts(self, run_dir):
        for name in ("config.txt", "runlog.jsonl", "best.npz", "last.npz",
                     "global_graph.txt"):
            assert (run_dir / name).exists()

    def test_refuses_clobber(self, corpus_dir, run_dir):
        code = main(["train", "--corpus", str(corpus_dir),
                     "--out", str(run_dir), "--epochs", "1"])
        assert code == 2

    def test_dataset_profile_applied(self, corpus_dir, tmp_path):
        out = tmp_path / "run"
        code = main(["train", "--corpus", str(corpus_dir), "--out", str(out),
                     "--dataset", "tmall", "--d", "8", "--epochs", "1",
                     "--batch-size", "64", "--max-position", "16"])
        assert code == 0
        config = dict(line.split(" = ") for line in
                      (out / "config.txt").read_text().splitlines())
        assert json.loads(config["topk_sessions"]) == 6
        assert json.loads(config["beta"]) == 0.05
        assert json.loads(config["heads"]) == 2

    def test_ablate_flag_forces_beta_zero(self, corpus_dir, tmp_path):
        out = tmp_path / "run"
        code = main(["train", "--corpus", str(corpus_dir), "--out", str(out),
                     "--d", "8", "--epochs", "1", "--batch-size", "64",
                     "--max-position", "16",
                     "--ablate", "no-contrastive"])
        assert code == 0
        header = json.loads(
            (out / "runlog.jsonl").read_text().splitlines()[0])
        assert header["config"]["beta"] == 0.0
        assert header["config"]["ablations"] == ["no-contrastive"]

    def test_conflicting_flags_fatal(self, corpus_dir, tmp_path):
        code = main(["train", "--corpus", str(corpus_dir),
                     "--out", str(tmp_path / "run"), "--beta", "2.0",
                     "--ablate", "no-contrastive"])
        assert code == 2

    def test_unknown_config_key_fatal(self, corpus_dir, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("no_such_knob = 3\n")
        code = main(["train", "--corpus", str(corpus_dir),
                     "--out", str(tmp_path / "run"), "--config", str(cfg)])
        assert code == 2

    def test_config_file_applies(self, corpus_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("d = 8\nepochs = 1\nbatch_size = 64\n"
                       "max_position = 16\nbeta = 0.25  # contrastive weight\n")
        out = tmp_path / "run"
        code = main(["train", "--corpus", str(corpus_dir), "--out", str(out),
                     "--config", str(cfg)])
        assert code == 0
        header = json.loads((out / "runlog.jsonl").read_text().splitlines()[0])
        assert header["config"]["beta"] == 0.25


class TestEvaluate:
    def test_metrics_and_baselines_and_attention(self, corpus_dir, run_dir):
        code = main(["evaluate", "--run", str(run_dir),
                     "--corpus", str(corpus_dir), "--baselines",
                     "--export-attention"])
        assert code == 0
        report = json.loads((run_dir / "metrics.json").read_text())
        assert 0 <= report["overall"]["M@20"] <= report["overall"]["P@20"] <= 100
        assert (run_dir / "metrics_popularity.json").exists()
        assert (run_dir / "metrics_markov.json").exists()
        attention = (run_dir / "attention.tsv").read_text().splitlines()
        assert attention[0].startswith("#")
        assert len(attention) > 1

    def test_report_aggregates_runs(self, run_dir, tmp_path):
        out = tmp_path / "report"
        code = main(["report", str(run_dir), "--out", str(out)])
        assert code == 0
        assert (out / "comparison.tsv").exists()
        assert (out / "comparison.txt").exists()
        assert (out / "metrics_bar.png").exists()
        assert (out / "short_long.png").exists()
        tsv = (out / "comparison.tsv").read_text().splitlines()
        assert tsv[0].split("\t")[:2] == ["model", "ablation"]
        assert len(tsv) >= 2
