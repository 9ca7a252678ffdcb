import csv

import pytest

from berm.cli import MANIFEST, git_hash, run
from berm.data import load_labeled_pairs
from berm.model import load_checkpoint, score_pairs
from berm.pipeline import make_encoder
from berm.train import TrainConfig
from berm.graph import BipartiteGraph
from berm.text import Vocabulary

TINY_WORLD = ["--n-categories", "2", "--queries-per-category", "4", "--test-queries-per-category", "2",
              "--items-per-category", "6", "--test-items-per-query", "4", "--seed", "5"]
TINY_MODEL = ["--d", "4", "--l-q", "3", "--l-i", "6", "--epochs", "2", "--batch-size", "8",
              "--min-count", "1", "--distill-epochs", "2"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run(["gen-data", "--out", str(out)] + TINY_WORLD) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run(["train", "--data", str(data_dir), "--out", str(out)] + TINY_MODEL) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestGenData:
    def test_files_and_manifest(self, data_dir):
        for name in ("behavior_log.tsv", "teacher_scores.tsv", "train_pairs.tsv", "test_pairs.tsv", MANIFEST):
            assert (data_dir / name).is_file()
        manifest = (data_dir / MANIFEST).read_text()
        assert "subcommand = gen-data" in manifest and "n_categories = 2" in manifest
        assert git_hash(data_dir / "train_pairs.tsv") in manifest

    def test_context_world_preset(self, tmp_path):
        assert run(["gen-data", "--world", "context", "--out", str(tmp_path)] + TINY_WORLD) == 0
        assert "click_noise = 0.3" in (tmp_path / MANIFEST).read_text()

    def test_git_hash_matches_git(self, tmp_path):
        (tmp_path / "x").write_bytes(b"hello\n")
        assert git_hash(tmp_path / "x") == "ce013625030ba8dba906f756967f9e9ca394464a"


class TestTrain:
    def test_outputs(self, run_dir):
        rows = read_csv(run_dir / "history.csv")
        assert [r["epoch"] for r in rows] == ["1", "2"]
        assert 0.0 <= float(rows[-1]["auc"]) <= 1.0
        assert load_checkpoint(run_dir / "berm.ckpt").config.d == 4

    def test_deterministic(self, data_dir, run_dir, tmp_path):
        assert run(["train", "--data", str(data_dir), "--out", str(tmp_path)] + TINY_MODEL) == 0
        for name in ("berm.ckpt", "history.csv", "graph.txt", "vocab.txt"):
            assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes()

    def test_prebuilt_graph(self, data_dir, run_dir, tmp_path):
        g = tmp_path / "g"
        assert run(["build-graph", "--data", str(data_dir), "--out", str(g), "--min-count", "1"]) == 0
        assert (g / "graph.txt").read_bytes() == (run_dir / "graph.txt").read_bytes()
        t = tmp_path / "t"
        assert run(["train", "--data", str(data_dir), "--graph", str(g / "graph.txt"), "--out", str(t)]
                   + TINY_MODEL) == 0
        assert (t / "berm.ckpt").read_bytes() == (run_dir / "berm.ckpt").read_bytes()

    def test_config_replay(self, data_dir, run_dir, tmp_path):
        assert run(["train", "--data", str(data_dir), "--out", str(tmp_path),
                    "--config", str(run_dir / MANIFEST)]) == 0
        assert (tmp_path / "berm.ckpt").read_bytes() == (run_dir / "berm.ckpt").read_bytes()

    def test_flag_beats_config(self, data_dir, run_dir, tmp_path):
        assert run(["train", "--data", str(data_dir), "--out", str(tmp_path),
                    "--config", str(run_dir / MANIFEST), "--epochs", "1"]) == 0
        assert len(read_csv(tmp_path / "history.csv")) == 1


class TestScoring:
    def test_eval_report(self, data_dir, run_dir, tmp_path):
        assert run(["eval", "--run", str(run_dir), "--data", str(data_dir), "--out", str(tmp_path)]) == 0
        (row,) = read_csv(tmp_path / "report.csv")
        n = int(row["tp"]) + int(row["fp"]) + int(row["tn"]) + int(row["fn"])
        assert n == int(row["n"]) == len(load_labeled_pairs(data_dir / "test_pairs.tsv"))
        assert "AUC" in (tmp_path / "report.txt").read_text()

    def test_predict_matches_in_process(self, data_dir, run_dir, tmp_path):
        assert run(["predict", "--run", str(run_dir), "--pairs", str(data_dir / "test_pairs.tsv"),
                    "--out", str(tmp_path)]) == 0
        lines = [ln.split("\t") for ln in (tmp_path / "predictions.tsv").read_text().splitlines()]
        pairs = [(q, i) for q, i, _ in lines]
        params = load_checkpoint(run_dir / "berm.ckpt")
        cfg = TrainConfig(d=4, l_q=3, l_i=6, min_count=1)
        enc = make_encoder(Vocabulary.load(run_dir / "vocab.txt"), BipartiteGraph.load(run_dir / "graph.txt"), cfg)
        expected = score_pairs(pairs, enc, params)
        assert [float(s) for _, _, s in lines] == expected.tolist()

    def test_distill_then_eval(self, data_dir, run_dir, tmp_path):
        d = tmp_path / "d"
        assert run(["distill", "--run", str(run_dir), "--data", str(data_dir), "--out", str(d)]) == 0
        e = tmp_path / "e"
        assert run(["eval", "--run", str(run_dir), "--data", str(data_dir), "--checkpoint",
                    str(d / "bermo.ckpt"), "--out", str(e)]) == 0
        assert "model_kind = bermo" in (e / MANIFEST).read_text()


class TestExperiments:
    def test_ablate(self, data_dir, tmp_path):
        assert run(["ablate", "--data", str(data_dir), "--out", str(tmp_path), "--seeds", "0,1"]
                   + TINY_MODEL[:-2] + ["--epochs", "1"]) == 0
        rows = read_csv(tmp_path / "report.csv")
        assert len(rows) == 7 and rows[-1]["variant"] == "macro+micro+metapath"
        assert "seeds = 0,1" in (tmp_path / MANIFEST).read_text()

    def test_sweep_grid(self, data_dir, tmp_path):
        assert run(["sweep", "--data", str(data_dir), "--out", str(tmp_path),
                    "--param", "alpha", "--values", "0.2,0.3,0.4,0.5",
                    "--param", "beta", "--values", "0.5,0.6,0.7,0.8"] + TINY_MODEL[:-2] + ["--epochs", "1"]) == 0
        rows = read_csv(tmp_path / "report.csv")
        assert len(rows) == 16
        assert {(r["alpha"], r["beta"]) for r in rows} == {(a, b) for a in ("0.2", "0.3", "0.4", "0.5")
                                                           for b in ("0.5", "0.6", "0.7", "0.8")}

    def test_sweep_lambda_switches_ranking(self, data_dir, tmp_path):
        assert run(["sweep", "--data", str(data_dir), "--out", str(tmp_path), "--param", "lam",
                    "--values", "0,1"] + TINY_MODEL[:-2] + ["--epochs", "1"]) == 0
        assert "neighbor_rank = score" in (tmp_path / MANIFEST).read_text()

    def test_sweep_invalid_cell(self, data_dir, tmp_path, capsys):
        out = tmp_path / "s"
        code = run(["sweep", "--data", str(data_dir), "--out", str(out), "--param", "alpha",
                    "--values", "0.9"] + TINY_MODEL)
        assert code == 1 and not out.exists()
        assert "alpha" in capsys.readouterr().err


class TestErrors:
    def test_unknown_flag(self, tmp_path):
        assert run(["train", "--data", str(tmp_path), "--out", str(tmp_path), "--no-such-flag"]) == 2

    def test_missing_data_cleans_up(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert run(["train", "--data", str(tmp_path / "nowhere"), "--out", str(out)]) == 1
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith("berm train: error:")
        assert not out.exists()

    def test_malformed_pairs(self, run_dir, tmp_path, capsys):
        bad = tmp_path / "bad.tsv"
        bad.write_text("q\ti\t9\n")
        out = tmp_path / "out"
        assert run(["predict", "--run", str(run_dir), "--pairs", str(bad), "--out", str(out)]) == 1
        assert "line 1" in capsys.readouterr().err
        assert not out.exists()

    def test_bad_config_value(self, data_dir, tmp_path):
        assert run(["train", "--data", str(data_dir), "--out", str(tmp_path / "o"),
                    "--alpha", "0.9", "--beta", "0.1"]) == 1
