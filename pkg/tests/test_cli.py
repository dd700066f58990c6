import json
import os
import subprocess
import sys

import pytest

from landscape.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from landscape.evaluation import read_landscape_csv


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--n-records", 2500, "--seed", 1, "--out", d) == EXIT_OK
    return d


@pytest.fixture(scope="module")
def trained(sim_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("model")
    code = run("train", "--model", "mcnet", "--k", 2, "--hidden", 8, "--lr", 0.01,
               "--batch", 256, "--epochs", 4, "--seed", 3, "--data", sim_dir / "log.tsv", "--out", d)
    assert code == EXIT_OK
    return d


class TestPipeline:
    def test_simulate_outputs(self, sim_dir):
        assert sorted(p.name for p in sim_dir.iterdir()) == ["log.tsv", "sim.json", "truth.tsv", "vocab.tsv"]
        doc = json.loads((sim_dir / "sim.json").read_text())
        assert doc["n_records"] == 2500 and 0 < doc["win_rate"] < 1

    def test_train_outputs(self, trained):
        assert sorted(p.name for p in trained.iterdir()) == ["metrics.csv", "model.json", "vocab.tsv"]
        assert json.loads((trained / "model.json").read_text())["kind"] == "mcnet"
        assert (trained / "metrics.csv").read_text().splitlines()[0] == "epoch,train_loss,valid_anlp"

    def test_eval_report(self, sim_dir, trained, tmp_path):
        code = run("eval", "--model-file", trained / "model.json", "--data", sim_dir / "log.tsv",
                   "--truth", sim_dir / "truth.tsv", "--out", tmp_path)
        assert code == EXIT_OK
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["model"]["model_kind"] == "mcnet"
        assert doc["oracle"]["anlp"] < doc["model"]["anlp"]

    def test_export(self, trained, tmp_path):
        code = run("export", "--model-file", trained / "model.json", "--features", "f0=a1;f2=a5",
                   "--range", "0:300", "--out", tmp_path)
        assert code == EXIT_OK
        points, tail = read_landscape_csv((tmp_path / "landscape.csv").read_text())
        assert len(points) == 301
        assert sum(p.pmf for p in points) + tail == pytest.approx(1.0, abs=1e-12)

    def test_km_and_fitgauss(self, sim_dir, tmp_path):
        assert run("km", "--data", sim_dir / "log.tsv", "--out", tmp_path) == EXIT_OK
        km = json.loads((tmp_path / "km.json").read_text())
        assert sum(km["pmf"]) + km["tail_mass"] == pytest.approx(1.0, abs=1e-12)
        assert run("fitgauss", "--data", sim_dir / "log.tsv", "--out", tmp_path) == EXIT_OK
        fit = json.loads((tmp_path / "fitgauss.json").read_text())
        assert fit["sigma"] > 0 and fit["kl"] >= 0

    def test_vocab(self, sim_dir, tmp_path):
        assert run("vocab", "--data", sim_dir / "log.tsv", "--trim", 0, "--out", tmp_path) == EXIT_OK
        # bias + 4 "other" columns + 32 attributes
        assert (tmp_path / "vocab.tsv").read_text().split("\t")[0] == "37"

    def test_train_with_config_file(self, sim_dir, tmp_path):
        cfg = tmp_path / "t.cfg"
        cfg.write_text("model = pcr\nlr = 0.01\nepochs = 2\ninit_scale = 0.01\n")
        out = tmp_path / "o"
        assert run("train", "--config", cfg, "--data", sim_dir / "log.tsv", "--out", out) == EXIT_OK
        assert len((out / "metrics.csv").read_text().splitlines()) == 3

    def test_experiment(self, tmp_path, capsys):
        spec = tmp_path / "bench.cfg"
        spec.write_text("models = cr, km, rs\nseeds = 1\nl2_grid = 0.01\nepochs = 2\n"
                        "sim.n_records = 800\n")
        assert run("experiment", "--spec", spec, "--threads", 1, "--out", tmp_path / "e") == EXIT_OK
        assert "km" in capsys.readouterr().out
        assert (tmp_path / "e" / "report.json").exists()


class TestContract:
    def test_idempotent(self, sim_dir, tmp_path):
        args = ["train", "--model", "pcr", "--epochs", 3, "--lr", 0.01, "--seed", 5,
                "--data", sim_dir / "log.tsv", "--out", tmp_path]
        run(*args)
        first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
        run(*args)
        assert first == {p.name: p.read_bytes() for p in tmp_path.iterdir()}

    def test_writes_only_under_out(self, sim_dir, tmp_path, monkeypatch):
        work = tmp_path / "cwd"
        work.mkdir()
        monkeypatch.chdir(work)
        run("km", "--data", sim_dir / "log.tsv", "--out", tmp_path / "out")
        assert list(work.iterdir()) == []

    def test_missing_data_is_usage_error(self, capsys):
        assert run("train", "--model", "cr") == EXIT_USAGE
        err = capsys.readouterr().err
        assert "--data" in err and "usage:" in err
        assert len(err.strip().splitlines()) == 1

    def test_unknown_command(self):
        assert run("frobnicate") == EXIT_USAGE

    def test_no_command(self):
        assert run() == EXIT_USAGE

    def test_missing_file_is_data_error(self, tmp_path, capsys):
        assert run("km", "--data", tmp_path / "nope.tsv", "--out", tmp_path) == EXIT_DATA
        assert len(capsys.readouterr().err.strip().splitlines()) == 1

    def test_malformed_log_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("1\t10\t\tA=x\n")
        assert run("km", "--data", bad, "--out", tmp_path) == EXIT_DATA

    def test_vocab_mismatch_is_data_error(self, sim_dir, trained, tmp_path):
        other = tmp_path / "v"
        run("vocab", "--data", sim_dir / "log.tsv", "--trim", 500, "--out", other)
        code = run("eval", "--model-file", trained / "model.json", "--vocab", other / "vocab.tsv",
                   "--data", sim_dir / "log.tsv", "--out", tmp_path)
        assert code == EXIT_DATA

    def test_divergence_is_numeric_error(self, sim_dir, tmp_path, capsys):
        code = run("train", "--model", "cr", "--lr", 1e300, "--epochs", 3,
                   "--data", sim_dir / "log.tsv", "--out", tmp_path)
        assert code == EXIT_NUMERIC
        assert len(capsys.readouterr().err.strip().splitlines()) == 1

    def test_module_entry_point(self, tmp_path):
        env = dict(os.environ, LANDSCAPE_LOG="error")
        proc = subprocess.run([sys.executable, "-m", "landscape", "train"], capture_output=True,
                              text=True, env=env)
        assert proc.returncode == EXIT_USAGE
