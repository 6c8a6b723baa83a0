import json
import os

import numpy as np
import pytest

from ldpgraph.attack import AttackPlan
from ldpgraph.cli import main
from ldpgraph.mechanisms import PerturbedFeatures


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("data"))
    rc = main(["gen", "--out", out, "--n", "200", "--classes", "4",
               "--d", "8", "--p-in", "0.1", "--p-out", "0.02", "--seed", "0"])
    assert rc == 0
    return out


def data_args(data_dir):
    return ["--edges", os.path.join(data_dir, "edges.txt"),
            "--features", os.path.join(data_dir, "features.csv"),
            "--labels", os.path.join(data_dir, "labels.csv")]


class TestGen:
    def test_writes_three_files(self, data_dir, capsys):
        for name in ("edges.txt", "features.csv", "labels.csv"):
            assert os.path.exists(os.path.join(data_dir, name))

    def test_prints_stats(self, tmp_path, capsys):
        rc = main(["gen", "--out", str(tmp_path), "--n", "60", "--classes",
                   "3", "--d", "4", "--p-in", "0.2", "--p-out", "0.05"])
        assert rc == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["n"] == 60

    def test_bad_args_exit_2(self, tmp_path):
        rc = main(["gen", "--out", str(tmp_path), "--n", "0"])
        assert rc == 2


class TestPerturb:
    def test_roundtrip(self, data_dir, tmp_path):
        out = str(tmp_path / "pert.npz")
        rc = main(["perturb", *data_args(data_dir), "--mechanism", "pm",
                   "--epsilon", "1.0", "--seed", "3", "--out", out])
        assert rc == 0
        pf = PerturbedFeatures.load(out)
        assert pf.matrix.shape == (200, 8)

    def test_unknown_mechanism_usage_error(self, data_dir, tmp_path):
        with pytest.raises(SystemExit):
            main(["perturb", *data_args(data_dir), "--mechanism", "laplace",
                  "--out", str(tmp_path / "x.npz")])

    def test_missing_file_exit_2(self, tmp_path):
        rc = main(["perturb", "--edges", "nope.txt", "--features", "nope.csv",
                   "--labels", "nope.csv", "--out", str(tmp_path / "x.npz")])
        assert rc == 2


class TestAttack:
    def test_plan_written(self, data_dir, tmp_path):
        out = str(tmp_path / "plan.json")
        rc = main(["attack", *data_args(data_dir), "--epsilon", "0.1",
                   "--eta1", "0.2", "--eta2", "0.8", "--seed", "0",
                   "--out", out])
        assert rc == 0
        plan = AttackPlan.load(out)
        assert plan.n_fake > 1

    def test_infeasible_exit_3(self, data_dir, tmp_path, capsys):
        rc = main(["attack", *data_args(data_dir), "--eta1", "0.2",
                   "--eta2", "0.05", "--out", str(tmp_path / "plan.json")])
        assert rc == 3
        assert "error:" in capsys.readouterr().err


@pytest.fixture(scope="module")
def plan_path(data_dir, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("plan") / "plan.json")
    rc = main(["attack", *data_args(data_dir), "--epsilon", "0.1",
               "--eta1", "0.2", "--eta2", "0.8", "--seed", "0", "--out", out])
    assert rc == 0
    return out


class TestTrainEval:
    def test_train_clean(self, data_dir, tmp_path):
        out = str(tmp_path / "report.json")
        rc = main(["train", *data_args(data_dir), "--epsilon", "0.1",
                   "--max-epochs", "30", "--hidden", "16", "--out", out])
        assert rc == 0
        report = json.load(open(out))
        assert 0.0 <= report["accuracy"] <= 1.0
        assert report["mechanism"] == "pm"

    def test_train_poisoned(self, data_dir, plan_path, tmp_path):
        out = str(tmp_path / "report.json")
        rc = main(["train", *data_args(data_dir), "--epsilon", "0.1",
                   "--max-epochs", "30", "--hidden", "16",
                   "--plan", plan_path, "--out", out])
        assert rc == 0

    def test_eval_clean_only(self, data_dir, tmp_path):
        out = str(tmp_path / "eval.json")
        rc = main(["eval", *data_args(data_dir), "--epsilon", "0.1",
                   "--max-epochs", "30", "--hidden", "16", "--out", out])
        assert rc == 0
        result = json.load(open(out))
        assert set(result["clean"]) == {"targeted", "untargeted"}
        assert "attacked" not in result

    def test_eval_with_plan(self, data_dir, plan_path, tmp_path):
        out = str(tmp_path / "eval.json")
        rc = main(["eval", *data_args(data_dir), "--epsilon", "0.1",
                   "--max-epochs", "30", "--hidden", "16",
                   "--plan", plan_path, "--out", out])
        assert rc == 0
        result = json.load(open(out))
        assert set(result["attacked"]) == {"targeted", "untargeted"}


EXPERIMENT_SETS = [
    "--set", "n=200", "--set", "classes=4", "--set", "d=8",
    "--set", "p_in=0.1", "--set", "p_out=0.02", "--set", "epsilons=0.1",
    "--set", "eta1s=0.2", "--set", "eta2s=0.8", "--set", "ks=1",
    "--set", "seeds=3", "--set", "hidden=32", "--set", "max_epochs=50",
    "--set", "bootstrap_resamples=200",
]


@pytest.fixture(scope="module")
def experiment_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("exp"))
    rc = main(["experiment", *EXPERIMENT_SETS, "--out", out])
    assert rc == 0
    return out


class TestExperiment:
    def test_outputs(self, experiment_dir):
        for name in ("results.csv", "summary.json", "attack_plan.json",
                     "config.resolved"):
            assert os.path.exists(os.path.join(experiment_dir, name))

    def test_unknown_key_exit_2(self, tmp_path):
        rc = main(["experiment", "--set", "frobnicate=1",
                   "--out", str(tmp_path)])
        assert rc == 2

    def test_missing_out_exit_2(self):
        rc = main(["experiment", "--set", "n=100"])
        assert rc == 2

    def test_config_file(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text(
            "n = 200\nclasses = 4\nd = 8\np_in = 0.1\np_out = 0.02\n"
            "epsilons = 0.1\neta1s = 0.2\neta2s = 0.8\nks = 1\nseeds = 3\n"
            "hidden = 32\nmax_epochs = 50\nattack = false\n"
            f"out = {tmp_path / 'results'}\n"
        )
        rc = main(["experiment", "--config", str(conf)])
        assert rc == 0
        assert os.path.exists(tmp_path / "results" / "results.csv")


class TestDefend:
    def test_defend_from_resolved_config(self, experiment_dir, capsys):
        rc = main(["defend", "--results", experiment_dir,
                   "--set", "gn_max_n=0"])
        assert rc == 0
        assert os.path.exists(os.path.join(experiment_dir,
                                           "defense_summary.json"))

    def test_missing_results_exit_2(self, tmp_path):
        rc = main(["defend", "--results", str(tmp_path)])
        assert rc == 2


class TestTheory:
    def test_curve_csv(self, tmp_path):
        out = str(tmp_path / "curve.csv")
        rc = main(["theory", "--n", "120", "--classes", "3", "--d", "4",
                   "--p-in", "0.12", "--p-out", "0.03", "--eta1", "0.2",
                   "--eta2", "0.8", "--epsilons", "0.1,1.0", "--k", "1",
                   "--trials", "3", "--out", out])
        assert rc == 0
        lines = open(out).read().strip().splitlines()
        assert lines[0] == "epsilon,mean_delta_psi,stderr,trials,seed"
        assert len(lines) == 3


class TestExportFiguresData:
    def test_csvs_written(self, experiment_dir, tmp_path):
        out = str(tmp_path / "figdata")
        rc = main(["export-figures-data", "--results", experiment_dir,
                   "--out", out])
        assert rc == 0
        for name in ("eps_bars.csv", "eta_lines.csv", "k_lines.csv"):
            assert os.path.exists(os.path.join(out, name))
        header = open(os.path.join(out, "eps_bars.csv")).readline().strip()
        assert header == "mechanism,epsilon,scope,phase,mean,ci_low,ci_high"

    def test_homophily_copied_when_present(self, experiment_dir, tmp_path):
        assert main(["defend", "--results", experiment_dir,
                     "--set", "gn_max_n=0"]) == 0
        out = str(tmp_path / "figdata")
        rc = main(["export-figures-data", "--results", experiment_dir,
                   "--out", out])
        assert rc == 0
        assert os.path.exists(os.path.join(out, "homophily_hist.csv"))

    def test_missing_results_exit_2(self, tmp_path):
        rc = main(["export-figures-data", "--results", str(tmp_path)])
        assert rc == 2

    def test_bad_slice_exit_2(self, experiment_dir, tmp_path):
        rc = main(["export-figures-data", "--results", experiment_dir,
                   "--out", str(tmp_path), "--epsilon", "9.9"])
        assert rc == 2
