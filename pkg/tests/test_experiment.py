import json
import math
import os

import numpy as np
import pytest

from ldpgraph.errors import ConfigError, ConstraintError
from ldpgraph.experiment import (
    DEFAULT_K_GRID,
    ExperimentConfig,
    ResultRow,
    read_results_csv,
    run_defense_suite,
    run_experiment,
    summarize,
    write_results_csv,
)

# benchmark defaults are too heavy for unit tests; shrink everything but keep
# the attack cell feasible (avg_deg ~ 7.9 at this density)
SMALL = dict(n=200, classes=4, d=8, p_in=0.1, p_out=0.02,
             epsilons=(0.1,), eta1s=(0.2,), eta2s=(0.8,), ks=(1,),
             seeds=(3,), hidden=32, max_epochs=50, bootstrap_resamples=200)


def small_cfg(**overrides):
    cfg = ExperimentConfig()
    for key, value in {**SMALL, **overrides}.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


@pytest.fixture(scope="module")
def attacked_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("attacked"))
    cfg = small_cfg()
    rows, summary, plans = run_experiment(cfg, out)
    return cfg, out, rows, summary, plans


class TestConfig:
    def test_defaults_validate(self):
        ExperimentConfig().validate()

    def test_default_k_grid_constant(self):
        assert DEFAULT_K_GRID == (0, 2, 4, 8, 16)

    def test_from_file_with_comments_and_overrides(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text(
            "# comment line\n"
            "\n"
            "n = 150\n"
            "epsilons = 0.1, 1.0   # trailing comment\n"
            "attack = false\n"
        )
        cfg = ExperimentConfig.from_file(str(path), ["n=99", "sw_raw=true"])
        assert cfg.n == 99
        assert cfg.epsilons == (0.1, 1.0)
        assert cfg.attack is False
        assert cfg.sw_raw is True

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("frobnicate = 1\n")
        with pytest.raises(ConfigError, match="frobnicate"):
            ExperimentConfig.from_file(str(path))

    def test_missing_equals_names_line(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("n = 100\njust some words\n")
        with pytest.raises(ConfigError, match=r":2"):
            ExperimentConfig.from_file(str(path))

    def test_bad_value_names_key(self):
        cfg = ExperimentConfig()
        with pytest.raises(ConfigError, match="bad value for n"):
            cfg.set_key("n", "abc")

    def test_bad_override_shape(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("n = 100\n")
        with pytest.raises(ConfigError, match="not key=value"):
            ExperimentConfig.from_file(str(path), ["n100"])

    @pytest.mark.parametrize("overrides", [
        dict(mechanism="laplace"),
        dict(mechanism="none", attack=True),
        dict(task="regression"),
        dict(model="gat"),
        dict(epsilons=()),
        dict(seeds=(1, 1)),
        dict(epsilons=(0.0,)),
        dict(ks=(33,)),
        dict(train_ratio=0.8, val_ratio=0.25, test_ratio=0.25),
        dict(dataset="files"),
    ])
    def test_validate_rejects(self, overrides):
        cfg = ExperimentConfig()
        for key, value in overrides.items():
            setattr(cfg, key, value)
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_resolved_lines_roundtrip(self, tmp_path):
        cfg = small_cfg(sw_raw=True, out="somewhere")
        path = tmp_path / "echo.conf"
        path.write_text("\n".join(cfg.resolved_lines()) + "\n")
        back = ExperimentConfig.from_file(str(path))
        assert back.resolved_lines() == cfg.resolved_lines()


class TestAccounting:
    def test_clean_only_two_rows(self):
        # one seed, no attack: exactly one targeted + one untargeted clean row
        cfg = small_cfg(seeds=(7,), attack=False)
        rows, summary, plans = run_experiment(cfg)
        assert len(rows) == 2
        assert all(r.phase == "clean" for r in rows)
        assert {r.scope for r in rows} == {"targeted", "untargeted"}
        assert all(0.0 <= r.accuracy <= 1.0 for r in rows)
        assert plans == {}

    def test_attacked_four_rows(self, attacked_run):
        _, _, rows, _, plans = attacked_run
        assert len(rows) == 4
        assert {(r.phase, r.scope) for r in rows} == {
            ("clean", "targeted"), ("clean", "untargeted"),
            ("attacked", "targeted"), ("attacked", "untargeted"),
        }
        assert all(0.0 <= r.accuracy <= 1.0 for r in rows)
        assert len(plans) == 1

    def test_rows_stably_sorted(self, attacked_run):
        _, _, rows, _, _ = attacked_run
        assert rows == sorted(rows, key=ResultRow.sort_key)

    def test_mechanism_none_rows(self):
        cfg = small_cfg(mechanism="none", attack=False, seeds=(0,))
        rows, _, _ = run_experiment(cfg)
        assert len(rows) == 2
        assert all(r.mechanism == "none" and r.epsilon == math.inf for r in rows)

    def test_include_nonprivate_appends_reference(self):
        cfg = small_cfg(include_nonprivate=True)
        rows, _, _ = run_experiment(cfg)
        private = [r for r in rows if r.mechanism != "none"]
        reference = [r for r in rows if r.mechanism == "none"]
        assert len(private) == 4 and len(reference) == 2
        assert all(r.phase == "clean" for r in reference)

    def test_link_prediction_rows(self):
        cfg = small_cfg(task="link_prediction", max_epochs=30)
        rows, _, _ = run_experiment(cfg)
        assert all(r.task == "link_prediction" for r in rows)
        assert all(0.0 <= r.accuracy <= 1.0 for r in rows)
        scopes = {(r.phase, r.scope) for r in rows}
        assert ("clean", "untargeted") in scopes
        assert ("attacked", "untargeted") in scopes


class TestOutputs:
    def test_files_written(self, attacked_run):
        _, out, _, _, _ = attacked_run
        for name in ("results.csv", "summary.json", "attack_plan.json",
                     "config.resolved"):
            assert os.path.exists(os.path.join(out, name))

    def test_resolved_config_parses_back(self, attacked_run):
        cfg, out, _, _, _ = attacked_run
        back = ExperimentConfig.from_file(os.path.join(out, "config.resolved"))
        assert back.resolved_lines() == cfg.resolved_lines()

    def test_rerun_byte_identical(self, attacked_run, tmp_path):
        cfg, out, _, _, _ = attacked_run
        rerun = tmp_path / "rerun"
        run_experiment(small_cfg(), str(rerun))
        first = open(os.path.join(out, "results.csv"), "rb").read()
        second = open(rerun / "results.csv", "rb").read()
        assert first == second

    def test_csv_roundtrip(self, attacked_run, tmp_path):
        _, _, rows, _, _ = attacked_run
        path = tmp_path / "results.csv"
        write_results_csv(str(path), rows)
        assert read_results_csv(str(path)) == rows

    def test_read_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n")
        with pytest.raises(ConfigError, match="header"):
            read_results_csv(str(path))

    def test_read_rejects_short_row(self, tmp_path, attacked_run):
        _, out, _, _, _ = attacked_run
        lines = open(os.path.join(out, "results.csv")).read().splitlines()
        path = tmp_path / "bad.csv"
        path.write_text(lines[0] + "\n" + "x,y\n")
        with pytest.raises(ConfigError, match="malformed"):
            read_results_csv(str(path))


class TestSummary:
    def test_cell_means_are_exact(self, attacked_run):
        _, _, rows, summary, _ = attacked_run
        for cell in summary["cells"]:
            values = [r.accuracy for r in rows
                      if r.scope == cell["scope"] and r.phase == cell["phase"]]
            assert cell["n_seeds"] == len(values)
            assert cell["mean"] == float(np.mean(values))

    def test_single_seed_ci_degenerate(self, attacked_run):
        _, _, _, summary, _ = attacked_run
        for cell in summary["cells"]:
            assert cell["ci_low"] == cell["mean"] == cell["ci_high"]

    def test_impact_ratio_definition(self, attacked_run):
        _, _, _, summary, _ = attacked_run
        assert {i["scope"] for i in summary["impact_ratios"]} == {
            "targeted", "untargeted"
        }
        for imp in summary["impact_ratios"]:
            expect = (imp["clean_mean"] - imp["attacked_mean"]) / imp["clean_mean"]
            assert imp["impact_ratio"] == pytest.approx(expect, rel=1e-15)

    def test_summarize_groups_across_seeds(self):
        rows = [
            ResultRow("synthetic", "pm", 0.1, 0.2, 0.8, 1, "gcn",
                      "node_classification", "targeted", "clean", seed, acc)
            for seed, acc in ((0, 0.5), (1, 0.7))
        ]
        summary = summarize(rows, n_resamples=100)
        (cell,) = summary["cells"]
        assert cell["mean"] == pytest.approx(0.6)
        assert cell["n_seeds"] == 2
        assert cell["ci_low"] <= cell["mean"] <= cell["ci_high"]


class TestSkippedCells:
    def test_infeasible_cell_skipped_with_reason(self):
        # eta2=0.05 gives a single fake at this target count: infeasible
        cfg = small_cfg(eta2s=(0.05, 0.8))
        rows, summary, plans = run_experiment(cfg)
        assert len(rows) == 4
        assert all(r.eta2 == 0.8 for r in rows)
        (skip,) = summary["skipped_cells"]
        assert "eta2=0.05" in skip["cell"]
        assert "n_fake" in skip["reason"]
        assert all("eta2=0.8" in key for key in plans)

    def test_all_cells_infeasible_raises(self):
        cfg = small_cfg(eta2s=(0.05,))
        with pytest.raises(ConstraintError):
            run_experiment(cfg)


class TestDefenseSuite:
    def test_missing_plans_raise(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="attack_plan"):
            run_defense_suite(small_cfg(), str(tmp_path))

    def test_clean_only_notice(self, tmp_path):
        cfg = small_cfg(attack=False)
        run_experiment(cfg, str(tmp_path))
        summary = run_defense_suite(cfg, str(tmp_path))
        assert summary["entries"] == []
        assert "clean-only" in summary["notice"]

    def test_entries_and_reports(self, attacked_run):
        cfg, out, _, _, plans = attacked_run
        cfg_nogn = small_cfg(gn_max_n=0)
        summary = run_defense_suite(cfg_nogn, out)
        (entry,) = summary["entries"]
        assert entry["cell"] in plans
        assert 0.0 <= entry["ks_node_homophily"] <= 1.0
        assert 0.0 <= entry["kmeans_recall"] <= 1.0
        assert "gn_skipped" in entry
        slug = entry["cell"].replace("=", "").replace(",", "_")
        assert os.path.exists(os.path.join(out, f"homophily_{slug}.csv"))
        assert os.path.exists(os.path.join(out, f"detection_kmeans_{slug}.json"))
        assert os.path.exists(os.path.join(out, "defense_summary.json"))

    def test_replay_identical(self, attacked_run):
        cfg, out, _, _, _ = attacked_run
        cfg_nogn = small_cfg(gn_max_n=0)
        run_defense_suite(cfg_nogn, out)
        first = open(os.path.join(out, "defense_summary.json"), "rb").read()
        run_defense_suite(cfg_nogn, out)
        second = open(os.path.join(out, "defense_summary.json"), "rb").read()
        assert first == second

    def test_community_isolation_on_small_graph(self, tmp_path):
        # 74-node poisoned graph keeps the betweenness loop affordable
        cfg = small_cfg(n=60, classes=3, p_in=0.25, p_out=0.05,
                        eta1s=(0.3,), max_epochs=20, gn_max_n=300)
        run_experiment(cfg, str(tmp_path))
        summary = run_defense_suite(cfg, str(tmp_path))
        (entry,) = summary["entries"]
        assert 0.0 <= entry["gn_fake_isolation"] <= 1.0
        assert -1.0 <= entry["gn_modularity"] <= 1.0
