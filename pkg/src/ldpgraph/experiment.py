"""Config-driven end-to-end runs: perturb, attack, calibrate, train, evaluate.

A run is a grid over (mechanism, epsilon, eta1, eta2, K) crossed with a seed
list. Every cell emits one accuracy row per (phase, scope): phase clean vs
attacked, scope targeted (the attack's target set) vs untargeted (the test
mask). Rows are stably sorted before writing so the CSV is byte-identical
across reruns; the resolved config is echoed next to it.

Config files are flat key = value text; unknown keys are rejected. CLI
overrides use the same key = value syntax.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .attack import (
    AttackConfig,
    AttackPlan,
    plan_attack,
    poison_graph,
    select_targets,
)
from .defense import (
    HomophilyReport,
    fake_isolation_fraction,
    girvan_newman,
    kmeans_anomaly,
    ks_statistic,
    node_homophily,
    write_histogram_csv,
)
from .errors import ConfigError, ConstraintError
from .gnn import TrainConfig
from .graph import Graph, generate_featured_sbm, load_graph, split_nodes
from .mechanisms import MechanismConfig, perturb_features
from .protocol import (
    bootstrap_ci,
    calibrate,
    evaluate_accuracy,
    link_prediction_detail,
    train_node_classifier,
)
from .rng import substream

log = logging.getLogger(__name__)

MECHANISMS = ("pm", "mb", "sw", "none")
TASKS = ("node_classification", "link_prediction")
DEFAULT_K_GRID = (0, 2, 4, 8, 16)

RESULT_COLUMNS = (
    "dataset", "mechanism", "epsilon", "eta1", "eta2", "K",
    "model", "task", "scope", "phase", "seed", "accuracy",
)


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    mechanism: str
    epsilon: float
    eta1: float
    eta2: float
    K: int
    model: str
    task: str
    scope: str
    phase: str
    seed: int
    accuracy: float

    def csv_line(self) -> str:
        return (
            f"{self.dataset},{self.mechanism},{self.epsilon:.17g},"
            f"{self.eta1:.17g},{self.eta2:.17g},{self.K},{self.model},"
            f"{self.task},{self.scope},{self.phase},{self.seed},"
            f"{self.accuracy:.17g}"
        )

    def sort_key(self):
        return (self.dataset, self.mechanism, self.epsilon, self.eta1,
                self.eta2, self.K, self.model, self.task, self.scope,
                self.phase, self.seed)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected boolean, got {text!r}")


def _parse_floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _parse_ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


@dataclass
class ExperimentConfig:
    """All knobs of one experiment run. Defaults mirror the benchmark setup."""

    dataset: str = "synthetic"
    edges: str = ""
    features: str = ""
    labels: str = ""
    n: int = 1000
    classes: int = 4
    d: int = 16
    p_in: float = 0.012
    p_out: float = 0.002
    signal: float = 1.0
    graph_seed: int = 0
    mechanism: str = "pm"
    epsilons: tuple = (0.01,)
    eta1s: tuple = (0.09,)
    eta2s: tuple = (0.8,)
    ks: tuple = (2,)
    model: str = "gcn"
    task: str = "node_classification"
    strategy: str = "identical"
    bound_mode: str = "algorithm1"
    sw_raw: bool = False
    sw_plus_one: bool = False
    seeds: tuple = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9)
    attack: bool = True
    fakes_unlabeled: bool = False
    targets_from_test_only: bool = False
    defenses: bool = False
    include_nonprivate: bool = False
    train_ratio: float = 0.5
    val_ratio: float = 0.25
    test_ratio: float = 0.25
    lr: float = 1e-2
    weight_decay: float = 1e-4
    dropout: float = 0.1
    hidden: int = 64
    max_epochs: int = 300
    holdout_frac: float = 0.1
    gn_max_n: int = 300
    kmeans_percentile: float = 99.0
    bootstrap_resamples: int = 1000
    out: str = ""

    _PARSERS = {
        "dataset": str, "edges": str, "features": str, "labels": str,
        "n": int, "classes": int, "d": int,
        "p_in": float, "p_out": float, "signal": float, "graph_seed": int,
        "mechanism": str, "epsilons": _parse_floats,
        "eta1s": _parse_floats, "eta2s": _parse_floats, "ks": _parse_ints,
        "model": str, "task": str, "strategy": str, "bound_mode": str,
        "sw_raw": _parse_bool, "sw_plus_one": _parse_bool,
        "seeds": _parse_ints, "attack": _parse_bool,
        "fakes_unlabeled": _parse_bool, "targets_from_test_only": _parse_bool,
        "defenses": _parse_bool, "include_nonprivate": _parse_bool,
        "train_ratio": float, "val_ratio": float, "test_ratio": float,
        "lr": float, "weight_decay": float, "dropout": float,
        "hidden": int, "max_epochs": int, "holdout_frac": float,
        "gn_max_n": int, "kmeans_percentile": float,
        "bootstrap_resamples": int, "out": str,
    }

    def set_key(self, key: str, value: str) -> None:
        key = key.strip()
        if key not in self._PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            setattr(self, key, self._PARSERS[key](value.strip()))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None

    @classmethod
    def from_file(cls, path, overrides=()) -> "ExperimentConfig":
        cfg = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                if "=" not in text:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, value = text.split("=", 1)
                cfg.set_key(key, value)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, value = item.split("=", 1)
            cfg.set_key(key, value)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.dataset not in ("synthetic", "files"):
            raise ConfigError(f"dataset must be synthetic or files, got {self.dataset!r}")
        if self.dataset == "files" and not (self.edges and self.features and self.labels):
            raise ConfigError("dataset=files requires edges, features, labels paths")
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"unknown mechanism {self.mechanism!r}")
        if self.mechanism == "none" and self.attack:
            raise ConfigError("mechanism=none supports clean-phase runs only (set attack=false)")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.model not in ("gcn", "sage"):
            raise ConfigError(f"unknown model {self.model!r}")
        for name in ("epsilons", "eta1s", "eta2s", "ks", "seeds"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name} must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if any(e <= 0 for e in self.epsilons):
            raise ConfigError("epsilons must be positive")
        if any(not 0 <= k <= 32 for k in self.ks):
            raise ConfigError("ks must lie in [0, 32]")
        ratios = (self.train_ratio, self.val_ratio, self.test_ratio)
        if abs(sum(ratios) - 1.0) > 1e-9 or any(r <= 0 for r in ratios):
            raise ConfigError("split ratios must be positive and sum to 1")
        try:
            self.train_config()
            for eta1 in self.eta1s:
                for eta2 in self.eta2s:
                    AttackConfig(eta1=eta1, eta2=eta2, strategy=self.strategy,
                                 bound_mode=self.bound_mode)
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(arch=self.model, hidden=self.hidden, lr=self.lr,
                           weight_decay=self.weight_decay, dropout=self.dropout,
                           max_epochs=self.max_epochs, seed=seed)

    def resolved_lines(self) -> list[str]:
        lines = []
        for f in dataclasses.fields(self):
            if f.name.startswith("_"):
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return lines

    def dataset_name(self) -> str:
        if self.dataset == "synthetic":
            return "synthetic"
        return os.path.basename(self.edges)


def build_graph(cfg: ExperimentConfig) -> Graph:
    if cfg.dataset == "files":
        return load_graph(cfg.edges, cfg.features, cfg.labels)
    return generate_featured_sbm(cfg.n, cfg.classes, cfg.d, cfg.p_in,
                                 cfg.p_out, cfg.signal, cfg.graph_seed)


def _cell_key(mechanism: str, epsilon: float, eta1: float, eta2: float,
              K: int, seed: int | None = None) -> str:
    key = f"mech={mechanism},eps={epsilon:g},eta1={eta1:g},eta2={eta2:g},K={K}"
    if seed is not None:
        key += f",seed={seed}"
    return key


@dataclass
class _CellOutput:
    rows: list = field(default_factory=list)
    plans: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)


def _scope_split(pairs: np.ndarray, correct: np.ndarray, targets) -> dict:
    """untargeted = all held-out pairs; targeted = pairs touching a target."""
    target_set = set(int(t) for t in targets)
    touches = np.array(
        [int(u) in target_set or int(v) in target_set for u, v in pairs]
    )
    out = {"untargeted": float(np.mean(correct))}
    if touches.any():
        out["targeted"] = float(np.mean(correct[touches]))
    else:
        log.warning("no held-out pair touches a target; targeted row skipped")
    return out


def _perturbed_matrix(cfg, g, mechanism, epsilon, seed) -> np.ndarray:
    if mechanism == "none":
        return g.features
    mech = MechanismConfig(kind=mechanism, epsilon=epsilon, d=g.d,
                           alpha=g.alpha, beta=g.beta, sw_raw=cfg.sw_raw)
    return perturb_features(g.features, mech, seed).matrix


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None):
    """Run the full grid. Returns (rows, summary, plans).

    Infeasible attack cells are skipped with a logged reason and listed in
    the summary (unless every cell is infeasible, which re-raises). When
    out_dir is set, writes results.csv, summary.json, attack_plan.json and
    config.resolved there.
    """
    g = build_graph(cfg)
    dataset = cfg.dataset_name()
    out = _CellOutput()

    mech_list = [cfg.mechanism]
    if cfg.include_nonprivate and cfg.mechanism != "none":
        mech_list.append("none")

    # clean-phase work is independent of (eta1, eta2); cache it per cell-seed
    clean_cache: dict = {}

    def clean_state(mechanism, epsilon, K, seed, masks):
        key = (mechanism, epsilon, K, seed)
        if key not in clean_cache:
            matrix = _perturbed_matrix(cfg, g, mechanism, epsilon, seed)
            emb = calibrate(matrix, g, K)
            if cfg.task == "node_classification":
                model, _ = train_node_classifier(g, emb, masks, cfg.train_config(seed))
                clean_cache[key] = (matrix, emb, model, None)
            else:
                detail = link_prediction_detail(g, emb, cfg.holdout_frac,
                                                cfg.train_config(seed), seed)
                clean_cache[key] = (matrix, emb, None, detail)
        return clean_cache[key]

    last_constraint_error = None
    for mechanism in mech_list:
        epsilons = cfg.epsilons if mechanism != "none" else (math.inf,)
        for epsilon in epsilons:
            for K in cfg.ks:
                for eta1 in cfg.eta1s:
                    for eta2 in cfg.eta2s:
                        for seed in cfg.seeds:
                            res = _run_cell(cfg, g, dataset, mechanism, epsilon,
                                            K, eta1, eta2, seed, clean_state)
                            if isinstance(res, ConstraintError):
                                last_constraint_error = res
                                key = _cell_key(mechanism, epsilon, eta1, eta2, K, seed)
                                out.skipped.append({"cell": key, "reason": str(res)})
                                log.warning("skipping %s: %s", key, res)
                                continue
                            rows, plan = res
                            out.rows.extend(rows)
                            if plan is not None:
                                key = _cell_key(mechanism, epsilon, eta1, eta2, K, seed)
                                out.plans[key] = plan

    if not out.rows and last_constraint_error is not None:
        raise last_constraint_error

    out.rows.sort(key=ResultRow.sort_key)
    summary = summarize(out.rows, cfg.bootstrap_resamples)
    summary["skipped_cells"] = out.skipped

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_results_csv(os.path.join(out_dir, "results.csv"), out.rows)
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
        with open(os.path.join(out_dir, "attack_plan.json"), "w", encoding="utf-8") as fh:
            json.dump({k: p.to_json() for k, p in out.plans.items()}, fh)
            fh.write("\n")
        with open(os.path.join(out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(cfg.resolved_lines()) + "\n")
    return out.rows, summary, out.plans


def _poisoned_masks(masks, n_fake: int, fakes_unlabeled: bool):
    """Masks over G': fakes join the train split unless left unlabeled."""
    pad_true = np.ones(n_fake, dtype=bool)
    pad_false = np.zeros(n_fake, dtype=bool)
    return type(masks)(
        np.concatenate([masks.train, pad_false if fakes_unlabeled else pad_true]),
        np.concatenate([masks.val, pad_false]),
        np.concatenate([masks.test, pad_false]),
    )


def _run_cell(cfg, g, dataset, mechanism, epsilon, K, eta1, eta2, seed,
              clean_state):
    """Rows for one grid cell and seed, or the ConstraintError that skipped it."""
    masks = split_nodes(
        g, (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio), seed
    )
    attack_wanted = cfg.attack and mechanism != "none"
    plan = None
    if attack_wanted:
        atk_cfg = AttackConfig(
            eta1=eta1, eta2=eta2, strategy=cfg.strategy,
            bound_mode=cfg.bound_mode, sw_plus_one=cfg.sw_plus_one,
            targets_from_test_only=cfg.targets_from_test_only, seed=seed,
        )
        mech = MechanismConfig(kind=mechanism, epsilon=epsilon, d=g.d,
                               alpha=g.alpha, beta=g.beta, sw_raw=cfg.sw_raw)
        try:
            plan = plan_attack(g, mech, atk_cfg, masks)
        except ConstraintError as exc:
            return exc
        targets = plan.targets
    else:
        pool = masks.test_ids if cfg.targets_from_test_only else None
        targets = select_targets(g, eta1, substream(seed, "targets"), pool)

    rows = []

    def emit(phase, scope, accuracy):
        rows.append(ResultRow(dataset, mechanism, epsilon, eta1, eta2, K,
                              cfg.model, cfg.task, scope, phase, seed,
                              float(accuracy)))

    matrix, emb, model, lp_detail = clean_state(mechanism, epsilon, K, seed, masks)
    if cfg.task == "node_classification":
        emit("clean", "targeted", evaluate_accuracy(model, g, emb, targets))
        emit("clean", "untargeted", evaluate_accuracy(model, g, emb, masks.test_ids))
    else:
        for scope, acc in _scope_split(*lp_detail, targets).items():
            emit("clean", scope, acc)

    if attack_wanted:
        pg = poison_graph(g, matrix, plan)
        emb_att = calibrate(pg.features, pg, K)
        if cfg.task == "node_classification":
            pmasks = _poisoned_masks(masks, plan.n_fake, cfg.fakes_unlabeled)
            model_att, _ = train_node_classifier(pg, emb_att, pmasks,
                                                 cfg.train_config(seed))
            emit("attacked", "targeted",
                 evaluate_accuracy(model_att, pg, emb_att, targets))
            emit("attacked", "untargeted",
                 evaluate_accuracy(model_att, pg, emb_att, masks.test_ids))
        else:
            pairs, correct = link_prediction_detail(
                pg, emb_att, cfg.holdout_frac, cfg.train_config(seed), seed
            )
            for scope, acc in _scope_split(pairs, correct, targets).items():
                emit("attacked", scope, acc)
    return rows, plan


def write_results_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(RESULT_COLUMNS) + "\n")
        for row in rows:
            fh.write(row.csv_line() + "\n")


def read_results_csv(path) -> list[ResultRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != ",".join(RESULT_COLUMNS):
            raise ConfigError(f"{path}: unexpected results header {header!r}")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != len(RESULT_COLUMNS):
                raise ConfigError(f"{path}: malformed row {line!r}")
            rows.append(ResultRow(
                dataset=parts[0], mechanism=parts[1], epsilon=float(parts[2]),
                eta1=float(parts[3]), eta2=float(parts[4]), K=int(parts[5]),
                model=parts[6], task=parts[7], scope=parts[8], phase=parts[9],
                seed=int(parts[10]), accuracy=float(parts[11]),
            ))
    return rows


def summarize(rows, n_resamples: int = 1000) -> dict:
    """Per-cell means with bootstrap CIs, plus clean-vs-attacked impact ratios."""
    groups: dict = {}
    for row in rows:
        key = (row.dataset, row.mechanism, row.epsilon, row.eta1, row.eta2,
               row.K, row.model, row.task, row.scope, row.phase)
        groups.setdefault(key, []).append(row.accuracy)

    cells = []
    for key in sorted(groups, key=lambda k: tuple(str(p) for p in k)):
        values = groups[key]
        mean, lo, hi = bootstrap_ci(values, n_resamples, seed=0)
        (dataset, mechanism, epsilon, eta1, eta2, K,
         model, task, scope, phase) = key
        cells.append({
            "dataset": dataset, "mechanism": mechanism, "epsilon": epsilon,
            "eta1": eta1, "eta2": eta2, "K": K, "model": model, "task": task,
            "scope": scope, "phase": phase, "mean": mean,
            "ci_low": lo, "ci_high": hi, "n_seeds": len(values),
        })

    impacts = []
    by_cell: dict = {}
    for c in cells:
        cell_id = (c["dataset"], c["mechanism"], c["epsilon"], c["eta1"],
                   c["eta2"], c["K"], c["model"], c["task"], c["scope"])
        by_cell.setdefault(cell_id, {})[c["phase"]] = c["mean"]
    for cell_id in sorted(by_cell, key=lambda k: tuple(str(p) for p in k)):
        phases = by_cell[cell_id]
        if "clean" in phases and "attacked" in phases:
            clean, attacked = phases["clean"], phases["attacked"]
            ratio = (clean - attacked) / clean if clean > 0 else None
            (dataset, mechanism, epsilon, eta1, eta2, K, model, task, scope) = cell_id
            impacts.append({
                "dataset": dataset, "mechanism": mechanism, "epsilon": epsilon,
                "eta1": eta1, "eta2": eta2, "K": K, "model": model,
                "task": task, "scope": scope, "clean_mean": clean,
                "attacked_mean": attacked, "impact_ratio": ratio,
            })
    return {"cells": cells, "impact_ratios": impacts}


def run_defense_suite(cfg: ExperimentConfig, results_dir: str) -> dict:
    """Detection analyses replayed from the stored attack plans.

    For each stored plan: pre/post node-homophily histograms and their KS
    distance, k-means anomaly detection on the poisoned features, and (for
    graphs within gn_max_n) community isolation of the fakes. Returns the
    defense summary, also written to defense_summary.json.
    """
    plan_path = os.path.join(results_dir, "attack_plan.json")
    if not os.path.exists(plan_path):
        raise FileNotFoundError(f"no attack plans at {plan_path}; run the experiment first")
    with open(plan_path, "r", encoding="utf-8") as fh:
        plan_map = json.load(fh)
    if not plan_map:
        notice = "clean-only run: no attack plans, nothing to defend against"
        log.info(notice)
        return {"notice": notice, "entries": []}

    g = build_graph(cfg)
    entries = []
    for key in sorted(plan_map):
        plan = AttackPlan.from_json(plan_map[key])
        fields = dict(part.split("=", 1) for part in key.split(","))
        mechanism = fields["mech"]
        epsilon = float(fields["eps"])
        seed = int(fields["seed"])
        if mechanism == "none":
            matrix = g.features
        else:
            mech = MechanismConfig(kind=mechanism, epsilon=epsilon, d=g.d,
                                   alpha=g.alpha, beta=g.beta, sw_raw=cfg.sw_raw)
            matrix = perturb_features(g.features, mech, seed).matrix
        pg = poison_graph(g, matrix, plan)

        pre = HomophilyReport.compute(g, matrix)
        post = HomophilyReport.compute(pg, pg.features)
        ks = ks_statistic(pre.node_scores, post.node_scores)
        slug = key.replace("=", "").replace(",", "_")
        write_histogram_csv(
            os.path.join(results_dir, f"homophily_{slug}.csv"),
            pre.node_hist, post.node_hist,
        )

        km = kmeans_anomaly(pg.features, k=g.num_classes,
                            flag_percentile=cfg.kmeans_percentile,
                            seed=seed, true_fakes=plan.fakes)
        km.save(os.path.join(results_dir, f"detection_kmeans_{slug}.json"))

        entry = {"cell": key, "ks_node_homophily": ks,
                 "kmeans_recall": km.recall, "kmeans_precision": km.precision}
        if pg.n <= cfg.gn_max_n:
            communities = girvan_newman(pg, max_communities=2 * g.num_classes)
            entry["gn_fake_isolation"] = fake_isolation_fraction(communities, plan.fakes)
            entry["gn_modularity"] = communities.modularity
        else:
            entry["gn_skipped"] = f"n={pg.n} exceeds gn_max_n={cfg.gn_max_n}"
        entries.append(entry)

    summary = {"entries": entries}
    with open(os.path.join(results_dir, "defense_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary
