"""Command-line front end.

Subcommands cover single steps (gen, perturb, attack, train, eval), the
end-to-end grid runner (experiment), detection replay (defend), the
closed-form/MC curve (theory), and CSV reshaping for the figure scripts
(export-figures-data).

Exit codes: 0 success, 2 config/usage error, 3 infeasible attack,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import shutil
import sys

import numpy as np

from .attack import AttackConfig, AttackPlan, plan_attack, poison_graph
from .errors import (
    ConfigError,
    ConstraintError,
    DomainError,
    InvalidArgumentError,
    NumericError,
    ParseError,
)
from .experiment import (
    ExperimentConfig,
    read_results_csv,
    run_defense_suite,
    run_experiment,
)
from .gnn import TrainConfig
from .graph import export_graph, generate_featured_sbm, load_graph, normalize_features, split_nodes
from .mechanisms import MechanismConfig, perturb_features
from .protocol import bootstrap_ci, calibrate, evaluate_accuracy, train_node_classifier
from .rng import substream
from .theory import security_privacy_curve, write_curve_csv

log = logging.getLogger(__name__)


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--edges", required=True, help="edge list file (two ids per line)")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--labels", required=True, help="label CSV (node_id,label header)")
    p.add_argument("--no-normalize", action="store_true",
                   help="skip per-column rescale of features to [-1, 1]")


def _add_mechanism_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mechanism", default="pm", choices=["pm", "mb", "sw"])
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--m", type=int, default=None,
                   help="sampled dimensions (default: budget rule)")
    p.add_argument("--sw-raw", action="store_true",
                   help="skip the d/m scale on square-wave outputs")


def _load(args):
    g = load_graph(args.edges, args.features, args.labels)
    if not args.no_normalize:
        g = normalize_features(g, -1.0, 1.0)
    return g


def _mech_config(args, d: int) -> MechanismConfig:
    return MechanismConfig(kind=args.mechanism, epsilon=args.epsilon, d=d,
                           m=args.m, alpha=-1.0, beta=1.0, sw_raw=args.sw_raw)


def cmd_gen(args) -> int:
    g = generate_featured_sbm(args.n, args.classes, args.d, args.p_in,
                              args.p_out, args.signal, args.seed)
    os.makedirs(args.out, exist_ok=True)
    export_graph(
        g,
        os.path.join(args.out, "edges.txt"),
        os.path.join(args.out, "features.csv"),
        os.path.join(args.out, "labels.csv"),
    )
    print(json.dumps(g.stats().__dict__))
    return 0


def cmd_perturb(args) -> int:
    g = _load(args)
    mech = _mech_config(args, g.d)
    perturbed = perturb_features(g.features, mech, args.seed)
    perturbed.save(args.out)
    print(f"wrote {args.out} (kind={mech.kind}, eps={mech.epsilon}, m={mech.m_effective})")
    return 0


def cmd_attack(args) -> int:
    g = _load(args)
    mech = _mech_config(args, g.d)
    cfg = AttackConfig(eta1=args.eta1, eta2=args.eta2, strategy=args.strategy,
                       bound_mode=args.bound_mode, sw_plus_one=args.sw_plus_one,
                       seed=args.seed)
    plan = plan_attack(g, mech, cfg)
    plan.save(args.out)
    print(f"wrote {args.out} (targets={len(plan.targets)}, fakes={plan.n_fake}, "
          f"q={plan.q:.6g}, B={plan.B:.6g})")
    return 0


def _pipeline(args):
    """Shared load -> split -> perturb -> (poison) -> calibrate for train/eval."""
    g = _load(args)
    masks = split_nodes(g, (0.5, 0.25, 0.25), args.seed)
    mech = _mech_config(args, g.d)
    perturbed = perturb_features(g.features, mech, args.seed)
    tcfg = TrainConfig(arch=args.arch, hidden=args.hidden, lr=args.lr,
                       dropout=args.dropout, max_epochs=args.max_epochs,
                       seed=args.seed)
    plan = AttackPlan.load(args.plan) if args.plan else None
    return g, masks, mech, perturbed, tcfg, plan


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", default="gcn", choices=["gcn", "sage"])
    p.add_argument("--k", type=int, default=2, help="calibration steps")
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--max-epochs", type=int, default=300)
    p.add_argument("--plan", default=None, help="attack plan JSON (train on G')")
    p.add_argument("--seed", type=int, default=0)


def cmd_train(args) -> int:
    g, masks, mech, perturbed, tcfg, plan = _pipeline(args)
    if plan is not None:
        target_graph = poison_graph(g, perturbed, plan)
        masks = target_graph.extend_masks(masks)
    else:
        target_graph = g
    emb = calibrate(target_graph.features if plan is not None else perturbed.matrix,
                    target_graph, args.k)
    model, report = train_node_classifier(target_graph, emb, masks, tcfg)
    report.mechanism = mech.kind
    report.epsilon = mech.epsilon
    report.K = args.k
    report.task = "node_classification"
    report.scope = "val"
    report.accuracy = evaluate_accuracy(model, target_graph, emb, masks.val_ids)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.out} (val accuracy {report.accuracy:.4f})")
    return 0


def cmd_eval(args) -> int:
    g, masks, mech, perturbed, tcfg, plan = _pipeline(args)
    if plan is not None:
        targets = plan.targets
    else:
        targets = substream(args.seed, "targets").permutation(g.n)[: max(1, round(0.09 * g.n))]
    emb = calibrate(perturbed.matrix, g, args.k)
    model, _ = train_node_classifier(g, emb, masks, tcfg)
    out = {
        "arch": tcfg.arch, "mechanism": mech.kind, "epsilon": mech.epsilon,
        "K": args.k, "task": "node_classification", "seed": args.seed,
        "clean": {
            "targeted": evaluate_accuracy(model, g, emb, targets),
            "untargeted": evaluate_accuracy(model, g, emb, masks.test_ids),
        },
    }
    if plan is not None:
        pg = poison_graph(g, perturbed, plan)
        pmasks = pg.extend_masks(masks)
        emb_att = calibrate(pg.features, pg, args.k)
        model_att, _ = train_node_classifier(pg, emb_att, pmasks, tcfg)
        out["attacked"] = {
            "targeted": evaluate_accuracy(model_att, pg, emb_att, targets),
            "untargeted": evaluate_accuracy(model_att, pg, emb_att, masks.test_ids),
        }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.out}")
    return 0


def _experiment_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, args.set or ())
    else:
        cfg = ExperimentConfig()
        for item in args.set or ():
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, value = item.split("=", 1)
            cfg.set_key(key, value)
        cfg.validate()
    if args.out:
        cfg.out = args.out
    if not cfg.out:
        raise ConfigError("no output directory (set out= in config or pass --out)")
    return cfg


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    rows, summary, plans = run_experiment(cfg, cfg.out)
    print(f"wrote {len(rows)} rows to {os.path.join(cfg.out, 'results.csv')} "
          f"({len(plans)} attack plans, {len(summary['skipped_cells'])} skipped cells)")
    if cfg.defenses and plans:
        run_defense_suite(cfg, cfg.out)
        print(f"wrote defense reports to {cfg.out}")
    return 0


def cmd_defend(args) -> int:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, args.set or ())
    else:
        resolved = os.path.join(args.results, "config.resolved")
        if not os.path.exists(resolved):
            raise ConfigError(f"no config given and {resolved} not found")
        cfg = ExperimentConfig.from_file(resolved, args.set or ())
    summary = run_defense_suite(cfg, args.results)
    if "notice" in summary:
        print(summary["notice"])
    else:
        print(f"wrote defense reports for {len(summary['entries'])} cells to {args.results}")
    return 0


def cmd_theory(args) -> int:
    if args.edges:
        g = load_graph(args.edges, args.features, args.labels)
        g = normalize_features(g, -1.0, 1.0)
    else:
        g = generate_featured_sbm(args.n, args.classes, args.d, args.p_in,
                                  args.p_out, args.signal, args.graph_seed)
    atk = AttackConfig(eta1=args.eta1, eta2=args.eta2, strategy=args.strategy)
    rows = security_privacy_curve(g, args.mechanism, args.epsilons, atk,
                                  args.lam, args.k, args.trials, args.seed)
    write_curve_csv(args.out, rows)
    print(f"wrote {args.out} ({len(rows)} epsilon points, {args.trials} trials each)")
    return 0


# ---------------------------------------------------------------------------
# figure-data export


def _group_rows(rows, key_fn):
    groups = {}
    for row in rows:
        groups.setdefault(key_fn(row), []).append(row.accuracy)
    return groups


def _pick(values, what: str, requested=None):
    values = sorted(set(values))
    if requested is not None:
        if requested not in values:
            raise ConfigError(f"{what} {requested} not present in results (have {values})")
        return requested
    if len(values) > 1:
        log.info("multiple %s values %s; using %s", what, values, values[0])
    return values[0]


def cmd_export_figures_data(args) -> int:
    results_csv = os.path.join(args.results, "results.csv")
    if not os.path.exists(results_csv):
        raise ConfigError(f"{results_csv} not found")
    rows = read_results_csv(results_csv)
    if not rows:
        raise ConfigError(f"{results_csv} has no data rows")
    out_dir = args.out or args.results
    os.makedirs(out_dir, exist_ok=True)

    private = [r for r in rows if r.mechanism != "none"]
    if not private:
        raise ConfigError("results contain only non-private rows")
    k = _pick([r.K for r in private], "K", args.k)
    eps = _pick([r.epsilon for r in private], "epsilon", args.epsilon)
    eta1 = _pick([r.eta1 for r in private], "eta1")
    eta2 = _pick([r.eta2 for r in private], "eta2")

    # accuracy vs epsilon, one group per mechanism (non-private rows pass
    # through as the reference line at epsilon=inf)
    slice_eps = [r for r in rows
                 if r.K == k and r.eta1 == eta1 and r.eta2 == eta2]
    groups = _group_rows(
        slice_eps, lambda r: (r.mechanism, r.epsilon, r.scope, r.phase)
    )
    with open(os.path.join(out_dir, "eps_bars.csv"), "w", encoding="utf-8") as fh:
        fh.write("mechanism,epsilon,scope,phase,mean,ci_low,ci_high\n")
        for key in sorted(groups, key=lambda t: tuple(str(x) for x in t)):
            mech, epsilon, scope, phase = key
            mean, lo, hi = bootstrap_ci(groups[key], args.resamples, seed=0)
            fh.write(f"{mech},{epsilon:.17g},{scope},{phase},"
                     f"{mean:.17g},{lo:.17g},{hi:.17g}\n")

    # impact vs eta1 (eta2 fixed) and vs eta2 (eta1 fixed)
    def eta_rows(which: str):
        out = []
        fixed_ok = (lambda r: r.eta2 == eta2) if which == "eta1" else (lambda r: r.eta1 == eta1)
        pool = [r for r in private if r.K == k and r.epsilon == eps and fixed_ok(r)]
        sweep = sorted(set(getattr(r, which) for r in pool))
        for value in sweep:
            for scope in ("targeted", "untargeted"):
                sub = [r for r in pool if getattr(r, which) == value and r.scope == scope]
                clean = [r.accuracy for r in sub if r.phase == "clean"]
                attacked = [r.accuracy for r in sub if r.phase == "attacked"]
                if not clean or not attacked:
                    continue
                cm = float(np.mean(clean))
                am = float(np.mean(attacked))
                ratio = (cm - am) / cm if cm > 0 else math.nan
                out.append((which, value, scope, cm, am, ratio))
        return out

    with open(os.path.join(out_dir, "eta_lines.csv"), "w", encoding="utf-8") as fh:
        fh.write("which,eta,scope,clean_mean,attacked_mean,impact_ratio\n")
        for which, value, scope, cm, am, ratio in eta_rows("eta1") + eta_rows("eta2"):
            fh.write(f"{which},{value:.17g},{scope},{cm:.17g},{am:.17g},{ratio:.17g}\n")

    # accuracy vs K
    pool = [r for r in private
            if r.epsilon == eps and r.eta1 == eta1 and r.eta2 == eta2]
    groups = _group_rows(pool, lambda r: (r.K, r.phase, r.scope))
    with open(os.path.join(out_dir, "k_lines.csv"), "w", encoding="utf-8") as fh:
        fh.write("k,phase,scope,mean,ci_low,ci_high\n")
        for key in sorted(groups, key=lambda t: (t[0], t[1], t[2])):
            kk, phase, scope = key
            mean, lo, hi = bootstrap_ci(groups[key], args.resamples, seed=0)
            fh.write(f"{kk},{phase},{scope},{mean:.17g},{lo:.17g},{hi:.17g}\n")

    # homophily histogram: copy the first defense output, if present
    hists = sorted(f for f in os.listdir(args.results) if f.startswith("homophily_"))
    if hists:
        shutil.copyfile(os.path.join(args.results, hists[0]),
                        os.path.join(out_dir, "homophily_hist.csv"))
    else:
        log.info("no homophily CSVs in %s (defenses off?); skipping", args.results)

    print(f"wrote figure data to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldpgraph",
        description="Locally private graph learning under fake-node poisoning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic featured graph")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--p-in", type=float, default=0.012)
    p.add_argument("--p-out", type=float, default=0.002)
    p.add_argument("--signal", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("perturb", help="perturb features under a mechanism")
    _add_data_args(p)
    _add_mechanism_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("attack", help="construct an attack plan")
    _add_data_args(p)
    _add_mechanism_args(p)
    p.add_argument("--eta1", type=float, default=0.09)
    p.add_argument("--eta2", type=float, default=0.8)
    p.add_argument("--strategy", default="identical",
                   choices=["random", "diverse", "identical"])
    p.add_argument("--bound-mode", default="algorithm1",
                   choices=["paper", "algorithm1"])
    p.add_argument("--sw-plus-one", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("train", help="train a node classifier (clean or poisoned)")
    _add_data_args(p)
    _add_mechanism_args(p)
    _add_train_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate clean (and attacked) accuracy")
    _add_data_args(p)
    _add_mechanism_args(p)
    _add_train_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the full grid from a config")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("defend", help="replay detection analyses on stored plans")
    p.add_argument("--results", required=True, help="experiment output directory")
    p.add_argument("--config", default=None,
                   help="config file (default: config.resolved in results dir)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("theory", help="privacy-vs-energy-shift curve")
    p.add_argument("--edges")
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--p-in", type=float, default=0.1)
    p.add_argument("--p-out", type=float, default=0.02)
    p.add_argument("--signal", type=float, default=1.0)
    p.add_argument("--graph-seed", type=int, default=0)
    p.add_argument("--mechanism", default="pm", choices=["pm", "mb", "sw"])
    p.add_argument("--epsilons", type=lambda s: [float(x) for x in s.split(",")],
                   default=[0.01, 0.1, 1.0])
    p.add_argument("--eta1", type=float, default=0.09)
    p.add_argument("--eta2", type=float, default=0.8)
    p.add_argument("--strategy", default="identical",
                   choices=["random", "diverse", "identical"])
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("export-figures-data",
                       help="reshape experiment outputs into figure CSVs")
    p.add_argument("--results", required=True)
    p.add_argument("--out", default=None, help="default: results directory")
    p.add_argument("--k", type=int, default=None, help="K slice for bar/eta figures")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--resamples", type=int, default=1000)
    p.set_defaults(func=cmd_export_figures_data)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConstraintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, ParseError, InvalidArgumentError, DomainError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
