"""Command-line pipeline with persisted, hash-checked stage artifacts.

Stages: gen -> train -> attrs -> prioritize -> evaluate / ablate / repair.
Each stage records its outputs in the run manifest and refuses stale inputs.
Exit codes: 0 success, 2 config error, 3 missing/stale artifacts, 4 runtime
failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attributes import load_attributes, save_attributes, assemble_z1, \
    degree_attrs, deterministic_output_attrs, enhance, graph_node_attrs, \
    probabilistic_output_attrs
from .baselines import load_ranking, save_ranking
from .config import RunConfig, config_hash, load_config
from .errors import (
    ConfigError,
    GraphRankError,
    MissingArtifactsError,
    StaleArtifactsError,
)
from .evaluation import (
    EvalReport,
    SeedArtifacts,
    artifacts_from_files,
    attribute_distributions,
    augmented_validation_accuracy,
    derived_seeds,
    evaluate_method,
    graphrank_selection,
    produce_ranking,
    significance,
    validation_accuracy,
)
from .figures import render_bars, render_distributions, render_trc_curves
from .graph import Graph, Split, generate_sbm, load_graph_dir, row_norm_adjacency, save_graph
from .manifest import Manifest
from .models import (
    gcn_forward_deterministic,
    gcn_mc_dropout,
    load_bundle,
    load_model,
    mlp_forward,
    save_bundle,
    save_model,
    train_gcn,
    train_mlp,
)
from .ranker import save_selection, train_classifier
from .attributes import VARIANTS

__all__ = ["main"]


def _seed_dir(cfg: RunConfig, seed: int) -> Path:
    return cfg.out_dir / f"seed_{seed}"


def _require_fresh(man: Manifest, stage: str, cfg_hash: str) -> None:
    record = man.stage_record(stage)
    if record is None:
        raise MissingArtifactsError(f"stage '{stage}' has not been run; run it first")
    if record["config_hash"] != cfg_hash:
        raise StaleArtifactsError(
            f"config changed since stage '{stage}' ran; rerun it (or use --force)")
    man.verify_stage(stage)


def _load_run_graph(cfg: RunConfig) -> Graph:
    return load_graph_dir(cfg.out_dir / "graph")


def _split_accuracies(bundle, g: Graph) -> dict:
    out = {}
    for tag in Split:
        ids = g.split_ids(tag)
        out[tag.name.lower()] = float((bundle.predicted[ids] == g.labels[ids]).mean())
    return out


# ---------------------------------------------------------------------------
# stages


def cmd_gen(cfg: RunConfig, args) -> None:
    man = Manifest(cfg.out_dir)
    h = config_hash(cfg)
    if not args.force and man.stage_is_fresh("gen", h):
        print(f"gen: cached in {cfg.out_dir / 'graph'}")
        return
    if cfg.graph_source == "sbm":
        g = generate_sbm(cfg.sbm_params())
    else:
        g = load_graph_dir(cfg.graph_dir)
    out = save_graph(g, cfg.out_dir / "graph")
    files = sorted(out.iterdir())
    man.record_stage("gen", h, files)
    print(f"gen: wrote {g.n} nodes, {g.num_edges} edges, {g.num_classes} classes "
          f"to {out}")


def cmd_train(cfg: RunConfig, args) -> None:
    man = Manifest(cfg.out_dir)
    h = config_hash(cfg)
    _require_fresh(man, "gen", h)
    if not args.force and man.stage_is_fresh("train", h):
        print("train: cached")
        return
    g = _load_run_graph(cfg)
    outputs = []
    for seed in cfg.seeds:
        sd = _seed_dir(cfg, seed)
        sd.mkdir(parents=True, exist_ok=True)
        gcn_seed, mlp_seed, mc_seed, _ = derived_seeds(seed)
        gcn = train_gcn(g, replace(cfg.gcn, seed=gcn_seed))
        det = gcn_forward_deterministic(gcn, g)
        mc = gcn_mc_dropout(gcn, g, passes=cfg.mc_passes, rate=cfg.mc_rate,
                            seed=mc_seed, average=cfg.mc_average)
        mlp = train_mlp(g, replace(cfg.mlp, seed=mlp_seed))
        mlp_bundle = mlp_forward(mlp, g.features)

        save_model(gcn, sd / "gcn.ckpt")
        save_model(mlp, sd / "mlp.ckpt")
        save_bundle(det, sd / "preds_det.csv")
        save_bundle(mc, sd / "preds_mc.csv")
        outputs += [sd / "gcn.ckpt", sd / "mlp.ckpt", sd / "preds_det.csv",
                    sd / "preds_mc.csv"]

        acc = _split_accuracies(det, g)
        mlp_acc = _split_accuracies(mlp_bundle, g)
        print(f"train[seed {seed}]: gcn acc train/val/test = "
              f"{acc['train']:.3f}/{acc['val']:.3f}/{acc['test']:.3f}  "
              f"mlp = {mlp_acc['train']:.3f}/{mlp_acc['val']:.3f}/{mlp_acc['test']:.3f}")
    man.record_stage("train", h, outputs)


def cmd_attrs(cfg: RunConfig, args) -> None:
    man = Manifest(cfg.out_dir)
    h = config_hash(cfg)
    _require_fresh(man, "train", h)
    if not args.force and man.stage_is_fresh("attrs", h):
        print("attrs: cached")
        return
    g = _load_run_graph(cfg)
    a_prime = row_norm_adjacency(g)
    outputs = []
    for seed in cfg.seeds:
        sd = _seed_dir(cfg, seed)
        det = load_bundle(sd / "preds_det.csv")
        mc = load_bundle(sd / "preds_mc.csv")
        mlp_bundle = mlp_forward(load_model(sd / "mlp.ckpt"), g.features)
        z1 = assemble_z1(deterministic_output_attrs(det),
                         probabilistic_output_attrs(mc),
                         graph_node_attrs(mlp_bundle),
                         degree_attrs(g))
        zf = enhance(z1, a_prime)
        save_attributes(zf, sd / "attributes.csv")
        outputs.append(sd / "attributes.csv")
        print(f"attrs[seed {seed}]: wrote {zf.values.shape[0]}x{zf.values.shape[1]} "
              f"attribute matrix")
    man.record_stage("attrs", h, outputs)


def _load_artifacts(cfg: RunConfig, g: Graph, seed: int) -> SeedArtifacts:
    sd = _seed_dir(cfg, seed)
    det = load_bundle(sd / "preds_det.csv")
    mc = load_bundle(sd / "preds_mc.csv")
    zf = load_attributes(sd / "attributes.csv")
    return artifacts_from_files(g, seed, det, mc, zf)


def cmd_prioritize(cfg: RunConfig, args) -> None:
    man = Manifest(cfg.out_dir)
    h = config_hash(cfg)
    _require_fresh(man, "attrs", h)
    methods = cfg.methods if args.method == "all" else [args.method]
    g = _load_run_graph(cfg)
    options = cfg.method_options()
    for method in methods:
        stage = f"prioritize_{method}"
        if not args.force and man.stage_is_fresh(stage, h):
            print(f"prioritize[{method}]: cached")
            continue
        outputs = []
        for seed in cfg.seeds:
            sd = _seed_dir(cfg, seed)
            art = _load_artifacts(cfg, g, seed)
            if method == "graphrank":
                tf = int(art.unlabeled_failure_ids.size)
                budget = args.budget or tf
                sel = graphrank_selection(art, budget, options)
                path = sd / f"selection_graphrank_b{budget}.json"
                save_selection(sel, path, hyper=options.hyper, seed=seed)
                outputs.append(path)
                print(f"prioritize[graphrank, seed {seed}]: budget {budget}, "
                      f"{len(sel.round_sizes)} rounds "
                      f"{'x'.join(str(s) for s in sel.round_sizes)}")
            else:
                external = cfg.external_rankings.get(method)
                if method == "external":
                    if not args.file:
                        raise ConfigError("--file is required for method 'external'")
                    external = args.file
                ranking = produce_ranking("external" if external else method, g, art,
                                          options, external_path=external)
                path = sd / f"ranking_{method}.csv"
                save_ranking(ranking, path)
                outputs.append(path)
                print(f"prioritize[{method}, seed {seed}]: ranked "
                      f"{ranking.ids.size} nodes")
        man.record_stage(stage, h, outputs)


def _method_reports(cfg: RunConfig, g: Graph, artifacts: list[SeedArtifacts],
                    man: Manifest, h: str) -> list[EvalReport]:
    reports = []
    for method in cfg.methods:
        if method == "graphrank":
            report = evaluate_method("graphrank", g, artifacts, steps=cfg.steps,
                                     options=cfg.method_options())
        elif method == "oracle":
            report = evaluate_method("oracle", g, artifacts, steps=cfg.steps,
                                     options=cfg.method_options())
        elif method in cfg.external_rankings:
            report = evaluate_method("external", g, artifacts, steps=cfg.steps,
                                     options=cfg.method_options(),
                                     external_path=cfg.external_rankings[method])
            report = replace(report, method=method)
        else:
            _require_fresh(man, f"prioritize_{method}", h)
            rankings = {seed: load_ranking(_seed_dir(cfg, seed) / f"ranking_{method}.csv",
                                           method=method)
                        for seed in cfg.seeds}
            report = evaluate_method(method, g, artifacts, steps=cfg.steps,
                                     options=cfg.method_options(), rankings=rankings)
        reports.append(report)
    return reports


def _distribution_rows(cfg: RunConfig, art: SeedArtifacts) -> dict:
    """Score distributions on failure vs correct unlabeled nodes (seed 0)."""
    ids = art.unlabeled_ids
    failures = art.failures[ids].astype(bool)
    metrics = {name: art.z1.column(name)[ids]
               for name in ("det_entropy", "mc_entropy", "mlp_entropy", "degree_norm")}
    clf = train_classifier(art.pool, hyper=cfg.method_options().hyper,
                           backend=cfg.method_options().backend)
    metrics["graphrank_score"] = clf.predict_scores(art.zf.values[ids])
    return {name: attribute_distributions(values, failures, bins=cfg.bins)
            for name, values in metrics.items()}


def cmd_evaluate(cfg: RunConfig, args) -> None:
    man = Manifest(cfg.out_dir)
    h = config_hash(cfg)
    _require_fresh(man, "attrs", h)
    g = _load_run_graph(cfg)
    artifacts = [_load_artifacts(cfg, g, s) for s in cfg.seeds]
    reports = _method_reports(cfg, g, artifacts, man, h)

    sig = {}
    by_method = {r.method: r for r in reports}
    if "graphrank" in by_method and len(cfg.seeds) >= 2:
        gr = by_method["graphrank"]
        for r in reports:
            if r.method == "graphrank":
                continue
            res = significance(gr.per_seed_atrc, r.per_seed_atrc)
            sig[r.method] = {"p_value": res.p_value, "effect_size": res.effect_size,
                             "significant": bool(res.p_value < 0.05
                                                 and res.effect_size > 0.8)}

    out = cfg.out_dir
    report_payload = {
        "config_hash": h,
        "methods": [r.to_dict() for r in reports],
        "significance": sig,
        "significance_thresholds": {"p_value": 0.05, "effect_size": 0.8},
        "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out / "report.json").write_text(json.dumps(report_payload, indent=1, sort_keys=True))

    with open(out / "table.csv", "w") as fh:
        fh.write("method,atrc_mean,atrc_sd,p_value_vs_graphrank,"
                 "effect_size_vs_graphrank,significant\n")
        for r in reports:
            s = sig.get(r.method, {})
            fh.write(f"{r.method},{r.atrc_mean:.6f},{r.atrc_sd:.6f},"
                     f"{s.get('p_value', '')},{s.get('effect_size', '')},"
                     f"{s.get('significant', '')}\n")

    with open(out / "trc_curve.csv", "w") as fh:
        fh.write("method,budget_fraction,trc\n")
        for r in reports:
            for frac, value in zip(r.budget_fractions, r.trc_curve):
                fh.write(f"{r.method},{frac:.2f},{value:.6f}\n")

    dist = _distribution_rows(cfg, artifacts[0])
    with open(out / "dist.csv", "w") as fh:
        fh.write("metric,bin_lo,bin_hi,failure_prop,correct_prop\n")
        for metric, rows in dist.items():
            for lo, hi, fp, cp in rows:
                fh.write(f"{metric},{lo:.6g},{hi:.6g},{fp:.6f},{cp:.6f}\n")

    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)
    render_trc_curves({r.method: (r.budget_fractions, r.trc_curve) for r in reports},
                      fig_dir / "trc_curve.png")
    render_distributions(dist, fig_dir / "dist.png")
    render_bars([r.method for r in reports],
                [100.0 * r.atrc_mean for r in reports], "ATRC (%)",
                fig_dir / "atrc.png",
                errors=[100.0 * r.atrc_sd for r in reports])

    man.record_stage("evaluate", h, [out / "report.json", out / "table.csv",
                                     out / "trc_curve.csv", out / "dist.csv"])
    print(f"evaluate: ATRC " +
          "  ".join(f"{r.method}={100 * r.atrc_mean:.2f}%" for r in reports))


def cmd_ablate(cfg: RunConfig, args) -> None:
    man = Manifest(cfg.out_dir)
    h = config_hash(cfg)
    _require_fresh(man, "attrs", h)
    g = _load_run_graph(cfg)
    artifacts = [_load_artifacts(cfg, g, s) for s in cfg.seeds]
    rows = []
    for variant in VARIANTS:
        report = evaluate_method("graphrank", g, artifacts, steps=cfg.steps,
                                 options=cfg.method_options(variant=variant))
        rows.append((variant, report.atrc_mean, report.atrc_sd))
        print(f"ablate[{variant}]: ATRC {100 * report.atrc_mean:.2f}% "
              f"(sd {100 * report.atrc_sd:.2f})")
    with open(cfg.out_dir / "ablation.csv", "w") as fh:
        fh.write("variant,atrc_mean,atrc_sd\n")
        for variant, mean, sd in rows:
            fh.write(f"{variant},{mean:.6f},{sd:.6f}\n")
    fig_dir = cfg.out_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    render_bars([r[0] for r in rows], [100.0 * r[1] for r in rows], "ATRC (%)",
                fig_dir / "ablation.png", errors=[100.0 * r[2] for r in rows])
    man.record_stage("ablate", h, [cfg.out_dir / "ablation.csv"])


def cmd_repair(cfg: RunConfig, args) -> None:
    man = Manifest(cfg.out_dir)
    h = config_hash(cfg)
    _require_fresh(man, "attrs", h)
    g = _load_run_graph(cfg)
    budget = cfg.repair_budget or g.split_ids(Split.TRAIN).size // 5
    budget = min(budget, g.split_ids(Split.TEST).size)
    methods = list(cfg.methods)
    if "random" not in methods:
        methods.insert(0, "random")

    options = cfg.method_options()
    deltas: dict[str, list[float]] = {m: [] for m in methods}
    for seed in cfg.seeds:
        art = _load_artifacts(cfg, g, seed)
        gcn_seed = derived_seeds(seed)[0]
        train_cfg = replace(cfg.gcn, seed=gcn_seed)
        base_acc = validation_accuracy(g, train_cfg)
        for method in methods:
            if method == "graphrank":
                ids = graphrank_selection(art, budget, options).ids
            else:
                external = cfg.external_rankings.get(method)
                ranking = produce_ranking("external" if external else method, g, art,
                                          options, external_path=external)
                ids = ranking.top(budget)
            aug = augmented_validation_accuracy(g, ids, train_cfg)
            deltas[method].append(aug - base_acc)
        print(f"repair[seed {seed}]: base val acc {base_acc:.4f}")

    with open(cfg.out_dir / "repair.csv", "w") as fh:
        fh.write("method,delta_pp_mean,delta_pp_sd\n")
        for method in methods:
            vals = 100.0 * np.asarray(deltas[method])
            sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            fh.write(f"{method},{vals.mean():.4f},{sd:.4f}\n")
            print(f"repair[{method}]: mean delta {vals.mean():+.3f} pp")
    fig_dir = cfg.out_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    render_bars(methods, [float(np.mean(100.0 * np.asarray(deltas[m]))) for m in methods],
                "validation accuracy delta (pp)", fig_dir / "repair.png")
    man.record_stage("repair", h, [cfg.out_dir / "repair.csv"])


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "attrs": cmd_attrs,
    "prioritize": cmd_prioritize,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "repair": cmd_repair,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphrank",
        description="Test-input prioritization pipeline for graph node classifiers.")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file (defaults apply when omitted)")
    parser.add_argument("--out", type=Path, default=None,
                        help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None,
                        help="replace the config seed list with one seed")
    parser.add_argument("--force", action="store_true",
                        help="rerun the stage even when cached")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "train", "attrs", "evaluate", "ablate", "repair"):
        sub.add_parser(name)
    pr = sub.add_parser("prioritize")
    pr.add_argument("--method", required=True,
                    help="method name, or 'all' for every configured method")
    pr.add_argument("--budget", type=int, default=None,
                    help="labeling budget for graphrank (default: total failures)")
    pr.add_argument("--file", type=Path, default=None,
                    help="ranking csv for --method external")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, out=args.out, seed=args.seed)
        COMMANDS[args.command](cfg, args)
        return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (StaleArtifactsError, MissingArtifactsError) as err:
        print(f"artifact error: {err}", file=sys.stderr)
        return 3
    except GraphRankError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except Exception as err:  # noqa: BLE001
        print(f"unexpected failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
