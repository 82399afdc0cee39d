"""``targetcause`` command line: generate, train, infer, evaluate, benchmark, plot."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import evaluation as ev
from .config import ConfigError, DataSection, RunConfig, load_config, system_seeds
from .data import DataError, LabeledDataset, load_dataset, normalize, save_dataset, save_graph
from .engine import InferenceConfig, infer, measure_complexity, score_matrix, train
from .graph import GraphError, generate_graph
from .grn_sim import generate_grn_dataset
from .model import init_params, load_checkpoint, save_checkpoint
from .scm import build_scm, make_intervention_suite

log = logging.getLogger("targetcause")


# --- shared helpers --------------------------------------------------------


def make_system(section: DataSection, seed: int, k: int) -> LabeledDataset:
    """The k-th system of a data section: graph, mechanisms/simulator, samples, normalization."""
    gseed, mseed, sseed = system_seeds(seed, k)
    g = generate_graph(section.graph.kind_spec(), section.graph.n, gseed)
    if section.simulator == "scm":
        scm = build_scm(g, section.mechanism.spec(), mseed)
        obs = make_intervention_suite(scm, section.per_var, section.obs, sseed)
    else:
        obs = generate_grn_dataset(g, section.grn.spec(), section.per_var, section.obs, sseed)
    obs = normalize(obs, section.normalize)
    meta = {
        "simulator": section.simulator,
        "data_config": section.model_dump(mode="json"),
        "seed": seed,
        "system": k,
        "graph_seed": gseed,
        "mechanism_seed": mseed,
        "sample_seed": sseed,
    }
    return LabeledDataset(obs, g, meta)


def _dataset_dirs(path: str | Path) -> list[Path]:
    p = Path(path)
    if (p / "meta.json").exists():
        return [p]
    dirs = sorted(d for d in p.iterdir() if (d / "meta.json").exists()) if p.is_dir() else []
    if not dirs:
        raise FileNotFoundError(f"no dataset found at {p} (expected meta.json in it or its subdirectories)")
    return dirs


def _load_all(path) -> tuple[list[LabeledDataset], list[str]]:
    dirs = _dataset_dirs(path)
    sums = [hashlib.sha256((d / "meta.json").read_bytes()).hexdigest() for d in dirs]
    return [load_dataset(d) for d in dirs], sums


def _parse_targets(text: str | None, n: int) -> list[int]:
    if not text:
        return list(range(n))
    out = []
    for tok in text.split(","):
        t = int(tok)
        if not 0 <= t < n:
            raise ValueError(f"target {t} out of range for n={n}")
        out.append(t)
    return sorted(set(out))


def _write_scores(path: Path, s: np.ndarray, counts: np.ndarray | None, target: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "score", "count", "is_self"])
        for j, v in enumerate(s):
            w.writerow([j, repr(float(v)), "" if counts is None else int(counts[j]), int(j == target)])


def _read_scores(directory: Path, n: int) -> dict[int, np.ndarray]:
    out = {}
    for f in sorted(directory.glob("scores_*.csv")):
        with open(f, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != n:
            raise DataError(f"{f}: expected {n} rows, found {len(rows)}")
        selfs = [int(r["variable"]) for r in rows if r["is_self"] == "1"]
        if len(selfs) != 1:
            raise DataError(f"{f}: exactly one row must carry is_self=1")
        s = np.zeros(n)
        for r in rows:
            s[int(r["variable"])] = float(r["score"])
        out[selfs[0]] = s
    if not out:
        raise FileNotFoundError(f"no scores_*.csv files in {directory}")
    return out


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ev._fmt(v) for k, v in r.items()})


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _mean_auroc(model, datasets, ic: InferenceConfig) -> dict:
    reps = []
    for ds in datasets:
        S = score_matrix(model, ds.obs, ic)
        reps.append(ev.evaluate_scores(ds.labels, lambda i: S[i]))
    keep = [r for r in reps if not r.empty]
    agg = lambda key: float(np.nanmean([getattr(r, key) for r in keep])) if keep else math.nan
    return {"mean_auroc": agg("mean_auroc"), "mean_ap": agg("mean_ap"), "mean_f1": agg("mean_f1")}


# --- subcommands -----------------------------------------------------------


def cmd_gen_graph(cfg: RunConfig, args) -> None:
    g_cfg = cfg.data.graph
    g = generate_graph(g_cfg.kind_spec(), g_cfg.n, cfg.seeds.graph)
    save_graph(g, args.out, kind=g_cfg.kind, seed=cfg.seeds.graph)
    log.info("wrote graph with %d nodes and %d edges to %s", g.n, len(g.edges), args.out)


def cmd_gen_data(cfg: RunConfig, args) -> None:
    out = Path(args.out)
    for k in range(cfg.data.systems):
        ds = make_system(cfg.data, cfg.seeds.data, k)
        save_dataset(ds, out / f"sys_{k:03d}")
    log.info("wrote %d system(s) to %s", cfg.data.systems, out)


def cmd_train(cfg: RunConfig, args) -> None:
    if args.resume:
        raise ValueError("resuming a training run is not supported; start a fresh run instead")
    D, sums = _load_all(args.data)
    val, val_sums = _load_all(args.val) if args.val else (None, [])
    tc = cfg.train.spec(cfg.seeds.train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = train(D, cfg.model.spec(), tc, val, log_path=out / "train_log.jsonl")
    extra = {
        "train_config": cfg.train.model_dump(mode="json"),
        "seed": cfg.seeds.train,
        "best_step": res.best_step,
        "steps_run": res.steps_run,
        "best_val_auroc": None if math.isinf(res.best_metric) or math.isnan(res.best_metric) else res.best_metric,
        "stopped_early": res.stopped_early,
        "train_data_sha256": sums,
        "val_data_sha256": val_sums,
    }
    save_checkpoint(res.params, out, extra)
    log.info("checkpoint written to %s (best step %d)", out, res.best_step)


def cmd_infer(cfg: RunConfig, args) -> None:
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    ic = cfg.infer.spec(cfg.seeds.infer)
    targets = _parse_targets(args.targets, ds.obs.n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t in targets:
        sv = infer(model, ds.obs, t, ic)
        _write_scores(out / f"scores_{t:05d}.csv", sv.s, sv.counts, t)
    _write_json(out / "scores_meta.json", {"targets": targets, "infer_config": cfg.infer.model_dump(mode="json"),
                                           "seed": cfg.seeds.infer})
    log.info("wrote %d score file(s) to %s", len(targets), out)


def cmd_eval(cfg: RunConfig, args) -> None:
    ds = load_dataset(args.data)
    n = ds.obs.n
    scores = _read_scores(Path(args.scores), n)
    labels = ds.labels.copy()
    # targets without a score file drop out of the valid set
    labels[[i for i in range(n) if i not in scores]] = 0
    baselines = [b for b in (args.baselines or "").split(",") if b]
    for b in baselines:
        if b not in ("correlation", "random"):
            raise ValueError(f"unknown baseline {b!r}; expected correlation or random")
    seeds = {"infer": cfg.seeds.infer, "baseline": cfg.seeds.infer}
    rep = ev.evaluate_scores(labels, lambda i: scores[i], seeds)
    base_fns = {
        "correlation": lambda i: ev.correlation_baseline(ds.obs.X, i),
        "random": lambda i: ev.random_baseline(n, i, cfg.seeds.infer),
    }
    summary = {"model": rep.aggregates()}
    for b in baselines:
        brep = ev.evaluate_scores(labels, base_fns[b], seeds)
        for row, brow in zip(rep.per_target, brep.per_target):
            for key in ("auroc", "ap", "f1"):
                row[f"{key}_{b}"] = brow[key]
        summary[b] = brep.aggregates()
    out = Path(args.out)
    ev.write_report(rep, out)
    preds = ev.matched_predictions(labels, {i: scores[i] for i in ev.valid_targets(labels)})
    ev.write_distance_curve(ev.fnr_by_distance(ds.graph, preds), out / "distance.csv")
    clean = json.loads(json.dumps(summary, default=float).replace("NaN", "null"))
    _write_json(out / "summary.json", clean)
    log.info("model mean AUROC %.4f over %d targets", rep.mean_auroc, rep.n_valid)


def cmd_bench(cfg: RunConfig, args) -> None:
    out = Path(args.out)
    what = set((args.what or "complexity,sweeps,grid").split(","))
    unknown = what - {"complexity", "sweeps", "grid"}
    if unknown:
        raise ValueError(f"unknown bench parts {sorted(unknown)}")
    b = cfg.bench
    model = load_checkpoint(args.checkpoint) if args.checkpoint else init_params(cfg.model.spec(), cfg.seeds.train)
    if "complexity" in what:
        ic = cfg.infer.spec(cfg.seeds.infer)
        res = measure_complexity(model, b.n_grid, ic, b.T_grid, repeats=b.repeats, seed=cfg.seeds.infer)
        _write_csv(out / "complexity.csv", res["rows"])
        _write_json(out / "complexity.json", {"loglog_slope_n": res["loglog_slope_n"]})
    if "sweeps" in what and args.data:
        datasets, _ = _load_all(args.data)
        base = cfg.infer
        rows = [{"T": T, **_mean_auroc(model, datasets, InferenceConfig(base.n_sub, base.m_sub, T, cfg.seeds.infer))}
                for T in b.sweep_T]
        _write_csv(out / "sweep_T.csv", rows)
        rows = [{"n_sub": k, **_mean_auroc(model, datasets, InferenceConfig(k, base.m_sub, base.ensemble,
                                                                            cfg.seeds.infer))}
                for k in b.sweep_n_sub]
        _write_csv(out / "sweep_n_sub.csv", rows)
    elif "sweeps" in what and args.what:
        raise ValueError("the ensemble/input-size sweeps need --data")
    if "grid" in what and b.grid_sources:
        _write_csv(out / "grid.csv", relative_auroc_grid(cfg))


def relative_auroc_grid(cfg: RunConfig) -> list[dict]:
    """Train on each source, test on every source, normalize per test source."""
    b = cfg.bench
    names = sorted(b.grid_sources)
    test = {}
    models = {}
    for s_idx, name in enumerate(names):
        sec = b.grid_sources[name]
        seed = cfg.seeds.data + 1000 * (s_idx + 1)
        train_ds = [make_system(sec, seed, k) for k in range(b.grid_train_systems)]
        test[name] = [make_system(sec, seed, b.grid_train_systems + k) for k in range(b.grid_test_systems)]
        models[name] = train(train_ds, cfg.model.spec(), cfg.train.spec(cfg.seeds.train)).params
    ic = cfg.infer.spec(cfg.seeds.infer)
    auc = {(a, t): _mean_auroc(models[a], test[t], ic)["mean_auroc"] for a in names for t in names}
    rows = []
    for t in names:
        best = max(auc[(a, t)] for a in names)
        for a in names:
            try:
                rel = ev.relative_auroc(auc[(a, t)], best)
            except ZeroDivisionError:
                rel = math.nan
            rows.append({"train_source": a, "test_source": t, "auroc": auc[(a, t)], "relative_auroc": rel})
    return rows


def cmd_plot(cfg: RunConfig, args) -> None:
    from .plotting import render

    ys = args.y.split(",") if args.y else None
    render(args.csv, args.out, kind=args.kind, x=args.x, y=ys, title=args.title)


# --- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="targetcause", description=__doc__, allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_, allow_abbrev=False)
        p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override every stage seed in the config")
        p.add_argument("--out", required=True, help="output directory (file for plot)")
        p.set_defaults(func=fn)
        return p

    add("gen-graph", cmd_gen_graph, "generate one random DAG and write edges.tsv + graph_meta.json")
    add("gen-data", cmd_gen_data, "generate datasets (one subdirectory per system)")
    p = add("train", cmd_train, "train a model on generated datasets")
    p.add_argument("--data", required=True, help="dataset directory or a directory of datasets")
    p.add_argument("--val", help="validation dataset(s) for early stopping")
    p.add_argument("--resume", action="store_true", help="not supported; present to fail loudly")
    p = add("infer", cmd_infer, "write one cause-score CSV per target")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory written by train")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--targets", help="comma-separated target indices (default: all)")
    p = add("eval", cmd_eval, "score files + dataset -> per-target report, summary and distance curve")
    p.add_argument("--scores", required=True, help="directory of scores_*.csv")
    p.add_argument("--data", required=True, help="dataset directory with ground truth")
    p.add_argument("--baselines", help="comma-separated: correlation, random")
    p = add("bench", cmd_bench, "timing, ensemble/input-size sweeps and the relative-AUROC grid")
    p.add_argument("--checkpoint", help="trained checkpoint (random parameters when omitted)")
    p.add_argument("--data", help="dataset(s) for the sweeps")
    p.add_argument("--what", help="comma-separated subset of complexity,sweeps,grid")
    p = add("plot", cmd_plot, "render a CSV as a static SVG")
    p.add_argument("--csv", required=True, help="input CSV")
    p.add_argument("--kind", default="auto", choices=["auto", "line", "bar", "heatmap"])
    p.add_argument("--x", help="x column (default: first)")
    p.add_argument("--y", help="comma-separated y columns (default: all other numeric)")
    p.add_argument("--title")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config).with_seed(args.seed)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    try:
        args.func(cfg, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError, GraphError, DataError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
