"""Ranking metrics, valid-target averaging, distance-stratified errors and baselines."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.stats import rankdata

from .graph import CausalGraph, shortest_path_lengths_to


class DegenerateLabels(ValueError):
    pass


@dataclass
class CauseScoreVector:
    """Scores over all ``n`` variables for one target.

    ``s[target]`` is kept for bookkeeping but never evaluated. ``counts``
    records how many local predictions were averaged into each entry.
    """

    s: np.ndarray
    target: int
    counts: np.ndarray | None = None

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64)
        if not np.isfinite(self.s).all():
            raise ValueError("cause scores must be finite")

    def evaluable(self) -> np.ndarray:
        mask = np.ones(self.s.size, dtype=bool)
        mask[self.target] = False
        return mask


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores and labels must be equal-length vectors, got {s.shape}, {y.shape}")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate with tied scores counted as half a win."""
    s, y = _check(scores, labels)
    P, N = int(y.sum()), int((~y).sum())
    if P == 0 or N == 0:
        raise DegenerateLabels("AUROC needs at least one positive and one negative")
    ranks = rankdata(s)
    return float((ranks[y].sum() - P * (P + 1) / 2) / (P * N))


def auroc_pairwise(scores, labels) -> float:
    s, y = _check(scores, labels)
    pos, neg = s[y], s[~y]
    if pos.size == 0 or neg.size == 0:
        raise DegenerateLabels("AUROC needs at least one positive and one negative")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def _rank_order(s: np.ndarray) -> np.ndarray:
    # descending score, ties by ascending index
    return np.argsort(-s, kind="stable")


def average_precision(scores, labels) -> float:
    """Non-interpolated AP: mean of precision@rank over the positives."""
    s, y = _check(scores, labels)
    P = int(y.sum())
    if P == 0:
        raise DegenerateLabels("AP needs at least one positive")
    hits = y[_rank_order(s)]
    ranks = np.flatnonzero(hits) + 1
    return float((np.arange(1, P + 1) / ranks).mean())


def top_p_predictions(scores, P: int) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    pred = np.zeros(s.size, dtype=bool)
    pred[_rank_order(s)[:P]] = True
    return pred


def f1_matched(scores, labels) -> float:
    """F1 after predicting exactly as many positives as there are true causes."""
    s, y = _check(scores, labels)
    P = int(y.sum())
    if P == 0:
        raise DegenerateLabels("F1 needs at least one positive")
    tp = int((top_p_predictions(s, P) & y).sum())
    return tp / P


@dataclass
class MetricReport:
    per_target: list[dict] = field(default_factory=list)
    mean_auroc: float = math.nan
    mean_ap: float = math.nan
    mean_f1: float = math.nan
    n_valid: int = 0
    seeds: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.n_valid == 0

    def aggregates(self) -> dict:
        d = asdict(self)
        d.pop("per_target")
        d["empty"] = self.empty
        d["ap_definition"] = "non-interpolated"
        return d


def valid_targets(labels: np.ndarray) -> list[int]:
    return [i for i in range(labels.shape[0]) if labels[i].sum() > 0]


def evaluate_scores(labels: np.ndarray, score_fn: Callable[[int], CauseScoreVector | np.ndarray],
                    seeds: dict | None = None) -> MetricReport:
    """Average metrics over targets with at least one cause, self-index excluded.

    A target whose every other variable is a cause has no negatives; its
    AUROC is recorded as NaN and left out of the AUROC mean.
    """
    rows = []
    for i in valid_targets(labels):
        out = score_fn(i)
        s = out.s if isinstance(out, CauseScoreVector) else np.asarray(out, dtype=np.float64)
        keep = np.arange(labels.shape[0]) != i
        y, si = labels[i, keep], s[keep]
        try:
            a = auroc(si, y)
        except DegenerateLabels:
            a = math.nan
        rows.append({"target": i, "n_causes": int(y.sum()), "auroc": a,
                     "ap": average_precision(si, y), "f1": f1_matched(si, y)})
    rep = MetricReport(rows, seeds=dict(seeds or {}))
    rep.n_valid = len(rows)
    if rows:
        aur = [r["auroc"] for r in rows if not math.isnan(r["auroc"])]
        rep.mean_auroc = float(np.mean(aur)) if aur else math.nan
        rep.mean_ap = float(np.mean([r["ap"] for r in rows]))
        rep.mean_f1 = float(np.mean([r["f1"] for r in rows]))
    return rep


def evaluate_targets(ds, score_fn, seeds: dict | None = None) -> MetricReport:
    return evaluate_scores(ds.labels, score_fn, seeds)


# --- error vs. distance ----------------------------------------------------


@dataclass
class DistanceErrorCurve:
    fnr: dict[int, float]
    support: dict[int, int]

    def rows(self) -> list[tuple[int, float, int]]:
        return [(d, self.fnr[d], self.support[d]) for d in sorted(self.fnr)]

    def slope(self, lo: int = 1, hi: int = 3) -> float:
        ds = [d for d in sorted(self.fnr) if lo <= d <= hi]
        if len(ds) < 2:
            raise ValueError(f"need at least two distances in [{lo}, {hi}]")
        return float(np.polyfit(ds, [self.fnr[d] for d in ds], 1)[0])


def fnr_by_distance(g: CausalGraph, predictions: Mapping[int, np.ndarray | set]) -> DistanceErrorCurve:
    """False-negative rate of true causes bucketed by shortest-path length to the target."""
    missed: dict[int, int] = {}
    total: dict[int, int] = {}
    for i, pred in predictions.items():
        if not isinstance(pred, (set, frozenset)):
            pred = set(np.flatnonzero(np.asarray(pred)).tolist())
        for j, d in shortest_path_lengths_to(g, i).items():
            total[d] = total.get(d, 0) + 1
            if j not in pred:
                missed[d] = missed.get(d, 0) + 1
    return DistanceErrorCurve({d: missed.get(d, 0) / t for d, t in total.items()}, total)


def matched_predictions(labels: np.ndarray, scores: Mapping[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Per-target top-P thresholding, P = number of true causes."""
    out = {}
    for i, s in scores.items():
        s = np.array(s, dtype=np.float64)
        s[i] = -np.inf
        out[i] = top_p_predictions(s, int(labels[i].sum()))
    return out


def traversal_predictions(g: CausalGraph, edge_error: float, seed: int) -> dict[int, set]:
    """Causes read off an estimated direct graph that misses each true edge w.p. ``edge_error``."""
    from .graph import ancestors

    rng = np.random.default_rng(seed)
    kept = [e for e in g.sorted_edges() if rng.random() >= edge_error]
    est = CausalGraph(g.n, frozenset(kept))
    return {i: ancestors(est, i) for i in range(g.n) if g.parent_lists[i]}


def propagated_error(e: float, d: int) -> float:
    if not 0 <= e <= 1 or d < 0:
        raise ValueError("need e in [0, 1] and d >= 0")
    return 1.0 - (1.0 - e) ** d


def relative_auroc(p: float, p_best: float, p_random: float = 0.5) -> float:
    if p_best == p_random:
        raise ZeroDivisionError("relative AUROC undefined when p_best == p_random")
    return 100.0 * (p - p_random) / (p_best - p_random)


# --- baselines -------------------------------------------------------------


def correlation_baseline(X: np.ndarray, i: int) -> CauseScoreVector:
    X = np.asarray(X, dtype=np.float64)
    Z = X - X.mean(1, keepdims=True)
    norms = np.sqrt((Z**2).sum(1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = Z @ Z[i] / (norms * norms[i])
    return CauseScoreVector(np.nan_to_num(np.abs(r), nan=0.0, posinf=0.0), i)


def random_baseline(n: int, i: int, seed: int) -> CauseScoreVector:
    return CauseScoreVector(np.random.default_rng([seed, i]).random(n), i)


# --- export ----------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else repr(float(x))
    return str(x)


def write_report(rep: MetricReport, directory: str | Path, prefix: str = "report") -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cols = ["target", "n_causes", "auroc", "ap", "f1"]
    extra = sorted({k for r in rep.per_target for k in r} - set(cols))
    with open(d / f"{prefix}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols + extra)
        for r in rep.per_target:
            w.writerow([_fmt(r.get(c, "")) for c in cols + extra])
    agg = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in rep.aggregates().items()}
    (d / f"{prefix}.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")


def write_distance_curve(curve: DistanceErrorCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d", "fnr", "support"])
        for d, f, s in curve.rows():
            w.writerow([d, _fmt(f), s])
