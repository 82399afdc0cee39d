"""Local training and ensembled local inference."""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data import LabeledDataset, ObservationSet, SubsampleSpec, partition_for_inference, sample_columns, subsample
from .evaluation import CauseScoreVector, evaluate_scores
from .model import CauseModel, ModelConfig, init_params

log = logging.getLogger(__name__)

Scorer = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_steps: int = 40_000
    base_lr: float = 8e-4
    schedule: str = "cosine"
    weight_decay: float = 1e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    eval_every: int = 200
    patience: int = 4_000
    n_sub: int = 200
    m_sub: int = 200
    val_ensemble: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "max_steps", "eval_every", "patience", "n_sub", "m_sub", "val_ensemble"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.base_lr <= 0 or self.weight_decay < 0:
            raise ValueError("base_lr must be positive and weight_decay non-negative")
        if self.patience % self.eval_every:
            raise ValueError("patience must be a multiple of eval_every")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass(frozen=True)
class InferenceConfig:
    n_sub: int = 200
    m_sub: int = 200
    ensemble: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.ensemble < 1 or self.n_sub < 1 or self.m_sub < 1:
            raise ValueError("ensemble, n_sub and m_sub must be positive")


@dataclass
class TrainResult:
    params: CauseModel
    best_step: int
    steps_run: int
    best_metric: float
    stopped_early: bool
    history: list[dict] = field(default_factory=list)


def bce_with_logits(scores, labels, mask=None) -> torch.Tensor:
    """Mean of ``max(z, 0) - z*y + log1p(exp(-|z|))`` over (unmasked) entries."""
    z = torch.as_tensor(scores)
    if not z.is_floating_point():
        z = z.double()
    y = torch.as_tensor(labels, dtype=z.dtype)
    if z.shape != y.shape:
        raise ValueError(f"scores and labels differ in shape: {tuple(z.shape)} vs {tuple(y.shape)}")
    per = z.clamp(min=0) - z * y + torch.log1p(torch.exp(-z.abs()))
    if mask is None:
        return per.mean()
    mask = torch.as_tensor(mask, dtype=z.dtype)
    return (per * mask).sum() / mask.sum()


def cosine_lr(step: int, total: int, base: float) -> float:
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total))


def _draw_batch(datasets: Sequence[LabeledDataset], tc: TrainConfig, rng: np.random.Generator):
    groups: dict[tuple, list] = {}
    for _ in range(tc.batch_size):
        ds = datasets[int(rng.integers(len(datasets)))]
        i = int(rng.integers(ds.obs.n))
        lb = subsample(ds.obs, i, SubsampleSpec(tc.n_sub, tc.m_sub), rng)
        groups.setdefault(lb.X_VO.shape, []).append(
            (lb.X_VO, lb.M_VO, ds.labels[np.ix_(lb.V, lb.V)])
        )
    return [tuple(np.stack(parts) for parts in zip(*items)) for items in groups.values()]


def batch_loss(p: CauseModel, groups) -> torch.Tensor:
    """Loss over every (target, candidate) pair of the subsampled matrices.

    One feature extraction per matrix serves all its targets; the diagonal
    (a variable scored against itself) is excluded.
    """
    dtype = next(p.parameters()).dtype
    total, count = 0.0, 0
    for X, M, L in groups:
        S = p(torch.as_tensor(X, dtype=dtype), torch.as_tensor(M, dtype=dtype))
        off = 1.0 - torch.eye(S.shape[-1], dtype=dtype).expand_as(S)
        total = total + bce_with_logits(S, torch.as_tensor(L), off) * off.sum()
        count += off.sum()
    return total / count


def validation_auroc(p: CauseModel, val: Sequence[LabeledDataset], ic: InferenceConfig) -> float:
    scores = []
    for ds in val:
        S = score_matrix(p, ds.obs, ic)
        rep = evaluate_scores(ds.labels, lambda i: S[i])
        if not rep.empty and not math.isnan(rep.mean_auroc):
            scores.append(rep.mean_auroc)
    return float(np.mean(scores)) if scores else math.nan


def _checksum(p: CauseModel) -> str:
    import hashlib

    h = hashlib.sha256()
    for k, v in p.state_dict().items():
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def train(D: Sequence[LabeledDataset], mc: ModelConfig, tc: TrainConfig,
          val: LabeledDataset | Sequence[LabeledDataset] | None = None,
          log_path: str | Path | None = None, init: CauseModel | None = None) -> TrainResult:
    """Run local training with early stopping on mean validation AUROC.

    Returns the parameters with the best validation score (or the final
    ones when no validation data is given).
    """
    if not D:
        raise ValueError("need at least one training dataset")
    if isinstance(val, LabeledDataset):
        val = [val]
    rng = np.random.default_rng(tc.seed)
    torch.manual_seed(tc.seed)
    model = init if init is not None else init_params(mc, tc.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=tc.base_lr, betas=tc.betas, eps=tc.eps,
                            weight_decay=tc.weight_decay)
    vic = InferenceConfig(tc.n_sub, tc.m_sub, tc.val_ensemble, seed=tc.seed + 1)
    log_fh = open(log_path, "w") if log_path else None
    best_metric, best_step, best_state = -math.inf, 0, None
    history: list[dict] = []
    running, seen = 0.0, 0
    step = 0
    stopped = False
    try:
        for step in range(1, tc.max_steps + 1):
            lr = cosine_lr(step - 1, tc.max_steps, tc.base_lr) if tc.schedule == "cosine" else tc.base_lr
            for group in opt.param_groups:
                group["lr"] = lr
            model.train()
            loss = batch_loss(model, _draw_batch(D, tc, rng))
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss.item()} at step {step} (lr={lr:.3g}, seed={tc.seed})")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            running += loss.item()
            seen += 1
            if step % tc.eval_every:
                continue
            record = {"step": step, "lr": lr, "train_loss": running / seen, "seed": tc.seed}
            running, seen = 0.0, 0
            if val:
                model.eval()
                with torch.no_grad():
                    metric = validation_auroc(model, val, vic)
                if metric > best_metric:
                    best_metric, best_step = metric, step
                    best_state = copy.deepcopy(model.state_dict())
                record.update(val_auroc=metric, best_val_auroc=best_metric, best_step=best_step)
            history.append(record)
            log.info("step %d loss %.4f val %s", step, record["train_loss"], record.get("val_auroc"))
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
            if val and step - best_step >= tc.patience:
                stopped = True
                break
    finally:
        if log_fh:
            log_fh.close()
    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        best_step = step
    model.eval()
    return TrainResult(model, best_step, step, best_metric, stopped, history)


# --- inference -------------------------------------------------------------


def model_scorer(p: CauseModel) -> Scorer:
    dtype = next(p.parameters()).dtype

    def run(X_VO: np.ndarray, M_VO: np.ndarray, target_pos: int) -> np.ndarray:
        with torch.no_grad():
            F_ = p.features(torch.as_tensor(X_VO, dtype=dtype)[None], torch.as_tensor(M_VO, dtype=dtype)[None])[0]
            return (F_[:, 0, :] @ F_[target_pos, 1, :]).double().numpy()

    return run


def infer(p: CauseModel | None, obs: ObservationSet, i: int, ic: InferenceConfig,
          scorer: Scorer | None = None) -> CauseScoreVector:
    """Average local scores over ``ensemble`` random partitions of the variables.

    Each pass splits the non-targets into blocks, adds the target to each
    block and draws a fresh eligible observation subsample per block.
    """
    n = obs.n
    if not 0 <= i < n:
        raise IndexError(f"target {i} out of range for n={n}")
    scorer = scorer or model_scorer(p)
    rng = np.random.default_rng([ic.seed, i])
    s = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    for _ in range(ic.ensemble):
        for block in partition_for_inference(n, i, ic.n_sub, rng):
            O = sample_columns(obs.eligible_columns(block), ic.m_sub, rng)
            X_VO = obs.X[np.ix_(block, O)]
            M_VO = obs.M[np.ix_(block, O)]
            s[block] += scorer(X_VO, M_VO, block.size - 1)
            counts[block] += 1
    return CauseScoreVector(s / ic.ensemble, i, counts)


def score_matrix(p: CauseModel, obs: ObservationSet, ic: InferenceConfig,
                 targets: Sequence[int] | None = None) -> np.ndarray:
    """Row t holds the cause scores for target t.

    When every variable fits into one block the feature matrix of each pass
    is shared by all targets; otherwise this falls back to :func:`infer`.
    """
    n = obs.n
    targets = range(n) if targets is None else targets
    S = np.zeros((n, n))
    if n > ic.n_sub:
        scorer = model_scorer(p)
        for t in targets:
            S[t] = infer(p, obs, t, ic, scorer).s
        return S
    rng = np.random.default_rng(ic.seed)
    dtype = next(p.parameters()).dtype
    V = np.arange(n)
    for _ in range(ic.ensemble):
        O = sample_columns(obs.eligible_columns(V), ic.m_sub, rng)
        with torch.no_grad():
            S += p(torch.as_tensor(obs.X[:, O], dtype=dtype)[None],
                   torch.as_tensor(obs.M[:, O], dtype=dtype)[None])[0].double().numpy()
    return S / ic.ensemble


def measure_complexity(p: CauseModel, n_grid: Sequence[int], ic: InferenceConfig,
                       T_grid: Sequence[int] | None = None, per_var: int = 2, obs: int = 200,
                       repeats: int = 3, seed: int = 0) -> dict:
    """Wall time of :func:`infer` on random data for each (n, T); log-log slope in n."""
    rows = []
    for n in n_grid:
        rng = np.random.default_rng([seed, n])
        m = n * per_var + obs
        M = np.zeros((n, m), dtype=np.uint8)
        M[np.repeat(np.arange(n), per_var), obs + np.arange(n * per_var)] = 1
        data = ObservationSet(rng.standard_normal((n, m)).astype(np.float32), M)
        for T in (T_grid or [ic.ensemble]):
            cfg = InferenceConfig(ic.n_sub, ic.m_sub, T, ic.seed)
            infer(p, data, 0, InferenceConfig(ic.n_sub, ic.m_sub, 1, ic.seed))  # warm-up
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                infer(p, data, 0, cfg)
                times.append(time.perf_counter() - t0)
            rows.append({"n": n, "T": T, "n_sub": ic.n_sub, "m_sub": ic.m_sub, "seconds": float(np.median(times))})
    base_T = (T_grid or [ic.ensemble])[0]
    pts = [(r["n"], r["seconds"]) for r in rows if r["T"] == base_T]
    slope = float(np.polyfit(np.log([a for a, _ in pts]), np.log([b for _, b in pts]), 1)[0]) if len(pts) > 1 else math.nan
    return {"rows": rows, "loglog_slope_n": slope}


def describe(tc: TrainConfig) -> dict:
    return asdict(tc)
