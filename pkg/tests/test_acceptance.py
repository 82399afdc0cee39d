"""The thirteen acceptance criteria, one test each, at their stated tolerances.

Each test records a one-line PASS/FAIL verdict with its measured numbers;
the lines are printed together in the terminal summary.
"""

import itertools
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import torch

from targetcause.cli import main, make_system
from targetcause.config import DataSection, GraphSection
from targetcause.data import ObservationSet, SubsampleSpec, partition_for_inference, subsample
from targetcause.engine import InferenceConfig, TrainConfig, batch_loss, infer, measure_complexity, score_matrix, train
from targetcause.evaluation import (
    average_precision,
    auroc,
    correlation_baseline,
    evaluate_scores,
    f1_matched,
    fnr_by_distance,
    matched_predictions,
    propagated_error,
    random_baseline,
    traversal_predictions,
    valid_targets,
)
from targetcause.graph import CausalGraph, GraphKind, ancestors, generate_graph, marginalize, parents, sparsity_stats
from targetcause.grn_sim import ExpressionMatrix, GrnConfig, NoiseProfile, apply_fidelity, apply_technical_noise, \
    build_network, hill, simulate_clean
from targetcause.model import ModelConfig, count_params, extract_features, init_params

from conftest import ACCEPTANCE_LINES
from oracles import all_dags, pairwise_auroc, random_dag


@contextmanager
def criterion(k: int, title: str):
    notes: list[str] = []
    try:
        yield notes
    except BaseException as err:
        ACCEPTANCE_LINES.append(f"criterion {k}: FAIL  {title} | {'; '.join(notes + [repr(err)[:300]])}")
        raise
    ACCEPTANCE_LINES.append(f"criterion {k}: PASS  {title} | {'; '.join(notes)}")


# --- 1 ---------------------------------------------------------------------


def test_criterion_01_local_inference_oracle():
    with criterion(1, "marginal ancestry equals ancestry restricted to V") as notes:
        t0 = time.perf_counter()
        checked = 0
        for n in range(1, 6):
            subsets = [(V, np.ix_(V, V)) for r in range(1, n + 1) for V in itertools.combinations(range(n), r)]
            for edges in all_dags(n):
                g = CausalGraph(n, edges)
                A = g.ancestor_matrix
                for V, idx in subsets:
                    assert (marginalize(g, V).ancestor_matrix == A[idx]).all()
                    checked += 1
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 13))
            g = CausalGraph.from_edges(n, random_dag(rng, n, float(rng.uniform(0.1, 0.6))))
            V = sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
            mg = marginalize(g, V)
            for p, v in enumerate(V):
                got = {V[q] for q in ancestors(mg, p)}
                assert got == ancestors(g, v) & set(V)
        chain = CausalGraph.from_edges(3, [(0, 1), (1, 2)])
        mg = marginalize(chain, [0, 2])
        assert parents(mg, 1) == {0} and 0 not in parents(chain, 2)
        elapsed = time.perf_counter() - t0
        notes.append(f"{checked} exhaustive (DAG, V) pairs n<=5 + 200 random n<=12, chain counter-example ok, "
                     f"{elapsed:.1f}s")
        assert elapsed < 60


# --- 2 ---------------------------------------------------------------------


def test_criterion_02_linear_inference_scaling():
    with criterion(2, "inference time ratios for n 500->1000 and T 10->20 in [1.6, 2.6]") as notes:
        t0 = time.perf_counter()
        p = init_params(ModelConfig(), 0)
        ic = InferenceConfig(100, 100, 10, 0)
        by_n = measure_complexity(p, [500, 1000], ic, [10], repeats=2)["rows"]
        by_T = measure_complexity(p, [500], ic, [10, 20], repeats=2)["rows"]
        r_n = by_n[1]["seconds"] / by_n[0]["seconds"]
        r_T = by_T[1]["seconds"] / by_T[0]["seconds"]
        elapsed = time.perf_counter() - t0
        notes.append(f"ratio_n={r_n:.3f} ratio_T={r_T:.3f} ({elapsed:.0f}s)")
        assert 1.6 <= r_n <= 2.6 and 1.6 <= r_T <= 2.6
        assert elapsed < 600


# --- 3 ---------------------------------------------------------------------


def test_criterion_03_parameter_count():
    with criterion(3, "default parameter count in [55000, 70000]") as notes:
        c = count_params(ModelConfig())
        notes.append(f"count={c}")
        assert 55_000 <= c <= 70_000


# --- 4 ---------------------------------------------------------------------


def test_criterion_04_permutation_symmetries():
    with criterion(4, "variable-permutation equivariance and observation-permutation invariance") as notes:
        for dtype, tol in ((torch.float32, 1e-4), (torch.float64, 1e-8)):
            p = init_params(ModelConfig(), 0, dtype)
            gen = torch.Generator().manual_seed(1)
            X = torch.randn(12, 20, generator=gen, dtype=dtype)
            M = (torch.rand(12, 20, generator=gen) < 0.2).to(dtype)
            rng = np.random.default_rng(2)
            worst_v = worst_o = 0.0
            with torch.no_grad():
                F = extract_features(p, X, M)
                for _ in range(50):
                    pv = torch.as_tensor(rng.permutation(12))
                    po = torch.as_tensor(rng.permutation(20))
                    worst_v = max(worst_v, (extract_features(p, X[pv], M[pv]) - F[pv]).abs().max().item())
                    worst_o = max(worst_o, (extract_features(p, X[:, po], M[:, po]) - F).abs().max().item())
            notes.append(f"{str(dtype)[6:]}: var={worst_v:.1e} obs={worst_o:.1e} (tol {tol:.0e})")
            assert worst_v < tol and worst_o < tol


# --- 5 ---------------------------------------------------------------------


def test_criterion_05_gradient_check():
    with criterion(5, "analytic vs central-difference gradients, rel. err < 1e-3 per parameter group") as notes:
        p = init_params(ModelConfig(1, 4, 2, 8), 0, torch.float64)
        rng = np.random.default_rng(0)
        X = rng.standard_normal((2, 6, 7))
        M = (rng.random((2, 6, 7)) < 0.2).astype(np.float64)
        L = (rng.random((2, 6, 6)) < 0.4).astype(np.float64)
        groups = [(X, M, L)]
        p.zero_grad()
        batch_loss(p, groups).backward()
        eps, worst = 1e-6, 0.0
        for name, t in p.named_parameters():
            flat = t.data.view(-1)
            num = torch.zeros_like(flat)
            with torch.no_grad():
                for k in range(flat.numel()):
                    orig = flat[k].item()
                    flat[k] = orig + eps
                    up = batch_loss(p, groups).item()
                    flat[k] = orig - eps
                    down = batch_loss(p, groups).item()
                    flat[k] = orig
                    num[k] = (up - down) / (2 * eps)
            ana = t.grad.view(-1)
            rel = ((ana - num).norm() / max(num.norm().item(), ana.norm().item(), 1e-12)).item()
            worst = max(worst, rel)
            assert rel < 1e-3, f"{name}: {rel:.2e}"
        notes.append(f"worst relative error {worst:.1e} over {len(list(p.parameters()))} groups")


# --- 6 ---------------------------------------------------------------------


def test_criterion_06_metric_oracles():
    with criterion(6, "AUROC oracle agreement, AP/F1 fixtures, random baseline 0.50 +- 0.05") as notes:
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(1000):
            k = int(rng.integers(2, 40))
            s = rng.integers(0, 5, size=k).astype(float)
            y = rng.random(k) < 0.4
            if y.all() or not y.any():
                y[0], y[-1] = True, False
            worst = max(worst, abs(auroc(s, y) - pairwise_auroc(s, y)))
        assert worst < 1e-9
        assert average_precision([0.9, 0.1], [1, 0]) == 1.0
        assert average_precision([0.9, 0.8, 0.1], [0, 1, 1]) == pytest.approx((1 / 2 + 2 / 3) / 2, abs=1e-15)
        assert average_precision([0.9, 0.8, 0.7, 0.1], [0, 0, 0, 1]) == pytest.approx(1 / 4, abs=1e-15)
        assert f1_matched([0.9, 0.2, 0.8, 0.1], [1, 0, 0, 1]) == 0.5
        assert f1_matched([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
        assert f1_matched([0.1, 0.8, 0.9], [1, 0, 0]) == 0.0
        n = 201
        L = np.zeros((n, n), dtype=np.uint8)
        for i in range(200):
            L[i, rng.choice(np.delete(np.arange(n), i), 20, replace=False)] = 1
        rep = evaluate_scores(L, lambda i: random_baseline(n, i, 7))
        notes.append(f"max |sort - pairwise| = {worst:.1e}; random mean AUROC {rep.mean_auroc:.4f} "
                     f"over {rep.n_valid} targets")
        assert rep.n_valid == 200 and abs(rep.mean_auroc - 0.5) <= 0.05


# --- 7 ---------------------------------------------------------------------


def test_criterion_07_subsampler_soundness():
    with criterion(7, "no out-of-V interventions in 1000 draws; exact partition coverage") as notes:
        rng = np.random.default_rng(0)
        n, per_var = 40, 3
        M = np.zeros((n, 10 + n * per_var), dtype=np.uint8)
        M[np.repeat(np.arange(n), per_var), 10 + np.arange(n * per_var)] = 1
        obs = ObservationSet(rng.standard_normal(M.shape), M)
        violations = 0
        for _ in range(1000):
            i = int(rng.integers(n))
            lb = subsample(obs, i, SubsampleSpec(int(rng.integers(1, n + 1)), int(rng.integers(1, 60))), rng)
            outside = np.setdiff1d(np.arange(n), lb.V)
            violations += int(M[np.ix_(outside, lb.O)].sum())
        bad_partitions = 0
        for _ in range(100):
            n2 = int(rng.integers(2, 500))
            n_sub = int(rng.integers(1, n2 + 5))
            i = int(rng.integers(n2))
            blocks = partition_for_inference(n2, i, n_sub, rng)
            rest = sorted(np.concatenate([b[:-1] for b in blocks]).tolist())
            ok = rest == [v for v in range(n2) if v != i] and all(b[-1] == i for b in blocks)
            bad_partitions += not ok
        notes.append(f"violations={violations}; partitions with coverage errors={bad_partitions}/100")
        assert violations == 0 and bad_partitions == 0


# --- 8 ---------------------------------------------------------------------


def test_criterion_08_ensemble_bookkeeping():
    with criterion(8, "constant stub scorer: s[j] = c and counts = T for every non-target") as notes:
        rng = np.random.default_rng(0)
        trials = 0
        for _ in range(100):
            n = int(rng.integers(2, 120))
            n_sub = int(rng.integers(1, 50))
            T = int(rng.integers(1, 12))
            i = int(rng.integers(n))
            M = np.zeros((n, n + 5), dtype=np.uint8)
            M[np.arange(n), 5 + np.arange(n)] = 1
            obs = ObservationSet(np.zeros(M.shape), M)
            out = infer(None, obs, i, InferenceConfig(n_sub, 8, T, trials),
                        scorer=lambda X, M_, t: np.full(X.shape[0], 0.3125))
            keep = np.arange(n) != i
            assert (out.s[keep] == 0.3125).all()
            assert (out.counts[keep] == T).all()
            trials += 1
        notes.append(f"{trials} random (n, n', T) configurations exact")


# --- 9 / 10 ----------------------------------------------------------------

DESK_SEEDS = (0, 1, 2)
DESK_STEPS = 1000


def _desk_run(seed: int) -> dict:
    sec = DataSection(graph=GraphSection(kind="ER", n=20, avg_degree=2.0), per_var=5, obs=200)
    systems = [make_system(sec, seed, k) for k in range(56)]
    train_ds, val_ds, test_ds = systems[:40], systems[40:48], systems[48:]
    tc = TrainConfig(batch_size=16, max_steps=DESK_STEPS, base_lr=2e-3, eval_every=250, patience=DESK_STEPS,
                     n_sub=20, m_sub=100, seed=seed)
    t0 = time.perf_counter()
    res = train(train_ds, ModelConfig(layers=4, embed_dim=8, heads=4, ff_hidden=48), tc, val_ds)
    train_time = time.perf_counter() - t0
    ic = InferenceConfig(20, 100, 10, seed)
    model_auc, corr_auc, scores = [], [], []
    for ds in test_ds:
        S = score_matrix(res.params, ds.obs, ic)
        scores.append(S)
        model_auc.append(evaluate_scores(ds.labels, lambda i: S[i]).mean_auroc)
        corr_auc.append(evaluate_scores(ds.labels, lambda i: correlation_baseline(ds.obs.X, i)).mean_auroc)
    return {"seed": seed, "steps": res.steps_run, "train_time": train_time, "test": test_ds, "scores": scores,
            "model": float(np.mean(model_auc)), "corr": float(np.mean(corr_auc))}


@pytest.fixture(scope="module")
def desk_runs():
    return [_desk_run(s) for s in DESK_SEEDS]


def test_criterion_09_desk_scale_end_to_end(desk_runs):
    with criterion(9, "reduced model beats correlation on held-out linear-SCM graphs, three seeds") as notes:
        failures = []
        for r in desk_runs:
            notes.append(f"seed {r['seed']}: model={r['model']:.4f} corr={r['corr']:.4f} steps={r['steps']} "
                         f"train={r['train_time'] / 60:.1f}min")
            if not (r["model"] >= 0.70 and r["model"] > r["corr"] and 0.6 <= r["corr"] <= 0.8
                    and r["steps"] <= 5000 and r["train_time"] < 30 * 60):
                failures.append(r["seed"])
        assert not failures, f"seeds failing: {failures}"


def _pooled_curve(g_pred_pairs) -> dict[int, float]:
    missed, total = {}, {}
    for g, pred in g_pred_pairs:
        c = fnr_by_distance(g, pred)
        for d, f in c.fnr.items():
            missed[d] = missed.get(d, 0.0) + f * c.support[d]
            total[d] = total.get(d, 0) + c.support[d]
    return {d: missed[d] / total[d] for d in sorted(total)}


def _slope(curve: dict[int, float]) -> float:
    return float(np.polyfit([1, 2, 3], [curve[1], curve[2], curve[3]], 1)[0])


def test_criterion_10_error_propagation(desk_runs):
    with criterion(10, "traversal FNR tracks 1-(1-e)^d; learned FNR curve flatter than traversal's") as notes:
        t0 = time.perf_counter()
        chain = CausalGraph.from_edges(8, [(k, k + 1) for k in range(7)])
        for e in (0.05, 0.1):
            curve = _pooled_curve((chain, traversal_predictions(chain, e, s)) for s in range(3000))
            gap = max(abs(curve[d] - propagated_error(e, d)) for d in range(1, 5))
            notes.append(f"chain e={e}: max |FNR - formula| over d<=4 = {gap:.4f}")
            assert gap <= 0.05
        for r in desk_runs:
            pairs = []
            for ds, S in zip(r["test"], r["scores"]):
                pairs.append((ds.graph, matched_predictions(ds.labels, {i: S[i] for i in valid_targets(ds.labels)})))
            learned = _pooled_curve(pairs)
            e = learned[1]
            trav = _pooled_curve((ds.graph, traversal_predictions(ds.graph, e, s))
                                 for ds in r["test"] for s in range(100))
            notes.append(f"seed {r['seed']}: learned FNR d1..3 = "
                         f"{learned[1]:.3f}/{learned[2]:.3f}/{learned[3]:.3f} slope {_slope(learned):.4f}; "
                         f"traversal (e={e:.3f}) slope {_slope(trav):.4f}")
            assert _slope(learned) < _slope(trav)
        assert time.perf_counter() - t0 < 600


# --- 11 --------------------------------------------------------------------


def test_criterion_11_simulator_checks():
    with criterion(11, "Hill fixtures, steady state, fidelity levels, dropout rate") as notes:
        assert hill(2.0, 1.0, 2) == pytest.approx(0.8, abs=1e-15)
        assert hill(1.0, 1.0, 4) == 0.5
        assert hill(0.0, 1.0, 2, repressive=True) == 1.0
        assert hill(3.0, 1.0, 1, repressive=True) == pytest.approx(0.25, abs=1e-15)

        g = CausalGraph.from_edges(3, [(0, 1), (0, 2)])
        cfg = GrnConfig(cell_types=4, noise_amplitude=0.0, init="zero", burn_in_steps=4000)
        E = simulate_clean(g, cfg, cells_per_type=3, seed=11)
        net = build_network(g, cfg, np.random.default_rng(np.random.SeedSequence(11).spawn(3)[0]))
        x0 = net.basal[0, E.cell_type] / cfg.decay
        worst = float(np.max(np.abs(E.values[0] / x0 - 1)))
        for e, child in enumerate(net.dst):
            closed = net.k[e] * hill(x0, net.K[e], cfg.hill_coeff, net.repressive[e]) / cfg.decay
            worst = max(worst, float(np.max(np.abs(E.values[child] / closed - 1))))
        notes.append(f"steady-state max rel. err {worst:.1e}")
        assert worst < 0.01

        lam = np.random.default_rng(0).uniform(0.5, 5.0, size=(100, 1000))
        assert np.array_equal(apply_fidelity(lam, "HIGH", 0), lam)
        low = apply_fidelity(lam, "LOW", 1)
        assert np.array_equal(low, np.round(low))
        lam_c = np.full((100, 1000), 3.0)
        med = apply_fidelity(lam_c, "MEDIUM", 2)
        N = med.size
        mean_band = 4 * math.sqrt(3.0 / 100 / N)
        var_pred = 3.0 / 100
        var_band = 4 * var_pred * math.sqrt(2 / (N - 1))
        notes.append(f"MEDIUM mean {med.mean():.5f} (3 +- {mean_band:.5f}), var {med.var(ddof=1):.5f} "
                     f"({var_pred} +- {var_band:.5f})")
        assert abs(med.mean() - 3.0) <= mean_band
        assert abs(med.var(ddof=1) - var_pred) <= var_band

        ones = ExpressionMatrix(np.ones((100, 1000)), np.zeros(1000, int), np.full(1000, -1))
        rate = float((apply_technical_noise(ones, NoiseProfile(dropout_pct=0.8), 5).values == 0).mean())
        notes.append(f"dropout rate {rate:.4f} (configured 0.8)")
        assert abs(rate - 0.8) <= 0.01


# --- 12 --------------------------------------------------------------------


def test_criterion_12_sparsity_statistics():
    with criterion(12, "ER n=1000 in-degree 2: direct ratio 0.2% +- 0.05, cause ratio in [0.8%, 1.6%]") as notes:
        t0 = time.perf_counter()
        gs = [generate_graph(GraphKind("ER", 2.0), 1000, s) for s in range(10)]
        st = sparsity_stats(gs)
        notes.append(f"direct {100 * st.direct_cause_ratio:.3f}%, cause {100 * st.cause_ratio_min:.3f}%.."
                     f"{100 * st.cause_ratio_max:.3f}% ({time.perf_counter() - t0:.1f}s)")
        assert abs(st.direct_cause_ratio - 0.002) <= 0.0005
        assert 0.008 <= st.cause_ratio_min and st.cause_ratio_max <= 0.016
        assert time.perf_counter() - t0 < 120


# --- 13 --------------------------------------------------------------------


REPRO_CONFIG = {
    "seeds": {"graph": 5, "data": 6, "train": 7, "infer": 8},
    "data": {"graph": {"kind": "SF", "n": 10}, "per_var": 2, "obs": 30, "systems": 3},
    "model": {"layers": 2, "embed_dim": 8, "heads": 4, "ff_hidden": 16},
    "train": {"batch_size": 4, "max_steps": 20, "eval_every": 5, "patience": 10, "n_sub": 10, "m_sub": 16},
    "infer": {"n_sub": 5, "m_sub": 16, "ensemble": 4},
    "bench": {"sweep_T": [1, 3], "sweep_n_sub": [5, 10],
              "grid_sources": {"er": {"graph": {"kind": "ER", "n": 8}, "per_var": 2, "obs": 10},
                               "sbm": {"graph": {"kind": "SBM", "n": 8}, "per_var": 2, "obs": 10}},
              "grid_train_systems": 2, "grid_test_systems": 1},
}
GRN_CONFIG = {
    "seeds": {"graph": 1, "data": 2, "train": 3, "infer": 4},
    "data": {"simulator": "grn", "graph": {"kind": "SF_DIRECT", "n": 12}, "per_var": 2, "obs": 30,
             "normalize": "cpm", "grn": {"fidelity": "LOW", "noise_preset": "10x-chromium", "burn_in_steps": 100}},
}


def _run_all(root: Path, cfg: str, grn_cfg: str) -> None:
    calls = [
        ["gen-graph", "--config", cfg, "--out", root / "graph"],
        ["gen-data", "--config", cfg, "--out", root / "data"],
        ["gen-data", "--config", grn_cfg, "--out", root / "grn"],
        ["train", "--config", cfg, "--data", root / "data", "--val", root / "data" / "sys_002", "--out", root / "ck"],
        ["infer", "--config", cfg, "--checkpoint", root / "ck", "--data", root / "data" / "sys_001",
         "--out", root / "scores"],
        ["eval", "--config", cfg, "--scores", root / "scores", "--data", root / "data" / "sys_001",
         "--baselines", "correlation,random", "--out", root / "report"],
        ["bench", "--config", cfg, "--checkpoint", root / "ck", "--data", root / "data", "--what", "sweeps,grid",
         "--out", root / "bench"],
        ["plot", "--csv", root / "report" / "distance.csv", "--out", root / "plots" / "distance.svg"],
        ["plot", "--csv", root / "bench" / "sweep_T.csv", "--out", root / "plots" / "sweep_T.svg"],
        ["plot", "--csv", root / "bench" / "grid.csv", "--out", root / "plots" / "grid.svg"],
    ]
    for argv in calls:
        assert main([str(a) for a in argv]) == 0, argv[0]


def test_criterion_13_cli_reproducibility(tmp_path):
    with criterion(13, "CLI reruns with identical config and seeds are byte-identical") as notes:
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps(REPRO_CONFIG))
        grn_cfg = tmp_path / "grn.json"
        grn_cfg.write_text(json.dumps(GRN_CONFIG))
        trees = []
        for name in ("a", "b"):
            root = tmp_path / name
            _run_all(root, str(cfg), str(grn_cfg))
            trees.append({str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
        a, b = trees
        differing = sorted(k for k in a if a[k] != b.get(k))
        notes.append(f"{len(a)} files compared, {len(differing)} differ")
        assert a.keys() == b.keys() and not differing, differing
