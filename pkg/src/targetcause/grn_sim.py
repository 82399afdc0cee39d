"""Single-cell expression simulator: Hill-regulated stochastic steady states,
knockouts, technical noise and observational fidelity levels."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Sequence

import numpy as np
from scipy import sparse

from .data import ObservationSet
from .graph import CausalGraph

FIDELITY_LEVELS = ("HIGH", "MEDIUM", "LOW")
MEDIUM_SAMPLES = 100


@dataclass(frozen=True)
class NoiseProfile:
    """Technical-noise settings. ``library_size_lognormal=None`` skips library rescaling."""

    dropout_pct: float = 0.0
    outlier_prob: float = 0.0
    outlier_mean: float = 0.8
    outlier_scale: float = 1.0
    library_size_lognormal: tuple[float, float] | None = None
    preset: str = "none"

    def __post_init__(self):
        if not 0.0 <= self.dropout_pct <= 1.0:
            raise ValueError(f"dropout_pct must lie in [0, 1], got {self.dropout_pct}")
        if not 0.0 <= self.outlier_prob <= 1.0 or self.outlier_scale < 0:
            raise ValueError("outlier_prob must lie in [0, 1] and outlier_scale be non-negative")
        if self.library_size_lognormal is not None and self.library_size_lognormal[1] < 0:
            raise ValueError("library-size sigma must be non-negative")


def noise_presets() -> dict[str, NoiseProfile]:
    raw = json.loads(resources.files(__package__).joinpath("noise_presets.json").read_text())
    out = {}
    for name, cfg in raw["presets"].items():
        lib = cfg.get("library_size_lognormal")
        out[name] = NoiseProfile(
            dropout_pct=cfg["dropout_pct"],
            outlier_prob=cfg["outlier_prob"],
            outlier_mean=cfg["outlier_mean"],
            outlier_scale=cfg["outlier_scale"],
            library_size_lognormal=None if lib is None else (float(lib[0]), float(lib[1])),
            preset=name,
        )
    return out


def noise_preset(name: str) -> NoiseProfile:
    presets = noise_presets()
    if name not in presets:
        raise KeyError(f"unknown noise preset {name!r}; available: {sorted(presets)}")
    return presets[name]


@dataclass(frozen=True)
class GrnConfig:
    cell_types: int = 10
    hill_coeff: float = 2.0
    half_response: float | None = None  # None: half the regulator's mean steady state
    interaction_range: tuple[float, float] = (1.0, 5.0)
    repressor_fraction: float = 0.2
    basal_range: tuple[float, float] = (1.0, 3.0)
    decay: float = 0.8
    sde_dt: float = 0.01
    burn_in_steps: int = 500
    noise_amplitude: float = 1.0
    init: str = "steady"  # "steady": start at the clean fixed point; "zero": start empty
    fidelity: str = "HIGH"
    noise_profile: NoiseProfile = field(default_factory=NoiseProfile)

    def __post_init__(self):
        if self.hill_coeff <= 0 or self.decay <= 0 or self.sde_dt <= 0 or self.cell_types < 1:
            raise ValueError("hill_coeff, decay, sde_dt must be positive and cell_types >= 1")
        if self.half_response is not None and self.half_response <= 0:
            raise ValueError("half_response must be positive")
        lo, hi = self.interaction_range
        if not 0 < lo <= hi:
            raise ValueError("interaction_range must be a positive interval")
        if not 0 <= self.repressor_fraction <= 1:
            raise ValueError("repressor_fraction must lie in [0, 1]")
        if self.burn_in_steps < 0 or self.noise_amplitude < 0:
            raise ValueError("burn_in_steps and noise_amplitude must be non-negative")
        if self.init not in ("steady", "zero"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.fidelity not in FIDELITY_LEVELS:
            raise ValueError(f"unknown fidelity {self.fidelity!r}; expected one of {FIDELITY_LEVELS}")


@dataclass(frozen=True)
class ExpressionMatrix:
    values: np.ndarray  # (n, m) mean expression lambda
    cell_type: np.ndarray  # (m,)
    intervention: np.ndarray  # (m,) knocked-out gene or -1

    def __post_init__(self):
        if (np.asarray(self.values) < 0).any():
            raise ValueError("expression values must be non-negative")

    def with_values(self, values: np.ndarray) -> "ExpressionMatrix":
        return replace(self, values=values)


def hill(x, K, h, repressive=False):
    """Activating ``x^h / (K^h + x^h)``; the repressive form is its complement."""
    x = np.asarray(x, dtype=np.float64)
    if (x < 0).any():
        raise ValueError("hill input must be non-negative")
    ratio = np.divide(x, K)
    act = 1.0 / (1.0 + np.power(ratio, -h, where=ratio > 0, out=np.full_like(ratio, np.inf)))
    act = np.where(ratio > 0, act, 0.0)
    return np.where(repressive, 1.0 - act, act)


@dataclass(frozen=True)
class _Network:
    src: np.ndarray
    dst: np.ndarray
    k: np.ndarray
    K: np.ndarray
    repressive: np.ndarray
    basal: np.ndarray  # (n, cell_types); zero for non-master genes
    incidence: sparse.csr_matrix  # (n, E) sums edge contributions into targets


def _production(net: _Network, x: np.ndarray, cell_type: np.ndarray, h: float, ko: np.ndarray) -> np.ndarray:
    P = net.basal[:, cell_type].copy()
    if net.src.size:
        act = hill(x[net.src], net.K[:, None], h, net.repressive[:, None])
        P += net.incidence @ (net.k[:, None] * act)
    P[ko] = 0.0
    return P


def _fixed_point(graph: CausalGraph, net: _Network, cfg: GrnConfig, cell_type: np.ndarray,
                 ko: np.ndarray) -> np.ndarray:
    """Clean steady state ``x = P(x_parents) / decay``, solved in topological order."""
    n, m = graph.n, cell_type.size
    x = np.zeros((n, m))
    by_dst: dict[int, list[int]] = {}
    for e, d in enumerate(net.dst.tolist()):
        by_dst.setdefault(d, []).append(e)
    for v in graph.topo_order:
        P = net.basal[v, cell_type].copy()
        for e in by_dst.get(v, ()):
            P += net.k[e] * hill(x[net.src[e]], net.K[e], cfg.hill_coeff, net.repressive[e])
        P[ko[v]] = 0.0
        x[v] = P / cfg.decay
    return x


def build_network(graph: CausalGraph, cfg: GrnConfig, rng: np.random.Generator) -> _Network:
    n = graph.n
    edges = graph.sorted_edges()
    src = np.array([j for j, _ in edges], dtype=np.int64)
    dst = np.array([k for _, k in edges], dtype=np.int64)
    E = src.size
    k = rng.uniform(*cfg.interaction_range, size=E)
    repressive = rng.random(E) < cfg.repressor_fraction
    basal = np.zeros((n, cfg.cell_types))
    roots = graph.roots()
    basal[roots] = rng.uniform(*cfg.basal_range, size=(len(roots), cfg.cell_types))
    incidence = sparse.csr_matrix((np.ones(E), (dst, np.arange(E))), shape=(n, E))
    K = np.full(E, cfg.half_response if cfg.half_response is not None else 1.0)
    net = _Network(src, dst, k, K, repressive, basal, incidence)
    if cfg.half_response is None and E:
        # half of each regulator's mean clean steady state across cell types
        types = np.arange(cfg.cell_types)
        K = np.ones(E)
        x = np.zeros((n, cfg.cell_types))
        by_dst: dict[int, list[int]] = {}
        for e, d in enumerate(dst.tolist()):
            by_dst.setdefault(d, []).append(e)
        by_src: dict[int, list[int]] = {}
        for e, s in enumerate(src.tolist()):
            by_src.setdefault(s, []).append(e)
        for v in graph.topo_order:
            P = basal[v, types].copy()
            for e in by_dst.get(v, ()):
                P += k[e] * hill(x[src[e]], K[e], cfg.hill_coeff, repressive[e])
            x[v] = P / cfg.decay
            for e in by_src.get(v, ()):
                K[e] = max(0.5 * x[v].mean(), 1e-6)
        net = replace(net, K=K)
    return net


def simulate_clean(graph: CausalGraph, cfg: GrnConfig, cells_per_type: int,
                   knockouts: Sequence[tuple[int, int]] = (), seed: int = 0) -> ExpressionMatrix:
    """Steady-state draws from the chemical-Langevin dynamics.

    Observational cells come first (``cells_per_type`` per cell type), then
    each knockout block; knockout cells get a random cell type.
    """
    n_obs = cells_per_type * cfg.cell_types
    types = np.arange(n_obs) % cfg.cell_types
    return _simulate(graph, cfg, types, knockouts, seed)


def _simulate(graph: CausalGraph, cfg: GrnConfig, obs_types: np.ndarray,
              knockouts: Sequence[tuple[int, int]], seed: int) -> ExpressionMatrix:
    if not isinstance(graph, CausalGraph):
        raise TypeError("simulate_clean needs a CausalGraph (a validated DAG)")
    root_seq = np.random.SeedSequence(seed)
    param_rng, type_rng, dyn_rng = (np.random.default_rng(s) for s in root_seq.spawn(3))
    net = build_network(graph, cfg, param_rng)
    n = graph.n
    ko_genes = [g for g, c in knockouts for _ in range(c)]
    for g in set(ko_genes):
        if not 0 <= g < n:
            raise ValueError(f"knockout gene {g} out of range")
    ko_types = type_rng.integers(cfg.cell_types, size=len(ko_genes))
    cell_type = np.concatenate([obs_types, ko_types]).astype(np.int64)
    m = cell_type.size
    intervention = np.concatenate([np.full(obs_types.size, -1), np.asarray(ko_genes, dtype=np.int64)])
    ko = np.zeros((n, m), dtype=bool)
    cols = np.flatnonzero(intervention >= 0)
    ko[intervention[cols], cols] = True

    if cfg.init == "steady":
        x = _fixed_point(graph, net, cfg, cell_type, ko)
    else:
        x = np.zeros((n, m))
    dt, q, lam = cfg.sde_dt, cfg.noise_amplitude, cfg.decay
    sq = np.sqrt(dt)
    for _ in range(cfg.burn_in_steps):
        P = _production(net, x, cell_type, cfg.hill_coeff, ko)
        drift = P - lam * x
        if q > 0:
            xi1 = dyn_rng.standard_normal((n, m))
            xi2 = dyn_rng.standard_normal((n, m))
            diffusion = q * (np.sqrt(P) * xi1 - np.sqrt(lam * x) * xi2) * sq
        else:
            diffusion = 0.0
        x = np.abs(x + drift * dt + diffusion)
        x[ko] = 0.0
    return ExpressionMatrix(x, cell_type, intervention)


# --- technical noise -------------------------------------------------------


def _dropout(v: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    if p <= 0:
        return v
    return np.where(rng.random(v.shape) < p, 0.0, v)


def _outliers(v: np.ndarray, prof: NoiseProfile, rng: np.random.Generator) -> np.ndarray:
    if prof.outlier_prob <= 0:
        return v
    hit = rng.random(v.shape[0]) < prof.outlier_prob
    factor = np.maximum(1.0, rng.lognormal(prof.outlier_mean, prof.outlier_scale, size=v.shape[0]))
    return v * np.where(hit, factor, 1.0)[:, None]


def _library(v: np.ndarray, prof: NoiseProfile, rng: np.random.Generator) -> np.ndarray:
    if prof.library_size_lognormal is None:
        return v
    mu, sigma = prof.library_size_lognormal
    target = rng.lognormal(mu, sigma, size=v.shape[1]) if sigma > 0 else np.full(v.shape[1], np.exp(mu))
    totals = v.sum(0)
    scale = np.divide(target, totals, out=np.zeros_like(totals), where=totals > 0)
    return v * scale[None, :]


NOISE_STAGES = ("dropout", "outliers", "library")


def apply_technical_noise(E: ExpressionMatrix, profile: NoiseProfile, seed: int,
                          stages: Sequence[str] = NOISE_STAGES) -> ExpressionMatrix:
    """Dropout, then outlier-gene inflation, then per-cell library-size rescaling."""
    rngs = dict(zip(NOISE_STAGES, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))))
    v = np.array(E.values, dtype=np.float64)
    for stage in stages:
        if stage == "dropout":
            v = _dropout(v, profile.dropout_pct, rngs[stage])
        elif stage == "outliers":
            v = _outliers(v, profile, rngs[stage])
        elif stage == "library":
            v = _library(v, profile, rngs[stage])
        else:
            raise ValueError(f"unknown noise stage {stage!r}")
    return E.with_values(v)


def apply_fidelity(E: ExpressionMatrix | np.ndarray, level: str, seed: int) -> np.ndarray:
    """HIGH: lambda itself; MEDIUM: mean of 100 Poisson(lambda) draws; LOW: one draw.

    The MEDIUM mean is drawn as Poisson(100 * lambda) / 100, which has exactly
    the distribution of the average of 100 independent draws.
    """
    lam = np.asarray(E.values if isinstance(E, ExpressionMatrix) else E, dtype=np.float64)
    if (lam < 0).any():
        raise ValueError("fidelity sampling needs non-negative expression")
    rng = np.random.default_rng(seed)
    if level == "HIGH":
        return lam.copy()
    if level == "MEDIUM":
        return rng.poisson(MEDIUM_SAMPLES * lam) / MEDIUM_SAMPLES
    if level == "LOW":
        return rng.poisson(lam).astype(np.float64)
    raise ValueError(f"unknown fidelity {level!r}; expected one of {FIDELITY_LEVELS}")


def generate_grn_dataset(graph: CausalGraph, cfg: GrnConfig, per_var: int, obs: int, seed: int) -> ObservationSet:
    """Clean simulation -> technical noise -> fidelity, with knockout columns marked in M."""
    if per_var < 0 or obs < 0:
        raise ValueError("per_var and obs must be non-negative")
    sim_seed, noise_seed, fid_seed = np.random.SeedSequence(seed).generate_state(3)
    types = np.arange(obs) % cfg.cell_types
    knockouts = [(g, per_var) for g in range(graph.n)] if per_var else []
    E = _simulate(graph, cfg, types, knockouts, int(sim_seed))
    E = apply_technical_noise(E, cfg.noise_profile, int(noise_seed))
    X = apply_fidelity(E, cfg.fidelity, int(fid_seed))
    M = np.zeros(X.shape, dtype=np.uint8)
    cols = np.flatnonzero(E.intervention >= 0)
    M[E.intervention[cols], cols] = 1
    return ObservationSet(X, M)
