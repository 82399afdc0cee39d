"""Analytic structural causal models with ancestral sampling and hard interventions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import ObservationSet
from .graph import CausalGraph

MECHANISMS = ("LINEAR", "MLP", "POLY", "SIGMOID")


@dataclass(frozen=True)
class MechanismKind:
    """Mechanism family and the ranges its parameters are drawn from.

    Weights are drawn as ``sign * Uniform(*weight_range)`` so they never
    vanish. ``rescale`` standardizes every non-root output using a pilot
    observational sample drawn at build time, which keeps deep polynomial
    chains finite.
    """

    kind: str = "LINEAR"
    weight_range: tuple[float, float] = (0.5, 2.0)
    poly_degree: int = 2
    poly_coef: float = 1.0
    mlp_hidden: int = 16
    sigmoid_scale: float = 2.0
    root_range: tuple[float, float] = (-1.0, 1.0)
    noise_std: float = 0.1
    rescale: bool = False

    def __post_init__(self):
        if self.kind not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.kind!r}; expected one of {MECHANISMS}")
        lo, hi = self.weight_range
        if not (0 < lo <= hi < np.inf):
            raise ValueError(f"weight_range must satisfy 0 < lo <= hi < inf, got {self.weight_range}")
        if self.poly_degree < 1 or self.mlp_hidden < 1 or self.poly_coef <= 0:
            raise ValueError("poly_degree, mlp_hidden and poly_coef must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass(frozen=True)
class InterventionSpec:
    variable: int
    value: float = 0.0


@dataclass(frozen=True)
class NodeFunction:
    kind: str
    params: dict[str, np.ndarray]
    shift: float = 0.0
    scale: float = 1.0

    def __call__(self, inputs: np.ndarray) -> np.ndarray:
        # inputs: (k, m) parent values
        p = self.params
        if self.kind == "LINEAR":
            out = p["w"] @ inputs
        elif self.kind == "MLP":
            hidden = np.tanh(p["W1"] @ inputs + p["b1"][:, None])
            out = p["w2"] @ hidden
        elif self.kind == "SIGMOID":
            out = p["scale"] * np.tanh(p["w"] @ inputs)
        else:
            out = np.zeros(inputs.shape[1])
            for power, coef in enumerate(p["coefs"], start=1):
                out = out + coef @ inputs**power
            cross = p["cross"]
            if cross.size:
                for (a, b), c in zip(p["pairs"], cross):
                    out = out + c * inputs[a] * inputs[b]
        return (out - self.shift) / self.scale


@dataclass(frozen=True)
class ScmModel:
    graph: CausalGraph
    kind: MechanismKind
    node_fns: dict[int, NodeFunction] = field(repr=False)

    @property
    def n(self) -> int:
        return self.graph.n


def _signed_uniform(rng: np.random.Generator, lo: float, hi: float, size) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=size) * rng.uniform(lo, hi, size=size)


def _draw_node(kind: MechanismKind, k: int, rng: np.random.Generator) -> NodeFunction:
    lo, hi = kind.weight_range
    if kind.kind == "LINEAR":
        params = {"w": _signed_uniform(rng, lo, hi, k)}
    elif kind.kind == "MLP":
        h = kind.mlp_hidden
        params = {
            "W1": _signed_uniform(rng, lo, hi, (h, k)),
            "b1": rng.uniform(-1.0, 1.0, size=h),
            "w2": _signed_uniform(rng, lo, hi, h) / np.sqrt(h),
        }
    elif kind.kind == "SIGMOID":
        params = {"w": _signed_uniform(rng, lo, hi, k), "scale": np.float64(kind.sigmoid_scale)}
    else:
        c = kind.poly_coef
        coefs = [rng.uniform(-c, c, size=k) for _ in range(kind.poly_degree)]
        pairs = [(a, b) for a in range(k) for b in range(a + 1, k)] if kind.poly_degree >= 2 else []
        params = {
            "coefs": np.stack(coefs),
            "pairs": np.asarray(pairs, dtype=int).reshape(-1, 2),
            "cross": rng.uniform(-c, c, size=len(pairs)),
        }
    return NodeFunction(kind.kind, params)


def build_scm(graph: CausalGraph, kind: MechanismKind, seed: int) -> ScmModel:
    """Draw one mechanism per non-root node; deterministic per seed."""
    rng = np.random.default_rng(seed)
    fns: dict[int, NodeFunction] = {}
    for v in graph.topo_order:
        pa = graph.parent_lists[v]
        if pa:
            fns[v] = _draw_node(kind, len(pa), rng)
    model = ScmModel(graph, kind, fns)
    if kind.rescale and fns:
        model = _rescaled(model, pilot_seed=int(rng.integers(2**32)))
    return model


def _rescaled(model: ScmModel, pilot_seed: int, pilot: int = 2000) -> ScmModel:
    g = model.graph
    rng = np.random.default_rng(pilot_seed)
    lo, hi = model.kind.root_range
    x = np.zeros((g.n, pilot))
    fns = dict(model.node_fns)
    for v in g.topo_order:
        pa = g.parent_lists[v]
        if not pa:
            x[v] = rng.uniform(lo, hi, size=pilot)
            continue
        raw = fns[v](x[list(pa)])
        sd = float(raw.std())
        fns[v] = NodeFunction(fns[v].kind, fns[v].params, float(raw.mean()), sd if sd > 1e-12 else 1.0)
        x[v] = fns[v](x[list(pa)]) + model.kind.noise_std * rng.standard_normal(pilot)
    return ScmModel(g, model.kind, fns)


def sample(scm: ScmModel, m: int, interventions: Sequence[tuple[InterventionSpec, int]] = (),
           seed: int = 0) -> ObservationSet:
    """Ancestral sampling: ``m`` observational columns, then each intervention block.

    Under ``do(x_j = c)`` the j-th row is clamped to ``c`` in that block and
    the clamped value propagates to descendants.
    """
    if m < 0 or any(c < 0 for _, c in interventions):
        raise ValueError("sample counts must be non-negative")
    g = scm.graph
    total = m + sum(c for _, c in interventions)
    clamp_mask = np.zeros((g.n, total), dtype=bool)
    clamp_val = np.zeros((g.n, total))
    col = m
    for spec, count in interventions:
        if not 0 <= spec.variable < g.n:
            raise ValueError(f"intervention variable {spec.variable} out of range")
        clamp_mask[spec.variable, col:col + count] = True
        clamp_val[spec.variable, col:col + count] = spec.value
        col += count
    rng = np.random.default_rng(seed)
    lo, hi = scm.kind.root_range
    X = np.zeros((g.n, total))
    for v in g.topo_order:
        pa = g.parent_lists[v]
        if pa:
            x = scm.node_fns[v](X[list(pa)]) + scm.kind.noise_std * rng.standard_normal(total)
        else:
            x = rng.uniform(lo, hi, size=total)
        X[v] = np.where(clamp_mask[v], clamp_val[v], x)
    return ObservationSet(X, clamp_mask.astype(np.uint8))


def make_intervention_suite(scm: ScmModel, per_var: int, obs: int, seed: int) -> ObservationSet:
    """``obs`` observational columns plus ``per_var`` knockouts (value 0) of every variable."""
    if per_var < 0 or obs < 0:
        raise ValueError("per_var and obs must be non-negative")
    ivs = [(InterventionSpec(j, 0.0), per_var) for j in range(scm.n)] if per_var else []
    return sample(scm, obs, ivs, seed)
