"""Causal DAGs: generators, ancestry queries, latent projection and labels."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

GRAPH_KINDS = ("ER", "SF", "SF_DIRECT", "SBM", "CUSTOM")


class GraphError(ValueError):
    pass


def _toposort(n: int, edges: Iterable[tuple[int, int]]) -> tuple[int, ...] | None:
    indeg = [0] * n
    children: list[list[int]] = [[] for _ in range(n)]
    for j, k in edges:
        children[j].append(k)
        indeg[k] += 1
    queue = deque(v for v in range(n) if indeg[v] == 0)
    order = []
    while queue:
        v = queue.popleft()
        order.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    if len(order) != n:
        return None
    return tuple(order)


@dataclass(frozen=True)
class CausalGraph:
    """Immutable DAG over ``n`` variables; ``(j, k)`` in ``edges`` means j -> k.

    ``node_ids`` records the original variable index of every node, which
    only differs from ``range(n)`` for graphs produced by :func:`marginalize`.
    """

    n: int
    edges: frozenset[tuple[int, int]]
    topo_order: tuple[int, ...] = field(default=(), compare=False)
    node_ids: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise GraphError(f"graph needs at least one node, got n={self.n}")
        edges = frozenset((int(j), int(k)) for j, k in self.edges)
        for j, k in edges:
            if not (0 <= j < self.n and 0 <= k < self.n):
                raise GraphError(f"edge ({j}, {k}) out of range for n={self.n}")
            if j == k:
                raise GraphError(f"self-loop on node {j}")
        order = _toposort(self.n, edges)
        if order is None:
            raise GraphError("edge set contains a directed cycle")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "topo_order", order)
        if not self.node_ids:
            object.__setattr__(self, "node_ids", tuple(range(self.n)))
        elif len(self.node_ids) != self.n:
            raise GraphError("node_ids length must equal n")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> "CausalGraph":
        pairs = [(int(e[0]), int(e[1])) for e in edges]
        if len(set(pairs)) != len(pairs):
            raise GraphError("duplicate edges")
        return cls(n, frozenset(pairs))

    @classmethod
    def from_adjacency(cls, adj: np.ndarray) -> "CausalGraph":
        adj = np.asarray(adj)
        src, dst = np.nonzero(adj)
        return cls(adj.shape[0], frozenset(zip(src.tolist(), dst.tolist())))

    @cached_property
    def parent_lists(self) -> tuple[tuple[int, ...], ...]:
        pa: list[list[int]] = [[] for _ in range(self.n)]
        for j, k in self.edges:
            pa[k].append(j)
        return tuple(tuple(sorted(p)) for p in pa)

    @cached_property
    def child_lists(self) -> tuple[tuple[int, ...], ...]:
        ch: list[list[int]] = [[] for _ in range(self.n)]
        for j, k in self.edges:
            ch[j].append(k)
        return tuple(tuple(sorted(c)) for c in ch)

    @cached_property
    def ancestor_matrix(self) -> np.ndarray:
        """Boolean ``A[i, j]`` = j is an ancestor of i."""
        anc = np.zeros((self.n, self.n), dtype=bool)
        for v in self.topo_order:
            for p in self.parent_lists[v]:
                anc[v] |= anc[p]
                anc[v, p] = True
        anc.flags.writeable = False
        return anc

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n), dtype=np.uint8)
        for j, k in self.edges:
            adj[j, k] = 1
        return adj

    def roots(self) -> list[int]:
        return [v for v in range(self.n) if not self.parent_lists[v]]

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


@dataclass(frozen=True)
class GraphKind:
    """Generator family plus its parameters.

    ``avg_degree`` is the expected in-degree per node. ``blocks`` only
    matters for SBM, ``edges`` only for CUSTOM.
    """

    kind: str = "ER"
    avg_degree: float = 2.0
    blocks: int = 5
    block_ratio: float = 10.0
    edges: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.kind not in GRAPH_KINDS:
            raise GraphError(f"unknown graph kind {self.kind!r}; expected one of {GRAPH_KINDS}")
        if self.kind == "CUSTOM" and self.edges is None:
            raise GraphError("CUSTOM graph kind requires an explicit edge list")
        if self.avg_degree < 0:
            raise GraphError(f"avg_degree must be non-negative, got {self.avg_degree}")
        if self.kind == "SBM" and (self.blocks < 1 or self.block_ratio <= 0):
            raise GraphError("SBM needs blocks >= 1 and block_ratio > 0")


@dataclass(frozen=True)
class SparsityStats:
    direct_cause_ratio: float
    cause_ratio_min: float
    cause_ratio_max: float


def _check_degree(kind: GraphKind, n: int) -> None:
    if n < 2:
        raise GraphError(f"need n >= 2 to generate a graph, got {n}")
    if kind.avg_degree >= n:
        raise GraphError(f"average degree {kind.avg_degree} must be < n={n}")
    if kind.kind in ("ER", "SBM") and 2 * kind.avg_degree > n - 1:
        raise GraphError(
            f"average in-degree {kind.avg_degree} unreachable for n={n}: "
            f"needs at most (n-1)/2 = {(n - 1) / 2}"
        )


def _relabel(order: np.ndarray, src: np.ndarray, dst: np.ndarray) -> frozenset:
    # position-space edges (earlier -> later) mapped back to node ids
    return frozenset(zip(order[src].tolist(), order[dst].tolist()))


def _er(n: int, deg: float, rng: np.random.Generator) -> frozenset:
    order = rng.permutation(n)
    p = 2.0 * deg / (n - 1)
    mask = np.triu(rng.random((n, n)) < p, k=1)
    src, dst = np.nonzero(mask)
    return _relabel(order, src, dst)


def _sbm(n: int, deg: float, blocks: int, ratio: float, rng: np.random.Generator) -> frozenset:
    order = rng.permutation(n)
    block_of = rng.permutation(np.arange(n) % blocks)
    same = block_of[:, None] == block_of[None, :]
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    n_intra = int((same & upper).sum())
    n_inter = int((~same & upper).sum())
    # p_in * n_intra + (p_in / ratio) * n_inter = deg * n
    p_in = deg * n / (n_intra + n_inter / ratio)
    p_in = min(p_in, 1.0)
    prob = np.where(same, p_in, p_in / ratio)
    mask = upper & (rng.random((n, n)) < prob)
    src, dst = np.nonzero(mask)
    return _relabel(order, src, dst)


def _preferential(n: int, deg: float, rng: np.random.Generator, direct: bool) -> frozenset:
    """Preferential attachment along a random node order.

    Each arriving node links to ``deg`` earlier nodes (fractional degrees are
    realized stochastically). SF draws partners by total degree and points
    the edge at the newcomer; SF_DIRECT draws partners by out-degree so a few
    hub regulators accumulate most outgoing edges.
    """
    order = rng.permutation(n)
    weight = np.ones(n)
    src, dst = [], []
    base = int(math.floor(deg))
    frac = deg - base
    for t in range(1, n):
        k = base + (1 if rng.random() < frac else 0)
        k = min(k, t)
        if k == 0:
            continue
        w = weight[:t] / weight[:t].sum()
        picks = rng.choice(t, size=k, replace=False, p=w)
        for u in picks:
            src.append(u)
            dst.append(t)
            weight[u] += 1.0
        if not direct:
            weight[t] += k
    return _relabel(order, np.asarray(src, dtype=int), np.asarray(dst, dtype=int))


def generate_graph(kind: GraphKind, n: int, seed: int) -> CausalGraph:
    """Draw a random DAG; deterministic for fixed ``(kind, n, seed)``."""
    if kind.kind == "CUSTOM":
        return CausalGraph.from_edges(n, kind.edges or ())
    _check_degree(kind, n)
    rng = np.random.default_rng(seed)
    if kind.avg_degree == 0:
        return CausalGraph(n, frozenset())
    if kind.kind == "ER":
        edges = _er(n, kind.avg_degree, rng)
    elif kind.kind == "SBM":
        edges = _sbm(n, kind.avg_degree, kind.blocks, kind.block_ratio, rng)
    else:
        edges = _preferential(n, kind.avg_degree, rng, direct=kind.kind == "SF_DIRECT")
    return CausalGraph(n, edges)


def parents(g: CausalGraph, i: int) -> set[int]:
    return set(g.parent_lists[i])


def ancestors(g: CausalGraph, i: int) -> set[int]:
    return set(np.flatnonzero(g.ancestor_matrix[i]).tolist())


def descendants(g: CausalGraph, j: int) -> set[int]:
    return set(np.flatnonzero(g.ancestor_matrix[:, j]).tolist())


def shortest_path_lengths_to(g: CausalGraph, i: int) -> dict[int, int]:
    """Length of the shortest directed path j ~> i for every ancestor j."""
    dist = {i: 0}
    queue = deque([i])
    while queue:
        v = queue.popleft()
        for p in g.parent_lists[v]:
            if p not in dist:
                dist[p] = dist[v] + 1
                queue.append(p)
    del dist[i]
    return dist


def marginalize(g: CausalGraph, V: Iterable[int]) -> CausalGraph:
    """Latent projection of ``g`` onto ``V``, keeping directed edges only.

    Node ``p`` of the result stands for ``sorted(V)[p]``. There is an edge
    a -> b iff ``g`` has a directed path from a to b whose intermediate nodes
    all lie outside ``V``.
    """
    keep = sorted(set(int(v) for v in V))
    if not keep:
        raise GraphError("cannot marginalize onto an empty variable set")
    if keep[0] < 0 or keep[-1] >= g.n:
        raise GraphError(f"variable set out of range for n={g.n}")
    pos = {v: p for p, v in enumerate(keep)}
    edges = set()
    for a in keep:
        seen = set()
        stack = list(g.child_lists[a])
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            if v in pos:
                edges.add((pos[a], pos[v]))
            else:
                stack.extend(g.child_lists[v])
    return CausalGraph(len(keep), frozenset(edges), node_ids=tuple(g.node_ids[v] for v in keep))


def cause_labels(g: CausalGraph) -> np.ndarray:
    """``L[i, j] = 1`` iff j is a cause (ancestor) of i."""
    return g.ancestor_matrix.astype(np.uint8)


def sparsity_stats(graphs: Sequence[CausalGraph]) -> SparsityStats:
    if not graphs:
        raise GraphError("sparsity_stats needs at least one graph")
    direct, cause = [], []
    for g in graphs:
        direct.append(len(g.edges) / g.n / g.n)
        cause.append(g.ancestor_matrix.sum() / g.n / g.n)
    return SparsityStats(float(np.mean(direct)), float(min(cause)), float(max(cause)))


def degree_histogram(g: CausalGraph) -> tuple[np.ndarray, np.ndarray]:
    adj = g.adjacency()
    return np.bincount(adj.sum(0)), np.bincount(adj.sum(1))


# --- edge-list files -------------------------------------------------------


def save_edge_list(g: CausalGraph, path: str | Path) -> None:
    lines = "".join(f"{j}\t{k}\n" for j, k in g.sorted_edges())
    Path(path).write_text(lines, encoding="utf-8", newline="\n")


def load_edge_list(path: str | Path, n: int | None = None) -> CausalGraph:
    """Read a 0-indexed ``src<TAB>dst`` file.

    ``n`` falls back to the ``graph_meta.json`` sidecar next to the file,
    then to ``max index + 1``.
    """
    path = Path(path)
    if n is None:
        meta_path = path.with_name("graph_meta.json")
        if meta_path.exists():
            n = int(json.loads(meta_path.read_text())["n"])
    edges, rows = [], []
    for row, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise GraphError(f"{path}:{row}: expected 2 tab-separated columns")
        try:
            j, k = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphError(f"{path}:{row}: non-integer index") from None
        if j < 0 or k < 0 or (n is not None and (j >= n or k >= n)):
            raise GraphError(f"{path}:{row}: index out of range")
        edges.append((j, k))
        rows.append(row)
    if n is None:
        n = max((max(e) for e in edges), default=-1) + 1
        if n == 0:
            raise GraphError(f"{path}: empty edge list and no declared n")
    seen = set()
    for row, e in zip(rows, edges):
        if e in seen:
            raise GraphError(f"{path}:{row}: duplicate edge {e}")
        seen.add(e)
    try:
        return CausalGraph(n, frozenset(edges))
    except GraphError as err:
        if "cycle" in str(err):
            # locate the first row that closes a cycle
            for k in range(1, len(edges) + 1):
                if _toposort(n, edges[:k]) is None:
                    raise GraphError(f"{path}:{rows[k - 1]}: edge {edges[k - 1]} closes a cycle") from None
        raise


def save_graph_meta(path: str | Path, g: CausalGraph, kind: str = "CUSTOM", seed: int | None = None,
                    names: dict[int, str] | None = None) -> None:
    meta = {"format_version": 1, "n": g.n, "kind": kind, "seed": seed}
    if names:
        meta["names"] = {str(k): v for k, v in sorted(names.items())}
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
