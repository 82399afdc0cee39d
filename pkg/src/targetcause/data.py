"""Observation containers, normalization, subsampling and the dataset format."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

from .graph import CausalGraph, cause_labels, load_edge_list, save_edge_list

FORMAT_VERSION = 1


class DataError(ValueError):
    pass


class LoadError(DataError):
    pass


@dataclass(frozen=True)
class ObservationSet:
    """Observation matrix ``X`` (variables x observations) with intervention mask ``M``."""

    X: np.ndarray
    M: np.ndarray
    multi_intervention: bool = False

    def __post_init__(self):
        X = np.asarray(self.X)
        M = np.asarray(self.M, dtype=np.uint8)
        if X.ndim != 2 or X.shape != M.shape:
            raise DataError(f"X and M must be matching 2-d arrays, got {X.shape} and {M.shape}")
        if M.size and M.max() > 1:
            raise DataError("M entries must be 0 or 1")
        if not self.multi_intervention and M.size and M.sum(0).max() > 1:
            raise DataError("more than one intervention in a column; set multi_intervention=True")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "M", M)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @cached_property
    def column_interventions(self) -> np.ndarray:
        return self.M.sum(0, dtype=np.int64)

    def eligible_columns(self, V: np.ndarray) -> np.ndarray:
        """Columns whose intervened variables all lie inside ``V``."""
        inside = self.M[V].sum(0, dtype=np.int64)
        return np.flatnonzero(inside == self.column_interventions)

    def with_X(self, X: np.ndarray) -> "ObservationSet":
        return ObservationSet(X, self.M, self.multi_intervention)


@dataclass(frozen=True)
class SubsampleSpec:
    n_sub: int = 200
    m_sub: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n_sub < 1 or self.m_sub < 1:
            raise DataError("subsample sizes must be positive")


@dataclass(frozen=True)
class LocalBatch:
    X_VO: np.ndarray
    M_VO: np.ndarray
    V: np.ndarray
    O: np.ndarray
    target_pos: int
    label_slice: np.ndarray | None = None


@dataclass
class LabeledDataset:
    obs: ObservationSet
    graph: CausalGraph
    meta: dict[str, Any] = field(default_factory=dict)
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.graph.n != self.obs.n:
            raise DataError(f"graph has {self.graph.n} nodes but X has {self.obs.n} rows")
        expected = cause_labels(self.graph)
        if self.labels is None:
            self.labels = expected
        elif not np.array_equal(self.labels, expected):
            raise DataError("label matrix disagrees with the graph's ancestry")


# --- normalization ---------------------------------------------------------


def cpm_normalize(X: np.ndarray) -> np.ndarray:
    """``log2(1 + 1e6 * v / column_sum)``; all-zero columns stay zero."""
    X = np.asarray(X, dtype=np.float64)
    if (X < 0).any():
        raise DataError("CPM normalization needs non-negative counts")
    totals = X.sum(0, keepdims=True)
    safe = np.where(totals > 0, totals, 1.0)
    return np.log2(1.0 + 1e6 * X / safe)


def standardize_rows(X: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance rows; constant rows map to zero."""
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(1, keepdims=True)
    sd = X.std(1, keepdims=True)
    return np.where(sd > 0, (X - mu) / np.where(sd > 0, sd, 1.0), 0.0)


NORMALIZERS = {
    "none": lambda X: np.asarray(X, dtype=np.float64),
    "cpm": cpm_normalize,
    "standardize": standardize_rows,
}


def normalize(obs: ObservationSet, method: str) -> ObservationSet:
    try:
        fn = NORMALIZERS[method]
    except KeyError:
        raise DataError(f"unknown normalization {method!r}; expected one of {sorted(NORMALIZERS)}") from None
    return obs.with_X(fn(obs.X).astype(np.float32))


# --- subsampling -----------------------------------------------------------


def sample_columns(eligible: np.ndarray, m_sub: int, rng: np.random.Generator) -> np.ndarray:
    if eligible.size == 0:
        raise DataError(
            "no eligible observations: every column intervenes on a variable outside the subsampled set"
        )
    if eligible.size >= m_sub:
        picked = rng.choice(eligible, size=m_sub, replace=False)
    else:
        picked = rng.choice(eligible, size=m_sub, replace=True)
    return np.sort(picked)


def subsample(obs: ObservationSet, i: int, spec: SubsampleSpec, rng: np.random.Generator | None = None,
              labels: np.ndarray | None = None) -> LocalBatch:
    """Draw a variable set containing ``i`` and observations valid for it.

    ``V`` is uniform among size-``n_sub`` subsets containing ``i``; ``O`` is
    drawn from the columns where nothing outside ``V`` was intervened.
    """
    n = obs.n
    if not 0 <= i < n:
        raise DataError(f"target {i} out of range for n={n}")
    if obs.m < 1:
        raise DataError("observation set is empty")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    if spec.n_sub >= n:
        V = np.arange(n)
    else:
        others = np.delete(np.arange(n), i)
        V = np.sort(np.append(rng.choice(others, size=spec.n_sub - 1, replace=False), i))
    O = sample_columns(obs.eligible_columns(V), spec.m_sub, rng)
    target_pos = int(np.searchsorted(V, i))
    label_slice = None
    if labels is not None:
        label_slice = labels[i, V].astype(np.uint8)
    return LocalBatch(obs.X[np.ix_(V, O)], obs.M[np.ix_(V, O)], V, O, target_pos, label_slice)


def partition_for_inference(n: int, i: int, n_sub: int, rng: np.random.Generator | int) -> list[np.ndarray]:
    """Split a random permutation of the non-targets into ``ceil(n / n_sub)`` blocks.

    The target is appended to every block, so blocks hold at most ``n_sub + 1``
    variables. Empty blocks (only possible for tiny ``n_sub``) are dropped.
    """
    if n < 2:
        raise DataError("partitioning needs at least two variables")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    perm = rng.permutation(np.delete(np.arange(n), i))
    b = math.ceil(n / n_sub)
    return [np.append(block, i) for block in np.array_split(perm, b) if block.size]


# --- on-disk format --------------------------------------------------------


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(ds: LabeledDataset, directory: str | Path, with_labels: bool = True) -> Path:
    """Write ``meta.json``, ``X.bin``, ``M.bin``, ``edges.tsv`` (+ ``labels.bin``).

    Layouts are documented in FORMATS.md.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    X = np.ascontiguousarray(ds.obs.X, dtype="<f4")
    M = np.ascontiguousarray(ds.obs.M, dtype=np.uint8)
    blobs = {"X.bin": X.tobytes(order="C"), "M.bin": M.tobytes(order="C")}
    if with_labels:
        blobs["labels.bin"] = np.ascontiguousarray(ds.labels, dtype=np.uint8).tobytes(order="C")
    edges = "".join(f"{j}\t{k}\n" for j, k in ds.graph.sorted_edges()).encode()
    blobs["edges.tsv"] = edges
    for name, data in blobs.items():
        _atomic_write(d / name, data)
    meta = {
        "format_version": FORMAT_VERSION,
        "n": ds.obs.n,
        "m": ds.obs.m,
        "dtypes": {"X": "float32-le", "M": "uint8", "labels": "uint8"},
        "multi_intervention": ds.obs.multi_intervention,
        "sha256": {name: _sha256(data) for name, data in sorted(blobs.items())},
        "provenance": ds.meta,
    }
    _atomic_write(d / "meta.json", (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())
    return d


def load_dataset(directory: str | Path) -> LabeledDataset:
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text())
    except FileNotFoundError:
        raise LoadError(f"{d}: missing meta.json") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise LoadError(f"{d}: unsupported format_version {meta.get('format_version')!r}")
    n, m = int(meta["n"]), int(meta["m"])
    sums = meta["sha256"]

    def read(name: str, itemsize: int) -> bytes:
        data = (d / name).read_bytes()
        if len(data) != itemsize:
            raise LoadError(f"{d / name}: expected {itemsize} bytes, found {len(data)}")
        if _sha256(data) != sums.get(name):
            raise LoadError(f"{d / name}: checksum mismatch")
        return data

    X = np.frombuffer(read("X.bin", 4 * n * m), dtype="<f4").reshape(n, m).astype(np.float32)
    M = np.frombuffer(read("M.bin", n * m), dtype=np.uint8).reshape(n, m).copy()
    edges_raw = (d / "edges.tsv").read_bytes()
    if _sha256(edges_raw) != sums.get("edges.tsv"):
        raise LoadError(f"{d / 'edges.tsv'}: checksum mismatch")
    graph = load_edge_list(d / "edges.tsv", n=n)
    labels = None
    if "labels.bin" in sums:
        labels = np.frombuffer(read("labels.bin", n * n), dtype=np.uint8).reshape(n, n).copy()
    obs = ObservationSet(X, M, bool(meta.get("multi_intervention", False)))
    try:
        return LabeledDataset(obs, graph, dict(meta.get("provenance", {})), labels)
    except DataError as err:
        raise LoadError(f"{d}: {err}") from None


def save_graph(g: CausalGraph, directory: str | Path, kind: str, seed: int | None) -> None:
    from .graph import save_graph_meta

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_edge_list(g, d / "edges.tsv")
    save_graph_meta(d / "graph_meta.json", g, kind=kind, seed=seed)
