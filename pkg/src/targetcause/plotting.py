"""Static SVG renderings of the benchmark, distance-curve and grid CSVs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PLOT_KINDS = ("auto", "line", "bar", "heatmap")


def read_csv(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        header = list(reader.fieldnames or [])
    if not header or not rows:
        raise ValueError(f"{path}: CSV has no data rows")
    return header, rows


def _numeric(rows, col) -> np.ndarray:
    return np.array([float(r[col]) for r in rows])


def _is_numeric(rows, col) -> bool:
    try:
        _numeric(rows, col)
        return True
    except ValueError:
        return False


def guess_kind(header: list[str]) -> str:
    if {"train_source", "test_source"} <= set(header):
        return "heatmap"
    return "line"


def render(csv_path: str | Path, out: str | Path, kind: str = "auto", x: str | None = None,
           y: list[str] | None = None, title: str | None = None) -> Path:
    header, rows = read_csv(csv_path)
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    kind = guess_kind(header) if kind == "auto" else kind
    with plt.rc_context({"svg.hashsalt": "targetcause", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        if kind == "heatmap":
            _heatmap(ax, fig, header, rows, y[0] if y else None)
        else:
            xc = x or header[0]
            ys = y or [c for c in header if c != xc and _is_numeric(rows, c)]
            if not ys:
                raise ValueError(f"{csv_path}: no numeric columns to plot")
            for col in ys:
                if col not in header:
                    raise ValueError(f"{csv_path}: no column {col!r}")
            labels = [r[xc] for r in rows]
            if kind == "line" and _is_numeric(rows, xc):
                xs = _numeric(rows, xc)
                for col in ys:
                    ax.plot(xs, _numeric(rows, col), marker="o", label=col)
            else:
                pos = np.arange(len(rows))
                width = 0.8 / len(ys)
                for k, col in enumerate(ys):
                    ax.bar(pos + k * width, _numeric(rows, col), width, label=col)
                ax.set_xticks(pos + 0.4 - width / 2, labels)
            ax.set_xlabel(xc)
            if len(ys) > 1:
                ax.legend()
            else:
                ax.set_ylabel(ys[0])
        if title:
            ax.set_title(title)
        fig.tight_layout()
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out


def _heatmap(ax, fig, header, rows, value_col):
    value_col = value_col or ("relative_auroc" if "relative_auroc" in header else header[-1])
    tr = sorted({r["train_source"] for r in rows})
    te = sorted({r["test_source"] for r in rows})
    grid = np.full((len(tr), len(te)), np.nan)
    for r in rows:
        grid[tr.index(r["train_source"]), te.index(r["test_source"])] = float(r[value_col])
    im = ax.imshow(grid, cmap="viridis")
    ax.set_xticks(range(len(te)), te, rotation=45, ha="right")
    ax.set_yticks(range(len(tr)), tr)
    ax.set_xlabel("test source")
    ax.set_ylabel("train source")
    for a in range(len(tr)):
        for b in range(len(te)):
            if not np.isnan(grid[a, b]):
                ax.text(b, a, f"{grid[a, b]:.0f}", ha="center", va="center", color="white", fontsize=8)
    fig.colorbar(im, ax=ax, label=value_col)
