"""Render experiment CSV artifacts into scatter figures.

Two figure kinds mirror the experiment reports: ``recon_overlay`` draws
inputs as red circles with reconstructions as blue dots on top, and
``embedding_scatter`` colors 2-d code projections by class label. The
renderer only reads the documented CSV/JSON schemas and never recomputes
metrics; titles quote values straight from ``report.json``.

Output is written as both PNG and SVG. SVG output is deterministic
(fixed hash salt, no embedded date), so identical inputs give identical
bytes.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

matplotlib.rcParams["svg.hashsalt"] = "figviz"

PALETTE = plt.get_cmap("tab10").colors

KINDS = ("recon_overlay", "embedding_scatter")

REQUIRED_COLUMNS = {
    "recon_overlay": ("x0", "x1", "recon_x0", "recon_x1"),
    "embedding_scatter": ("label", "pc1", "pc2"),
}


class ColumnError(ValueError):
    """A CSV is missing a column the figure kind needs."""


@dataclass
class FigureSpec:
    csv_path: str
    kind: str
    out_path: str
    title: str = ""


def read_columns(csv_path, names):
    """Load the named columns from a CSV, failing loudly on absences."""
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ColumnError(f"{csv_path}: empty file")
        missing = [n for n in names if n not in header]
        if missing:
            raise ColumnError(f"{csv_path}: missing column {missing[0]!r}")
        idx = [header.index(n) for n in names]
        cols = [[] for _ in names]
        for rec in reader:
            for c, i in enumerate(idx):
                cols[c].append(float(rec[i]))
    return cols


def _save(fig, out_path):
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    png = out.with_suffix(".png")
    svg = out.with_suffix(".svg")
    fig.savefig(png, dpi=120)
    fig.savefig(svg, metadata={"Date": None})
    plt.close(fig)
    return png, svg


def _draw_recon_overlay(ax, cols):
    x0, x1, r0, r1 = cols
    ax.scatter(x0, x1, s=12, facecolors="none", edgecolors="red",
               linewidths=0.6, label="input")
    ax.scatter(r0, r1, s=4, color="blue", label="reconstruction")
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    ax.set_aspect("equal", adjustable="datalim")


def _draw_embedding_scatter(ax, cols):
    labels, pc1, pc2 = cols
    classes = sorted(set(labels))
    for i, lab in enumerate(classes):
        xs = [a for a, l in zip(pc1, labels) if l == lab]
        ys = [a for a, l in zip(pc2, labels) if l == lab]
        ax.scatter(xs, ys, s=5, color=PALETTE[i % len(PALETTE)], label=f"class {int(lab)}")
    ax.set_xlabel("pc1")
    ax.set_ylabel("pc2")
    if len(classes) <= 10:
        ax.legend(markerscale=2, fontsize=8)


def render(spec: FigureSpec):
    """Render one figure; returns the (png, svg) paths."""
    if spec.kind not in KINDS:
        raise ValueError(f"unknown figure kind {spec.kind!r}; choose from {KINDS}")
    cols = read_columns(spec.csv_path, REQUIRED_COLUMNS[spec.kind])
    fig, ax = plt.subplots(figsize=(5, 5))
    if spec.kind == "recon_overlay":
        _draw_recon_overlay(ax, cols)
        ax.legend(fontsize=8)
    else:
        _draw_embedding_scatter(ax, cols)
    if spec.title:
        ax.set_title(spec.title, fontsize=10)
    fig.tight_layout()
    return _save(fig, spec.out_path)


def _cell_title(run_dir: Path) -> str:
    cfg_path = run_dir / "config.json"
    parts = []
    if cfg_path.exists():
        cfg = json.loads(cfg_path.read_text())
        reg = cfg.get("reg", {})
        kind = {"information_potential": "IP", "parametric": "VAE"}.get(reg.get("kind"), reg.get("kind"))
        parts.append(f"{kind} beta={reg.get('beta')} nj={reg.get('nj')}")
    rep_path = run_dir / "report.json"
    if rep_path.exists():
        rep = json.loads(rep_path.read_text())
        if rep.get("E") is not None:
            parts.append(f"E={rep['E']:.4g}")
        elif rep.get("probe_err") is not None:
            parts.append(f"err={100 * rep['probe_err']:.2f}%")
    return "\n".join(parts)


def discover_runs(sweep_dir) -> list[Path]:
    """Run directories of a sweep, in sorted order."""
    root = Path(sweep_dir)
    runs = sorted(p for p in root.glob("cell_*/run_*") if p.is_dir())
    if not runs:
        raise ValueError(f"{sweep_dir}: no cell_*/run_* directories found")
    return runs


def grid_shape(n: int) -> tuple[int, int]:
    cols = min(3, n)
    rows = math.ceil(n / cols)
    return rows, cols


def render_grid(sweep_dir, out_path):
    """Compose per-run panels into one figure; returns (rows, cols, paths)."""
    runs = discover_runs(sweep_dir)
    rows, cols = grid_shape(len(runs))
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 4 * rows), squeeze=False)
    flat = [ax for row in axes for ax in row]
    for ax in flat[len(runs):]:
        ax.axis("off")
    for ax, run in zip(flat, runs):
        recon = run / "recon.csv"
        emb = run / "embeddings.csv"
        if recon.exists():
            _draw_recon_overlay(ax, read_columns(recon, REQUIRED_COLUMNS["recon_overlay"]))
        elif emb.exists():
            _draw_embedding_scatter(ax, read_columns(emb, REQUIRED_COLUMNS["embedding_scatter"]))
        else:
            ax.axis("off")
        ax.set_title(_cell_title(run), fontsize=9)
    fig.tight_layout()
    paths = _save(fig, out_path)
    return rows, cols, paths
