"""Plot-ready data products and figures derived from a campaign trace.

Each figure key produces one CSV with a stable documented header, plus a
rendered PNG of the same content next to it. Iteration numbering follows
the campaign convention: design-of-experiments records count down to zero
(negative iterations and cumulative cost), optimization proper starts at
iteration 0 and cumulative cost 0.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import rtd

log = logging.getLogger(__name__)

FIGURE_KEYS = ("progress", "fidelity-map", "budget-tracking", "rtd")

PROGRESS_HEADER = ["iteration", "wall_cost_cumulative", "objective", "cost", "provenance"]
BUDGET_HEADER = ["iteration", "c_max", "cost", "remaining"]
RTD_HEADER = ["record_index", "theta", "e_theta"]


def load_trace(path) -> list:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: bad trace line {lineno}: {exc}")
    if not records:
        raise ValueError(f"{path}: empty trace")
    return records


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def progress_rows(records):
    doe = [r for r in records if r["provenance"] == "doe"]
    t0 = doe[-1]["t_cum"] if doe else 0.0
    return [
        [r["index"] - len(doe), r["t_cum"] - t0, r["y"], r["cost"], r["provenance"]]
        for r in records
    ]


def fidelity_names(trace_path: Path, m: int) -> list:
    """Fidelity column names from the config echo next to the trace, if any."""
    cfg = Path(trace_path).parent / "config.json"
    if cfg.exists():
        try:
            fids = json.loads(cfg.read_text()).get("fidelities", [])
            if len(fids) == m:
                return [f["name"] for f in fids]
        except (json.JSONDecodeError, KeyError, TypeError):
            pass
    return [f"z{j + 1}" for j in range(m)]


def fidelity_map_rows(records, names):
    cells = {}
    for r in records:
        if r["provenance"] == "doe":
            continue
        key = tuple(int(round(v)) for v in r["z"])
        cells.setdefault(key, []).append(r["cost"])
    rows = []
    for key in sorted(cells):
        costs = cells[key]
        rows.append(list(key) + [float(np.mean(costs)), len(costs)])
    return rows


def budget_rows(records):
    rows = []
    for r in records:
        if r["provenance"] == "doe":
            continue
        meta = r.get("meta", {})
        rows.append([meta.get("iteration"), meta.get("c_max"), r["cost"],
                     meta.get("remaining_after")])
    return rows


def rtd_rows(records, trace_dir: Path):
    rows = []
    for r in records:
        rel = r.get("meta", {}).get("rtd_file")
        if not rel:
            continue
        curve_path = trace_dir / rel
        if not curve_path.exists():
            log.warning("stored curve missing: %s", curve_path)
            continue
        curve = rtd.RtdCurve.from_csv(curve_path)
        dim = rtd.to_dimensionless(curve)
        for th, e in zip(dim.theta, dim.e_theta):
            rows.append([r["index"], float(th), float(e)])
    return rows


def _render_progress(rows, path):
    ok = [r for r in rows if r[2] is not None]
    its = [r[0] for r in ok]
    wall = [r[1] for r in ok]
    ys = [r[2] for r in ok]
    costs = [r[3] for r in ok]
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharey=True)
    for ax, xs, label in ((axes[0], its, "iteration"),
                          (axes[1], wall, "cumulative cost")):
        sc = ax.scatter(xs, ys, c=costs, cmap="viridis", s=22)
        ax.axvline(0.0, color="grey", lw=0.8, ls="--")
        ax.set_xlabel(label)
        ax.set_ylabel("objective")
    fig.colorbar(sc, ax=axes, label="evaluation cost")
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _render_fidelity_map(rows, names, path):
    if not rows:
        return
    data = np.array([r[: len(names)] for r in rows], dtype=float)
    costs = np.array([r[len(names)] for r in rows])
    counts = np.array([r[len(names) + 1] for r in rows])
    x = data[:, 0]
    y = data[:, 1] if data.shape[1] > 1 else np.zeros_like(x)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    sc = axes[0].scatter(x, y, c=costs, cmap="viridis", s=60)
    fig.colorbar(sc, ax=axes[0], label="mean cost")
    axes[0].set_title("mean evaluation cost")
    sc2 = axes[1].scatter(x, y, s=12 + 14 * counts, c=counts, cmap="magma")
    fig.colorbar(sc2, ax=axes[1], label="evaluations")
    axes[1].set_title("evaluation counts")
    for ax in axes:
        ax.set_xlabel(names[0])
        if len(names) > 1:
            ax.set_ylabel(names[1])
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _render_budget(rows, path):
    rows = [r for r in rows if r[0] is not None]
    if not rows:
        return
    its = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(its, [r[1] for r in rows], label="max predicted (next + greedy)")
    ax.plot(its, [r[3] for r in rows], label="remaining budget", color="black")
    ax.bar(its, [r[2] for r in rows], alpha=0.4, label="realized cost")
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost units")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _render_rtd(rows, path, max_curves: int = 12):
    if not rows:
        return
    by_index = {}
    for idx, th, e in rows:
        by_index.setdefault(idx, ([], []))
        by_index[idx][0].append(th)
        by_index[idx][1].append(e)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    shown = sorted(by_index)[:max_curves]
    for idx in shown:
        th, e = by_index[idx]
        ax.plot(th, e, lw=1.2, label=f"record {idx}")
    ax.set_xlabel(r"$\theta$")
    ax.set_ylabel(r"$E(\theta)$")
    if len(shown) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_data(trace_path, figure: str, out_dir, with_figures: bool = True) -> list:
    """Write the CSV (and PNG) for one figure key; returns created paths."""
    if figure not in FIGURE_KEYS:
        raise ValueError(f"unknown figure key {figure!r}; expected one of {FIGURE_KEYS}")
    trace_path = Path(trace_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = load_trace(trace_path)
    created = []

    if figure == "progress":
        rows = progress_rows(records)
        created.append(write_csv(out_dir / "progress.csv", PROGRESS_HEADER, rows))
        if with_figures:
            _render_progress(rows, out_dir / "progress.png")
            created.append(out_dir / "progress.png")
    elif figure == "fidelity-map":
        names = fidelity_names(trace_path, len(records[0]["z"]))
        rows = fidelity_map_rows(records, names)
        header = names + ["mean_cost", "count"]
        created.append(write_csv(out_dir / "fidelity_map.csv", header, rows))
        if with_figures:
            _render_fidelity_map(rows, names, out_dir / "fidelity_map.png")
            created.append(out_dir / "fidelity_map.png")
    elif figure == "budget-tracking":
        rows = budget_rows(records)
        created.append(write_csv(out_dir / "budget_tracking.csv", BUDGET_HEADER, rows))
        if with_figures:
            _render_budget(rows, out_dir / "budget_tracking.png")
            created.append(out_dir / "budget_tracking.png")
    else:
        rows = rtd_rows(records, trace_path.parent)
        created.append(write_csv(out_dir / "rtd.csv", RTD_HEADER, rows))
        if with_figures:
            _render_rtd(rows, out_dir / "rtd.png")
            created.append(out_dir / "rtd.png")
    return [p for p in created if Path(p).exists()]
