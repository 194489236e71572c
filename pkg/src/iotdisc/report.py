"""CSV emission and figure rendering for experiment sweeps.

The CSV is the canonical output: one row per (config, seed) with stable,
documented column names. When a figures directory is given, each swept
metric is also rendered as a line chart (one series per policy) next to
the delimited output.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

# columns ahead of the metric block, in stable order
AXIS_COLUMNS = [
    "scenario",
    "policy",
    "nodes",
    "streams",
    "cov",
    "alpha",
    "c",
    "d",
    "b",
    "b_ad",
    "b_q",
    "scv_mode",
    "density",
    "placement",
    "t_d",
    "period",
    "seed",
]

PLOT_METRICS = [
    "rt_entries_avg",
    "rt_bytes_avg",
    "misleading_pct",
    "qry_per_query",
    "latency_avg",
    "collision_pct",
    "recall",
]


def row_columns(rows: list[dict]) -> list[str]:
    metric_keys = [k for k in rows[0] if k not in AXIS_COLUMNS]
    return [c for c in AXIS_COLUMNS if c in rows[0]] + metric_keys


def write_csv(rows: list[dict], path: str):
    if not rows:
        raise ValueError("no rows to write")
    cols = row_columns(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in cols})


def _numeric(values):
    out = []
    for v in values:
        try:
            out.append(float(v))
        except (TypeError, ValueError):
            return None
    return out


def sweep_axis(rows: list[dict]) -> str | None:
    """The swept numeric axis: the non-policy column that actually varies."""
    for col in ("cov", "density", "c", "d", "nodes", "streams", "alpha", "t_d", "period", "b_q", "b_ad"):
        values = {row.get(col) for row in rows}
        if len(values) > 1 and _numeric(values) is not None:
            return col
    return None


def render_sweep_figures(rows: list[dict], outdir: str) -> list[str]:
    """One PNG per metric, metric vs the swept axis, a line per policy.
    Returns the written paths."""
    if not rows:
        return []
    os.makedirs(outdir, exist_ok=True)
    axis = sweep_axis(rows)
    written = []
    policies = sorted({row.get("policy", "") for row in rows})
    for metric in PLOT_METRICS:
        if metric not in rows[0]:
            continue
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        plotted = False
        for policy in policies:
            sub = [r for r in rows if r.get("policy", "") == policy]
            if axis is None:
                xs = list(range(len(sub)))
            else:
                sub = sorted(sub, key=lambda r: float(r[axis]))
                xs = [float(r[axis]) for r in sub]
            ys = _numeric([r.get(metric, "") for r in sub])
            if ys is None or not ys:
                continue
            ax.plot(xs, ys, marker="o", label=policy)
            plotted = True
        if not plotted:
            plt.close(fig)
            continue
        ax.set_xlabel(axis or "run index")
        ax.set_ylabel(metric)
        ax.grid(True, alpha=0.3)
        if len(policies) > 1:
            ax.legend()
        fig.tight_layout()
        path = os.path.join(outdir, f"{metric}.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def add_compression_column(rows: list[dict]):
    """Fill compression_vs_nsum: bytes of the matching nsum row divided by
    this row's bytes, per identical non-policy axis point."""
    baseline: dict[tuple, float] = {}
    for row in rows:
        if row.get("policy") == "nsum":
            key = tuple(row.get(c) for c in AXIS_COLUMNS if c != "policy")
            try:
                baseline[key] = float(row["rt_bytes_avg"])
            except (TypeError, ValueError):
                pass
    for row in rows:
        key = tuple(row.get(c) for c in AXIS_COLUMNS if c != "policy")
        base = baseline.get(key)
        try:
            mine = float(row["rt_bytes_avg"])
        except (TypeError, ValueError):
            continue
        if base and mine > 0 and row.get("policy") != "nsum":
            row["compression_vs_nsum"] = round(base / mine, 4)
