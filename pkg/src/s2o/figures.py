"""Headless figure rendering for reports, heatmaps and fit summaries."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import LogNorm  # noqa: E402
from matplotlib.patches import Polygon  # noqa: E402

from .experience import _limits_for, _power_terms  # noqa: E402
from .fitting import FitResult  # noqa: E402
from .kinematics import CaseTable, obb_corners  # noqa: E402
from .pipeline import TERMS, EvalParams, EvaluationReport  # noqa: E402
from .safety import RiskGrid, risk_series  # noqa: E402
from .types import DrivingCase, SceneFrame  # noqa: E402

_TERM_COLORS = ("#c0392b", "#2980b9", "#8e44ad", "#27ae60")


def _box_patch(x, y, heading, length, width, **kw) -> Polygon:
    return Polygon(obb_corners(x, y, heading, length, width), closed=True, **kw)


def render_heatmap(grid: RiskGrid, frame: Optional[SceneFrame],
                   path: Union[str, Path]) -> Path:
    """Risk field on a log color scale with the scene geometry overlaid."""
    values = np.asarray(grid.values, dtype=float)
    positive = values[values > 0]
    vmin = float(positive.min()) if positive.size else 1e-9
    vmax = float(values.max()) if values.max() > 0 else 1.0
    if vmax <= vmin:
        vmax = vmin * 10.0

    fig, ax = plt.subplots(figsize=(9.0, 5.0))
    extent = (
        grid.origin_x,
        grid.origin_x + grid.cols * grid.cell_size,
        grid.origin_y,
        grid.origin_y + grid.rows * grid.cell_size,
    )
    im = ax.imshow(
        values, origin="lower", extent=extent, cmap="inferno",
        norm=LogNorm(vmin=vmin, vmax=vmax), interpolation="nearest",
    )
    fig.colorbar(im, ax=ax, label="risk")
    if frame is not None:
        ego = frame.ego
        ax.add_patch(_box_patch(ego.x, ego.y, ego.heading, ego.length, ego.width,
                                fill=False, edgecolor="#00d0ff", linewidth=1.6))
        for a in frame.agents:
            ax.add_patch(_box_patch(a.x, a.y, a.heading, a.length, a.width,
                                    fill=False, edgecolor="#ffffff", linewidth=1.0))
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("risk field")
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_case_summary(case: DrivingCase, report: EvaluationReport,
                        params: EvalParams, path: Union[str, Path]) -> Path:
    """Four-panel overview: speed, risk, power, and the scored terms."""
    table = CaseTable(case)
    road = case.frames[0].road
    t = table.t
    fig, axes = plt.subplots(2, 2, figsize=(11.0, 7.0))

    ax = axes[0][0]
    ax.plot(t, table.speed, color="#2980b9", label="speed")
    ax.plot(t, _limits_for(table, road), color="#7f8c8d", linestyle="--",
            label="limit")
    ax.set_ylabel("speed [m/s]")
    ax.set_xlabel("t [s]")
    ax.legend(loc="best", fontsize=8)

    ax = axes[0][1]
    risk = risk_series(case, params.dsf, table)
    ax.plot(t, risk, color="#c0392b")
    ax.set_ylabel("risk")
    ax.set_xlabel("t [s]")
    ax.set_yscale("symlog", linthresh=1e-3)

    ax = axes[1][0]
    terms = _power_terms(table.speed, table.accel_long, table.ego_mass,
                         params.vehicle, road)
    total = terms[0] + terms[1] + terms[2] + terms[3]
    ax.plot(t, total, color="#27ae60")
    ax.axhline(0.0, color="#7f8c8d", linewidth=0.8)
    ax.set_ylabel("power [kW]")
    ax.set_xlabel("t [s]")

    ax = axes[1][1]
    vals = report.normalized.as_array()
    ax.bar(range(len(TERMS)), vals, color=_TERM_COLORS, tick_label=list(TERMS))
    ax.set_ylim(0, 110)
    ax.axhline(60, color="#7f8c8d", linewidth=0.8, linestyle=":")
    for k, v in enumerate(vals):
        ax.text(k, v + 2, f"{v:.1f}", ha="center", fontsize=8)
    ax.set_ylabel("normalized")

    crash_note = " (crash)" if report.crash else ""
    fig.suptitle(
        f"{report.case_id}  segment={report.segment.value}  final={report.final:.1f}{crash_note}"
    )
    fig.tight_layout(rect=(0, 0, 1, 0.95))
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_fit_summary(result: FitResult, path: Union[str, Path]) -> Path:
    """Per-segment weight bars with the error figures in the margin."""
    fig, ax = plt.subplots(figsize=(8.5, 4.5))
    rows = (result.weights.low, result.weights.mid, result.weights.high)
    labels = ("low", "mid", "high")
    width = 0.2
    xs = np.arange(len(labels))
    for k, term in enumerate(TERMS):
        vals = [row[term] for row in rows]
        ax.bar(xs + (k - 1.5) * width, vals, width=width, label=term,
               color=_TERM_COLORS[k])
    ax.set_xticks(xs, labels)
    ax.set_ylabel("weight")
    ax.legend(fontsize=8)
    repeats = ", ".join(f"{m:.2f}" for m in result.repeat_maes)
    ax.set_title(
        f"offset={result.weights.offset:.2f}  train MAE={result.train_mae:.2f}  "
        f"val MAE={result.val_mae:.2f}  repeats=[{repeats}]",
        fontsize=9,
    )
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
