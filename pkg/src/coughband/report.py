"""Boxplot summaries for significant cohort comparisons."""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np

from .store import write_json

logger = logging.getLogger(__name__)


def box_summary(values) -> dict:
    """Linear-interpolation quartiles with 1.5 IQR whiskers."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("cannot summarise an empty cohort")
    q1, med, q3 = (float(np.percentile(v, q)) for q in (25, 50, 75))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return {
        "min": float(v[0]),
        "q1": q1,
        "median": med,
        "q3": q3,
        "max": float(v[-1]),
        "whisker_low": float(inside.min()),
        "whisker_high": float(inside.max()),
        "outliers": [float(x) for x in v if x < lo_fence or x > hi_fence],
        "points": [float(x) for x in v],
    }


def _column(feature: str) -> str:
    return "RP" if feature == "AC" else feature


def emit_boxplot_data(results, feature_rows, manifest, all_cells=False) -> list:
    """Per-cohort box summaries for significant cells (every cell with ``all_cells``)."""
    table = {(r["patient_id"], float(r["Th"]), r["band"]): r for r in feature_rows}
    out = []
    for r in results:
        if not (all_cells or r.significant):
            continue
        membership = manifest.membership(r.study_group)
        cell = {"study_group": r.study_group, "band": r.band, "feature": r.feature,
                "Th": r.Th, "p_value": r.p_value, "test_used": r.test_used,
                "significant": r.significant, "direction": r.direction, "cohorts": {}}
        for cohort in ("C1", "C2"):
            vals = []
            for pid, state in membership.items():
                row = table.get((pid, float(r.Th), r.band))
                if state == cohort and row is not None and math.isfinite(row[_column(r.feature)]):
                    vals.append(row[_column(r.feature)])
            if vals:
                cell["cohorts"][cohort] = box_summary(vals)
        out.append(cell)
    if not out:
        logger.info("no significant cells; boxplot data is empty")
    return out


def write_boxplots(path, cells) -> None:
    note = "" if cells else "no significant differences at p < 0.05"
    write_json(path, {"cells": cells, "note": note})


def render_svg(cells, directory) -> list:
    """One SVG per cell; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in cells:
        cohorts = [k for k in ("C1", "C2") if k in c["cohorts"]]
        if not cohorts:
            continue
        fig, ax = plt.subplots(figsize=(3, 4))
        ax.boxplot([c["cohorts"][k]["points"] for k in cohorts], whis=1.5)
        ax.set_xticks(range(1, len(cohorts) + 1), cohorts)
        ax.set_title(f"{c['study_group']} {c['feature']} {c['band']} Th={c['Th']}\np={c['p_value']:.4f}")
        path = directory / f"{c['study_group']}_{c['band']}_{c['feature']}_th{c['Th']}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths
