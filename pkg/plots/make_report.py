"""Combined report page: all figure kinds plus a verification summary.

Renders the five standard panels into one image and, when
verification.csv is present, prefixes a pass/fail summary panel.  Inputs
are the same CSVs the single-figure scripts consume; nothing is
recomputed.
"""
from __future__ import annotations

import sys
from pathlib import Path

import matplotlib.pyplot as plt

import plot_crossover
import plot_duality_z
import plot_field_mean
import plot_gamma_residuals
import plot_stationarity_ks
from plot_common import load_rows, run_script

PANELS = (
    (plot_field_mean, "field_mean.csv"),
    (plot_gamma_residuals, "gamma_residuals.csv"),
    (plot_duality_z, "duality_z.csv"),
    (plot_stationarity_ks, "stationarity_ks.csv"),
    (plot_crossover, "crossover_curves.csv"),
)

VERIFICATION_COLUMNS = ("index", "name", "passed", "statistic", "threshold", "detail")


def _summary_text(indir: Path) -> str:
    path = indir / "verification.csv"
    if not path.exists():
        return "verification.csv not present;\nfigure panels only"
    rows = load_rows(path, VERIFICATION_COLUMNS)
    n_pass = sum(1 for r in rows if r["passed"] == "true")
    lines = [f"verification checks: {n_pass}/{len(rows)} passed", ""]
    for r in rows:
        mark = "PASS" if r["passed"] == "true" else "FAIL"
        lines.append(f"[{mark}] {int(r['index']):02d} {r['name']}")
    return "\n".join(lines)


def build(indir: Path):
    """combined report page over every figure kind"""
    fig, axes = plt.subplots(3, 2, figsize=(11.5, 12.5))
    flat = axes.ravel()
    ax = flat[0]
    ax.axis("off")
    ax.text(
        0.02,
        0.98,
        _summary_text(indir),
        transform=ax.transAxes,
        va="top",
        family="monospace",
        fontsize=8,
    )
    for ax, (module, name) in zip(flat[1:], PANELS):
        rows = load_rows(indir / name, module.REQUIRED, module.NUMERIC)
        module.draw(ax, rows)
    fig.suptitle("energy-redistribution flow: verification report", y=0.995)
    fig.tight_layout(rect=(0.0, 0.0, 1.0, 0.985))
    return fig, "report"


if __name__ == "__main__":
    sys.exit(run_script(build))
