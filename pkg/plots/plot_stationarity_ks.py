"""Stationarity figure: KS p-values for every preserved-law check.

Reads stationarity_ks.csv (columns check, site, shape, p_value,
threshold) covering the one-bond Gamma splits, the inhomogeneous-segment
marginals, and the unitary-block split laws; p-values are drawn on a log
axis against each row's Bonferroni-corrected threshold.
"""
from __future__ import annotations

import sys
from pathlib import Path

import matplotlib.pyplot as plt

from plot_common import load_rows, run_script

REQUIRED = ("check", "site", "shape", "p_value", "threshold")
NUMERIC = ("p_value", "threshold")

MARKERS = ("o", "s", "D", "^", "v", "P")


def draw(ax, rows: list[dict]) -> None:
    groups: dict[str, list[tuple[int, dict]]] = {}
    for i, row in enumerate(rows):
        groups.setdefault(row["check"], []).append((i, row))
    for gi, (check, members) in enumerate(sorted(groups.items())):
        xs = [i for i, _ in members]
        ax.semilogy(
            xs,
            [r["p_value"] for _, r in members],
            MARKERS[gi % len(MARKERS)],
            ms=6,
            label=check,
        )
    thresholds = sorted(set(r["threshold"] for r in rows))
    for thr in thresholds:
        ax.axhline(thr, color="tab:red", lw=0.9, ls="--")
    ax.annotate(
        "corrected level",
        (0.99, thresholds[0]),
        xycoords=("axes fraction", "data"),
        ha="right",
        va="bottom",
        fontsize=7,
        color="tab:red",
    )
    labels = [f"{r['site']}\n{r['shape']}" for r in rows]
    ax.set_xticks(range(len(rows)), labels, fontsize=6.5, rotation=45, ha="right")
    ax.set_ylim(min(1e-4, thresholds[0] / 3.0), 1.5)
    ax.set_ylabel("KS p-value")
    ax.set_title("preserved-law KS battery")
    ax.legend()


def build(indir: Path):
    """KS p-values for stationarity and split-law checks"""
    rows = load_rows(indir / "stationarity_ks.csv", REQUIRED, NUMERIC)
    fig, ax = plt.subplots(figsize=(6.4, 3.9))
    draw(ax, rows)
    fig.tight_layout()
    return fig, "fig_stationarity_ks"


if __name__ == "__main__":
    sys.exit(run_script(build))
