"""Field-mean convergence figure: empirical means vs the heat-kernel target.

Reads field_mean.csv (columns N, t, phi, mean, stderr, heat_kernel_target,
exact_mean) and shows the Monte-Carlo mean with 1-sigma error bars, the
exact finite-N mean, and the N -> infinity heat-kernel pairing as a
reference line.
"""
from __future__ import annotations

import sys
from pathlib import Path

import matplotlib.pyplot as plt

from plot_common import InputError, column, load_rows, run_script

REQUIRED = ("N", "t", "phi", "mean", "stderr", "heat_kernel_target", "exact_mean")
NUMERIC = ("N", "t", "mean", "stderr", "heat_kernel_target", "exact_mean")


def draw(ax, rows: list[dict]) -> None:
    rows = sorted(rows, key=lambda r: r["N"])
    targets = set(r["heat_kernel_target"] for r in rows)
    if len(targets) != 1:
        raise InputError("field_mean.csv mixes test functions or times; expected one target")
    ns = column(rows, "N")
    ax.errorbar(
        ns,
        column(rows, "mean"),
        yerr=column(rows, "stderr"),
        fmt="o",
        capsize=3,
        label="Monte-Carlo mean",
        zorder=3,
    )
    ax.plot(ns, column(rows, "exact_mean"), "s--", ms=4, label="exact finite-N mean")
    target = targets.pop()
    ax.axhline(target, color="k", lw=1.0, label=f"heat-kernel pairing = {target:.5f}")
    ax.set_xscale("log", base=2)
    ax.set_xticks(ns, [str(int(n)) for n in ns])
    ax.set_xlabel("lattice scale N")
    ax.set_ylabel("pairing with test function")
    t = rows[0]["t"]
    ax.set_title(f"density-field mean at t = {t:g} ({rows[0]['phi']})")
    ax.legend()


def build(indir: Path):
    """field-mean convergence vs the heat-kernel pairing target"""
    rows = load_rows(indir / "field_mean.csv", REQUIRED, NUMERIC)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    draw(ax, rows)
    fig.tight_layout()
    return fig, "fig_field_mean"


if __name__ == "__main__":
    sys.exit(run_script(build))
