"""Shared loading, style, and saving helpers for the figure scripts.

These scripts consume the CSV artifacts written by the simulation CLI
and never import the simulation package: re-rendering a figure must not
be able to change the physics it reports.  Every loader checks the
`# schema=1` header line, names any missing columns, and refuses empty
tables outright, so a stale or truncated input fails fast instead of
producing a blank plot.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

SCHEMA_LINE = "# schema=1"

# fixed style so regenerated images are byte-stable across runs
STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 160,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.grid": True,
    "grid.alpha": 0.25,
    "grid.linewidth": 0.6,
    "lines.linewidth": 1.4,
    "legend.fontsize": 8,
    "svg.hashsalt": "kmp-figures",
}


class InputError(RuntimeError):
    """Raised for unusable figure inputs (schema, columns, empty data)."""


def apply_style() -> None:
    plt.rcParams.update(STYLE)


def load_rows(path: Path, required: tuple[str, ...], numeric: tuple[str, ...] = ()) -> list[dict]:
    """Read one schema-checked CSV into dicts, coercing numeric columns."""
    if not path.exists():
        raise InputError(f"{path}: input file not found")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != SCHEMA_LINE:
        raise InputError(f"{path}: first line must be '{SCHEMA_LINE}'")
    reader = csv.DictReader(lines[1:])
    fields = tuple(reader.fieldnames or ())
    missing = [c for c in required if c not in fields]
    if missing:
        raise InputError(f"{path}: missing required columns: {', '.join(missing)}")
    rows = list(reader)
    if not rows:
        raise InputError(f"{path}: no data rows")
    for row in rows:
        for col in numeric:
            try:
                row[col] = float(row[col])
            except ValueError as exc:
                raise InputError(f"{path}: column {col} is not numeric: {row[col]!r}") from exc
    return rows


def column(rows: list[dict], name: str) -> list:
    return [row[name] for row in rows]


def save_figure(fig, outdir: Path, stem: str) -> list[Path]:
    """Write PNG and SVG side by side; SVG stripped of volatile metadata."""
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for ext in ("png", "svg"):
        path = outdir / f"{stem}.{ext}"
        kwargs = {"metadata": {"Date": None}} if ext == "svg" else {}
        fig.savefig(path, **kwargs)
        written.append(path)
    plt.close(fig)
    return written


def figure_cli(description: str):
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--in", dest="indir", required=True, help="directory holding the CLI's CSV outputs")
    parser.add_argument("--out", dest="outdir", default=None, help="directory for images (default: same as --in)")
    return parser


def run_script(build, argv=None) -> int:
    """Standard driver: parse --in/--out, build the figure, save, report."""
    parser = figure_cli(build.__doc__ or "render one figure kind")
    args = parser.parse_args(argv)
    indir = Path(args.indir)
    outdir = Path(args.outdir) if args.outdir else indir
    apply_style()
    try:
        fig, stem = build(indir)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in save_figure(fig, outdir, stem):
        print(f"wrote {path}")
    return 0
