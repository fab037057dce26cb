"""Deterministic CSV, plot-data, and manifest writers.

Every writer here produces byte-identical output for identical input:
floats render with repr, dict keys are sorted, and nothing stamps times.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os

log = logging.getLogger("cotlens")

TOOLKIT_VERSION = "0.1.0"


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def write_csv(path: str, header: list[str], rows) -> str:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def emit_plot_data(
    series: dict[str, list[tuple[float, float]]],
    out_dir: str,
    stem: str,
    chart: bool = False,
) -> list[str]:
    """Write one x,y CSV per series (suffixed when there are several).

    An empty series still gets its header-only CSV, with a warning logged.
    chart=True additionally writes a small SVG line chart of all series.
    """
    if not series:
        raise ValueError("no series to emit")
    paths = []
    single = len(series) == 1
    for name in sorted(series):
        points = series[name]
        fname = f"{stem}.csv" if single else f"{stem}_{name}.csv"
        path = os.path.join(out_dir, fname)
        if not points:
            log.warning("series %r is empty; writing header-only CSV", name)
        write_csv(path, ["x", "y"], points)
        paths.append(path)
    if chart:
        svg_path = os.path.join(out_dir, f"{stem}.svg")
        write_svg_chart(svg_path, series)
        paths.append(svg_path)
    return paths


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def write_svg_chart(path: str, series: dict[str, list[tuple[float, float]]]) -> str:
    """Minimal deterministic polyline chart; no external dependencies."""
    width, height, margin = 640, 400, 48
    pts = [p for points in series.values() for p in points]
    if pts:
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys), max(ys)
    else:
        x_lo = y_lo = 0.0
        x_hi = y_hi = 1.0
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def sx(x: float) -> float:
        return margin + (x - x_lo) / x_span * (width - 2 * margin)

    def sy(y: float) -> float:
        return height - margin - (y - y_lo) / y_span * (height - 2 * margin)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
    ]
    for i, name in enumerate(sorted(series)):
        points = series[name]
        if not points:
            continue
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in points)
        color = _PALETTE[i % len(_PALETTE)]
        lines.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{coords}"/>'
        )
        lines.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * i + 10}" '
            f'font-size="11" fill="{color}">{name}</text>'
        )
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
    return path


def write_manifest(
    out_dir: str,
    command: str,
    config: dict,
    seed: int | None,
    inputs: list[str],
    outputs: list[str],
) -> str:
    """Record what produced the files in out_dir; config plus seed are
    enough to reproduce them byte for byte (network-free commands)."""
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": sorted(inputs),
        "outputs": sorted(os.path.basename(p) for p in outputs),
        "version": TOOLKIT_VERSION,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
