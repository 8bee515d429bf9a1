"""Deterministic SVG figures and TSV tables from summary tables.

SVG is written by hand with fixed number formatting so that re-emitting from
the same table is byte-identical.
"""
from __future__ import annotations

import math
import warnings
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

from ..corpus import EKMAN
from ..evaluation import normalize_feature_curves
from .ratings import SummaryTable

REPORT_KINDS = ("all", "curves", "heatmap", "features")

# one colour per rated dimension, comprehensibility last
PALETTE = ("#d62728", "#8c564b", "#9467bd", "#ff7f0e", "#1f77b4", "#2ca02c", "#7f7f7f")

W, H = 480, 320
LEFT, RIGHT, TOP, BOTTOM = 56, 120, 30, 44


def _f(x: float) -> str:
    return f"{x:.2f}"


class _Svg:
    def __init__(self, width: int, height: int, title: str):
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
            f"<title>{escape(title)}</title>",
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        ]

    def add(self, element: str) -> None:
        self.parts.append(element)

    def text(self, x: float, y: float, s: str, anchor: str = "start", **attrs: str) -> None:
        extra = "".join(f' {k.replace("_", "-")}="{v}"' for k, v in attrs.items())
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}"{extra}>{escape(s)}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _nice_max(v: float) -> float:
    if v <= 0 or not math.isfinite(v):
        return 1.0
    step = 10 ** math.floor(math.log10(v))
    for m in (1, 2, 2.5, 5, 10):
        if m * step >= v:
            return m * step
    return 10 * step


def _axes(svg: _Svg, xs: Sequence[float], y_max: float, x_label: str, y_label: str):
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    x0, x1 = min(xs), max(xs)
    span = (x1 - x0) or 1.0

    def px(x: float) -> float:
        return LEFT + (x - x0) / span * pw

    def py(y: float) -> float:
        return TOP + ph - max(0.0, min(y, y_max)) / y_max * ph

    svg.add(f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="#000000"/>')
    svg.add(f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="#000000"/>')
    for x in xs:
        svg.add(f'<line x1="{_f(px(x))}" y1="{TOP + ph}" x2="{_f(px(x))}" y2="{TOP + ph + 4}" stroke="#000000"/>')
        svg.text(px(x), TOP + ph + 16, f"{x:.2f}", "middle")
    for i in range(5):
        y = y_max * i / 4
        svg.add(f'<line x1="{LEFT - 4}" y1="{_f(py(y))}" x2="{LEFT}" y2="{_f(py(y))}" stroke="#000000"/>')
        svg.text(LEFT - 6, py(y) + 4, f"{y:g}", "end")
    svg.text(LEFT + pw / 2, H - 8, x_label, "middle")
    svg.text(14, TOP + ph / 2, y_label, "middle", transform=f"rotate(-90 14 {_f(TOP + ph / 2)})")
    return px, py


def _series_block(table: SummaryTable, target: str) -> tuple[list[float], dict[str, tuple[list[float], list[float]]]]:
    lams = None
    out = {}
    for dim in table.dimensions:
        xs, means, sds = table.series(target, dim)
        if not xs:
            continue
        if lams is None:
            lams = xs
        elif xs != lams:
            raise ValueError(f"{target}: series for {dim!r} covers {len(xs)} strengths, expected {len(lams)}")
        out[dim] = (means, sds)
    return lams or [], out


def curve_svg(table: SummaryTable, target: str, y_max: float | None = None) -> str:
    """Mean rating per dimension against strength for one target, with +/-1 SD bands."""
    lams, block = _series_block(table, target)
    if len(lams) < 1:
        raise ValueError(f"no data for target {target!r}")
    if y_max is None:
        y_max = _nice_max(max(m + s for means, sds in block.values() for m, s in zip(means, sds)))
    svg = _Svg(W, H, f"target {target}: mean rating by strength")
    svg.text(W / 2 - RIGHT / 2, 18, f"Target: {target}", "middle", font_weight="bold")
    px, py = _axes(svg, lams, y_max, "lambda", "mean rating")
    for idx, (dim, (means, sds)) in enumerate(block.items()):
        colour = PALETTE[idx % len(PALETTE)]
        upper = [(px(x), py(m + s)) for x, m, s in zip(lams, means, sds)]
        lower = [(px(x), py(m - s)) for x, m, s in zip(lams, means, sds)][::-1]
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in upper + lower)
        svg.add(f'<polygon points="{pts}" fill="{colour}" fill-opacity="0.15" stroke="none"/>')
        line = " ".join(f"{_f(px(x))},{_f(py(m))}" for x, m in zip(lams, means))
        width = "2.5" if dim == target else "1.2"
        svg.add(f'<polyline points="{line}" fill="none" stroke="{colour}" stroke-width="{width}"/>')
        ly = TOP + 12 + 16 * idx
        svg.add(f'<line x1="{W - RIGHT + 10}" y1="{ly}" x2="{W - RIGHT + 28}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        svg.text(W - RIGHT + 32, ly + 4, dim)
    return svg.render()


def heatmap_matrix(table: SummaryTable, lam: float, emotions: Sequence[str] = EKMAN) -> list[list[float]]:
    """rows: target emotion, columns: rated emotion, at one strength."""
    rows = []
    for target in emotions:
        cells = table.cells.get((target, lam))
        if cells is None:
            raise ValueError(f"no cell for target {target!r} at lambda {lam:.2f}")
        rows.append([cells[e].mean for e in emotions])
    return rows


def heatmap_svg(table: SummaryTable, lam: float, emotions: Sequence[str] = EKMAN) -> str:
    mat = heatmap_matrix(table, lam, emotions)
    n = len(emotions)
    cell, left, top = 48, 80, 60
    size_w, size_h = left + n * cell + 20, top + n * cell + 20
    lo = min(min(r) for r in mat)
    hi = max(max(r) for r in mat)
    span = (hi - lo) or 1.0
    svg = _Svg(size_w, size_h, f"mean ratings at lambda {lam:.2f}")
    svg.text(size_w / 2, 18, f"Mean ratings, lambda = {lam:.2f}", "middle", font_weight="bold")
    for j, e in enumerate(emotions):
        svg.text(left + j * cell + cell / 2, top - 8, e, "middle")
    for i, target in enumerate(emotions):
        svg.text(left - 6, top + i * cell + cell / 2 + 4, target, "end")
        for j, v in enumerate(mat[i]):
            shade = int(round(255 - 200 * (v - lo) / span))
            colour = f"#{shade:02x}{shade:02x}ff"
            x, y = left + j * cell, top + i * cell
            svg.add(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{colour}" stroke="#ffffff"/>')
            svg.text(x + cell / 2, y + cell / 2 + 4, f"{v:.2f}", "middle")
    return svg.render()


def feature_svg(lambdas: Sequence[float], curves: Mapping[str, Sequence[float]]) -> str:
    """Feature curves already scaled to their maxima (y in [0, 1])."""
    svg = _Svg(W, H, "normalized text features by strength")
    svg.text(W / 2 - RIGHT / 2, 18, "Text features (scaled to max)", "middle", font_weight="bold")
    px, py = _axes(svg, lambdas, 1.0, "lambda", "relative value")
    for idx, (name, ys) in enumerate(curves.items()):
        colour = PALETTE[idx % len(PALETTE)]
        line = " ".join(f"{_f(px(x))},{_f(py(y))}" for x, y in zip(lambdas, ys))
        svg.add(f'<polyline points="{line}" fill="none" stroke="{colour}" stroke-width="1.8"/>')
        ly = TOP + 12 + 16 * idx
        svg.add(f'<line x1="{W - RIGHT + 10}" y1="{ly}" x2="{W - RIGHT + 28}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        svg.text(W - RIGHT + 32, ly + 4, name)
    return svg.render()


def summary_tsv(table: SummaryTable) -> str:
    lines = ["target\tlambda\tdimension\tmean\tsd\tn"]
    for (target, lam), cells in table.cells.items():
        for dim in table.dimensions:
            c = cells.get(dim)
            if c is not None:
                lines.append(f"{target}\t{lam:.2f}\t{dim}\t{c.mean!r}\t{c.sd!r}\t{c.n}")
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str, written: list[Path]) -> None:
    path.write_text(text, encoding="utf-8")
    written.append(path)


def emit_report(table: SummaryTable, out_dir: str | Path, kind: str = "all", heatmap_lambda: float = 0.20,
                features: Mapping[str, Sequence[float]] | None = None,
                feature_lambdas: Sequence[float] | None = None) -> list[Path]:
    """Write figures and tables for ``table``; returns the paths written.

    ``features`` maps a feature name to its per-strength means over
    ``feature_lambdas``; each series is scaled to its own maximum before plotting.
    """
    if kind not in REPORT_KINDS:
        raise ValueError(f"unknown report kind {kind!r}; choose from {REPORT_KINDS}")
    if not table.cells:
        warnings.warn("summary table is empty; no report files written", stacklevel=2)
        return []
    # validate every series before touching the filesystem
    blocks = {t: _series_block(table, t) for t in table.targets()}
    if features is not None:
        if feature_lambdas is None:
            raise ValueError("feature_lambdas is required with features")
        for name, ys in features.items():
            if len(ys) != len(feature_lambdas):
                raise ValueError(f"feature {name!r} has {len(ys)} values for {len(feature_lambdas)} strengths")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    _write(out / "summary.tsv", summary_tsv(table), written)
    if kind in ("all", "curves"):
        for target in blocks:
            _write(out / f"curves_{target}.svg", curve_svg(table, target), written)
    if kind in ("all", "heatmap") and all(t in blocks for t in EKMAN):
        mat = heatmap_matrix(table, heatmap_lambda)
        tsv = ["target\t" + "\t".join(EKMAN)] + [
            t + "\t" + "\t".join(repr(v) for v in row) for t, row in zip(EKMAN, mat)
        ]
        _write(out / f"heatmap_{heatmap_lambda:.2f}.tsv", "\n".join(tsv) + "\n", written)
        _write(out / f"heatmap_{heatmap_lambda:.2f}.svg", heatmap_svg(table, heatmap_lambda), written)
    if kind in ("all", "features") and features:
        scaled = {name: normalize_feature_curves(ys) for name, ys in features.items()}
        tsv = ["lambda\t" + "\t".join(scaled)] + [
            f"{lam:.2f}\t" + "\t".join(repr(scaled[n][i]) for n in scaled) for i, lam in enumerate(feature_lambdas)
        ]
        _write(out / "features.tsv", "\n".join(tsv) + "\n", written)
        _write(out / "features.svg", feature_svg(feature_lambdas, scaled), written)
    return written
