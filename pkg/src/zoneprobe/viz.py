"""Static SVG output: diverging delta heatmaps, attention-line diagrams and
per-head shaded boxes.  Output is a pure function of the inputs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .model import AttentionRecord
from .probe import DeltaMatrix
from .zones import InputLayout

HEAD_COLORS = (
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
    "#1f78b4", "#b2df8a", "#fb9a99", "#cab2d6",
)


@dataclass
class HeatmapStyle:
    negative: str = "#2166ac"  # below baseline
    zero: str = "#ffffff"
    positive: str = "#b2182b"  # above baseline
    clamp: float | None = None  # default: max |delta| of the matrix
    cell_size: int = 44
    font_size: int = 11

    @classmethod
    def from_dict(cls, d: dict) -> "HeatmapStyle":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown style fields: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _rgb(hex_color: str) -> np.ndarray:
    h = hex_color.lstrip("#")
    return np.array([int(h[i : i + 2], 16) for i in (0, 2, 4)], dtype=np.float64)


def _hex(rgb) -> str:
    return "#" + "".join(f"{int(round(c)):02x}" for c in rgb)


def diverging_color(value: float, clamp: float, style: HeatmapStyle) -> str:
    """Linear blend from the zero colour toward the signed anchor, clamped at ``clamp``."""
    if clamp <= 0 or value == 0:
        return style.zero
    t = max(-1.0, min(1.0, value / clamp))
    anchor = style.positive if t > 0 else style.negative
    return _hex(_rgb(style.zero) + abs(t) * (_rgb(anchor) - _rgb(style.zero)))


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


def _write(path, text: str) -> str:
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def render_heatmap(matrix: DeltaMatrix, style: HeatmapStyle | None = None, title: str | None = None) -> str:
    style = style or HeatmapStyle()
    if not matrix.rows or not matrix.columns:
        raise ValueError("cannot draw an empty matrix")
    cells = np.asarray(matrix.cells, dtype=np.float64)
    clamp = style.clamp if style.clamp is not None else float(np.abs(cells).max())
    cs, fs = style.cell_size, style.font_size
    left, top = 56, 40 if title else 24
    n_rows, n_cols = cells.shape
    legend_y = top + n_rows * cs + 16
    width = left + n_cols * cs + 16
    height = legend_y + 44
    body = []
    if title:
        body.append(f'<text x="{left}" y="16" font-size="{fs + 2}">{escape(title)}</text>')
    for j, col in enumerate(matrix.columns):
        x = left + j * cs + cs / 2
        body.append(f'<text x="{x:g}" y="{top - 6}" font-size="{fs}" text-anchor="middle">{escape(col)}</text>')
    for i, row in enumerate(matrix.rows):
        y = top + i * cs
        body.append(
            f'<text x="{left - 6}" y="{y + cs / 2 + fs / 3:g}" font-size="{fs}" text-anchor="end">{escape(row)}</text>'
        )
        for j in range(n_cols):
            v = float(cells[i, j])
            x = left + j * cs
            body.append(
                f'<rect class="cell" x="{x}" y="{y}" width="{cs}" height="{cs}" '
                f'fill="{diverging_color(v, clamp, style)}" stroke="#cccccc" data-value="{v!r}"/>'
            )
            body.append(
                f'<text x="{x + cs / 2:g}" y="{y + cs / 2 + fs / 3:g}" font-size="{fs - 2}" '
                f'text-anchor="middle">{v:+.1f}</text>'
            )
    # legend: 11 swatches from -clamp to +clamp
    sw = max(8, (n_cols * cs) // 11)
    for s in range(11):
        v = (s - 5) / 5 * clamp
        body.append(
            f'<rect class="legend" x="{left + s * sw}" y="{legend_y}" width="{sw}" height="12" '
            f'fill="{diverging_color(v, clamp, style)}" stroke="#cccccc"/>'
        )
    for s, label in ((0, f"{-clamp:+.1f}"), (5, "0"), (10, f"{clamp:+.1f}")):
        body.append(
            f'<text x="{left + s * sw + sw / 2:g}" y="{legend_y + 26}" font-size="{fs - 2}" '
            f'text-anchor="middle">{label}</text>'
        )
    return _svg(width, height, body)


def emit_heatmap(matrix: DeltaMatrix, path=None, style: HeatmapStyle | None = None, title: str | None = None) -> str:
    return _write(path, render_heatmap(matrix, style, title))


def _visible(layout: InputLayout, filter_special: bool) -> list[int]:
    idx = list(range(layout.used_length))
    if filter_special:
        idx = [i for i in idx if i not in layout.special_indices]
    return idx


def render_attention_lines(
    record: AttentionRecord,
    layer: int,
    heads: Sequence[int],
    layout: InputLayout,
    tokens: Sequence[str],
    filter_special: bool = True,
    threshold: float = 0.1,
    example: int = 0,
) -> str:
    """Source tokens on the left, targets on the right, one line per strong cell."""
    if not 0 <= layer < len(record.post):
        raise ValueError(f"layer {layer} not in record")
    post = record.post[layer][example]
    keep = _visible(layout, filter_special)
    row_h, left_x, right_x = 18, 110, 330
    top = 20
    pos = {i: top + k * row_h for k, i in enumerate(keep)}
    body = []
    for i in keep:
        y = pos[i]
        body.append(f'<text x="{left_x - 8}" y="{y + 4}" font-size="11" text-anchor="end">{escape(tokens[i])}</text>')
        body.append(f'<text x="{right_x + 8}" y="{y + 4}" font-size="11">{escape(tokens[i])}</text>')
    for h in heads:
        if not 0 <= h < post.shape[0]:
            raise ValueError(f"head {h} not in record")
        color = HEAD_COLORS[h % len(HEAD_COLORS)]
        for i in keep:
            for j in keep:
                v = float(post[h, i, j])
                if v >= threshold:
                    body.append(
                        f'<line x1="{left_x}" y1="{pos[i]}" x2="{right_x}" y2="{pos[j]}" '
                        f'stroke="{color}" stroke-width="2" stroke-opacity="{min(v, 1.0):.4f}" '
                        f'data-head="{h}" data-src="{i}" data-dst="{j}"/>'
                    )
    height = top + len(keep) * row_h + 10
    return _svg(right_x + 110, height, body)


def emit_attention_lines(record, layer, heads, layout, tokens, filter_special=True, threshold=0.1, path=None, example=0) -> str:
    return _write(path, render_attention_lines(record, layer, heads, layout, tokens, filter_special, threshold, example))


def box_shade(value: float) -> str:
    """White for 0, darkening monotonically to near-black at 1."""
    level = 255.0 * (1.0 - 0.9 * max(0.0, min(1.0, value)))
    g = int(round(level))
    return f"#{g:02x}{g:02x}{g:02x}"


def render_head_boxes(
    record: AttentionRecord,
    layer: int,
    heads: Sequence[int],
    layout: InputLayout,
    tokens: Sequence[str],
    focus: int,
    direction: str = "from",
    example: int = 0,
) -> str:
    """One row per token; one box per head shaded by attention from (or to) ``focus``."""
    if not 0 <= focus < layout.used_length:
        raise ValueError(f"focus token {focus} outside the sequence")
    post = record.post[layer][example]
    box, label_w = 14, 90
    body = []
    for r, j in enumerate(range(layout.used_length)):
        y = 10 + r * (box + 4)
        for c, h in enumerate(heads):
            v = float(post[h, focus, j] if direction == "from" else post[h, j, focus])
            body.append(
                f'<rect x="{10 + c * (box + 2)}" y="{y}" width="{box}" height="{box}" '
                f'fill="{box_shade(v)}" stroke="#999999" data-head="{h}" data-value="{v!r}"/>'
            )
        x = 10 + len(heads) * (box + 2) + 6
        weight = ' font-weight="bold"' if j == focus else ""
        body.append(f'<text x="{x}" y="{y + box - 3}" font-size="11"{weight}>{escape(tokens[j])}</text>')
    width = 10 + len(heads) * (box + 2) + label_w
    height = 20 + layout.used_length * (box + 4)
    return _svg(width, height, body)


def emit_head_boxes(record, layer, heads, layout, tokens, focus, path=None, direction="from", example=0) -> str:
    return _write(path, render_head_boxes(record, layer, heads, layout, tokens, focus, direction, example))


def load_style(path) -> HeatmapStyle:
    return HeatmapStyle.from_dict(json.loads(Path(path).read_text()))
