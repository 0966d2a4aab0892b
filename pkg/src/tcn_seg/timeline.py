"""Stacked timeline bars for label sequences, as SVG or plain text.

Each row is one label sequence and each segment becomes one rectangle. Colors
come from a fixed palette indexed by class id, so output depends only on the
inputs.
"""
from xml.sax.saxutils import escape

import numpy as np

from .errors import DataError
from .metrics import labels_to_segments

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5",
    "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
)
GLYPHS = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"

ROW_HEIGHT = 24
ROW_GAP = 8
LABEL_WIDTH = 90
PLOT_WIDTH = 600
MARGIN = 10


def class_color(class_id):
    return PALETTE[int(class_id) % len(PALETTE)]


def _check_rows(rows):
    if not rows:
        raise DataError("nothing to render")
    lengths = {len(labels) for _, labels in rows}
    if len(lengths) != 1:
        raise DataError(f"timeline rows disagree on length: {sorted(lengths)}")
    if 0 in lengths:
        raise DataError("cannot render empty label sequences")
    return lengths.pop()


def _fmt(value):
    return f"{value:.3f}".rstrip("0").rstrip(".")


def render_svg(rows, class_names=None, width=PLOT_WIDTH):
    """SVG text for ``rows``, a list of ``(title, labels)``; the first row is usually the truth."""
    frames = _check_rows(rows)
    scale = width / frames
    height = 2 * MARGIN + len(rows) * ROW_HEIGHT + (len(rows) - 1) * ROW_GAP
    total_width = 2 * MARGIN + LABEL_WIDTH + width
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_width}" height="{height}" '
        f'viewBox="0 0 {total_width} {height}">',
        f'<rect x="0" y="0" width="{total_width}" height="{height}" fill="#ffffff"/>',
    ]
    for r, (title, labels) in enumerate(rows):
        y = MARGIN + r * (ROW_HEIGHT + ROW_GAP)
        out.append(
            f'<text x="{MARGIN}" y="{y + ROW_HEIGHT * 0.7:g}" font-family="monospace" '
            f'font-size="12">{escape(str(title))}</text>'
        )
        out.append(f'<g class="row" data-row="{r}">')
        for seg in labels_to_segments(np.asarray(labels)):
            name = class_names[seg.class_id] if class_names and seg.class_id < len(class_names) else seg.class_id
            x0 = MARGIN + LABEL_WIDTH + seg.start * scale
            out.append(
                f'<rect class="seg" x="{_fmt(x0)}" y="{y}" width="{_fmt(seg.length * scale)}" '
                f'height="{ROW_HEIGHT}" fill="{class_color(seg.class_id)}">'
                f"<title>{escape(str(name))} [{seg.start}, {seg.end})</title></rect>"
            )
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_ascii(rows, width=80):
    """One text line per row; each column shows the class of the frame under it."""
    frames = _check_rows(rows)
    width = min(width, frames)
    pad = max(len(str(title)) for title, _ in rows)
    picks = (np.arange(width) * frames) // width
    lines = []
    for title, labels in rows:
        labels = np.asarray(labels)
        glyphs = "".join(GLYPHS[int(c) % len(GLYPHS)] for c in labels[picks])
        lines.append(f"{str(title).ljust(pad)} |{glyphs}|")
    return "\n".join(lines) + "\n"


def count_rects(svg_text, row):
    """Number of segment rectangles drawn in one row of ``render_svg`` output."""
    block = svg_text.split(f'data-row="{row}">', 1)[1].split("</g>", 1)[0]
    return block.count('class="seg"')
