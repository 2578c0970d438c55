"""SVG rendering of placements: macros as orange rectangles, standard cells in blue."""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import quoteattr

import numpy as np

from .bookshelf import Netlist, UnplacedCellError
from .metrics import Snapshot, congestion_weights, rudy_map

POINT_LIMIT = 50_000


@dataclass
class RenderStyle:
    canvas: int = 800
    margin: int = 10
    macro_fill: str = "#f28e2b"
    fixed_macro_fill: str = "#b35806"
    macro_stroke: str = "#7f3b08"
    std_fill: str = "#4e79a7"
    std_size: float = 2.0
    stroke_width: float = 1.0
    die_stroke: str = "#000000"
    congestion_overlay: bool = False

    def validate(self):
        if self.canvas < 64:
            raise ValueError("canvas must be at least 64 px")


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


def render_svg(snapshot: Snapshot, netlist: Netlist, style: RenderStyle | None = None) -> str:
    style = style or RenderStyle()
    style.validate()
    die = snapshot.die
    size = style.canvas
    avail = size - 2 * style.margin
    scale = avail / max(die.width, die.height)
    # Letterbox so the die keeps its aspect ratio.
    ox = style.margin + 0.5 * (avail - die.width * scale)
    oy = style.margin + 0.5 * (avail - die.height * scale)

    def sx(x):
        return ox + (x - die.xl) * scale

    def sy(y):
        return oy + (die.yh - y) * scale

    pos = snapshot.positions
    macros = [int(i) for i in netlist.macros]
    std = [int(i) for i in netlist.standard_cells]
    missing = [netlist.cells[i].name for i in macros + std if np.isnan(pos[i]).any()]
    if missing:
        raise UnplacedCellError(missing)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect class="background" x="0" y="0" width="{size}" height="{size}" fill="#ffffff"/>',
    ]
    if style.congestion_overlay:
        g = 20
        heat = rudy_map(snapshot, netlist, g) * congestion_weights(die, g)
        top = heat.max() if heat.size and heat.max() > 0 else 1.0
        cw, ch = die.width / g, die.height / g
        out.append('<g class="congestion">')
        for ix in range(g):
            for iy in range(g):
                a = heat[ix, iy] / top
                if a <= 0:
                    continue
                x0, y1 = die.xl + ix * cw, die.yl + (iy + 1) * ch
                out.append(
                    f'<rect class="heat" x="{_fmt(sx(x0))}" y="{_fmt(sy(y1))}" width="{_fmt(cw * scale)}" '
                    f'height="{_fmt(ch * scale)}" fill="#d62728" fill-opacity="{a * 0.5:.3f}"/>'
                )
        out.append("</g>")

    if len(std) > POINT_LIMIT:
        # Coarse density shading underneath single-pixel points.
        g = 64
        xy = pos[std]
        hist, _, _ = np.histogram2d(xy[:, 0], xy[:, 1], bins=g, range=[[die.xl, die.xh], [die.yl, die.yh]])
        top = hist.max() or 1.0
        cw, ch = die.width / g, die.height / g
        out.append('<g class="std-density">')
        for ix, iy in zip(*np.nonzero(hist)):
            x0, y1 = die.xl + ix * cw, die.yl + (iy + 1) * ch
            out.append(
                f'<rect class="shade" x="{_fmt(sx(x0))}" y="{_fmt(sy(y1))}" width="{_fmt(cw * scale)}" '
                f'height="{_fmt(ch * scale)}" fill="{style.std_fill}" fill-opacity="{hist[ix, iy] / top * 0.6:.3f}"/>'
            )
        out.append("</g>")
        pt = 1.0
    else:
        pt = style.std_size
    out.append(f'<g class="stdcells" fill="{style.std_fill}">')
    for i in std:
        x, y = pos[i]
        out.append(f'<rect class="stdcell" x="{_fmt(sx(x) - pt / 2)}" y="{_fmt(sy(y) - pt / 2)}" '
                   f'width="{_fmt(pt)}" height="{_fmt(pt)}"/>')
    out.append("</g>")

    out.append(f'<g class="macros" stroke="{style.macro_stroke}" stroke-width="{_fmt(style.stroke_width)}">')
    for i in macros:
        c = netlist.cells[i]
        x, y = pos[i]
        fill = style.macro_fill if c.movable else style.fixed_macro_fill
        out.append(
            f'<rect class="macro" data-name={quoteattr(c.name)} x="{_fmt(sx(x - c.width / 2))}" '
            f'y="{_fmt(sy(y + c.height / 2))}" width="{_fmt(c.width * scale)}" height="{_fmt(c.height * scale)}" '
            f'fill="{fill}"/>'
        )
    out.append("</g>")
    out.append(
        f'<rect class="die" x="{_fmt(sx(die.xl))}" y="{_fmt(sy(die.yh))}" width="{_fmt(die.width * scale)}" '
        f'height="{_fmt(die.height * scale)}" fill="none" stroke="{style.die_stroke}" '
        f'stroke-width="{_fmt(style.stroke_width)}"/>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
