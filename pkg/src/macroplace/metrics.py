"""Layout quality metrics: HPWL, RUDY congestion, macro dispersion and overlaps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bookshelf import Net, Netlist, Rect

CONGESTION_GRID = 20


class UnplacedEndpointError(ValueError):
    def __init__(self, cell):
        self.cell = cell
        super().__init__(f"net endpoint on unplaced cell {cell}")


class NoPlacedMacrosError(ValueError):
    pass


@dataclass
class Snapshot:
    """Cell centers (NaN = not placed) on a die."""

    positions: np.ndarray
    die: Rect

    @classmethod
    def from_netlist(cls, netlist: Netlist) -> "Snapshot":
        return cls(netlist.centers(), netlist.die)

    def copy(self) -> "Snapshot":
        return Snapshot(self.positions.copy(), self.die)

    def placed_mask(self) -> np.ndarray:
        return ~np.isnan(self.positions).any(axis=1)


# --------------------------------------------------------------------------- wirelength


def hpwl_net(net: Net, snapshot: Snapshot) -> float:
    xs = []
    ys = []
    for p in net.pins:
        cx, cy = snapshot.positions[p.cell]
        if np.isnan(cx) or np.isnan(cy):
            raise UnplacedEndpointError(p.cell)
        xs.append(cx + p.dx)
        ys.append(cy + p.dy)
    return (max(xs) - min(xs)) + (max(ys) - min(ys))


def net_boxes(snapshot: Snapshot, netlist: Netlist):
    """Per-net pin bounding boxes as (xl, xh, yl, yh, fully_placed) arrays."""
    cell, off, start = netlist.pin_arrays
    n_nets = len(start) - 1
    if n_nets == 0:
        e = np.zeros(0)
        return e, e, e, e, np.zeros(0, dtype=bool)
    pins = snapshot.positions[cell] + off
    bad = np.isnan(pins).any(axis=1)
    heads = start[:-1]
    nonempty = start[1:] > heads
    # reduceat misbehaves on empty segments; those are filtered by ``nonempty``.
    safe_heads = np.minimum(heads, max(len(cell) - 1, 0))
    if len(cell) == 0:
        e = np.zeros(n_nets)
        return e, e, e, e, np.zeros(n_nets, dtype=bool)
    x = np.where(bad, 0.0, pins[:, 0])
    y = np.where(bad, 0.0, pins[:, 1])
    xl = np.minimum.reduceat(x, safe_heads)
    xh = np.maximum.reduceat(x, safe_heads)
    yl = np.minimum.reduceat(y, safe_heads)
    yh = np.maximum.reduceat(y, safe_heads)
    nbad = np.add.reduceat(bad.astype(np.int64), safe_heads)
    placed = nonempty & (nbad == 0)
    return xl, xh, yl, yh, placed


def net_hpwls(snapshot: Snapshot, netlist: Netlist) -> tuple[np.ndarray, np.ndarray]:
    xl, xh, yl, yh, placed = net_boxes(snapshot, netlist)
    return np.where(placed, (xh - xl) + (yh - yl), 0.0), placed


def total_wl(snapshot: Snapshot, netlist: Netlist, placed_only: bool = False) -> float:
    """Sum of net HPWLs.  ``placed_only`` skips nets with an unplaced endpoint."""
    hp, placed = net_hpwls(snapshot, netlist)
    if not placed_only and not placed.all():
        cell, _, start = netlist.pin_arrays
        k = int(np.flatnonzero(~placed)[0])
        for c in cell[start[k]:start[k + 1]]:
            if np.isnan(snapshot.positions[c]).any():
                raise UnplacedEndpointError(int(c))
    # fsum keeps the total independent of summation order.
    return math.fsum(hp)


# --------------------------------------------------------------------------- congestion


def congestion_weights(die: Rect, grid: int = CONGESTION_GRID) -> np.ndarray:
    """(grid, grid) weights falling linearly from the die center, indexed [ix, iy]."""
    cw, ch = die.width / grid, die.height / grid
    cx = die.xl + (np.arange(grid) + 0.5) * cw
    cy = die.yl + (np.arange(grid) + 0.5) * ch
    mx, my = die.center
    d = np.hypot(cx[:, None] - mx, cy[None, :] - my)
    dmax = d.max()
    if dmax == 0:
        return np.ones_like(d)
    return np.maximum(0.0, 1.0 - d / dmax)


def _axis_overlap(lo, hi, edges):
    """Overlap length of intervals [lo, hi] with each bin of ``edges``: (n, bins)."""
    return np.clip(np.minimum(hi[:, None], edges[None, 1:]) - np.maximum(lo[:, None], edges[None, :-1]), 0.0, None)


def rudy_map(snapshot: Snapshot, netlist: Netlist, grid: int = CONGESTION_GRID) -> np.ndarray:
    """RUDY routing demand per grid bin, indexed [ix, iy]."""
    xl, xh, yl, yh, placed = net_boxes(snapshot, netlist)
    if not placed.all():
        cell, _, start = netlist.pin_arrays
        k = int(np.flatnonzero(~placed)[0])
        for c in cell[start[k]:start[k + 1]]:
            if np.isnan(snapshot.positions[c]).any():
                raise UnplacedEndpointError(int(c))
    die = snapshot.die
    demand = np.zeros((grid, grid))
    if len(xl) == 0:
        return demand
    w = xh - xl
    h = yh - yl
    xe = np.linspace(die.xl, die.xh, grid + 1)
    ye = np.linspace(die.yl, die.yh, grid + 1)
    area = w * h
    solid = area > 0
    if solid.any():
        dens = (w[solid] + h[solid]) / area[solid]
        ox = _axis_overlap(xl[solid], xh[solid], xe)
        oy = _axis_overlap(yl[solid], yh[solid], ye)
        demand += (ox * dens[:, None]).T @ oy
    flat = ~solid & ((w + h) > 0)
    if flat.any():
        mx = 0.5 * (xl[flat] + xh[flat])
        my = 0.5 * (yl[flat] + yh[flat])
        ix = np.clip(((mx - die.xl) / die.width * grid).astype(np.int64), 0, grid - 1)
        iy = np.clip(((my - die.yl) / die.height * grid).astype(np.int64), 0, grid - 1)
        np.add.at(demand, (ix, iy), w[flat] + h[flat])
    return demand


def congestion(snapshot: Snapshot, netlist: Netlist, grid: int = CONGESTION_GRID) -> float:
    demand = rudy_map(snapshot, netlist, grid)
    return float(np.sum(congestion_weights(snapshot.die, grid) * demand))


# --------------------------------------------------------------------------- macros


def density(centers: np.ndarray, die: Rect) -> float:
    """Mean nearest-neighbour center distance of macros over the die diagonal."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    n = len(centers)
    if n == 0:
        raise NoPlacedMacrosError("density needs at least one placed macro")
    if n == 1:
        return 0.0
    d = np.hypot(centers[:, None, 0] - centers[None, :, 0], centers[:, None, 1] - centers[None, :, 1])
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean() / np.hypot(die.width, die.height))


def rects(snapshot: Snapshot, netlist: Netlist, cells) -> np.ndarray:
    """(k, 4) rectangles xl, yl, xh, yh of the given cells."""
    cells = np.asarray(cells, dtype=np.int64)
    c = snapshot.positions[cells]
    half = 0.5 * netlist.sizes[cells]
    return np.column_stack([c - half, c + half])


def check_overlaps(snapshot: Snapshot, netlist: Netlist, cells=None) -> list[tuple[int, int]]:
    """Pairs (i, j), i < j, of placed cells whose rectangles overlap with positive area.

    ``cells`` defaults to every macro of the netlist.
    """
    if cells is None:
        cells = netlist.macros
    cells = np.asarray(cells, dtype=np.int64)
    cells = cells[~np.isnan(snapshot.positions[cells]).any(axis=1)]
    if len(cells) < 2:
        return []
    r = rects(snapshot, netlist, cells)
    order = np.argsort(r[:, 0], kind="stable")
    pairs = []
    active: list[int] = []
    for k in order:
        xl = r[k, 0]
        active = [a for a in active if r[a, 2] > xl]
        for a in active:
            if min(r[a, 3], r[k, 3]) > max(r[a, 1], r[k, 1]) and min(r[a, 2], r[k, 2]) > max(r[a, 0], r[k, 0]):
                i, j = int(cells[a]), int(cells[k])
                pairs.append((min(i, j), max(i, j)))
        active.append(k)
    pairs.sort()
    return pairs


def evaluate(snapshot: Snapshot, netlist: Netlist) -> dict[str, float]:
    """Metrics report: hpwl, congestion, density (movable macros), overlap_count."""
    mov = netlist.movable_macros
    mov = mov[~np.isnan(snapshot.positions[mov]).any(axis=1)] if len(mov) else mov
    return {
        "hpwl": total_wl(snapshot, netlist),
        "congestion": congestion(snapshot, netlist),
        "density": density(snapshot.positions[mov], snapshot.die) if len(mov) else 0.0,
        "overlap_count": len(check_overlaps(snapshot, netlist)),
    }


def format_report(report: dict) -> str:
    lines = []
    for k, v in report.items():
        lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if "=" not in line:
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = int(v) if v.lstrip("-").isdigit() else float(v)
    return out
