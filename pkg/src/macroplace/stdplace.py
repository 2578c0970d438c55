"""Quadratic standard-cell placement with fixed macros as anchors.

The flow is solve -> spread -> anchored re-solve -> macro eviction.  Every
solver and spreading iterate is a candidate for the exploration sample; one
is drawn uniformly by reservoir sampling so nothing but the pick is kept.
"""

from __future__ import annotations

import math
import os
import shlex
import subprocess
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .bookshelf import Netlist, apply_pl, parse_pl, write_pl
from .metrics import Snapshot

STAR_THRESHOLD = 10
REGULARIZATION = 1e-6


class DivergedError(RuntimeError):
    pass


class InfeasibleDensityError(RuntimeError):
    pass


class StdPlacerFailure(RuntimeError):
    pass


@dataclass
class QuadraticSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray  # (n, 2): x and y right-hand sides
    movable: np.ndarray  # netlist cell index for each of the first len(movable) unknowns
    n_star: int = 0

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass
class SolveResult:
    positions: np.ndarray  # (n, 2)
    iterations: int
    converged: bool
    residual: float
    objective: list[float] = field(default_factory=list)


@dataclass
class StdPlaceConfig:
    tol: float = 1e-8
    max_iters: int = 500
    bins: int = 0  # 0 = choose from the cell count
    overflow_target: float = 1.2
    spread_iters: int = 100
    anchor_weight: float = 1.0
    seed: int = 0
    mode: str = "quadratic"  # or "external"
    command: str = ""
    workdir: str = "work"
    timeout: float = 600.0


# --------------------------------------------------------------------------- assembly


def _pin_edges(netlist: Netlist):
    """Yield (weight, pins) for the clique/star expansion of every net.

    ``pins`` is a list of (cell, dx, dy); star nets yield ``None`` weight and
    the full pin list.
    """
    for net in netlist.nets:
        k = len(net.pins)
        if k < 2:
            continue
        pins = [(p.cell, p.dx, p.dy) for p in net.pins]
        if k > STAR_THRESHOLD:
            yield None, pins
        else:
            yield 1.0 / (k - 1), pins


def build_system(netlist: Netlist, snapshot: Snapshot, extra_anchor=None) -> QuadraticSystem:
    """Assemble the quadratic net model for every unplaced cell of ``snapshot``.

    ``extra_anchor`` optionally maps movable-cell order to (weight, x, y)
    pseudo-net anchors, used for the second pass.
    """
    placed = snapshot.placed_mask()
    movable = np.flatnonzero(~placed)
    var = np.full(len(netlist.cells), -1, dtype=np.int64)
    var[movable] = np.arange(len(movable))
    pos = snapshot.positions

    n_star = 0
    for w, pins in _pin_edges(netlist):
        if w is None and any(var[c] >= 0 for c, _, _ in pins):
            n_star += 1
    n = len(movable) + n_star
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    diag = np.zeros(n)
    rhs = np.zeros((n, 2))

    def spring(a, oa, b, ob, w):
        # w * |(pos_a + oa) - (pos_b + ob)|^2 with a/b variables or fixed points
        va, vb = a[0], b[0]
        if va >= 0 and vb >= 0:
            if va == vb:
                return
            diag[va] += w
            diag[vb] += w
            rows.extend((va, vb))
            cols.extend((vb, va))
            vals.extend((-w, -w))
            rhs[va] += w * (ob - oa)
            rhs[vb] += w * (oa - ob)
        elif va >= 0:
            diag[va] += w
            rhs[va] += w * (b[1] + ob - oa)
        elif vb >= 0:
            diag[vb] += w
            rhs[vb] += w * (a[1] + oa - ob)

    def endpoint(c):
        v = var[c]
        return (int(v), None) if v >= 0 else (-1, pos[c])

    star = len(movable)
    for w, pins in _pin_edges(netlist):
        if not any(var[c] >= 0 for c, _, _ in pins):
            continue
        if w is None:
            k = len(pins)
            ws = k / (k - 1)
            for c, dx, dy in pins:
                spring(endpoint(c), np.array([dx, dy]), (star, None), np.zeros(2), ws)
            star += 1
            continue
        for i in range(len(pins)):
            ci, dxi, dyi = pins[i]
            for j in range(i + 1, len(pins)):
                cj, dxj, dyj = pins[j]
                spring(endpoint(ci), np.array([dxi, dyi]), endpoint(cj), np.array([dxj, dyj]), w)

    if extra_anchor is not None:
        aw, axy = extra_anchor
        diag[: len(movable)] += aw
        rhs[: len(movable)] += aw[:, None] * axy

    # Components without any anchor get a weak pull to the die center.
    off = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    # Duplicate summation order differs between (i, j) and (j, i); average for exact symmetry.
    off = ((off + off.T) * 0.5).tocsr()
    anchored = diag - np.asarray(abs(off).sum(axis=1)).ravel() > 1e-12
    n_comp, label = connected_components(off, directed=False)
    has_anchor = np.zeros(n_comp, dtype=bool)
    np.logical_or.at(has_anchor, label, anchored)
    free = ~has_anchor[label]
    if free.any():
        cx, cy = snapshot.die.center
        diag[free] += REGULARIZATION
        rhs[free] += REGULARIZATION * np.array([cx, cy])
    matrix = (off + sp.diags(diag)).tocsr()
    return QuadraticSystem(matrix, rhs, movable, n_star)


# --------------------------------------------------------------------------- solving


def objective(matrix, x, b) -> float:
    return float(0.5 * x @ (matrix @ x) - b @ x)


def solve(system: QuadraticSystem, tol: float = 1e-8, max_iters: int = 500, x0=None, callback=None) -> SolveResult:
    """Jacobi-preconditioned conjugate gradients on both coordinates in lockstep.

    Stops when every column satisfies ``|r| <= tol * |b|``.  ``callback`` is
    called with the (n, 2) iterate after every iteration.  ``objective``
    records the summed quadratic objective of the two columns per iterate.
    """
    A = system.matrix
    b = system.rhs
    n = A.shape[0]
    if n == 0:
        return SolveResult(np.zeros((0, 2)), 0, True, 0.0, [0.0])
    d = A.diagonal().copy()
    d[d == 0] = 1.0
    minv = 1.0 / d
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = minv[:, None] * r
    p = z.copy()
    rz = np.einsum("ij,ij->j", r, z)
    bnorm = np.linalg.norm(b, axis=0)
    goal = tol * np.where(bnorm > 0, bnorm, 1.0)
    obj = [sum(objective(A, x[:, j], b[:, j]) for j in range(2))]
    active = np.linalg.norm(r, axis=0) > goal
    it = 0
    while active.any() and it < max_iters:
        Ap = A @ p
        pAp = np.einsum("ij,ij->j", p, Ap)
        alpha = np.where(active & (pAp > 0), rz / np.where(pAp > 0, pAp, 1.0), 0.0)
        x = x + alpha * p
        r = r - alpha * Ap
        if not np.isfinite(x).all():
            raise DivergedError(f"non-finite iterate at CG step {it}")
        z = minv[:, None] * r
        rz_new = np.einsum("ij,ij->j", r, z)
        beta = np.where(rz > 0, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        p = z + beta * p
        rz = rz_new
        it += 1
        obj.append(sum(objective(A, x[:, j], b[:, j]) for j in range(2)))
        if callback is not None:
            callback(x)
        active = np.linalg.norm(r, axis=0) > goal
    res = float(np.max(np.linalg.norm(b - A @ x, axis=0) / np.where(bnorm > 0, bnorm, 1.0)))
    return SolveResult(x, it, not active.any(), res, obj)


# --------------------------------------------------------------------------- spreading


class SpreadGrid:
    """Coarse bins with free-area capacities and sample points outside macros."""

    def __init__(self, die, macro_rects: np.ndarray, bins: int, points_per_side: int = 4):
        self.die = die
        self.bins = bins
        self.bw = die.width / bins
        self.bh = die.height / bins
        self.macros = np.asarray(macro_rects, dtype=float).reshape(-1, 4)
        xe = die.xl + np.arange(bins + 1) * self.bw
        ye = die.yl + np.arange(bins + 1) * self.bh
        covered = np.zeros((bins, bins))
        for xl, yl, xh, yh in self.macros:
            ox = np.clip(np.minimum(xh, xe[1:]) - np.maximum(xl, xe[:-1]), 0, None)
            oy = np.clip(np.minimum(yh, ye[1:]) - np.maximum(yl, ye[:-1]), 0, None)
            covered += np.outer(ox, oy)
        self.capacity = np.clip(self.bw * self.bh - covered, 0.0, None)

        s = points_per_side
        frac = (np.arange(s) + 0.5) / s
        self.points: list[list[np.ndarray]] = [[None] * bins for _ in range(bins)]
        all_pts = []
        for ix in range(bins):
            for iy in range(bins):
                px = xe[ix] + frac * self.bw
                py = ye[iy] + frac * self.bh
                pts = np.stack(np.meshgrid(px, py, indexing="ij"), axis=-1).reshape(-1, 2)
                pts = pts[~self.inside_macro(pts)]
                self.points[ix][iy] = pts
                if len(pts) == 0:
                    self.capacity[ix, iy] = 0.0
                all_pts.append(pts)
        self.all_points = np.concatenate(all_pts) if all_pts else np.zeros((0, 2))

    def inside_macro(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if len(self.macros) == 0:
            return np.zeros(len(pts), dtype=bool)
        m = self.macros
        x = pts[:, 0:1]
        y = pts[:, 1:2]
        inside = (x > m[None, :, 0]) & (x < m[None, :, 2]) & (y > m[None, :, 1]) & (y < m[None, :, 3])
        return inside.any(axis=1)

    def bin_of(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ix = np.clip(((pts[:, 0] - self.die.xl) / self.bw).astype(np.int64), 0, self.bins - 1)
        iy = np.clip(((pts[:, 1] - self.die.yl) / self.bh).astype(np.int64), 0, self.bins - 1)
        return ix, iy

    def occupancy(self, pts: np.ndarray, areas: np.ndarray) -> np.ndarray:
        occ = np.zeros((self.bins, self.bins))
        ix, iy = self.bin_of(pts)
        np.add.at(occ, (ix, iy), areas)
        return occ

    def ratio(self, occ: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(self.capacity > 0, occ / np.where(self.capacity > 0, self.capacity, 1.0), np.inf)
        r[(self.capacity <= 0) & (occ <= 0)] = 0.0
        return r


def clip_to_die(pts: np.ndarray, die) -> np.ndarray:
    out = pts.copy()
    out[:, 0] = np.clip(out[:, 0], die.xl, die.xh)
    out[:, 1] = np.clip(out[:, 1], die.yl, die.yh)
    return out


def evict_from_macros(pts: np.ndarray, grid: SpreadGrid) -> np.ndarray:
    """Move points lying strictly inside a macro to the nearest free sample point."""
    bad = grid.inside_macro(pts)
    if not bad.any():
        return pts
    if len(grid.all_points) == 0:
        raise InfeasibleDensityError("no free area outside macros")
    out = pts.copy()
    _, k = cKDTree(grid.all_points).query(pts[bad])
    out[bad] = grid.all_points[k]
    return out


def spread(positions: np.ndarray, areas: np.ndarray, grid: SpreadGrid, rng=None,
           target: float = 1.2, max_iters: int = 100, callback=None) -> np.ndarray:
    """Diffuse cells out of overflowing bins into their least-loaded neighbours.

    Stops once the worst occupancy/capacity ratio is at most ``target``.
    Cells are never moved into macro-covered sample points or off the die.
    """
    rng = np.random.default_rng(rng)
    areas = np.asarray(areas, dtype=float)
    if areas.sum() > grid.capacity.sum() + 1e-9:
        raise InfeasibleDensityError(
            f"movable area {areas.sum():.6g} exceeds free capacity {grid.capacity.sum():.6g}"
        )
    pts = evict_from_macros(clip_to_die(np.asarray(positions, dtype=float), grid.die), grid)
    B = grid.bins
    for _ in range(max_iters):
        occ = grid.occupancy(pts, areas)
        ratio = grid.ratio(occ)
        if ratio.max() <= target:
            break
        ix, iy = grid.bin_of(pts)
        order = np.argsort(-ratio, axis=None)
        moved = False
        for flat in order:
            bx, by = divmod(int(flat), B)
            if ratio[bx, by] <= 1.0:
                break
            nbrs = [(bx + dx, by + dy) for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))
                    if 0 <= bx + dx < B and 0 <= by + dy < B and grid.capacity[bx + dx, by + dy] > 0]
            if not nbrs:
                continue
            members = np.flatnonzero((ix == bx) & (iy == by))
            while ratio[bx, by] > 1.0 and len(members):
                tx, ty = min(nbrs, key=lambda t: ratio[t])
                if ratio[tx, ty] >= ratio[bx, by]:
                    break
                # Move the member closest to the target bin center.
                tc = np.array([grid.die.xl + (tx + 0.5) * grid.bw, grid.die.yl + (ty + 0.5) * grid.bh])
                k = members[np.argmin(np.sum((pts[members] - tc) ** 2, axis=1))]
                cand = grid.points[tx][ty]
                pts[k] = cand[rng.integers(len(cand))]
                members = members[members != k]
                occ[bx, by] -= areas[k]
                occ[tx, ty] += areas[k]
                for b in ((bx, by), (tx, ty)):
                    ratio[b] = occ[b] / grid.capacity[b] if grid.capacity[b] > 0 else (np.inf if occ[b] > 0 else 0.0)
                ix[k], iy[k] = tx, ty
                moved = True
        if callback is not None:
            callback(pts)
        if not moved:
            break
    return pts


def max_overflow(pts: np.ndarray, areas: np.ndarray, grid: SpreadGrid) -> float:
    return float(grid.ratio(grid.occupancy(pts, areas)).max())


# --------------------------------------------------------------------------- placers


class _Reservoir:
    """Uniform sample of one item from a stream of unknown length."""

    def __init__(self, rng):
        self.rng = rng
        self.count = 0
        self.item = None
        self.index = -1

    def offer(self, item):
        self.count += 1
        if self.rng.integers(self.count) == 0:
            self.item = np.array(item, copy=True)
            self.index = self.count - 1


def default_bins(n_cells: int) -> int:
    return int(min(64, max(4, round(math.sqrt(max(n_cells, 1) / 4)))))


class QuadraticPlacer:
    """Built-in standard-cell placer."""

    def __init__(self, config: StdPlaceConfig | None = None):
        self.config = config or StdPlaceConfig()

    def place(self, netlist: Netlist, snapshot: Snapshot, rng=None) -> tuple[Snapshot, Snapshot]:
        """Return (final snapshot, uniformly sampled intermediate snapshot)."""
        cfg = self.config
        rng = np.random.default_rng(cfg.seed if rng is None else rng)
        movable = np.flatnonzero(~snapshot.placed_mask())
        if len(movable) == 0:
            return snapshot.copy(), snapshot.copy()
        die = snapshot.die
        fixed_area = [i for i in np.flatnonzero(snapshot.placed_mask()) if netlist.cells[i].area > 0]
        macro_rects = np.array(
            [[*(snapshot.positions[i] - 0.5 * netlist.sizes[i]), *(snapshot.positions[i] + 0.5 * netlist.sizes[i])]
             for i in fixed_area if netlist.cells[i].is_macro]
        ).reshape(-1, 4)
        grid = SpreadGrid(die, macro_rects, cfg.bins or default_bins(len(movable)))
        areas = np.array([netlist.cells[i].area for i in movable])
        sample = _Reservoir(rng)
        n_mov = len(movable)

        def on_iterate(xy):
            sample.offer(xy[:n_mov])

        system = build_system(netlist, snapshot)
        first = solve(system, cfg.tol, cfg.max_iters, callback=on_iterate)
        pts = spread(first.positions[:n_mov], areas, grid, rng, cfg.overflow_target, cfg.spread_iters, on_iterate)

        deg = np.asarray(system.matrix.diagonal())[:n_mov]
        anchor_w = cfg.anchor_weight * np.maximum(deg, 1e-3)
        second_sys = build_system(netlist, snapshot, extra_anchor=(anchor_w, pts))
        x0 = np.zeros((second_sys.size, 2))
        x0[:n_mov] = pts
        if second_sys.size > n_mov:
            x0[n_mov:] = first.positions[n_mov:second_sys.size]
        second = solve(second_sys, cfg.tol, cfg.max_iters, x0=x0, callback=on_iterate)
        final = evict_from_macros(clip_to_die(second.positions[:n_mov], die), grid)
        on_iterate(final)

        out = snapshot.copy()
        out.positions[movable] = final
        samp = snapshot.copy()
        samp.positions[movable] = clip_to_die(sample.item, die)
        return out, samp


class ExternalPlacer:
    """Run an external placer through bookshelf ``.pl`` exchange.

    Writes ``<workdir>/macros_fixed.pl`` with every placed cell flagged
    ``/FIXED``, runs ``command`` (``{work}`` and ``{pl}`` are substituted) and
    reads ``<workdir>/out.pl``.
    """

    def __init__(self, config: StdPlaceConfig):
        self.config = config

    def place(self, netlist: Netlist, snapshot: Snapshot, rng=None) -> tuple[Snapshot, Snapshot]:
        cfg = self.config
        work = os.path.abspath(cfg.workdir)
        os.makedirs(work, exist_ok=True)
        placed = snapshot.placed_mask()
        centers = snapshot.positions.copy()
        # Unplaced standard cells start from the die center.
        centers[~placed] = snapshot.die.center
        staged = netlist.with_centers(centers)
        for c, fixed in zip(staged.cells, placed):
            c.movable = not fixed
        in_pl = os.path.join(work, "macros_fixed.pl")
        out_pl = os.path.join(work, "out.pl")
        write_pl(staged, in_pl)
        if os.path.exists(out_pl):
            os.remove(out_pl)
        cmd = cfg.command.format(work=work, pl=in_pl)
        try:
            proc = subprocess.run(shlex.split(cmd), cwd=work, capture_output=True, text=True, timeout=cfg.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise StdPlacerFailure(f"external placer failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise StdPlacerFailure(f"external placer exited {proc.returncode}: {proc.stderr.strip()[:500]}")
        if not os.path.exists(out_pl):
            raise StdPlacerFailure(f"external placer produced no {out_pl}")
        result = netlist.with_centers(snapshot.positions)
        apply_pl(result.cells, result.index, parse_pl(out_pl))
        out = Snapshot(result.centers(), snapshot.die)
        # Macros stay where the agent put them.
        out.positions[placed] = snapshot.positions[placed]
        if np.isnan(out.positions).any():
            raise StdPlacerFailure("external placer left cells unplaced")
        return out, out.copy()


def make_placer(config: StdPlaceConfig):
    if config.mode == "external":
        if not config.command:
            raise ValueError("external std-cell placer needs a command")
        return ExternalPlacer(config)
    if config.mode != "quadratic":
        raise ValueError(f"unknown std-cell placer mode {config.mode!r}")
    return QuadraticPlacer(config)
