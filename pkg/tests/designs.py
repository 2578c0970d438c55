"""Small random designs for tests."""

import os

import numpy as np

from macroplace.bookshelf import Cell, Net, Netlist, Pin, PlacementRow, classify_cells

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
TINY_AUX = os.path.join(FIXTURES, "tiny", "tiny.aux")


def random_design(rng, n_macros=4, n_std=20, n_pads=4, die=100.0, fixed_macros=0, n_nets=None, max_side=0.35):
    rng = np.random.default_rng(rng)
    rows = [PlacementRow(float(r), 1.0, 0.0, int(die), 1.0) for r in range(int(die))]
    cells = []
    for m in range(n_macros):
        w, h = rng.uniform(0.08, max_side, 2) * die
        cells.append(Cell(f"m{m}", float(round(w, 2)), float(round(h, 2))))
    for s in range(n_std):
        cells.append(Cell(f"s{s}", 1.0, 1.0))
    for p in range(n_pads):
        x, y = rng.uniform(0, die - 1, 2)
        cells.append(Cell(f"p{p}", 1.0, 1.0, movable=False, x=float(x), y=float(y)))
    for f in range(fixed_macros):
        w, h = rng.uniform(0.1, 0.25, 2) * die
        x, y = rng.uniform(0, die - w), rng.uniform(0, die - h)
        cells.append(Cell(f"f{f}", float(w), float(h), movable=False, x=float(x), y=float(y)))
    n = len(cells)
    nets = []
    for k in range(n_nets if n_nets is not None else 2 * n):
        deg = int(rng.integers(2, 6))
        members = rng.choice(n, size=min(deg, n), replace=False)
        pins = []
        for c in members:
            cw, ch = cells[c].width, cells[c].height
            pins.append(Pin(int(c), float(rng.uniform(-0.5, 0.5) * cw), float(rng.uniform(-0.5, 0.5) * ch),
                            str(rng.choice(["I", "O", "B"]))))
        nets.append(Net(f"n{k}", pins))
    classify_cells(cells)
    return Netlist("rand", cells, nets, rows)


def oracle_wl(netlist, positions, placed_only=False):
    """Straight loop over nets and pins; nets with an unplaced pin are skipped when ``placed_only``."""
    total = 0.0
    for net in netlist.nets:
        xs, ys = [], []
        for p in net.pins:
            x, y = positions[p.cell]
            xs.append(x + p.dx)
            ys.append(y + p.dy)
        if any(np.isnan(v) for v in xs + ys):
            if placed_only:
                continue
            raise ValueError("unplaced pin")
        total += (max(xs) - min(xs)) + (max(ys) - min(ys))
    return total


def oracle_density(points, die):
    pts = [tuple(p) for p in points]
    if len(pts) < 2:
        return 0.0
    nn = [min(np.hypot(a[0] - b[0], a[1] - b[1]) for j, b in enumerate(pts) if j != i) for i, a in enumerate(pts)]
    return sum(nn) / len(nn) / np.hypot(die.width, die.height)


def dense_gat(x, adjacency, weight, att_src, att_dst, bias, activation=True, slope=0.2):
    """Straight-line multi-head graph attention in numpy, looping over heads and node pairs."""
    heads, _, out_dim = weight.shape
    n = x.shape[0]
    out = np.zeros((n, heads * out_dim))
    for h in range(heads):
        z = x @ weight[h]
        for i in range(n):
            nbrs = [j for j in range(n) if j == i or adjacency[i, j] > 0]
            logits = []
            for j in nbrs:
                s = float(att_src[h] @ z[i] + att_dst[h] @ z[j])
                logits.append(s if s > 0 else slope * s)
            top = max(logits)
            ws = [np.exp(v - top) for v in logits]
            total = sum(ws)
            acc = np.zeros(out_dim)
            for w, j in zip(ws, nbrs):
                acc += (w / total) * z[j]
            out[i, h * out_dim:(h + 1) * out_dim] = acc
    out = out + bias
    return np.where(out > 0, out, np.expm1(out)) if activation else out


def dense_gcn(x, adjacency, weight, bias, activation=True):
    n = x.shape[0]
    a = adjacency + np.eye(n)
    deg = a.sum(axis=1)
    norm = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            norm[i, j] = a[i, j] / np.sqrt(deg[i] * deg[j])
    out = norm @ x @ weight + bias
    return np.where(out > 0, out, np.expm1(out)) if activation else out


def random_graph(rng, n):
    from macroplace.graph import MacroGraph

    adj = np.triu(rng.integers(0, 3, (n, n)) * (rng.random((n, n)) < 0.6), 1).astype(float)
    adj = adj + adj.T
    feats = rng.random((n, 4))
    return MacroGraph(adj, feats, np.arange(n))


def oracle_rudy(snapshot, netlist, grid=20):
    die = snapshot.die
    cw, ch = die.width / grid, die.height / grid
    out = np.zeros((grid, grid))
    for net in netlist.nets:
        xs = [snapshot.positions[p.cell][0] + p.dx for p in net.pins]
        ys = [snapshot.positions[p.cell][1] + p.dy for p in net.pins]
        xl, xh, yl, yh = min(xs), max(xs), min(ys), max(ys)
        w, h = xh - xl, yh - yl
        if w * h == 0:
            if w + h > 0:
                ix = min(max(int((0.5 * (xl + xh) - die.xl) // cw), 0), grid - 1)
                iy = min(max(int((0.5 * (yl + yh) - die.yl) // ch), 0), grid - 1)
                out[ix, iy] += w + h
            continue
        for ix in range(grid):
            for iy in range(grid):
                ox = min(xh, die.xl + (ix + 1) * cw) - max(xl, die.xl + ix * cw)
                oy = min(yh, die.yl + (iy + 1) * ch) - max(yl, die.yl + iy * ch)
                if ox > 0 and oy > 0:
                    out[ix, iy] += ox * oy * (w + h) / (w * h)
    return out


def oracle_congestion(snapshot, netlist, grid=20):
    die = snapshot.die
    cw, ch = die.width / grid, die.height / grid
    mx, my = die.xl + die.width / 2, die.yl + die.height / 2
    dist = {}
    for ix in range(grid):
        for iy in range(grid):
            dist[ix, iy] = np.hypot(die.xl + (ix + 0.5) * cw - mx, die.yl + (iy + 0.5) * ch - my)
    dmax = max(dist.values())
    demand = oracle_rudy(snapshot, netlist, grid)
    return sum(max(0.0, 1 - dist[b] / dmax) * demand[b] for b in dist)


def write_large_bookshelf(directory, n_cells, n_nets, n_macros, n_fixed, seed=0):
    """Write an ISPD-sized random design as plain text; returns the .aux path."""
    rng = np.random.default_rng(seed)
    side = int(np.sqrt(n_cells * 4 / 0.6)) + 1
    n_std = n_cells - n_macros - n_fixed
    nodes = [f"UCLA nodes 1.0\n\nNumNodes : {n_cells}\nNumTerminals : {n_fixed}\n"]
    nodes += [f"o{i} 1 1\n" for i in range(n_std)]
    nodes += [f"m{i} 40 40\n" for i in range(n_macros)]
    nodes += [f"f{i} 40 40 terminal\n" for i in range(n_fixed)]
    names = [f"o{i}" for i in range(n_std)] + [f"m{i}" for i in range(n_macros)] + [f"f{i}" for i in range(n_fixed)]
    degrees = rng.integers(2, 7, n_nets)
    members = rng.integers(0, n_cells, int(degrees.sum()))
    nets = [f"UCLA nets 1.0\n\nNumNets : {n_nets}\nNumPins : {int(degrees.sum())}\n"]
    k = 0
    for i, d in enumerate(degrees):
        nets.append(f"NetDegree : {d} net{i}\n")
        for c in members[k:k + d]:
            nets.append(f"\t{names[c]} I : 0.5 -0.5\n")
        k += d
    xs = rng.integers(0, side - 40, n_cells)
    ys = rng.integers(0, side - 40, n_cells)
    pl = ["UCLA pl 1.0\n\n"] + [f"{n} {x} {y} : N{' /FIXED' if n.startswith('f') else ''}\n" for n, x, y in zip(names, xs, ys)]
    scl = [f"UCLA scl 1.0\n\nNumRows : {side}\n"]
    for r in range(side):
        scl.append(f"CoreRow Horizontal\n Coordinate : {r}\n Height : 1\n Sitewidth : 1\n Sitespacing : 1\n"
                   f" Siteorient : 1\n Sitesymmetry : 1\n SubrowOrigin : 0 NumSites : {side}\nEnd\n")
    for ext, body in (("nodes", nodes), ("nets", nets), ("pl", pl), ("scl", scl)):
        with open(os.path.join(directory, f"big.{ext}"), "w") as fh:
            fh.write("".join(body))
    aux = os.path.join(directory, "big.aux")
    with open(aux, "w") as fh:
        fh.write("RowBasedPlacement : big.nodes big.nets big.wts big.pl big.scl\n")
    open(os.path.join(directory, "big.wts"), "w").close()
    return aux


def scripted_design():
    """Three macros (30x20, 20x20, 10x15), a 20-cell chain and two pads on a 100x100 die."""
    cells = [Cell("a", 30, 20), Cell("b", 20, 20), Cell("c", 10, 15)]
    cells += [Cell(f"s{i}", 1, 1) for i in range(20)]
    cells += [Cell("p0", 1, 1, movable=False, x=0.0, y=0.0), Cell("p1", 1, 1, movable=False, x=99.0, y=50.0)]
    classify_cells(cells)
    P0, P1 = 23, 24
    nets = [
        Net("ab", [Pin(0, 5, -3, "O"), Pin(1, -2, 4, "I")]),
        Net("bc", [Pin(1, 0, 0, "O"), Pin(2, 1, 1, "I"), Pin(P1, 0, 0, "I")]),
        Net("ap", [Pin(0, -10, 0, "I"), Pin(P0, 0.5, 0.5, "O")]),
        Net("cs", [Pin(2, 0, 0, "O"), Pin(3, 0, 0, "I")]),
        Net("ss", [Pin(4, 0, 0, "O"), Pin(5, 0, 0, "I"), Pin(P0, 0, 0, "I")]),
    ] + [Net(f"chain{i}", [Pin(3 + i, 0, 0, "O"), Pin(4 + i, 0, 0, "I")]) for i in range(19)]
    rows = [PlacementRow(float(r), 1.0, 0.0, 100, 1.0) for r in range(100)]
    return Netlist("script", cells, nets, rows)


def random_spd(rng, n):
    Q = rng.standard_normal((n, n))
    A = Q @ Q.T / n + np.diag(rng.uniform(0.1, 2.0, n))
    return A
