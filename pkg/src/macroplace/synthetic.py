"""Seeded synthetic designs in the bookshelf model.

``make_design`` builds small benchmark-like netlists: a row-based die,
boundary I/O pads, a handful of movable macros and clustered standard
cells.  The bundled ``synth5`` design is ``make_design()`` with defaults.
"""

from __future__ import annotations

import json
import os
from importlib import resources

import numpy as np

from .bookshelf import Cell, Net, Netlist, Pin, PlacementRow, classify_cells, parse_aux, write_design


def make_design(n_macros: int = 5, n_std: int = 200, n_pads: int = 16, die: float = 200.0,
                row_height: float = 2.0, seed: int = 2005, name: str = "synth5") -> Netlist:
    rng = np.random.default_rng(seed)
    rows = [PlacementRow(y=r * row_height, height=row_height, x=0.0, num_sites=int(die), site_width=1.0)
            for r in range(int(die / row_height))]
    cells: list[Cell] = []

    macro_sides = [(40, 40), (36, 30), (30, 30), (28, 24), (24, 20), (20, 20), (18, 16), (16, 16)]
    for m in range(n_macros):
        w, h = macro_sides[m % len(macro_sides)]
        cells.append(Cell(f"m{m}", float(w), float(h)))
    for s in range(n_std):
        cells.append(Cell(f"c{s}", 2.0, row_height))
    # Pads evenly around the boundary, placed (lower-left) just inside the die.
    pad_pos = []
    for p in range(n_pads):
        t = p / n_pads * 4.0
        side, f = int(t), t - int(t)
        x, y = {0: (f * die, 0.0), 1: (die - 1, f * die), 2: ((1 - f) * die, die - 1), 3: (0.0, (1 - f) * die)}[side]
        x, y = min(max(x, 0.0), die - 1), min(max(y, 0.0), die - 1)
        pad_pos.append((round(x), round(y)))
        cells.append(Cell(f"p{p}", 1.0, 1.0, movable=False, x=float(round(x)), y=float(round(y))))

    macro = list(range(n_macros))
    std = list(range(n_macros, n_macros + n_std))
    pads = list(range(n_macros + n_std, n_macros + n_std + n_pads))

    def macro_pin(m, direction):
        w, h = cells[m].width, cells[m].height
        dx = float(np.round(rng.uniform(-0.4, 0.4) * w, 1))
        dy = float(np.round(rng.uniform(-0.4, 0.4) * h, 1))
        return Pin(m, dx, dy, direction)

    nets: list[Net] = []

    def add(pins):
        nets.append(Net(f"n{len(nets)}", pins))

    cluster = {m: std[k::n_macros] for k, m in enumerate(macro)}
    # Each macro talks to two adjacent pads.
    for k, m in enumerate(macro):
        first = (k * n_pads) // max(n_macros, 1)
        for p in (pads[first % n_pads], pads[(first + 1) % n_pads]):
            add([macro_pin(m, "O"), Pin(p, 0.0, 0.0, "I")])
    # Macro chain plus a closing edge.
    for k in range(n_macros - 1):
        add([macro_pin(macro[k], "O"), macro_pin(macro[k + 1], "I")])
        if k % 2 == 0:
            add([macro_pin(macro[k], "B"), macro_pin(macro[k + 1], "B")])
    if n_macros > 2:
        add([macro_pin(macro[-1], "O"), macro_pin(macro[0], "I")])
    # Clustered standard-cell logic hanging off each macro.
    for m, members in cluster.items():
        for c in members:
            if rng.random() < 0.5:
                add([macro_pin(m, "O"), Pin(c, 0.0, 0.0, "I")])
        for _ in range(len(members)):
            k = int(rng.integers(2, 5))
            chosen = rng.choice(members, size=min(k, len(members)), replace=False)
            add([Pin(int(chosen[0]), 0.0, 0.0, "O")] + [Pin(int(c), 0.0, 0.0, "I") for c in chosen[1:]])
    # Sparse cross-cluster and pad connections.
    for _ in range(n_std // 10):
        a, b = rng.choice(std, size=2, replace=False)
        add([Pin(int(a), 0.0, 0.0, "O"), Pin(int(b), 0.0, 0.0, "I")])
    for p in pads:
        c = int(rng.choice(std))
        add([Pin(p, 0.0, 0.0, "O"), Pin(c, 0.0, 0.0, "I")])

    classify_cells(cells)
    return Netlist(name, cells, nets, rows)


def bundled_aux(name: str = "synth5") -> str:
    return str(resources.files("macroplace") / "data" / name / f"{name}.aux")


def load_bundled(name: str = "synth5") -> Netlist:
    return parse_aux(bundled_aux(name))


def write_bundled(directory: str, name: str = "synth5", **kwargs) -> str:
    net = make_design(name=name, **kwargs)
    aux = write_design(net, directory, name)
    counts = net.counts()
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(counts, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return aux
