"""Macro connectivity graph, macro features and design metadata used as RL state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bookshelf import Netlist

METADATA_FIELDS = (
    "cells",
    "nets",
    "movable_macros",
    "fixed_macros",
    "die_width",
    "die_height",
    "movable_area_ratio",
)


class NoMacrosError(ValueError):
    pass


@dataclass(frozen=True)
class MacroGraph:
    adjacency: np.ndarray  # (N, N) net counts, symmetric, zero diagonal
    features: np.ndarray  # (N, 4) min-max normalised [w, h, pins, input fraction]
    macro_index: np.ndarray  # placement order -> netlist cell index

    @property
    def n_macros(self) -> int:
        return len(self.macro_index)

    def permuted(self, perm) -> "MacroGraph":
        """Graph with macro ``perm[k]`` moved to position ``k``."""
        perm = np.asarray(perm)
        return MacroGraph(
            self.adjacency[np.ix_(perm, perm)], self.features[perm], self.macro_index[perm]
        )


def placement_order(netlist: Netlist) -> np.ndarray:
    """Movable macros sorted by descending area, ties broken by name."""
    idx = list(netlist.movable_macros)
    idx.sort(key=lambda i: (-netlist.cells[i].area, netlist.cells[i].name))
    return np.array(idx, dtype=np.int64)


def _minmax(col: np.ndarray) -> np.ndarray:
    lo, hi = col.min(), col.max()
    if hi > lo:
        return (col - lo) / (hi - lo)
    return np.zeros_like(col)


def build_macro_graph(netlist: Netlist, weighted: bool = False) -> MacroGraph:
    """Build H and F for the movable macros of ``netlist``.

    With ``weighted`` each net adds ``1/(k-1)`` for a net touching ``k``
    macros instead of 1.
    """
    order = placement_order(netlist)
    n = len(order)
    if n == 0:
        raise NoMacrosError(f"design {netlist.name!r} has no movable macros")
    pos = {int(c): k for k, c in enumerate(order)}

    adj = np.zeros((n, n))
    pins = np.zeros(n)
    inputs = np.zeros(n)
    for net in netlist.nets:
        members = set()
        for p in net.pins:
            k = pos.get(p.cell)
            if k is None:
                continue
            members.add(k)
            pins[k] += 1
            if p.direction == "I":
                inputs[k] += 1
        if len(members) < 2:
            continue
        w = 1.0 / (len(members) - 1) if weighted else 1.0
        m = np.fromiter(members, dtype=np.int64)
        adj[np.ix_(m, m)] += w
    np.fill_diagonal(adj, 0.0)

    sizes = netlist.sizes[order]
    frac = np.divide(inputs, pins, out=np.zeros(n), where=pins > 0)
    raw = np.column_stack([sizes[:, 0], sizes[:, 1], pins, frac])
    feats = np.column_stack([_minmax(raw[:, j]) for j in range(4)])
    return MacroGraph(adj, feats, order)


def build_metadata(netlist: Netlist) -> np.ndarray:
    """Seven-entry design summary, each entry scaled into [0, 1].

    Counts are divided by the larger of (cells, nets) or by the macro total,
    die sides by the longer side, and the movable-area ratio is clipped at 1.
    """
    c = netlist.counts()
    n_cells, n_nets = c["cells"], c["nets"]
    n_mov, n_fix = c["movable_macros"], c["fixed_macros"]
    big = max(n_cells, n_nets, 1)
    mac = max(n_mov + n_fix, 1)
    die = netlist.die
    side = max(die.width, die.height)
    movable_area = sum(cell.area for cell in netlist.cells if cell.movable)
    return np.array(
        [
            n_cells / big,
            n_nets / big,
            n_mov / mac,
            n_fix / mac,
            die.width / side,
            die.height / side,
            min(1.0, movable_area / die.area),
        ]
    )
