import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from designs import random_design
from macroplace.bookshelf import Cell, Net, Netlist, Pin, Rect, classify_cells
from macroplace.graph import NoMacrosError, build_macro_graph, build_metadata, placement_order


def brute_adjacency(netlist, order):
    n = len(order)
    adj = np.zeros((n, n))
    for net in netlist.nets:
        cells = [p.cell for p in net.pins]
        for a in range(n):
            for b in range(n):
                if a != b and order[a] in cells and order[b] in cells:
                    adj[a, b] += 1
    return adj


def brute_metadata(netlist):
    cells = netlist.cells
    n_mov = sum(1 for c in cells if c.kind == "macro" and c.movable)
    n_fix = sum(1 for c in cells if c.kind == "macro" and not c.movable)
    big = max(len(cells), len(netlist.nets), 1)
    w, h = netlist.die.width, netlist.die.height
    area = 0.0
    for c in cells:
        if c.movable:
            area += c.width * c.height
    return [len(cells) / big, len(netlist.nets) / big, n_mov / max(n_mov + n_fix, 1),
            n_fix / max(n_mov + n_fix, 1), w / max(w, h), h / max(w, h), min(1.0, area / (w * h))]


def _two_macros(shared=1):
    cells = [Cell("a", 20, 20), Cell("b", 10, 10)] + [Cell(f"s{i}", 1, 1) for i in range(5)]
    nets = [Net(f"n{k}", [Pin(0, 0, 0, "I"), Pin(1, 0, 0, "O")]) for k in range(shared)]
    classify_cells(cells)
    return Netlist("two", cells, nets, die=Rect(0, 0, 100, 100))


def test_two_macros_one_net():
    g = build_macro_graph(_two_macros())
    assert g.adjacency.tolist() == [[0, 1], [1, 0]]
    assert g.macro_index.tolist() == [0, 1]


def test_single_macro():
    cells = [Cell("a", 20, 20)] + [Cell(f"s{i}", 1, 1) for i in range(5)]
    classify_cells(cells)
    g = build_macro_graph(Netlist("one", cells, [], die=Rect(0, 0, 100, 100)))
    assert g.adjacency.tolist() == [[0]]
    assert g.features.shape == (1, 4)
    assert np.all(g.features == 0)


def test_no_macros():
    cells = [Cell(f"s{i}", 1, 1) for i in range(5)]
    classify_cells(cells)
    with pytest.raises(NoMacrosError):
        build_macro_graph(Netlist("none", cells, [], die=Rect(0, 0, 10, 10)))


def test_synth_adjacency_matches_brute_force(synth):
    g = build_macro_graph(synth)
    assert g.n_macros == 5
    assert np.array_equal(g.adjacency, brute_adjacency(synth, list(g.macro_index)))


def test_order_is_descending_area_then_name():
    cells = [Cell("b", 20, 20), Cell("a", 20, 20), Cell("c", 30, 30)] + [Cell(f"s{i}", 1, 1) for i in range(9)]
    classify_cells(cells)
    n = Netlist("o", cells, [], die=Rect(0, 0, 100, 100))
    assert [cells[i].name for i in placement_order(n)] == ["c", "a", "b"]


def test_features_columns():
    cells = [Cell("a", 40, 20), Cell("b", 20, 30), Cell("c", 30, 25)] + [Cell(f"s{i}", 1, 1) for i in range(9)]
    classify_cells(cells)
    nets = [Net("n0", [Pin(0, 0, 0, "I"), Pin(1, 0, 0, "O")]),
            Net("n1", [Pin(0, 0, 0, "I"), Pin(2, 0, 0, "I"), Pin(3, 0, 0, "O")]),
            Net("n2", [Pin(0, 0, 0, "O"), Pin(4, 0, 0, "I")])]
    g = build_macro_graph(Netlist("f", cells, nets, die=Rect(0, 0, 100, 100)))
    # order: a (800), c (750), b (600)
    assert g.macro_index.tolist() == [0, 2, 1]
    # widths 40, 30, 20; heights 20, 25, 30; pins 3, 1, 1; input fraction 2/3, 1, 0
    np.testing.assert_allclose(g.features[:, 0], [1, 0.5, 0])
    np.testing.assert_allclose(g.features[:, 1], [0, 0.5, 1])
    np.testing.assert_allclose(g.features[:, 2], [1, 0, 0])
    np.testing.assert_allclose(g.features[:, 3], [2 / 3, 1, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_graph_invariants(seed, n_macros):
    n = random_design(seed, n_macros=n_macros, n_std=12)
    g = build_macro_graph(n)
    assert g.n_macros == len(n.movable_macros) == n_macros
    assert np.array_equal(g.adjacency, g.adjacency.T)
    assert np.all(np.diag(g.adjacency) == 0)
    assert np.all((g.features >= 0) & (g.features <= 1))
    assert np.array_equal(g.adjacency, brute_adjacency(n, list(g.macro_index)))
    # row sum: for each macro, count (net, other macro) incidences
    order = list(g.macro_index)
    rows = [sum(len({p.cell for p in net.pins} & set(order)) - 1 for net in n.nets
                if m in {p.cell for p in net.pins}) for m in order]
    np.testing.assert_array_equal(g.adjacency.sum(axis=1), rows)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_consistency(seed):
    n = random_design(seed, n_macros=5)
    g = build_macro_graph(n)
    perm = np.random.default_rng(seed).permutation(5)
    p = g.permuted(perm)
    assert np.array_equal(p.adjacency, g.adjacency[np.ix_(perm, perm)])
    assert np.array_equal(p.features, g.features[perm])
    # brute-force adjacency under the permuted ordering agrees
    assert np.array_equal(p.adjacency, brute_adjacency(n, list(p.macro_index)))


def test_metadata_single_macro_no_nets():
    cells = [Cell("a", 10, 10)]
    classify_cells(cells)
    n = Netlist("m", cells, [], die=Rect(0, 0, 100, 100))
    # a lone movable cell is its own median, so it stays a standard cell under the area rule
    v = build_metadata(n)
    assert v.shape == (7,)
    assert v[0] == 1 and v[1] == 0
    assert v[4] == 1 and v[5] == 1
    assert v[6] == pytest.approx(0.01)


def test_metadata_dual_route(synth, rng):
    np.testing.assert_array_equal(build_metadata(synth), brute_metadata(synth))
    for seed in range(10):
        n = random_design(seed, fixed_macros=seed % 3)
        v = build_metadata(n)
        assert np.all(np.isfinite(v)) and np.all((v >= 0) & (v <= 1))
        np.testing.assert_array_equal(v, brute_metadata(n))


def test_weighted_adjacency():
    cells = [Cell("a", 20, 20), Cell("b", 20, 20), Cell("c", 20, 20)] + [Cell(f"s{i}", 1, 1) for i in range(9)]
    classify_cells(cells)
    nets = [Net("n", [Pin(0, 0, 0, "I"), Pin(1, 0, 0, "I"), Pin(2, 0, 0, "I")])]
    n = Netlist("w", cells, nets, die=Rect(0, 0, 100, 100))
    assert build_macro_graph(n).adjacency[0, 1] == 1
    assert build_macro_graph(n, weighted=True).adjacency[0, 1] == 0.5
