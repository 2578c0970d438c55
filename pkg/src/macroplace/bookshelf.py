"""Reader and writer for the ISPD bookshelf placement format.

A design is described by an ``.aux`` file listing its ``.nodes``, ``.nets``,
``.pl``, ``.scl`` and (optionally) ``.wts`` siblings.  Everything is parsed
into a :class:`Netlist`.

Coordinates follow bookshelf conventions: ``Cell.x``/``Cell.y`` are the
lower-left corner as written in the ``.pl`` file, while pin offsets are
relative to the cell center.
"""

from __future__ import annotations

import dataclasses
import gc
import os
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, NamedTuple

import numpy as np
import polars as pl

ORIENTATIONS = ("N", "S", "E", "W", "FN", "FS", "FE", "FW")

MACRO = "macro"
STANDARD = "standard"
TERMINAL = "terminal"

DEFAULT_MACRO_THRESHOLD = 10.0


class BookshelfError(Exception):
    """Base class for bookshelf parse/write failures."""


class MissingFileError(BookshelfError):
    pass


class BookshelfSyntaxError(BookshelfError):
    def __init__(self, path, line, column, token, message="unexpected token"):
        self.path = path
        self.line = line
        self.column = column
        self.token = token
        super().__init__(f"{path}:{line}:{column}: {message} {token!r}")


class DanglingPinError(BookshelfError):
    def __init__(self, path, line, cell):
        self.path = path
        self.line = line
        self.cell = cell
        super().__init__(f"{path}:{line}: pin references unknown cell {cell!r}")


class UnplacedCellError(BookshelfError):
    def __init__(self, names):
        self.names = list(names)
        shown = ", ".join(self.names[:10])
        more = f" (+{len(self.names) - 10} more)" if len(self.names) > 10 else ""
        super().__init__(f"unplaced cells: {shown}{more}")


@dataclass(frozen=True)
class Rect:
    xl: float
    yl: float
    xh: float
    yh: float

    @property
    def width(self) -> float:
        return self.xh - self.xl

    @property
    def height(self) -> float:
        return self.yh - self.yl

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.xl + self.xh), 0.5 * (self.yl + self.yh))


@dataclass(slots=True)
class Cell:
    name: str
    width: float
    height: float
    kind: str = STANDARD
    movable: bool = True
    x: float | None = None
    y: float | None = None
    orientation: str = "N"

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def placed(self) -> bool:
        return self.x is not None and self.y is not None

    @property
    def is_macro(self) -> bool:
        return self.kind == MACRO


class Pin(NamedTuple):
    cell: int
    dx: float
    dy: float
    direction: str = "B"


@dataclass
class Net:
    name: str
    pins: list[Pin]


PIN_DIRECTIONS = "IOB"


class NetTable(Sequence):
    """Read-only nets stored as flat pin arrays; ``Net`` objects are built on access.

    ``start[k]:start[k + 1]`` indexes the pins of net ``k``; ``direction``
    holds indices into :data:`PIN_DIRECTIONS`.
    """

    def __init__(self, names, start, cell, offset, direction):
        self.names = names
        self.start = start
        self.cell = cell
        self.offset = offset
        self.direction = direction

    def __len__(self):
        return len(self.names)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        a, b = int(self.start[k]), int(self.start[k + 1])
        cells = self.cell[a:b].tolist()
        off = self.offset[a:b].tolist()
        dirs = self.direction[a:b].tolist()
        return Net(self.names[k], [Pin(c, dx, dy, PIN_DIRECTIONS[d]) for c, (dx, dy), d in zip(cells, off, dirs)])


@dataclass(frozen=True)
class PlacementRow:
    y: float
    height: float
    x: float
    num_sites: int
    site_width: float

    @property
    def xh(self) -> float:
        return self.x + self.num_sites * self.site_width


@dataclass
class Netlist:
    name: str
    cells: list[Cell]
    nets: Sequence[Net]
    rows: list[PlacementRow] = field(default_factory=list)
    die: Rect | None = None

    def __post_init__(self):
        if self.die is None:
            self.die = derive_die(self.rows, self.cells)

    @cached_property
    def index(self) -> dict[str, int]:
        return {c.name: i for i, c in enumerate(self.cells)}

    @cached_property
    def sizes(self) -> np.ndarray:
        n = len(self.cells)
        out = np.empty((n, 2))
        out[:, 0] = np.fromiter((c.width for c in self.cells), dtype=float, count=n)
        out[:, 1] = np.fromiter((c.height for c in self.cells), dtype=float, count=n)
        return out

    @cached_property
    def pin_arrays(self):
        """Flattened pins: (cell index, dx, dy, net start offsets) as numpy arrays."""
        if isinstance(self.nets, NetTable):
            return self.nets.cell, self.nets.offset, self.nets.start
        counts = np.fromiter((len(n.pins) for n in self.nets), dtype=np.int64, count=len(self.nets))
        start = np.zeros(len(self.nets) + 1, dtype=np.int64)
        np.cumsum(counts, out=start[1:])
        total = int(start[-1])
        cell = np.empty(total, dtype=np.int64)
        off = np.empty((total, 2), dtype=float)
        k = 0
        for net in self.nets:
            for p in net.pins:
                cell[k] = p.cell
                off[k, 0] = p.dx
                off[k, 1] = p.dy
                k += 1
        return cell, off, start

    @property
    def num_pins(self) -> int:
        return int(self.pin_arrays[2][-1])

    def indices(self, kind: str | None = None, movable: bool | None = None) -> np.ndarray:
        return np.array(
            [
                i
                for i, c in enumerate(self.cells)
                if (kind is None or c.kind == kind) and (movable is None or c.movable == movable)
            ],
            dtype=np.int64,
        )

    @cached_property
    def movable_macros(self) -> np.ndarray:
        return self.indices(MACRO, movable=True)

    @cached_property
    def fixed_macros(self) -> np.ndarray:
        return self.indices(MACRO, movable=False)

    @cached_property
    def macros(self) -> np.ndarray:
        return self.indices(MACRO)

    @cached_property
    def standard_cells(self) -> np.ndarray:
        return self.indices(STANDARD)

    def counts(self) -> dict[str, int]:
        tally = Counter(zip([c.kind for c in self.cells], [c.movable for c in self.cells]))
        kinds = {
            "movable_macros": tally[MACRO, True],
            "fixed_macros": tally[MACRO, False],
            "standard": tally[STANDARD, True] + tally[STANDARD, False],
            "terminal": tally[TERMINAL, True] + tally[TERMINAL, False],
        }
        kinds["cells"] = len(self.cells)
        kinds["nets"] = len(self.nets)
        kinds["pins"] = self.num_pins
        return kinds

    def centers(self) -> np.ndarray:
        """(n, 2) array of cell centers; NaN rows for unplaced cells."""
        out = np.full((len(self.cells), 2), np.nan)
        for i, c in enumerate(self.cells):
            if c.placed:
                out[i, 0] = c.x + 0.5 * c.width
                out[i, 1] = c.y + 0.5 * c.height
        return out

    def with_centers(self, centers: np.ndarray) -> "Netlist":
        """Copy of the netlist with lower-left positions taken from ``centers``.

        NaN rows leave the cell unplaced.
        """
        cells = []
        for c, (cx, cy) in zip(self.cells, centers):
            if np.isnan(cx) or np.isnan(cy):
                cells.append(dataclasses.replace(c, x=None, y=None))
            else:
                cells.append(
                    dataclasses.replace(c, x=float(cx - 0.5 * c.width), y=float(cy - 0.5 * c.height))
                )
        return Netlist(self.name, cells, self.nets, self.rows, self.die)


class PlEntry(NamedTuple):
    name: str
    x: float
    y: float
    orientation: str
    fixed: bool


def derive_die(rows, cells) -> Rect:
    if rows:
        return Rect(
            min(r.x for r in rows),
            min(r.y for r in rows),
            max(r.xh for r in rows),
            max(r.y + r.height for r in rows),
        )
    # No rows: bounding box of whatever cells are placed (unplaced ones at the origin).
    xl = yl = 0.0
    xh = yh = 0.0
    for c in cells:
        x = c.x if c.x is not None else 0.0
        y = c.y if c.y is not None else 0.0
        xl, yl = min(xl, x), min(yl, y)
        xh, yh = max(xh, x + c.width), max(yh, y + c.height)
    if xh <= xl:
        xh = xl + 1.0
    if yh <= yl:
        yh = yl + 1.0
    return Rect(xl, yl, xh, yh)


# --------------------------------------------------------------------------- lexing


def _lines(path) -> Iterator[tuple[int, list[str], str]]:
    """Yield (line number, tokens, raw line) skipping blanks, comments and UCLA headers."""
    try:
        fh = open(path, "r")
    except OSError as exc:
        raise MissingFileError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            if s.startswith("UCLA"):
                continue
            yield lineno, s.split(), raw


def _column(raw: str, token: str) -> int:
    pos = raw.find(token)
    return pos + 1 if pos >= 0 else 1


def _float(path, lineno, raw, token) -> float:
    try:
        return float(token)
    except ValueError:
        raise BookshelfSyntaxError(path, lineno, _column(raw, token), token, "expected a number, got") from None


def _int(path, lineno, raw, token) -> int:
    try:
        return int(token)
    except ValueError:
        raise BookshelfSyntaxError(path, lineno, _column(raw, token), token, "expected an integer, got") from None


def _is_header(tokens, key) -> bool:
    return tokens[0] == key or tokens[0] == key + ":"


# --------------------------------------------------------------------------- readers


def parse_aux(path, macro_threshold: float = DEFAULT_MACRO_THRESHOLD, macro_rule: str = "area") -> Netlist:
    """Parse a bookshelf design given its ``.aux`` file.

    ``macro_rule`` selects how macros are recognised (see :func:`classify_cells`).
    """
    # Millions of small objects and no cycles: the cyclic collector only costs time here.
    enabled = gc.isenabled()
    gc.disable()
    try:
        return _parse_aux(path, macro_threshold, macro_rule)
    finally:
        if enabled:
            gc.enable()


def _parse_aux(path, macro_threshold, macro_rule) -> Netlist:
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    files: dict[str, str] = {}
    for lineno, tokens, raw in _lines(path):
        if ":" not in tokens:
            raise BookshelfSyntaxError(path, lineno, 1, tokens[0], "expected '<kind> : files', got")
        for tok in tokens[tokens.index(":") + 1:]:
            ext = os.path.splitext(tok)[1].lower().lstrip(".")
            files[ext] = os.path.join(base, tok)
    for ext in ("nodes", "nets"):
        if ext not in files:
            raise MissingFileError(f"{path}: no .{ext} file listed")
    for ext, p in files.items():
        if not os.path.exists(p):
            raise MissingFileError(f"{path}: listed file {os.path.basename(p)} does not exist")

    cells = parse_nodes(files["nodes"])
    names = pl.Series([c.name for c in cells], dtype=pl.String)
    if names.n_unique() != len(names):
        seen = set()
        for c in cells:
            if c.name in seen:
                raise BookshelfSyntaxError(files["nodes"], 0, 1, c.name, "duplicate cell name")
            seen.add(c.name)
    nets = _fast_nets(files["nets"], names)
    if nets is None:
        nets = _parse_nets_lines(files["nets"], {c.name: i for i, c in enumerate(cells)})
    if "pl" in files:
        _apply_pl_file(cells, names, files["pl"])
    rows = parse_scl(files["scl"]) if "scl" in files else []
    if "wts" in files:
        # Weights are validated for syntax only; nets are unweighted downstream.
        for _ in _lines(files["wts"]):
            pass
    classify_cells(cells, macro_threshold, macro_rule)
    name = os.path.splitext(os.path.basename(path))[0]
    return Netlist(name, cells, nets, rows)


def _read_lines(path) -> list[str]:
    try:
        with open(path, "r") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise MissingFileError(f"cannot open {path}: {exc.strerror}") from exc


def _skip(tokens) -> bool:
    """Blank, comment or UCLA header line."""
    return not tokens or tokens[0][0] == "#" or tokens[0] == "UCLA"


_NODE_HEADERS = frozenset(("NumNodes", "NumNodes:", "NumTerminals", "NumTerminals:"))
_NET_HEADERS = frozenset(("NumNets", "NumNets:", "NumPins", "NumPins:"))
_DIRECTIONS = frozenset(("I", "O", "B"))


def _parse_nodes_lines(path) -> list[Cell]:
    cells: list[Cell] = []
    append = cells.append
    for lineno, raw in enumerate(_read_lines(path), start=1):
        tokens = raw.split()
        if _skip(tokens) or tokens[0] in _NODE_HEADERS:
            continue
        if len(tokens) < 3:
            raise BookshelfSyntaxError(path, lineno, _column(raw, tokens[-1]), tokens[-1], "truncated node line at")
        try:
            w, h = float(tokens[1]), float(tokens[2])
        except ValueError:
            w = _float(path, lineno, raw, tokens[1])
            h = _float(path, lineno, raw, tokens[2])
        terminal = False
        if len(tokens) > 3:
            flag = tokens[3]
            if flag not in ("terminal", "terminal_NI"):
                raise BookshelfSyntaxError(path, lineno, _column(raw, flag), flag, "unknown node flag")
            terminal = True
        append(Cell(tokens[0], w, h, TERMINAL if terminal else STANDARD, movable=not terminal))
    return cells


# Columnar fast path.  Each reader validates the whole table with vectorized
# checks and returns None on anything irregular; the line parsers then run
# and report the exact position of the problem.

_TAB_TO_SPACE = bytes.maketrans(b"\t", b" ")


def _squeeze(data: bytes) -> bytes:
    """Single spaces between tokens and none at line ends."""
    data = data.translate(_TAB_TO_SPACE, b"\r")
    while b"  " in data:
        data = data.replace(b"  ", b" ")
    for edge in (b"\n ", b" \n"):
        if edge in data:
            data = data.replace(edge, b"\n")
    return data.strip(b" ")


def _table(path, ncols: int) -> pl.DataFrame | None:
    """Whitespace-separated tokens as string columns ``c0..c{ncols}``.

    Column ``c{ncols}`` is non-null only on lines with too many tokens.  Blank,
    comment and UCLA header lines are dropped.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise MissingFileError(f"cannot open {path}: {exc.strerror}") from exc
    data = _squeeze(data)
    if not data or data.isspace():
        return None
    cols = [f"c{i}" for i in range(ncols + 1)]
    try:
        df = pl.read_csv(
            data, separator=" ", has_header=False, schema={c: pl.String for c in cols},
            comment_prefix="#", truncate_ragged_lines=True, quote_char=None,
        )
    except (pl.exceptions.PolarsError, UnicodeDecodeError):
        return None
    return df.filter(pl.col("c0").is_not_null() & (pl.col("c0") != "UCLA"))


def _floats(series: pl.Series) -> np.ndarray | None:
    out = series.cast(pl.Float64, strict=False)
    if out.null_count():
        return None
    return out.to_numpy()


def _fast_nodes(path) -> list[Cell] | None:
    df = _table(path, 4)
    if df is None:
        return None
    df = df.filter(~pl.col("c0").is_in(list(_NODE_HEADERS)))
    ok = df["c4"].is_null() & (df["c3"].is_null() | df["c3"].is_in(["terminal", "terminal_NI"]))
    if not ok.all():
        return None
    w, h = _floats(df["c1"]), _floats(df["c2"])
    if w is None or h is None:
        return None
    term = df["c3"].is_not_null().to_numpy()
    kinds = np.where(term, TERMINAL, STANDARD).tolist()
    return list(map(Cell, df["c0"].to_list(), w.tolist(), h.tolist(), kinds, (~term).tolist()))


def _fast_nets(path, names: pl.Series) -> NetTable | None:
    """``names`` are the unique cell names in index order."""
    df = _table(path, 5)
    if df is None:
        return None
    df = df.filter(~pl.col("c0").is_in(list(_NET_HEADERS)))
    if df["c5"].null_count() != len(df):
        return None
    is_net = (df["c0"] == "NetDegree").to_numpy()
    heads = np.flatnonzero(is_net)
    if len(df) and (not len(heads) or heads[0] != 0):
        return None
    nets, pins = df.filter(pl.Series(is_net)), df.filter(pl.Series(~is_net))
    if not ((nets["c1"] == ":").all() and nets["c4"].is_null().all()):
        return None
    degree = nets["c2"].cast(pl.Int64, strict=False)
    if degree.null_count():
        return None
    counts = np.diff(np.append(heads, len(df))) - 1
    if not np.array_equal(degree.to_numpy(), counts):
        return None
    d = pins["c1"]
    no_offset = pins["c2"].is_null() & pins["c3"].is_null() & pins["c4"].is_null()
    with_offset = (pins["c2"] == ":") & d.is_not_null()
    if not ((d.is_null() | d.is_in(list(_DIRECTIONS))) & (no_offset | with_offset)).all():
        return None
    n_pins = len(pins)
    offset = np.zeros((n_pins, 2))
    if n_pins:
        has = with_offset.fill_null(False)
        dx = _floats(pins["c3"].filter(has))
        dy = _floats(pins["c4"].filter(has))
        if dx is None or dy is None:
            return None
        has = has.to_numpy()
        offset[has, 0], offset[has, 1] = dx, dy
    # Enum codes are positions in ``names``, i.e. cell indices.
    cell = pins["c0"].cast(pl.Enum(names), strict=False)
    if cell.null_count():
        return None
    direction = d.fill_null("B").replace_strict(
        list(PIN_DIRECTIONS), list(range(len(PIN_DIRECTIONS))), return_dtype=pl.Int8
    )
    start = np.zeros(len(heads) + 1, dtype=np.int64)
    np.cumsum(counts, out=start[1:])
    net_names = [n if n is not None else f"net{k}" for k, n in enumerate(nets["c3"].to_list())]
    return NetTable(net_names, start, cell.to_physical().to_numpy().astype(np.int64), offset, direction.to_numpy())


def _fast_pl(path):
    """``.pl`` columns (names, x, y, orientations, fixed flags) or None."""
    df = _table(path, 6)
    if df is None:
        return None
    bare = df["c3"].is_null() & df["c4"].is_null()
    oriented = (df["c3"] == ":") & df["c4"].is_in(list(ORIENTATIONS)) & (
        df["c5"].is_null() | df["c5"].is_in(["/FIXED", "/FIXED_NI"])
    )
    if not (df["c6"].is_null() & (bare | oriented)).fill_null(False).all():
        return None
    x, y = _floats(df["c1"]), _floats(df["c2"])
    if x is None or y is None:
        return None
    return df["c0"], x, y, df["c4"].fill_null("N").to_list(), df["c5"].is_not_null().to_list()


def _apply_pl_file(cells: list[Cell], names: pl.Series, path) -> None:
    cols = _fast_pl(path)
    if cols is None:
        apply_pl(cells, {c.name: i for i, c in enumerate(cells)}, _parse_pl_lines(path))
        return
    pl_names, x, y, orient, _ = cols
    if len(pl_names) == len(names) and (pl_names == names).all():
        for c, cx, cy, o in zip(cells, x.tolist(), y.tolist(), orient):
            c.x, c.y, c.orientation = cx, cy, o
        return
    entries = [PlEntry(n, cx, cy, o, False) for n, cx, cy, o in zip(pl_names.to_list(), x.tolist(), y.tolist(), orient)]
    apply_pl(cells, {c.name: i for i, c in enumerate(cells)}, entries)


def parse_nodes(path) -> list[Cell]:
    cells = _fast_nodes(path)
    return cells if cells is not None else _parse_nodes_lines(path)


def parse_nets(path, index: dict[str, int]) -> Sequence[Net]:
    nets = _fast_nets(path, pl.Series(sorted(index, key=index.__getitem__), dtype=pl.String))
    return nets if nets is not None else _parse_nets_lines(path, index)


def parse_pl(path) -> list[PlEntry]:
    """Entries of a ``.pl`` file in file order; names are not checked."""
    cols = _fast_pl(path)
    if cols is None:
        return _parse_pl_lines(path)
    names, x, y, orient, fixed = cols
    return [PlEntry(*e) for e in zip(names.to_list(), x.tolist(), y.tolist(), orient, fixed)]


def _pin(path, lineno, raw, tokens, cell) -> Pin:
    direction = "B"
    dx = dy = 0.0
    rest = tokens[1:]
    if rest and rest[0] in _DIRECTIONS:
        direction = rest[0]
        rest = rest[1:]
    if rest:
        if rest[0] != ":" or len(rest) != 3:
            raise BookshelfSyntaxError(path, lineno, _column(raw, rest[0]), rest[0], "malformed pin offset")
        dx = _float(path, lineno, raw, rest[1])
        dy = _float(path, lineno, raw, rest[2])
    return Pin(cell, dx, dy, direction)


def _parse_nets_lines(path, index: dict[str, int]) -> list[Net]:
    nets: list[Net] = []
    current: list[Pin] | None = None
    expected = 0
    get = index.get
    for lineno, raw in enumerate(_read_lines(path), start=1):
        tokens = raw.split()
        if _skip(tokens):
            continue
        head = tokens[0]
        if head == "NetDegree" or head == "NetDegree:":
            if current is not None and len(current) != expected:
                raise BookshelfSyntaxError(path, lineno, 1, head, "previous net has wrong pin count before")
            rest = [t for t in tokens[1:] if t != ":"]
            if not rest:
                raise BookshelfSyntaxError(path, lineno, len(raw.rstrip()), "", "missing net degree")
            expected = _int(path, lineno, raw, rest[0])
            name = rest[1] if len(rest) > 1 else f"net{len(nets)}"
            current = []
            nets.append(Net(name, current))
            continue
        if head in _NET_HEADERS:
            continue
        if current is None:
            raise BookshelfSyntaxError(path, lineno, 1, head, "pin outside of a net")
        cell = get(head)
        if cell is None:
            raise DanglingPinError(path, lineno, head)
        # Fast path for the common "name DIR : dx dy" form.
        if len(tokens) == 5 and tokens[2] == ":" and tokens[1] in _DIRECTIONS:
            try:
                current.append(Pin(cell, float(tokens[3]), float(tokens[4]), tokens[1]))
                continue
            except ValueError:
                pass
        current.append(_pin(path, lineno, raw, tokens, cell))
    if current is not None and len(current) != expected:
        raise BookshelfSyntaxError(path, 0, 1, nets[-1].name, "last net has wrong pin count:")
    return nets


def _parse_pl_lines(path) -> list[PlEntry]:
    out: list[PlEntry] = []
    append = out.append
    for lineno, raw in enumerate(_read_lines(path), start=1):
        tokens = raw.split()
        if _skip(tokens):
            continue
        n = len(tokens)
        if n < 3:
            raise BookshelfSyntaxError(path, lineno, _column(raw, tokens[-1]), tokens[-1], "truncated placement at")
        try:
            x, y = float(tokens[1]), float(tokens[2])
        except ValueError:
            x = _float(path, lineno, raw, tokens[1])
            y = _float(path, lineno, raw, tokens[2])
        if n == 5 and tokens[3] == ":" and tokens[4] in ORIENTATIONS:
            append(PlEntry(tokens[0], x, y, tokens[4], False))
            continue
        orient = "N"
        fixed = False
        rest = tokens[3:]
        if rest:
            if rest[0] != ":":
                raise BookshelfSyntaxError(path, lineno, _column(raw, rest[0]), rest[0], "expected ':', got")
            rest = rest[1:]
            if rest and rest[0] in ORIENTATIONS:
                orient = rest[0]
                rest = rest[1:]
            if rest:
                if rest[0] not in ("/FIXED", "/FIXED_NI"):
                    raise BookshelfSyntaxError(path, lineno, _column(raw, rest[0]), rest[0], "unexpected")
                fixed = True
        append(PlEntry(tokens[0], x, y, orient, fixed))
    return out


def apply_pl(cells: list[Cell], index: dict[str, int], entries) -> list[str]:
    """Set positions from ``.pl`` entries in place; returns names not found."""
    unknown = []
    for e in entries:
        i = index.get(e.name)
        if i is None:
            unknown.append(e.name)
            continue
        c = cells[i]
        c.x, c.y, c.orientation = e.x, e.y, e.orientation
    return unknown


def parse_scl(path) -> list[PlacementRow]:
    rows: list[PlacementRow] = []
    cur: dict[str, float] | None = None
    for lineno, tokens, raw in _lines(path):
        key = tokens[0].rstrip(":")
        if key in ("NumRows", "NumRow"):
            continue
        if key == "CoreRow":
            cur = {}
            continue
        if key == "End":
            if cur is None:
                raise BookshelfSyntaxError(path, lineno, 1, "End", "End without CoreRow:")
            try:
                row = PlacementRow(
                    cur["Coordinate"], cur["Height"], cur["SubrowOrigin"], int(cur["NumSites"]), cur.get("Sitewidth", 1.0)
                )
            except KeyError as exc:
                raise BookshelfSyntaxError(path, lineno, 1, "End", f"row missing {exc.args[0]} before") from None
            if row.height <= 0 or row.num_sites <= 0:
                raise BookshelfSyntaxError(path, lineno, 1, "End", "degenerate row closed by")
            rows.append(row)
            cur = None
            continue
        if cur is None:
            raise BookshelfSyntaxError(path, lineno, 1, tokens[0], "row attribute outside CoreRow:")
        # Tokens come as "Key : value" pairs, possibly several per line.
        toks = [t for t in tokens if t != ":"]
        i = 0
        while i < len(toks):
            k = toks[i].rstrip(":")
            if i + 1 >= len(toks):
                raise BookshelfSyntaxError(path, lineno, _column(raw, toks[i]), toks[i], "missing value for")
            cur[k] = _float(path, lineno, raw, toks[i + 1]) if k not in ("Siteorient", "Sitesymmetry") else 0.0
            i += 2
    return rows


def classify_cells(cells: list[Cell], threshold: float = DEFAULT_MACRO_THRESHOLD, rule: str = "area") -> None:
    """Assign ``Cell.kind`` in place.

    ``rule="area"``: a movable cell is a macro iff its area is at least
    ``threshold`` times the median movable area; a fixed cell is a (fixed)
    macro under the same size test, otherwise a terminal.

    ``rule="terminals"``: every terminal is a macro; terminals at least
    ``threshold`` times the median terminal area become movable macros, the
    rest stay fixed.  This mimics benchmark statistics that count every
    terminal as a macro.
    """
    if rule not in ("area", "terminals"):
        raise ValueError(f"unknown macro rule {rule!r}")
    area = np.array([c.width for c in cells], dtype=float) * np.array([c.height for c in cells], dtype=float)
    movable = np.array([c.movable for c in cells], dtype=bool)
    if rule == "area":
        ref = float(np.median(area[movable])) if movable.any() else 0.0
        cut = threshold * ref if ref > 0 else 0.0
        macro = (area > 0) & (area >= cut) & (ref > 0)
        kinds = np.where(macro, MACRO, np.where(movable, STANDARD, TERMINAL)).tolist()
        for c, k in zip(cells, kinds):
            c.kind = k
    else:
        ref = float(np.median(area[~movable])) if not movable.all() else 0.0
        big = ((area > 0) & (area >= threshold * ref)).tolist()
        for c, m, b in zip(cells, movable.tolist(), big):
            if m:
                c.kind = STANDARD
            else:
                c.kind = MACRO
                c.movable = b


def calibrate_macro_threshold(cells: list[Cell], movable_macros: int, rule: str = "terminals") -> float:
    """Threshold for which :func:`classify_cells` yields exactly ``movable_macros``.

    Under ``"terminals"`` the count is of movable macros among the terminals;
    under ``"area"`` it is of macros.  Works on fresh cells or on cells already
    classified with the same rule.  The threshold sits at the geometric mean
    of the two size ratios around the cut, so it is robust to rounding.
    """
    if rule not in ("area", "terminals"):
        raise ValueError(f"unknown macro rule {rule!r}")
    area = np.array([c.width * c.height for c in cells], dtype=float)
    movable = np.array([c.movable for c in cells], dtype=bool)
    if rule == "terminals":
        pool = np.array([not c.movable or c.kind == MACRO for c in cells], dtype=bool)
        ref = float(np.median(area[pool])) if pool.any() else 0.0
    else:
        pool = np.ones(len(cells), dtype=bool)
        ref = float(np.median(area[movable])) if movable.any() else 0.0
    if ref <= 0:
        raise ValueError("reference area is zero; no threshold separates the cells")
    ratios = np.sort(area[pool & (area > 0)] / ref)[::-1]
    if not 0 <= movable_macros <= len(ratios):
        raise ValueError(f"cannot select {movable_macros} of {len(ratios)} candidate cells")
    if movable_macros == 0:
        return float(ratios[0] * 2) if len(ratios) else 1.0
    if movable_macros == len(ratios):
        return float(ratios[-1] / 2)
    hi, lo = ratios[movable_macros - 1], ratios[movable_macros]
    if hi == lo:
        raise ValueError(f"cells {movable_macros} and {movable_macros + 1} by size are tied; no threshold splits them")
    return float(np.sqrt(hi * lo))


# --------------------------------------------------------------------------- writers


def format_coord(v: float) -> str:
    """Shortest decimal that round-trips through ``float``."""
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_pl(netlist: Netlist, path) -> None:
    missing = [c.name for c in netlist.cells if c.movable and not c.placed]
    if missing:
        raise UnplacedCellError(missing)
    lines = ["UCLA pl 1.0", ""]
    for c in netlist.cells:
        x = c.x if c.x is not None else 0.0
        y = c.y if c.y is not None else 0.0
        line = f"{c.name} {format_coord(x)} {format_coord(y)} : {c.orientation}"
        if not c.movable:
            line += " /FIXED"
        lines.append(line)
    _atomic_write(path, "\n".join(lines) + "\n")


def write_design(netlist: Netlist, directory, name: str | None = None) -> str:
    """Write a full bookshelf design (aux/nodes/nets/pl/scl); returns the .aux path."""
    name = name or netlist.name
    os.makedirs(directory, exist_ok=True)
    p = lambda ext: os.path.join(directory, f"{name}.{ext}")  # noqa: E731
    with open(p("aux"), "w") as fh:
        fh.write(f"RowBasedPlacement : {name}.nodes {name}.nets {name}.pl {name}.scl\n")
    n_term = sum(1 for c in netlist.cells if not c.movable)
    with open(p("nodes"), "w") as fh:
        fh.write(f"UCLA nodes 1.0\n\nNumNodes : {len(netlist.cells)}\nNumTerminals : {n_term}\n")
        for c in netlist.cells:
            flag = "" if c.movable else " terminal"
            fh.write(f"{c.name} {format_coord(c.width)} {format_coord(c.height)}{flag}\n")
    with open(p("nets"), "w") as fh:
        fh.write(f"UCLA nets 1.0\n\nNumNets : {len(netlist.nets)}\nNumPins : {netlist.num_pins}\n")
        for net in netlist.nets:
            fh.write(f"NetDegree : {len(net.pins)} {net.name}\n")
            for pin in net.pins:
                fh.write(
                    f"\t{netlist.cells[pin.cell].name} {pin.direction} : {format_coord(pin.dx)} {format_coord(pin.dy)}\n"
                )
    placed = Netlist(netlist.name, [dataclasses.replace(c, x=c.x if c.placed else 0.0, y=c.y if c.placed else 0.0)
                                    for c in netlist.cells], netlist.nets, netlist.rows, netlist.die)
    write_pl(placed, p("pl"))
    with open(p("scl"), "w") as fh:
        fh.write(f"UCLA scl 1.0\n\nNumRows : {len(netlist.rows)}\n\n")
        for r in netlist.rows:
            fh.write(
                "CoreRow Horizontal\n"
                f"  Coordinate    : {format_coord(r.y)}\n"
                f"  Height        : {format_coord(r.height)}\n"
                f"  Sitewidth     : {format_coord(r.site_width)}\n"
                f"  Sitespacing   : {format_coord(r.site_width)}\n"
                "  Siteorient    : 1\n"
                "  Sitesymmetry  : 1\n"
                f"  SubrowOrigin  : {format_coord(r.x)}  NumSites : {r.num_sites}\n"
                "End\n"
            )
    return p("aux")


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
