"""Sequential macro placement as a Markov decision process.

Actions index a ``W x W`` grid over the die.  Grid arrays are indexed
``[ix, iy]`` (x first) and a flat action is ``ix * W + iy``.  An action names
the lower-left cell of the macro footprint; the macro is centered on its
footprint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bookshelf import Netlist
from .graph import MacroGraph, build_macro_graph, build_metadata
from .metrics import Snapshot, check_overlaps, congestion, density, total_wl

EPS = 1e-9


class MacroTooLargeError(ValueError):
    def __init__(self, index, name):
        self.index = index
        super().__init__(f"macro {name!r} (order {index}) does not fit on the die")


class EpisodeFinishedError(RuntimeError):
    pass


class OverlapRemainsError(RuntimeError):
    pass


@dataclass
class EnvConfig:
    grid: int = 32
    alpha_t: float = 1.0
    beta_t: float = 0.5
    alpha_i: float = 1.0
    beta_i: float = 0.5
    illegal_penalty: float = -1.0
    use_immediate_reward: bool = True
    backbone: str = "gat"
    max_illegal: int = 10
    exploration_weight: float = 0.1
    # Divisor applied to WL inside the immediate reward; 0 means die half-perimeter.
    wl_unit: float = 0.0
    seed: int = 0

    def validate(self):
        if self.grid < 4:
            raise ValueError("grid must be at least 4")
        for k in ("alpha_t", "beta_t", "alpha_i", "beta_i", "exploration_weight"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be nonnegative")
        if self.illegal_penalty >= 0:
            raise ValueError("illegal_penalty must be negative")
        if self.backbone not in ("gat", "gcn"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.max_illegal < 1:
            raise ValueError("max_illegal must be positive")


@dataclass
class PlacementState:
    occupancy: np.ndarray  # (W, W) uint8
    positions: np.ndarray  # (n_cells, 2) centers, NaN for unplaced
    placed: list = field(default_factory=list)  # (order index, (ix, iy), (cx, cy))
    id: int = 0
    last_ri: float | None = None
    illegal_streak: int = 0
    done: bool = False
    aborted: bool = False

    def copy(self) -> "PlacementState":
        return PlacementState(
            self.occupancy.copy(), self.positions.copy(), list(self.placed), self.id,
            self.last_ri, self.illegal_streak, self.done, self.aborted,
        )


@dataclass
class StepOutcome:
    state: PlacementState
    reward: float
    done: bool
    info: dict


def footprint_cells(lo: float, hi: float, origin: float, cell: float, W: int) -> tuple[int, int]:
    """Grid index range [a, b) of cells overlapping (lo, hi) with positive length."""
    a = int(math.floor((lo - origin) / cell + EPS))
    b = int(math.ceil((hi - origin) / cell - EPS))
    return max(a, 0), min(max(b, a + 1), W)


class PlacementEnv:
    def __init__(self, netlist: Netlist, config: EnvConfig | None = None, graph: MacroGraph | None = None):
        self.netlist = netlist
        self.config = config or EnvConfig()
        self.config.validate()
        self.graph = graph if graph is not None else build_macro_graph(netlist)
        self.metadata = build_metadata(netlist)
        W = self.config.grid
        die = netlist.die
        self.W = W
        self.cell_w = die.width / W
        self.cell_h = die.height / W
        sizes = netlist.sizes[self.graph.macro_index]
        self.foot = np.stack(
            [np.ceil(sizes[:, 0] / self.cell_w - EPS), np.ceil(sizes[:, 1] / self.cell_h - EPS)], axis=1
        ).astype(np.int64)
        self.foot = np.maximum(self.foot, 1)
        for k, (fw, fh) in enumerate(self.foot):
            if fw > W or fh > W:
                raise MacroTooLargeError(k, netlist.cells[self.graph.macro_index[k]].name)
        self.wl_unit = self.config.wl_unit or (die.width + die.height)
        self._base_positions = self._initial_positions()
        self._base_occupancy = self._fixed_occupancy()
        self._rng = np.random.default_rng(self.config.seed)

    @property
    def n_macros(self) -> int:
        return self.graph.n_macros

    # ----------------------------------------------------------------- setup

    def _initial_positions(self) -> np.ndarray:
        """Fixed cells at their parsed positions, everything movable unplaced."""
        pos = self.netlist.centers()
        for i, c in enumerate(self.netlist.cells):
            if c.movable:
                pos[i] = np.nan
        return pos

    def _fixed_occupancy(self) -> np.ndarray:
        occ = np.zeros((self.W, self.W), dtype=np.uint8)
        die = self.netlist.die
        for i in self.netlist.fixed_macros:
            c = self.netlist.cells[i]
            if not c.placed:
                continue
            xl, yl = c.x, c.y
            xh, yh = xl + c.width, yl + c.height
            if xh <= die.xl or xl >= die.xh or yh <= die.yl or yl >= die.yh:
                continue
            ax, bx = footprint_cells(xl, xh, die.xl, self.cell_w, self.W)
            ay, by = footprint_cells(yl, yh, die.yl, self.cell_h, self.W)
            occ[ax:bx, ay:by] = 1
        return occ

    def reset(self, seed: int | None = None) -> PlacementState:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        return PlacementState(self._base_occupancy.copy(), self._base_positions.copy())

    # ----------------------------------------------------------------- actions

    def legal_mask(self, state: PlacementState) -> np.ndarray:
        W = self.W
        fw, fh = self.foot[state.id]
        mask = np.zeros((W, W), dtype=bool)
        nx, ny = W - fw + 1, W - fh + 1
        if nx <= 0 or ny <= 0:
            return mask
        s = np.zeros((W + 1, W + 1), dtype=np.int64)
        s[1:, 1:] = np.cumsum(np.cumsum(state.occupancy, axis=0), axis=1)
        window = s[fw:fw + nx, fh:fh + ny] - s[:nx, fh:fh + ny] - s[fw:fw + nx, :ny] + s[:nx, :ny]
        mask[:nx, :ny] = window == 0
        return mask

    def action_center(self, k: int, ix: int, iy: int) -> tuple[float, float]:
        fw, fh = self.foot[k]
        die = self.netlist.die
        return (die.xl + (ix + 0.5 * fw) * self.cell_w, die.yl + (iy + 0.5 * fh) * self.cell_h)

    def decode(self, action) -> tuple[int, int]:
        if isinstance(action, (tuple, list, np.ndarray)) and np.ndim(action) == 1 and len(action) == 2:
            return int(action[0]), int(action[1])
        a = int(action)
        return divmod(a, self.W)

    def immediate_reward(self, positions: np.ndarray, placed_macros) -> float:
        """R_i = -alpha_i * WL(placed)/wl_unit - beta_i * D(placed macros)."""
        cfg = self.config
        snap = Snapshot(positions, self.netlist.die)
        wl = total_wl(snap, self.netlist, placed_only=True) / self.wl_unit
        cells = self.graph.macro_index[list(placed_macros)]
        d = density(positions[cells], self.netlist.die) if len(cells) else 0.0
        return -cfg.alpha_i * wl - cfg.beta_i * d

    def step(self, state: PlacementState, action) -> StepOutcome:
        """Apply ``action`` to a copy of ``state``."""
        if state.done or state.id >= self.n_macros:
            raise EpisodeFinishedError("episode already finished")
        cfg = self.config
        ix, iy = self.decode(action)
        new = state.copy()
        mask = self.legal_mask(state)
        legal = 0 <= ix < self.W and 0 <= iy < self.W and bool(mask[ix, iy])
        if not legal:
            new.illegal_streak += 1
            reward = cfg.illegal_penalty
            info = {"legal": False, "R_i": state.last_ri}
            if new.illegal_streak >= cfg.max_illegal:
                reward = self.abort_penalty(state)
                new.done = new.aborted = True
                info["aborted"] = True
            return StepOutcome(new, reward, new.done, info)

        k = state.id
        fw, fh = self.foot[k]
        new.occupancy[ix:ix + fw, iy:iy + fh] = 1
        cx, cy = self.action_center(k, ix, iy)
        new.positions[self.graph.macro_index[k]] = (cx, cy)
        new.placed.append((k, (ix, iy), (cx, cy)))
        new.id = k + 1
        new.illegal_streak = 0
        ri = self.immediate_reward(new.positions, [p[0] for p in new.placed])
        if state.last_ri is None:
            reward = 0.0
        else:
            delta = ri - state.last_ri
            reward = math.copysign(delta * delta, delta)
        if not cfg.use_immediate_reward:
            reward = 0.0
        new.last_ri = ri
        new.done = new.id == self.n_macros
        return StepOutcome(new, reward, new.done, {"legal": True, "R_i": ri})

    def abort_penalty(self, state: PlacementState) -> float:
        return 2.0 * self.config.illegal_penalty * (self.n_macros - state.id)

    def abort(self, state: PlacementState) -> StepOutcome:
        """End the episode at a dead end (no legal action for the current macro)."""
        new = state.copy()
        new.done = new.aborted = True
        return StepOutcome(new, self.abort_penalty(state), True, {"legal": False, "aborted": True, "R_i": state.last_ri})

    # ----------------------------------------------------------------- terminal

    def macro_snapshot(self, state: PlacementState) -> Snapshot:
        return Snapshot(state.positions.copy(), self.netlist.die)

    def overall_reward(self, snapshot: Snapshot) -> float:
        cfg = self.config
        wl = total_wl(snapshot, self.netlist)
        c = congestion(snapshot, self.netlist) if cfg.beta_t else 0.0
        return -cfg.alpha_t * wl - cfg.beta_t * c

    def finalize(self, state: PlacementState, std_placer, rng=None):
        """Place standard cells around the finished macros.

        Returns (final snapshot, R_t, exploration bonus).
        """
        if state.id != self.n_macros:
            raise EpisodeFinishedError("finalize needs every macro placed")
        snap = self.macro_snapshot(state)
        overlaps = check_overlaps(snap, self.netlist)
        if overlaps:
            raise OverlapRemainsError(f"{len(overlaps)} macro overlaps, e.g. cells {overlaps[0]}")
        final, sample = std_placer.place(self.netlist, snap, rng if rng is not None else self._rng)
        rt = self.overall_reward(final)
        bonus = -self.config.exploration_weight * self.config.alpha_t * total_wl(sample, self.netlist)
        return final, rt, bonus

    def random_baseline_wl(self, seed: int = 0) -> float:
        """Total WL with every movable cell uniformly random on the die."""
        rng = np.random.default_rng(seed)
        die = self.netlist.die
        pos = self.netlist.centers()
        mov = np.array([c.movable for c in self.netlist.cells])
        n = int(mov.sum())
        pos[mov, 0] = rng.uniform(die.xl, die.xh, n)
        pos[mov, 1] = rng.uniform(die.yl, die.yh, n)
        return total_wl(Snapshot(pos, die), self.netlist)


def trace_line(step: int, action, reward: float, ri) -> str:
    """One line-delimited JSON record of an episode step."""
    return json.dumps({"step": step, "action": [int(a) for a in action], "reward": reward, "R_i": ri})
