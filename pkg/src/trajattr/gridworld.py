"""Deterministic grid navigation with goals, lava and walls.

Rewards: +1 on entering a goal, -1 on entering lava, -0.1 for every other
transition (including bumping into a wall or the boundary, which leaves the
agent in place). Goal and lava cells are terminal.

Actions: 0=up, 1=down, 2=left, 3=right.
"""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from importlib import resources
from pathlib import Path

from .errors import ContractViolation, LayoutError

GOAL_REWARD = 1.0
LAVA_REWARD = -1.0
STEP_REWARD = -0.1
REWARD_VALUES = (GOAL_REWARD, LAVA_REWARD, STEP_REWARD)

MAX_CELLS = 10_000


class CellKind(IntEnum):
    EMPTY = 0
    WALL = 1
    GOAL = 2
    LAVA = 3


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


N_ACTIONS = len(Action)
MOVES = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}
ARROWS = {Action.UP: "^", Action.DOWN: "v", Action.LEFT: "<", Action.RIGHT: ">"}

_CHAR_TO_KIND = {
    ".": CellKind.EMPTY,
    "S": CellKind.EMPTY,
    "#": CellKind.WALL,
    "G": CellKind.GOAL,
    "L": CellKind.LAVA,
}
_KIND_TO_CHAR = {
    CellKind.EMPTY: ".",
    CellKind.WALL: "#",
    CellKind.GOAL: "G",
    CellKind.LAVA: "L",
}


@dataclass(frozen=True)
class GridLayout:
    width: int
    height: int
    cells: tuple[tuple[CellKind, ...], ...]
    start_states: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise LayoutError("layout must have positive width and height")
        if self.width * self.height > MAX_CELLS:
            raise LayoutError(
                f"layout has {self.width * self.height} cells, limit is {MAX_CELLS}"
            )
        if len(self.cells) != self.height or any(len(r) != self.width for r in self.cells):
            raise LayoutError("cells do not match width/height")
        if not self.start_states:
            raise LayoutError("layout has no start state")
        for r, c in self.start_states:
            if not self.in_bounds(r, c) or self.cells[r][c] != CellKind.EMPTY:
                raise LayoutError(f"start state {(r, c)} is not an empty cell")
        if not any(k == CellKind.GOAL for row in self.cells for k in row):
            raise LayoutError("layout has no goal cell")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def kind(self, row: int, col: int) -> CellKind:
        return self.cells[row][col]

    def index(self, row: int, col: int) -> int:
        return row * self.width + col

    def position(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.n_cells:
            raise LayoutError(f"cell index {index} out of range")
        return divmod(index, self.width)

    def is_terminal_cell(self, row: int, col: int) -> bool:
        return self.cells[row][col] in (CellKind.GOAL, CellKind.LAVA)

    def cells_of(self, kind: CellKind) -> list[tuple[int, int]]:
        return [
            (r, c)
            for r in range(self.height)
            for c in range(self.width)
            if self.cells[r][c] == kind
        ]

    def state(self, row: int, col: int) -> GridState:
        if not self.in_bounds(row, col):
            raise LayoutError(f"position {(row, col)} outside the grid")
        return GridState(row, col, self.is_terminal_cell(row, col))

    def state_from_index(self, index: int) -> GridState:
        return self.state(*self.position(index))

    def to_text(self) -> str:
        starts = set(self.start_states)
        lines = []
        for r in range(self.height):
            lines.append(
                "".join(
                    "S" if (r, c) in starts else _KIND_TO_CHAR[self.cells[r][c]]
                    for c in range(self.width)
                )
            )
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GridState:
    row: int
    col: int
    terminal: bool = False


def parse_layout(text: str) -> GridLayout:
    """Parse a character-map layout ('.', '#', 'G', 'L', 'S' per cell)."""
    lines = text.splitlines()
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise LayoutError("line 1: empty layout")
    width = len(lines[0])
    cells = []
    starts = []
    for r, line in enumerate(lines):
        if len(line) != width:
            raise LayoutError(
                f"line {r + 1}: row has {len(line)} cells, expected {width} (ragged rows)"
            )
        row = []
        for c, ch in enumerate(line):
            if ch not in _CHAR_TO_KIND:
                raise LayoutError(f"line {r + 1}, column {c + 1}: unknown character {ch!r}")
            row.append(_CHAR_TO_KIND[ch])
            if ch == "S":
                starts.append((r, c))
        cells.append(tuple(row))
    if not any(k == CellKind.GOAL for row in cells for k in row):
        raise LayoutError(f"line {len(lines)}: layout has no goal ('G')")
    if not starts:
        raise LayoutError(f"line {len(lines)}: layout has no start ('S')")
    return GridLayout(width, len(lines), tuple(cells), tuple(starts))


def load_layout(path: str | Path) -> GridLayout:
    return parse_layout(Path(path).read_text(encoding="utf-8"))


def default_layout_text() -> str:
    return resources.files("trajattr").joinpath("assets/default_7x7.txt").read_text("utf-8")


def default_layout() -> GridLayout:
    return parse_layout(default_layout_text())


def next_position(layout: GridLayout, row: int, col: int, action: int) -> tuple[int, int]:
    dr, dc = MOVES[Action(action)]
    nr, nc = row + dr, col + dc
    if not layout.in_bounds(nr, nc) or layout.kind(nr, nc) == CellKind.WALL:
        return row, col
    return nr, nc


def step(layout: GridLayout, s: GridState, a: int) -> tuple[GridState, float, bool]:
    """Apply action ``a`` in state ``s``; returns (next_state, reward, done)."""
    if s.terminal or layout.is_terminal_cell(s.row, s.col):
        raise ContractViolation(f"step called from terminal state {(s.row, s.col)}")
    if a not in (0, 1, 2, 3):
        raise ContractViolation(f"invalid action {a!r}")
    nr, nc = next_position(layout, s.row, s.col, a)
    kind = layout.kind(nr, nc)
    if kind == CellKind.GOAL:
        return GridState(nr, nc, True), GOAL_REWARD, True
    if kind == CellKind.LAVA:
        return GridState(nr, nc, True), LAVA_REWARD, True
    return GridState(nr, nc, False), STEP_REWARD, False


def reachable_states(layout: GridLayout) -> list[tuple[int, int]]:
    """All cells reachable from any start state, in row-major order."""
    seen = set(layout.start_states)
    queue = deque(layout.start_states)
    while queue:
        r, c = queue.popleft()
        if layout.is_terminal_cell(r, c):
            continue
        for a in Action:
            nxt = next_position(layout, r, c, a)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return sorted(seen)


def goal_distances(layout: GridLayout) -> dict[tuple[int, int], int]:
    """BFS step counts to the nearest goal, never passing through lava."""
    dist = {g: 0 for g in layout.cells_of(CellKind.GOAL)}
    queue = deque(dist)
    while queue:
        r, c = queue.popleft()
        for dr, dc in MOVES.values():
            pr, pc = r + dr, c + dc
            if (pr, pc) in dist or not layout.in_bounds(pr, pc):
                continue
            if layout.kind(pr, pc) != CellKind.EMPTY:
                continue
            dist[(pr, pc)] = dist[(r, c)] + 1
            queue.append((pr, pc))
    return dist
