"""ASCII and SVG renderings of grid trajectories."""
from __future__ import annotations

from xml.sax.saxutils import escape

from .data import Trajectory
from .gridworld import ARROWS, Action, CellKind, GridLayout

_BASE = {CellKind.EMPTY: ".", CellKind.WALL: "#", CellKind.GOAL: "G", CellKind.LAVA: "L"}
_FILL = {CellKind.EMPTY: "#ffffff", CellKind.WALL: "#9e9e9e", CellKind.GOAL: "#4caf50", CellKind.LAVA: "#e53935"}
CELL_W = 5


def _first_visits(traj: Trajectory) -> dict[int, tuple[int, int]]:
    visits: dict[int, tuple[int, int]] = {}
    for k, (o, a) in enumerate(zip(traj.obs, traj.act)):
        visits.setdefault(o, (k, a))
    return visits


def render_ascii(layout: GridLayout, traj: Trajectory, highlight: int | None = None) -> str:
    """Grid with an arrow and 0-indexed step number on each visited cell.

    A revisited cell shows its first visit. The highlighted cell is wrapped in
    brackets.
    """
    visits = _first_visits(traj)
    lines = []
    for r in range(layout.height):
        cells = []
        for c in range(layout.width):
            idx = layout.index(r, c)
            if idx in visits:
                k, a = visits[idx]
                text = f"{ARROWS[Action(a)]}{k}"
            else:
                text = _BASE[layout.kind(r, c)]
            if idx == highlight:
                text = f"[{text}]"
            cells.append(text.center(CELL_W))
        lines.append("".join(cells).rstrip())
    path = " ".join(
        f"{k}:{layout.position(o)}{ARROWS[Action(a)]}" for k, (o, a) in enumerate(zip(traj.obs, traj.act))
    )
    lines.append(f"steps: {path}")
    lines.append(f"return: {sum(traj.rew):.1f} over {len(traj)} steps")
    return "\n".join(lines)


def render_svg(layout: GridLayout, traj: Trajectory, highlight: int | None = None, cell: int = 40) -> str:
    visits = _first_visits(traj)
    w, h = layout.width * cell, layout.height * cell
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">'
    ]
    for r in range(layout.height):
        for c in range(layout.width):
            x, y = c * cell, r * cell
            kind = layout.kind(r, c)
            stroke = "#1565c0" if layout.index(r, c) == highlight else "#424242"
            width = 3 if layout.index(r, c) == highlight else 1
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_FILL[kind]}" '
                f'stroke="{stroke}" stroke-width="{width}"/>'
            )
            idx = layout.index(r, c)
            if idx in visits:
                k, a = visits[idx]
                label = escape(f"{ARROWS[Action(a)]}{k}")
                parts.append(
                    f'<text x="{x + cell / 2}" y="{y + cell / 2 + 5}" font-family="monospace" '
                    f'font-size="{cell // 3}" text-anchor="middle">{label}</text>'
                )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
