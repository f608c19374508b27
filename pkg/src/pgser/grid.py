"""Deterministic gridworlds: open rooms, four rooms, and disconnected islands.

States are the non-wall cells in row-major order; the goal achieved by a
state is its own cell index. Actions are ``UP, DOWN, LEFT, RIGHT`` and a
blocked move leaves the agent in place.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from pgser.core import TabularEnv

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTION_DELTAS = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}
ACTION_NAMES = ("up", "down", "left", "right")
VARIANTS = ("open", "four_rooms", "islands")

FOUR_ROOMS_LAYOUT = (
    "     #     ",
    "     #     ",
    "           ",
    "     #     ",
    "     #     ",
    "# ####     ",
    "     ### ##",
    "     #     ",
    "     #     ",
    "           ",
    "     #     ",
)


class GridSpecError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    walls: frozenset = field(default_factory=frozenset)
    variant: str = "open"

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "variant": self.variant,
            "walls": [list(c) for c in sorted(self.walls)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            walls=frozenset((int(x), int(y)) for x, y in d.get("walls", [])),
            variant=str(d.get("variant", "open")),
        )


def open_spec(width: int = 5, height: int = 5) -> GridSpec:
    return GridSpec(width, height, frozenset(), "open")


def four_rooms_spec() -> GridSpec:
    walls = frozenset(
        (x, y)
        for y, row in enumerate(FOUR_ROOMS_LAYOUT)
        for x, ch in enumerate(row)
        if ch == "#"
    )
    return GridSpec(11, 11, walls, "four_rooms")


def islands_spec(width: int = 9, height: int = 9, wall_column: int | None = None) -> GridSpec:
    """Grid split by one full-height wall column into two islands."""
    col = width // 2 if wall_column is None else wall_column
    walls = frozenset((col, y) for y in range(height))
    return GridSpec(width, height, walls, "islands")


class GridEnv(TabularEnv):
    """A :class:`TabularEnv` built from a :class:`GridSpec`."""

    def __init__(self, spec: GridSpec, next_state, cells, h_max: int):
        self.spec = spec
        self.cells = cells
        self._index = {c: i for i, c in enumerate(cells)}
        n = len(cells)
        super().__init__(
            next_state=next_state,
            state_goal=np.arange(n),
            num_goals=n,
            h_max=h_max,
            name=spec.variant,
        )

    def state_of(self, cell: tuple[int, int]) -> int:
        return self._index[tuple(cell)]

    def cell_of(self, s: int) -> tuple[int, int]:
        return self.cells[s]


def _components(next_state: np.ndarray) -> list[set[int]]:
    n = next_state.shape[0]
    seen = np.zeros(n, dtype=bool)
    comps = []
    for root in range(n):
        if seen[root]:
            continue
        comp = {root}
        seen[root] = True
        queue = deque([root])
        while queue:
            s = queue.popleft()
            for s2 in next_state[s]:
                if not seen[s2]:
                    seen[s2] = True
                    comp.add(int(s2))
                    queue.append(int(s2))
        comps.append(comp)
    return comps


def build_env(spec: GridSpec, h_max: int = 50) -> GridEnv:
    """Construct the environment and check the variant's connectivity contract."""
    if spec.variant not in VARIANTS:
        raise GridSpecError(f"unknown variant {spec.variant!r}")
    if spec.width < 1 or spec.height < 1 or spec.width * spec.height < 4:
        raise GridSpecError("grid must have at least 4 cells")
    for x, y in spec.walls:
        if not (0 <= x < spec.width and 0 <= y < spec.height):
            raise GridSpecError(f"wall {(x, y)} lies outside the grid")

    cells = [
        (x, y)
        for y in range(spec.height)
        for x in range(spec.width)
        if (x, y) not in spec.walls
    ]
    if len(cells) < 2:
        raise GridSpecError("grid needs at least two free cells")
    index = {c: i for i, c in enumerate(cells)}
    table = np.empty((len(cells), len(ACTION_DELTAS)), dtype=np.int64)
    for i, (x, y) in enumerate(cells):
        for a, (dx, dy) in ACTION_DELTAS.items():
            table[i, a] = index.get((x + dx, y + dy), i)

    n_comp = len(_components(table))
    if spec.variant == "islands" and n_comp < 2:
        raise GridSpecError("islands variant must have at least two components")
    if spec.variant != "islands" and n_comp != 1:
        raise GridSpecError(f"{spec.variant} variant must be connected, found {n_comp} components")
    return GridEnv(spec, table, cells, h_max)


def step(env: TabularEnv, s: int, a: int) -> int:
    return env.step(s, a)
