"""Hexagonal tessellation of the service area.

Cells use axial coordinates (q, r) with a flat-top layout. ``cell_size_km`` is
the flat-to-flat width of a cell, which is also the distance between the
centers of two adjacent cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable


class GridError(ValueError):
    """A point or cell lies outside the configured board."""


@dataclass(frozen=True, order=True)
class HexCoord:
    q: int
    r: int

    def __add__(self, other: "HexCoord") -> "HexCoord":
        return HexCoord(self.q + other.q, self.r + other.r)

    def scale(self, k: int) -> "HexCoord":
        return HexCoord(self.q * k, self.r * k)

    def as_tuple(self) -> tuple[int, int]:
        return (self.q, self.r)


# Fixed order; inter-grid action index i (1..6) maps to DIRECTIONS[i - 1].
DIRECTIONS: tuple[HexCoord, ...] = (
    HexCoord(1, 0),
    HexCoord(1, -1),
    HexCoord(0, -1),
    HexCoord(-1, 0),
    HexCoord(-1, 1),
    HexCoord(0, 1),
)

ORIGIN = HexCoord(0, 0)
SQRT3 = math.sqrt(3.0)


def neighbors(h: HexCoord) -> list[HexCoord]:
    return [h + d for d in DIRECTIONS]


def ring(h: HexCoord, radius: int) -> list[HexCoord]:
    """Cells at exactly ``radius`` steps from ``h``, walked in a fixed angular order."""
    if radius == 0:
        return [h]
    out = []
    cur = h + DIRECTIONS[4].scale(radius)
    for i in range(6):
        for _ in range(radius):
            out.append(cur)
            cur = cur + DIRECTIONS[i]
    return out


def two_hop(h: HexCoord) -> list[HexCoord]:
    """Ring 1 (in ``neighbors`` order) followed by ring 2; ``h`` itself excluded."""
    return neighbors(h) + ring(h, 2)


def hex_distance(a: HexCoord, b: HexCoord) -> int:
    dq = a.q - b.q
    dr = a.r - b.r
    return (abs(dq) + abs(dr) + abs(dq + dr)) // 2


def disk(center: HexCoord, radius: int) -> list[HexCoord]:
    """All cells within ``radius`` of ``center``, sorted."""
    cells = []
    for dq in range(-radius, radius + 1):
        for dr in range(max(-radius, -dq - radius), min(radius, -dq + radius) + 1):
            cells.append(HexCoord(center.q + dq, center.r + dr))
    return sorted(cells)


def hex_round(qf: float, rf: float) -> HexCoord:
    # cube rounding: fix the coordinate with the largest rounding error
    sf = -qf - rf
    q, r, s = round(qf), round(rf), round(sf)
    dq, dr, ds = abs(q - qf), abs(r - rf), abs(s - sf)
    if dq > dr and dq > ds:
        q = -r - s
    elif dr > ds:
        r = -q - s
    return HexCoord(int(q), int(r))


@dataclass
class GridIndex:
    """A hexagonal board of ``radius`` cells around the origin.

    ``valid_cells`` are the operable cells (stations may only be placed there);
    it defaults to the whole board.
    """

    radius: int
    cell_size_km: float = 6.0
    valid_cells: frozenset[HexCoord] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.radius < 0:
            raise GridError(f"board radius must be >= 0, got {self.radius}")
        if self.cell_size_km <= 0:
            raise GridError(f"cell_size_km must be > 0, got {self.cell_size_km}")
        if not self.valid_cells:
            self.valid_cells = frozenset(disk(ORIGIN, self.radius))
        else:
            self.valid_cells = frozenset(self.valid_cells)
            bad = [c for c in self.valid_cells if not self.in_bounds(c)]
            if bad:
                raise GridError(f"valid cells outside board radius {self.radius}: {sorted(bad)[:5]}")

    def in_bounds(self, h: HexCoord) -> bool:
        return hex_distance(h, ORIGIN) <= self.radius

    def is_valid(self, h: HexCoord) -> bool:
        return h in self.valid_cells

    def cells(self) -> list[HexCoord]:
        return disk(ORIGIN, self.radius)

    def sorted_valid_cells(self) -> list[HexCoord]:
        return sorted(self.valid_cells)


def hex_center(h: HexCoord, idx: GridIndex) -> tuple[float, float]:
    w = idx.cell_size_km
    return (0.5 * SQRT3 * w * h.q, w * (h.r + 0.5 * h.q))


def nearest_cell(x_km: float, y_km: float, cell_size_km: float) -> HexCoord:
    """Cell containing the point on the unbounded plane."""
    qf = 2.0 * x_km / (SQRT3 * cell_size_km)
    rf = y_km / cell_size_km - 0.5 * qf
    return hex_round(qf, rf)


def point_to_hex(x_km: float, y_km: float, idx: GridIndex) -> HexCoord:
    h = nearest_cell(x_km, y_km, idx.cell_size_km)
    if not idx.in_bounds(h):
        raise GridError(f"point ({x_km:.3f}, {y_km:.3f}) km falls in cell {h.as_tuple()} outside board radius {idx.radius}")
    return h


def euclidean(a: Iterable[float], b: Iterable[float]) -> float:
    ax, ay = a
    bx, by = b
    return math.hypot(ax - bx, ay - by)
