"""Node-centred grids on the unit square and the unit disk.

Nodes are indexed ``[i, j]`` with ``x = x0 + i*h`` and ``y = y0 + j*h``.
Every field in the package is a ``(n_cells + 1, n_cells + 1)`` array over this
lattice; nodes outside the discrete domain carry zeros.

Boundary nodes are ordered counter-clockwise by an arc-length parameter ``s``:

* square: ``s`` starts at the corner (0, 0) and runs along the bottom, right,
  top and left edges, so ``s`` lies in ``[0, 4)``;
* disk: ``s`` is the polar angle of the node in ``[0, 2*pi)``, i.e. arc length
  on the unit circle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

SHAPES = ("square", "disk")


@dataclass(frozen=True, eq=False)
class DomainGrid:
    shape: str
    n_cells: int

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown domain shape {self.shape!r}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 4:
            raise ValueError("n_cells must be an integer >= 4")
        if self.shape == "disk" and self.n_cells % 2:
            raise ValueError("disk grids need an even n_cells so the origin is a node")

    # ------------------------------------------------------------------ lattice
    @property
    def h(self) -> float:
        return (1.0 if self.shape == "square" else 2.0) / self.n_cells

    @property
    def origin(self) -> tuple[float, float]:
        return (0.0, 0.0) if self.shape == "square" else (-1.0, -1.0)

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @property
    def perimeter(self) -> float:
        return 4.0 if self.shape == "square" else 2.0 * np.pi

    @property
    def diameter(self) -> float:
        return np.sqrt(2.0) if self.shape == "square" else 2.0

    @cached_property
    def axis(self) -> np.ndarray:
        x0 = self.origin[0]
        return x0 + self.h * np.arange(self.n_nodes)

    @cached_property
    def x(self) -> np.ndarray:
        return np.broadcast_to(self.axis[:, None], (self.n_nodes, self.n_nodes))

    @cached_property
    def y(self) -> np.ndarray:
        return np.broadcast_to(self.axis[None, :], (self.n_nodes, self.n_nodes))

    # ------------------------------------------------------------------ masks
    @cached_property
    def interior(self) -> np.ndarray:
        """Nodes where the PDE is imposed (unknowns of the forward solve)."""
        n = self.n_nodes
        if self.shape == "square":
            m = np.zeros((n, n), dtype=bool)
            m[1:-1, 1:-1] = True
        else:
            m = self.x**2 + self.y**2 < (1.0 - self.h / 2) ** 2
        m.setflags(write=False)
        return m

    @cached_property
    def boundary(self) -> np.ndarray:
        m = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        idx = self.boundary_index
        m[idx[:, 0], idx[:, 1]] = True
        m.setflags(write=False)
        return m

    @cached_property
    def domain(self) -> np.ndarray:
        """Interior plus boundary nodes: every node that carries a value."""
        m = self.interior | self.boundary
        m.setflags(write=False)
        return m

    @cached_property
    def _boundary_data(self):
        n = self.n_cells
        h = self.h
        if self.shape == "square":
            ii, jj, ss, nn = [], [], [], []
            for i in range(n):  # bottom, left to right
                ii.append(i); jj.append(0); ss.append(i * h); nn.append((0.0, -1.0))
            for j in range(n):  # right, bottom to top
                ii.append(n); jj.append(j); ss.append(1.0 + j * h); nn.append((1.0, 0.0))
            for i in range(n, 0, -1):  # top, right to left
                ii.append(i); jj.append(n); ss.append(2.0 + (n - i) * h); nn.append((0.0, 1.0))
            for j in range(n, 0, -1):  # left, top to bottom
                ii.append(0); jj.append(j); ss.append(3.0 + (n - j) * h); nn.append((-1.0, 0.0))
            index = np.array([ii, jj]).T
            s = np.array(ss)
            normal = np.array(nn)
            r = 1.0 / np.sqrt(2.0)
            corners = {(0, 0): (-r, -r), (n, 0): (r, -r), (n, n): (r, r), (0, n): (-r, r)}
            for k, (i, j) in enumerate(index):
                if (i, j) in corners:
                    normal[k] = corners[(i, j)]
        else:
            inner = self.interior
            nb = np.zeros_like(inner)
            nb[1:, :] |= inner[:-1, :]
            nb[:-1, :] |= inner[1:, :]
            nb[:, 1:] |= inner[:, :-1]
            nb[:, :-1] |= inner[:, 1:]
            ring = nb & ~inner
            i, j = np.nonzero(ring)
            theta = np.mod(np.arctan2(self.y[i, j], self.x[i, j]), 2 * np.pi)
            order = np.argsort(theta, kind="stable")
            index = np.stack([i[order], j[order]], axis=1)
            s = theta[order]
            normal = np.stack([np.cos(s), np.sin(s)], axis=1)
        if np.any(np.diff(s) <= 0):
            raise RuntimeError("boundary parameters are not strictly increasing")
        return index, s, normal

    @property
    def boundary_index(self) -> np.ndarray:
        return self._boundary_data[0]

    @property
    def boundary_s(self) -> np.ndarray:
        return self._boundary_data[1]

    @property
    def boundary_normal(self) -> np.ndarray:
        return self._boundary_data[2]

    # ------------------------------------------------------------------ geometry
    def contains(self, points) -> np.ndarray:
        """Analytic membership in the closed domain."""
        p = np.asarray(points, dtype=float)
        return self.boundary_distance(p) <= 0.0

    def boundary_distance(self, points) -> np.ndarray:
        """Signed distance to the boundary, negative inside."""
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        if self.shape == "disk":
            return np.hypot(x, y) - 1.0
        inside = np.minimum(np.minimum(x, 1.0 - x), np.minimum(y, 1.0 - y))
        dx = np.maximum(np.maximum(-x, x - 1.0), 0.0)
        dy = np.maximum(np.maximum(-y, y - 1.0), 0.0)
        outside = np.hypot(dx, dy)
        return np.where(inside >= 0.0, -inside, outside)

    def boundary_param(self, points) -> np.ndarray:
        """Arc-length parameter of (near-)boundary points."""
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        if self.shape == "disk":
            return np.mod(np.arctan2(y, x), 2 * np.pi)
        x = np.clip(x, 0.0, 1.0)
        y = np.clip(y, 0.0, 1.0)
        d = np.stack([y, 1.0 - x, 1.0 - y, x], axis=-1)  # bottom, right, top, left
        edge = np.argmin(d, axis=-1)
        s = np.choose(edge, [x, 1.0 + y, 2.0 + (1.0 - x), 3.0 + (1.0 - y)])
        return np.mod(s, 4.0)

    def boundary_point(self, s) -> np.ndarray:
        """Point of the analytic boundary at arc-length parameter ``s``."""
        s = np.mod(np.asarray(s, dtype=float), self.perimeter)
        if self.shape == "disk":
            return np.stack([np.cos(s), np.sin(s)], axis=-1)
        edge = np.minimum(np.floor(s).astype(int), 3)
        t = s - edge
        x = np.choose(edge, [t, np.ones_like(t), 1.0 - t, np.zeros_like(t)])
        y = np.choose(edge, [np.zeros_like(t), t, np.ones_like(t), 1.0 - t])
        return np.stack([x, y], axis=-1)

    def outward_normal(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if self.shape == "disk":
            r = np.hypot(p[..., 0], p[..., 1])
            r = np.where(r == 0, 1.0, r)
            return p / r[..., None]
        s = self.boundary_param(p)
        edge = np.minimum(np.floor(s).astype(int), 3)
        table = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        return table[edge]

    def node_points(self, mask=None) -> np.ndarray:
        mask = self.domain if mask is None else mask
        return np.stack([self.x[mask], self.y[mask]], axis=1)

    def __repr__(self):
        return f"DomainGrid({self.shape!r}, n_cells={self.n_cells})"

    def __eq__(self, other):
        return isinstance(other, DomainGrid) and (self.shape, self.n_cells) == (other.shape, other.n_cells)

    def __hash__(self):
        return hash((self.shape, self.n_cells))


@dataclass(frozen=True)
class BoundaryArcSet:
    """Finite union of half-open arcs ``[a, b)`` of the boundary parameter.

    Arcs may wrap around the origin of the parameter (``b`` larger than the
    perimeter). An arc whose length equals the perimeter is the whole boundary.
    """

    arcs: tuple[tuple[float, float], ...]
    perimeter: float

    def __post_init__(self):
        arcs = []
        for a, b in self.arcs:
            a, b = float(a), float(b)
            if not b > a:
                raise ValueError(f"empty arc [{a}, {b})")
            if b - a > self.perimeter + 1e-12:
                raise ValueError("arc longer than the boundary")
            a0 = np.mod(a, self.perimeter)
            arcs.append((a0, a0 + (b - a)))
        object.__setattr__(self, "arcs", tuple(sorted(arcs)))
        if not self.is_full:
            for k, (a1, b1) in enumerate(self.arcs):
                for a2, b2 in self.arcs[k + 1:]:
                    if _cyclic_overlap(a1, b1, a2, b2, self.perimeter):
                        raise ValueError("arcs must be pairwise disjoint")

    @classmethod
    def full(cls, grid: DomainGrid) -> "BoundaryArcSet":
        return cls(((0.0, grid.perimeter),), grid.perimeter)

    @classmethod
    def from_arcs(cls, grid: DomainGrid, arcs) -> "BoundaryArcSet":
        return cls(tuple((float(a), float(b)) for a, b in arcs), grid.perimeter)

    @property
    def is_full(self) -> bool:
        return len(self.arcs) == 1 and self.arcs[0][1] - self.arcs[0][0] >= self.perimeter - 1e-12

    @property
    def length(self) -> float:
        return sum(b - a for a, b in self.arcs)

    def contains(self, s, margin: float = 0.0) -> np.ndarray:
        """Membership of parameters ``s`` in the arcs shrunk by ``margin``."""
        s = np.mod(np.asarray(s, dtype=float), self.perimeter)
        if self.is_full:
            return np.ones(s.shape, dtype=bool)
        out = np.zeros(s.shape, dtype=bool)
        for a, b in self.arcs:
            lo, hi = a + margin, b - margin
            if hi <= lo:
                continue
            for shift in (0.0, self.perimeter):
                out |= (s + shift >= lo) & (s + shift < hi)
        return out

    def shrink(self, margin: float) -> "BoundaryArcSet":
        if self.is_full or margin == 0:
            return self
        arcs = [(a + margin, b - margin) for a, b in self.arcs if b - a > 2 * margin]
        if not arcs:
            raise ValueError("arc set vanishes under the requested margin")
        return BoundaryArcSet(tuple(arcs), self.perimeter)

    def compactly_contains(self, other: "BoundaryArcSet", margin: float) -> bool:
        """True when every arc of ``other`` sits inside an arc of ``self`` shrunk by ``margin``."""
        if self.is_full:
            return True
        if other.is_full:
            return False
        for a, b in other.arcs:
            ok = False
            for A, B in self.arcs:
                for shift in (0.0, self.perimeter, -self.perimeter):
                    if a + shift >= A + margin - 1e-12 and b + shift <= B - margin + 1e-12:
                        ok = True
            if not ok:
                return False
        return True

    def to_list(self) -> list[list[float]]:
        return [[a, b] for a, b in self.arcs]


def _cyclic_overlap(a1, b1, a2, b2, period):
    for shift in (-period, 0.0, period):
        if a1 < b2 + shift and a2 + shift < b1:
            return True
    return False


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Node subset of the grid interior with a provenance tag.

    ``side`` is only set for stability regions: per node 0 (none), 1 (``+``),
    2 (``-``) or 3 (both directions usable).
    """

    grid: DomainGrid
    mask: np.ndarray
    kind: str = "custom"
    side: np.ndarray | None = field(default=None)

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != (self.grid.n_nodes, self.grid.n_nodes):
            raise ValueError("mask shape does not match the grid")
        if np.any(m & ~self.grid.interior):
            raise ValueError("region must lie in the grid interior")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        if self.side is not None:
            sd = np.asarray(self.side, dtype=np.int8).copy()
            sd.setflags(write=False)
            object.__setattr__(self, "side", sd)

    @classmethod
    def interior_of(cls, grid: DomainGrid) -> "RegionMask":
        return cls(grid, grid.interior, "custom")

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def measure(self) -> float:
        return self.count * self.grid.h**2

    def __and__(self, other):
        other_mask = other.mask if isinstance(other, RegionMask) else other
        return RegionMask(self.grid, self.mask & other_mask, "custom")

    def issubset(self, other: "RegionMask") -> bool:
        return not np.any(self.mask & ~other.mask)


SIDE_NONE, SIDE_PLUS, SIDE_MINUS, SIDE_BOTH = 0, 1, 2, 3
SIDE_LABELS = {SIDE_NONE: "none", SIDE_PLUS: "+", SIDE_MINUS: "-", SIDE_BOTH: "both"}
