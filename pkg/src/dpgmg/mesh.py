"""Hierarchical quadrilateral meshes of the unit square.

Elements are cells of a quadtree rooted at (0, 1)^2 and are keyed by
``(level, i, j)``: the square ``[i h, (i+1) h] x [j h, (j+1) h]`` with
``h = 2**-level``.  Coordinates are kept as integers on a lattice of
spacing ``2**-LMAX`` so that every geometric test is exact.

Meshes are immutable.  :func:`refine` returns a new mesh which remembers
its parent and the marks that produced it.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)

LMAX = 30
SCALE = 1 << LMAX

Key = tuple  # (level, i, j)

# side -> (di, dj) step to the neighbouring cell
SIDE_STEP = ((0, -1), (1, 0), (0, 1), (-1, 0))


class InvalidOrder(ValueError):
    pass


class OrderCapReached(UserWarning):
    pass


class AllZeroIndicators(ValueError):
    pass


def cell_size(level: int) -> int:
    return 1 << (LMAX - level)


def cell_box(key: Key) -> tuple[int, int, int, int]:
    """Integer (x0, y0, x1, y1) of a quadtree cell."""
    level, i, j = key
    s = cell_size(level)
    return i * s, j * s, (i + 1) * s, (j + 1) * s


def children(key: Key) -> list[Key]:
    level, i, j = key
    return [(level + 1, 2 * i + a, 2 * j + b) for b in (0, 1) for a in (0, 1)]


def parent(key: Key) -> Key:
    level, i, j = key
    return (level - 1, i >> 1, j >> 1)


def side_segment(key: Key, side: int) -> tuple:
    """Geometric edge key of one side: ('h', Y, X0, X1) or ('v', X, Y0, Y1)."""
    x0, y0, x1, y1 = cell_box(key)
    if side == 0:
        return ("h", y0, x0, x1)
    if side == 1:
        return ("v", x1, y0, y1)
    if side == 2:
        return ("h", y1, x0, x1)
    return ("v", x0, y0, y1)


def segment_length(seg: tuple) -> float:
    return (seg[3] - seg[2]) / SCALE


def segment_point(seg: tuple, t) -> np.ndarray:
    """Physical points at edge parameters t in [-1, 1], shape (n, 2)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a, b = seg[2] / SCALE, seg[3] / SCALE
    s = a + 0.5 * (t + 1.0) * (b - a)
    c = np.full_like(s, seg[1] / SCALE)
    return np.column_stack([s, c]) if seg[0] == "h" else np.column_stack([c, s])


@dataclass(frozen=True)
class Element:
    id: int
    key: Key
    order: int

    @property
    def level(self) -> int:
        return self.key[0]

    @property
    def h(self) -> float:
        return 2.0 ** -self.key[0]

    @property
    def origin(self) -> tuple[float, float]:
        _, i, j = self.key
        return i * self.h, j * self.h

    @property
    def max_edge(self) -> float:
        return self.h


@dataclass(frozen=True)
class Side:
    """One side of an active element.

    kind is 'boundary', 'regular' (same-level neighbour), 'master' (two
    finer neighbours) or 'constrained' (half of a coarser neighbour's side).
    ``edge`` is the unconstrained edge carrying the DOFs: the side itself,
    or the coarser neighbour's full side for constrained sides, in which
    case ``half`` says which half (0 = lower parameter) this side covers.
    """

    kind: str
    edge: tuple
    half: int = -1


@dataclass(frozen=True)
class Mesh:
    leaves: Mapping[Key, int]
    p_max: int = 5
    parent: "Mesh | None" = field(default=None, repr=False, compare=False)
    marks: tuple = field(default=(), repr=False, compare=False)

    # ---- element access -------------------------------------------------
    @cached_property
    def keys(self) -> list[Key]:
        return sorted(self.leaves)

    @cached_property
    def elements(self) -> list[Element]:
        return [Element(n, k, self.leaves[k]) for n, k in enumerate(self.keys)]

    @cached_property
    def index(self) -> dict[Key, int]:
        return {k: n for n, k in enumerate(self.keys)}

    def __len__(self) -> int:
        return len(self.leaves)

    @property
    def orders(self) -> np.ndarray:
        return np.array([self.leaves[k] for k in self.keys])

    def find_leaf(self, key: Key) -> Key | None:
        """The active element equal to or containing the cell ``key``."""
        k = key
        while k[0] >= 0:
            if k in self.leaves:
                return k
            if k[0] == 0:
                break
            k = parent(k)
        return None

    def leaf_at(self, X: int, Y: int) -> Key:
        """Active element containing the integer point (X, Y) (half-open cells)."""
        X = min(max(X, 0), SCALE - 1)
        Y = min(max(Y, 0), SCALE - 1)
        for level in range(0, LMAX + 1):
            s = cell_size(level)
            k = (level, X // s, Y // s)
            if k in self.leaves:
                return k
        raise KeyError((X, Y))

    # ---- topology ------------------------------------------------------
    def neighbour(self, key: Key, side: int) -> tuple[str, Key | None]:
        level, i, j = key
        di, dj = SIDE_STEP[side]
        n = 1 << level
        ni, nj = i + di, j + dj
        if not (0 <= ni < n and 0 <= nj < n):
            return "boundary", None
        cell = (level, ni, nj)
        if cell in self.leaves:
            return "regular", cell
        leaf = self.find_leaf(cell)
        if leaf is not None:
            return "coarser", leaf
        return "finer", cell

    @cached_property
    def sides(self) -> list[tuple[Side, Side, Side, Side]]:
        out = []
        for key in self.keys:
            row = []
            for s in range(4):
                kind, nb = self.neighbour(key, s)
                seg = side_segment(key, s)
                if kind == "boundary":
                    row.append(Side("boundary", seg))
                elif kind == "regular":
                    row.append(Side("regular", seg))
                elif kind == "finer":
                    row.append(Side("master", seg))
                else:
                    big = side_segment(nb, (s + 2) % 4)
                    half = 0 if seg[2] == big[2] else 1
                    row.append(Side("constrained", big, half))
            out.append(tuple(row))
        return out

    @cached_property
    def edges(self) -> dict[tuple, dict]:
        """Unconstrained skeleton edges: segment -> {'boundary', 'order'}."""
        edges: dict[tuple, dict] = {}
        for el, sides in zip(self.elements, self.sides):
            for sd in sides:
                e = edges.setdefault(sd.edge, {"boundary": sd.kind == "boundary", "order": 0})
                e["order"] = max(e["order"], el.order)
        return dict(sorted(edges.items()))

    @cached_property
    def hanging(self) -> dict[tuple[int, int], tuple]:
        """Hanging vertices -> the master edge whose midpoint they are."""
        out = {}
        for sides in self.sides:
            for sd in sides:
                if sd.kind == "constrained":
                    seg = sd.edge
                    mid = (seg[2] + seg[3]) // 2
                    pt = (mid, seg[1]) if seg[0] == "h" else (seg[1], mid)
                    out[pt] = seg
        return out

    @cached_property
    def vertices(self) -> list[tuple[int, int]]:
        """Regular (unconstrained) vertices, sorted by (Y, X)."""
        pts = set()
        for key in self.keys:
            x0, y0, x1, y1 = cell_box(key)
            pts.update([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
        hang = self.hanging
        return sorted((p for p in pts if p not in hang), key=lambda q: (q[1], q[0]))

    def interior_edges(self) -> list[tuple]:
        return [s for s, e in self.edges.items() if not e["boundary"]]

    def is_one_irregular(self) -> bool:
        for key in self.keys:
            level, i, j = key
            n = 1 << level
            for di, dj in SIDE_STEP:
                ni, nj = i + di, j + dj
                if not (0 <= ni < n and 0 <= nj < n):
                    continue
                leaf = self.find_leaf((level, ni, nj))
                if leaf is not None and leaf[0] < level - 1:
                    return False
        return True

    def history(self) -> list[tuple]:
        """Mark sets from the initial mesh to this one."""
        out = []
        m = self
        while m.parent is not None:
            out.append(m.marks)
            m = m.parent
        return out[::-1]

    def root(self) -> "Mesh":
        m = self
        while m.parent is not None:
            m = m.parent
        return m


def initial_mesh(p0: int = 2, p_max: int = 5) -> Mesh:
    """Single element of order p0 covering the unit square."""
    if p0 < 2:
        raise InvalidOrder(f"initial order must be >= 2, got {p0}")
    if p_max < p0:
        raise InvalidOrder(f"p_max={p_max} below initial order {p0}")
    return Mesh({(0, 0, 0): p0}, p_max=p_max)


def uniform_marks(mesh: Mesh, kind: str = "h") -> dict[int, str]:
    return {el.id: kind for el in mesh.elements}


def refine(mesh: Mesh, marked: Mapping[int, str] | Iterable[int]) -> Mesh:
    """Refine marked elements ('h' splits into four, 'p' raises the order).

    A p-mark on an element already at ``p_max`` falls back to h.  Closure
    h-refinements restore one-irregularity.  Element ids refer to ``mesh``.
    """
    if not isinstance(marked, Mapping):
        marked = {int(e): "h" for e in marked}
    leaves = dict(mesh.leaves)
    keys = mesh.keys
    to_split = []
    for eid, kind in sorted(marked.items()):
        if not 0 <= eid < len(keys):
            raise IndexError(f"element {eid} is not active")
        key = keys[eid]
        if kind == "p":
            if leaves[key] >= mesh.p_max:
                warnings.warn(f"element {eid} at p_max={mesh.p_max}: p-mark becomes h",
                              OrderCapReached, stacklevel=2)
                to_split.append(key)
            else:
                leaves[key] += 1
        elif kind == "h":
            to_split.append(key)
        else:
            raise ValueError(f"unknown refinement kind {kind!r}")

    def split(key):
        p = leaves.pop(key)
        for c in children(key):
            leaves[c] = p

    def find(cell):
        k = cell
        while True:
            if k in leaves:
                return k
            if k[0] == 0:
                return None
            k = parent(k)

    work = []
    for key in to_split:
        if key in leaves:
            split(key)
            work.extend(children(key))
    # closure: a leaf at level l needs every side neighbour at level >= l - 1
    while work:
        key = work.pop()
        if key not in leaves:
            continue
        level, i, j = key
        n = 1 << level
        for di, dj in SIDE_STEP:
            ni, nj = i + di, j + dj
            if not (0 <= ni < n and 0 <= nj < n):
                continue
            leaf = find((level, ni, nj))
            if leaf is not None and leaf[0] < level - 1:
                split(leaf)
                work.extend(children(leaf))
                work.append(key)
    frozen = tuple(sorted(dict(marked).items()))
    return Mesh(leaves, p_max=mesh.p_max, parent=mesh, marks=frozen)


def replay(history: Iterable, p0: int = 2, p_max: int = 5) -> Mesh:
    mesh = initial_mesh(p0, p_max)
    for marks in history:
        mesh = refine(mesh, dict(marks))
    return mesh


def dorfler_mark(indicators, theta: float = 0.5) -> list[int]:
    """Minimal set of elements carrying a ``theta`` fraction of the total.

    ``indicators`` are per-element eta_K^2 values.  Elements are taken in
    descending order, ties by lower id.
    """
    eta = np.asarray(indicators, dtype=float)
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if np.any(eta < 0):
        raise ValueError("indicators must be non-negative")
    total = eta.sum()
    if total <= 0:
        raise AllZeroIndicators("all error indicators are zero")
    order = sorted(range(eta.size), key=lambda k: (-eta[k], k))
    acc = 0.0
    chosen = []
    for k in order:
        chosen.append(k)
        acc += eta[k]
        if acc >= theta * total:
            break
    return sorted(chosen)


def wavelength(omega: float, wavespeed: float = 1.0) -> float:
    if omega <= 0:
        raise ValueError("omega must be positive")
    return 2.0 * math.pi * wavespeed / omega


def wavelength_edge_test(element: Element | float, omega: float, wavespeed: float = 1.0) -> bool:
    """True if the element's longest edge is at least half a wavelength
    (the element should be h-refined rather than p-refined)."""
    h = element.max_edge if isinstance(element, Element) else float(element)
    return h >= 0.5 * wavelength(omega, wavespeed)
