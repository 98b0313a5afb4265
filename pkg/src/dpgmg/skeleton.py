"""Trace DOFs on the mesh skeleton.

Two trace variables live on the skeleton:

* ``phat`` - continuous H1 trace: one DOF per regular vertex plus
  ``p_e - 1`` bubbles per unconstrained edge of order ``p_e``.
* ``uhat`` - normal flux, Legendre modes ``0 .. p_e - 1`` per interior
  unconstrained edge, measured along the global edge normal (+y for
  horizontal, +x for vertical edges).  Boundary edges carry no flux: the
  impedance relation eliminates it.

Constrained (hanging) sides and vertices own no DOFs; their local values are
linear combinations of the master edge DOFs, obtained recursively, so
multi-level hanging chains resolve automatically.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .mesh import SCALE, Mesh, cell_box, segment_length
from .shape import constraint_coeffs, h1_1d, legendre_1d

VERTEX, BUBBLE, FLUX = 0, 1, 2
# global-normal sign of each side's outward normal
SIDE_SIGN = (-1.0, 1.0, 1.0, -1.0)
# local corners at the ends (t=-1, t=+1) of each side
SIDE_CORNERS = ((0, 1), (1, 2), (3, 2), (0, 3))


@dataclass(frozen=True)
class LocalTraceLayout:
    """Element-local trace layout: 4 corner values, side bubbles, side fluxes."""

    side_orders: tuple[int, int, int, int]
    boundary: tuple[bool, bool, bool, bool]

    @cached_property
    def bubbles(self) -> tuple[np.ndarray, ...]:
        out, k = [], 4
        for p in self.side_orders:
            out.append(np.arange(k, k + p - 1))
            k += p - 1
        return tuple(out)

    @property
    def n_h1(self) -> int:
        return 4 + sum(p - 1 for p in self.side_orders)

    @cached_property
    def fluxes(self) -> tuple[np.ndarray | None, ...]:
        out, k = [], self.n_h1
        for p, b in zip(self.side_orders, self.boundary):
            if b:
                out.append(None)
            else:
                out.append(np.arange(k, k + p))
                k += p
        return tuple(out)

    @property
    def n(self) -> int:
        return self.n_h1 + sum(p for p, b in zip(self.side_orders, self.boundary) if not b)

    def side_h1(self, side: int) -> np.ndarray:
        """Local indices of the 1D H1 coefficients [hat(-1), hat(+1), bubbles] on a side."""
        a, b = SIDE_CORNERS[side]
        return np.concatenate([[a, b], self.bubbles[side]]).astype(int)


def _point(seg: tuple, s: int) -> tuple[int, int]:
    return (s, seg[1]) if seg[0] == "h" else (seg[1], s)


def _midpoint(seg: tuple) -> tuple[int, int]:
    return _point(seg, (seg[2] + seg[3]) // 2)


def _combine(terms):
    """Sum of (coefficient, {dof: value}) pairs into a single dict."""
    out: dict[int, float] = {}
    for c, d in terms:
        if c == 0.0:
            continue
        for k, v in d.items():
            out[k] = out.get(k, 0.0) + c * v
    return out


@lru_cache(maxsize=None)
def _bubble_at_mid(p: int) -> np.ndarray:
    return h1_1d(p, np.array([0.0]))[0][:, 0]


class TraceLayout:
    """Global numbering of the skeleton DOFs of one mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.vertex_dof: dict[tuple[int, int], int] = {}
        self.edge_h1: dict[tuple, np.ndarray] = {}
        self.edge_flux: dict[tuple, np.ndarray] = {}
        kind, entity, mode = [], [], []
        n = 0
        for v in mesh.vertices:
            self.vertex_dof[v] = n
            kind.append(VERTEX)
            entity.append(v)
            mode.append(1)
            n += 1
        for seg, e in mesh.edges.items():
            p = e["order"]
            self.edge_h1[seg] = np.arange(n, n + p - 1)
            kind += [BUBBLE] * (p - 1)
            entity += [seg] * (p - 1)
            mode += list(range(2, p + 1))
            n += p - 1
            if not e["boundary"]:
                self.edge_flux[seg] = np.arange(n, n + p)
                kind += [FLUX] * p
                entity += [seg] * p
                mode += list(range(p))
                n += p
        self.ndof = n
        self.kind = np.array(kind, dtype=int)
        self.entity = entity
        self.mode = np.array(mode, dtype=int)

    # ---- constraint resolution ---------------------------------------------
    def vertex_map(self, pt: tuple[int, int]) -> dict[int, float]:
        if pt in self.vertex_dof:
            return {self.vertex_dof[pt]: 1.0}
        seg = self.mesh.hanging[pt]
        p = self.mesh.edges[seg]["order"]
        mid = _bubble_at_mid(p)
        terms = [(0.5, self.vertex_map(_point(seg, seg[2]))),
                 (0.5, self.vertex_map(_point(seg, seg[3])))]
        terms += [(mid[k], {int(self.edge_h1[seg][k - 2]): 1.0}) for k in range(2, p + 1)]
        return _combine(terms)

    def edge_h1_map(self, seg: tuple) -> list[dict[int, float]]:
        """Global combinations of the 1D H1 coefficients of an unconstrained edge."""
        rows = [self.vertex_map(_point(seg, seg[2])), self.vertex_map(_point(seg, seg[3]))]
        rows += [{int(d): 1.0} for d in self.edge_h1[seg]]
        return rows

    def side_order(self, side) -> int:
        return self.mesh.edges[side.edge]["order"]

    def local_layout(self, eid: int) -> LocalTraceLayout:
        sides = self.mesh.sides[eid]
        return LocalTraceLayout(tuple(self.side_order(s) for s in sides),
                                tuple(s.kind == "boundary" for s in sides))

    @cached_property
    def element_maps(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per element (global dofs g, matrix C) with local = C @ x[g]."""
        out = []
        for el, sides in zip(self.mesh.elements, self.mesh.sides):
            loc = self.local_layout(el.id)
            rows: list[dict[int, float]] = [dict() for _ in range(loc.n)]
            x0, y0, x1, y1 = cell_box(el.key)
            for c, pt in enumerate([(x0, y0), (x1, y0), (x1, y1), (x0, y1)]):
                rows[c] = self.vertex_map(pt)
            for s, sd in enumerate(sides):
                p = loc.side_orders[s]
                if sd.kind == "constrained":
                    cc = constraint_coeffs(p)
                    parent = self.edge_h1_map(sd.edge)
                    tab = cc.h1[sd.half][: p + 1, : p + 1]
                    for k, li in enumerate(loc.bubbles[s]):
                        rows[li] = _combine(zip(tab[k + 2], parent))
                    ftab = cc.flux[sd.half][:p, :p]
                    fl = self.edge_flux[sd.edge]
                    for k, li in enumerate(loc.fluxes[s]):
                        rows[li] = {int(fl[m]): SIDE_SIGN[s] * ftab[k, m]
                                    for m in range(p) if ftab[k, m] != 0.0}
                else:
                    for k, li in enumerate(loc.bubbles[s]):
                        rows[li] = {int(self.edge_h1[sd.edge][k]): 1.0}
                    if loc.fluxes[s] is not None:
                        for k, li in enumerate(loc.fluxes[s]):
                            rows[li] = {int(self.edge_flux[sd.edge][k]): SIDE_SIGN[s]}
            g = np.array(sorted(set().union(*[r.keys() for r in rows])), dtype=int)
            pos = {d: n for n, d in enumerate(g)}
            C = np.zeros((loc.n, g.size))
            for li, r in enumerate(rows):
                for d, v in r.items():
                    C[li, pos[d]] += v
            out.append((g, C))
        return out

    @property
    def n_constrained(self) -> int:
        """Trace DOFs living on hanging vertices and constrained sides."""
        n = len(self.mesh.hanging)
        seen = set()
        for sides in self.mesh.sides:
            for sd in sides:
                if sd.kind == "constrained" and (sd.edge, sd.half) not in seen:
                    seen.add((sd.edge, sd.half))
                    p = self.mesh.edges[sd.edge]["order"]
                    n += (p - 1) + p
        return n

    # ---- evaluation ----------------------------------------------------------
    @cached_property
    def _lines(self) -> dict[tuple, list[tuple]]:
        lines: dict[tuple, list[tuple]] = {}
        for seg in self.mesh.edges:
            lines.setdefault((seg[0], seg[1]), []).append(seg)
        return lines

    def _edge_at(self, orient: str, c: int, s: float) -> tuple:
        """Unconstrained edge on line (orient, c) containing coordinate s (lattice units)."""
        for seg in self._lines[(orient, c)]:
            if seg[2] <= s <= seg[3]:
                return seg
        raise KeyError(f"no skeleton edge through {(orient, c, s)}")

    def _vertex_value(self, x: np.ndarray, pt) -> complex:
        if pt in self.vertex_dof:
            return x[self.vertex_dof[pt]]
        seg = self.mesh.hanging[pt]
        return self._h1_value(x, seg, np.array([0.0]))[0]

    def _h1_value(self, x, seg, t) -> np.ndarray:
        p = self.mesh.edges[seg]["order"]
        phi = h1_1d(p, t)[0]
        coef = [self._vertex_value(x, _point(seg, seg[2])), self._vertex_value(x, _point(seg, seg[3]))]
        coef += list(x[self.edge_h1[seg]])
        return np.asarray(coef) @ phi

    def evaluate(self, x: np.ndarray, orient: str, c: int, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Trace values (phat, uhat along the global normal) at physical
        coordinates ``s`` (floats) along the skeleton line (orient, c)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        ph = np.zeros(s.size, dtype=complex)
        un = np.zeros(s.size, dtype=complex)
        for n, si in enumerate(s):
            seg = self._edge_at(orient, c, si * SCALE)
            a, b = seg[2] / SCALE, seg[3] / SCALE
            t = np.array([2.0 * (si - a) / (b - a) - 1.0])
            ph[n] = self._h1_value(x, seg, t)[0]
            if seg in self.edge_flux:
                p = self.mesh.edges[seg]["order"]
                un[n] = x[self.edge_flux[seg]] @ legendre_1d(p - 1, t)[:, 0]
        return ph, un


@dataclass(frozen=True)
class VertexPatch:
    anchor: tuple[int, int]
    dofs: np.ndarray


def coarse_parent_map(coarse: Mesh, fine: Mesh) -> np.ndarray:
    """For each fine element, the index of the coarse element containing it."""
    out = np.empty(len(fine), dtype=int)
    for n, key in enumerate(fine.keys):
        leaf = coarse.find_leaf(key)
        if leaf is None:
            raise ValueError(f"fine element {key} is not inside the coarse mesh")
        out[n] = coarse.index[leaf]
    return out


def coarse_element_dofs(coarse: Mesh, fine_layout: TraceLayout) -> list[np.ndarray]:
    """Fine skeleton DOFs touched by the fine elements inside each coarse element."""
    owner = coarse_parent_map(coarse, fine_layout.mesh)
    sets: list[list[np.ndarray]] = [[] for _ in range(len(coarse))]
    for fe, (g, _) in enumerate(fine_layout.element_maps):
        sets[owner[fe]].append(g)
    return [np.unique(np.concatenate(s)) for s in sets]


def vertex_patches(coarse: Mesh, fine_layout: TraceLayout, dofs: np.ndarray | None = None) -> list[VertexPatch]:
    """One patch per coarse vertex: the (macro) fine DOFs supported on the
    closure of the coarse elements sharing that vertex.

    ``dofs`` restricts the patches to a subset of the fine DOFs (the macro
    grid); by default all fine DOFs are used.
    """
    per_elem = coarse_element_dofs(coarse, fine_layout)
    if dofs is not None:
        keep = np.zeros(fine_layout.ndof, dtype=bool)
        keep[dofs] = True
        per_elem = [d[keep[d]] for d in per_elem]
    around: dict[tuple[int, int], list[int]] = {}
    for n, key in enumerate(coarse.keys):
        x0, y0, x1, y1 = cell_box(key)
        for pt in ((x0, y0), (x1, y0), (x1, y1), (x0, y1)):
            around.setdefault(pt, []).append(n)
    patches = []
    for pt in sorted(around, key=lambda q: (q[1], q[0])):
        d = np.unique(np.concatenate([per_elem[n] for n in around[pt]]))
        if d.size:
            patches.append(VertexPatch(pt, d))
    return patches


def on_coarse_skeleton(coarse: Mesh, fine_layout: TraceLayout) -> np.ndarray:
    """Boolean mask of fine DOFs whose supporting entity lies on the coarse skeleton."""
    mask = np.zeros(fine_layout.ndof, dtype=bool)
    cache: dict = {}
    for d in range(fine_layout.ndof):
        ent = fine_layout.entity[d]
        if ent in cache:
            mask[d] = cache[ent]
            continue
        if fine_layout.kind[d] == VERTEX:
            X, Y = ent
            probe = (X, Y)
        else:
            m = (ent[2] + ent[3]) // 2
            # a point strictly inside the segment, nudged off the line
            probe = (m, ent[1]) if ent[0] == "h" else (ent[1], m)
        X, Y = probe
        key = coarse.leaf_at(X, Y)
        x0, y0, x1, y1 = cell_box(key)
        if fine_layout.kind[d] == VERTEX:
            res = X in (x0, x1) or Y in (y0, y1)
        elif ent[0] == "h":
            res = ent[1] in (y0, y1)
        else:
            res = ent[1] in (x0, x1)
        cache[ent] = res
        mask[d] = res
    return mask


def edge_length(seg: tuple) -> float:
    return segment_length(seg)
