"""Multilevel preconditioner for condensed DPG trace systems.

Between two consecutive meshes (coarse, fine) the prolongation has two
stages.  First, fine DOFs that do not lie on the coarse skeleton are
statically condensed coarse element by coarse element; the remaining DOFs
form the *macro grid*.  Second, coarse trace basis functions are written
in the macro basis (the natural inclusion), which on bisected edges uses
the constrained-approximation tables.

Smoothing is additive Schwarz on the macro grid with one block per coarse
vertex patch.  The cycle is symmetric, so it can precondition CG.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import la_core
from .la_core import MaxIterationsExceeded, PCGResult, hpd_inverse, pcg, triple_product
from .mesh import Mesh
from .shape import constraint_coeffs, h1_1d
from .skeleton import (BUBBLE, VERTEX, TraceLayout, _combine, on_coarse_skeleton,
                       vertex_patches)

log = logging.getLogger(__name__)


class SingularInteriorBlock(np.linalg.LinAlgError):
    pass


class MissingStoredSystem(LookupError):
    pass


@dataclass(frozen=True)
class CycleConfig:
    pre_smooth: int = 1
    post_smooth: int = 1
    damping: float | None = None   # None: 1 / (max number of patches sharing a DOF)
    bottom: str = "none"           # "none" (smoothing only) or "exact_solve"

    def __post_init__(self):
        if self.pre_smooth < 0 or self.post_smooth < 0:
            raise ValueError("smoothing counts must be non-negative")
        if self.damping is not None and not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if self.bottom not in ("none", "exact_solve"):
            raise ValueError(f"unknown bottom-level treatment {self.bottom!r}")


# ---------------------------------------------------------------------------
# stage 1: macro condensation


@dataclass
class MacroCondensation:
    """Schur complement of a level system onto the coarse skeleton."""

    macro: np.ndarray        # fine DOF indices kept (sorted)
    interior: np.ndarray     # fine DOF indices eliminated
    Ahat: sp.csr_matrix
    A_mi: sp.csr_matrix
    A_im: sp.csr_matrix
    Aii_inv: sp.csr_matrix
    n: int

    def restrict(self, r: np.ndarray) -> np.ndarray:
        """Fine residual -> macro residual (block elimination of the interior)."""
        if self.interior.size == 0:
            return r[self.macro]
        return r[self.macro] - self.A_mi @ (self.Aii_inv @ r[self.interior])

    def expand(self, xm: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Macro solution -> fine vector, interior recovered from the residual."""
        x = np.zeros(self.n, dtype=complex)
        x[self.macro] = xm
        if self.interior.size:
            x[self.interior] = self.Aii_inv @ (r[self.interior] - self.A_im @ xm)
        return x

    def extension(self) -> sp.csr_matrix:
        """Harmonic extension E (n x n_macro) with Ahat = E^H A E."""
        nm = self.macro.size
        E = sp.csr_matrix((np.ones(nm, dtype=complex), (self.macro, np.arange(nm))),
                          shape=(self.n, nm))
        if self.interior.size:
            Pi = sp.csr_matrix((np.ones(self.interior.size), (self.interior, np.arange(self.interior.size))),
                               shape=(self.n, self.interior.size))
            E = E - Pi @ (self.Aii_inv @ self.A_im)
        return E.tocsr()


def _interior_blocks(coarse: Mesh, layout: TraceLayout, interior: np.ndarray) -> list[np.ndarray]:
    """Group interior DOF positions (indices into ``interior``) by coarse element."""
    groups: dict[int, list[int]] = {}
    for pos, d in enumerate(interior):
        ent = layout.entity[d]
        if layout.kind[d] == VERTEX:
            X, Y = ent
        else:
            m = (ent[2] + ent[3]) // 2
            X, Y = (m, ent[1]) if ent[0] == "h" else (ent[1], m)
        owner = coarse.index[coarse.leaf_at(X, Y)]
        groups.setdefault(owner, []).append(pos)
    return [np.array(groups[k]) for k in sorted(groups)]


def macro_condense(A, layout: TraceLayout, coarse: Mesh) -> MacroCondensation:
    """Eliminate the DOFs of ``layout`` interior to elements of ``coarse``."""
    A = sp.csr_matrix(A)
    mask = on_coarse_skeleton(coarse, layout)
    macro = np.flatnonzero(mask)
    interior = np.flatnonzero(~mask)
    A_mm = A[macro][:, macro]
    if interior.size == 0:
        empty = sp.csr_matrix((macro.size, 0), dtype=complex)
        return MacroCondensation(macro, interior, A_mm.tocsr(), empty, empty.T.tocsr(),
                                 sp.csr_matrix((0, 0), dtype=complex), layout.ndof)
    A_ii = A[interior][:, interior].tocsr()
    blocks = _interior_blocks(coarse, layout, interior)
    block_id = np.empty(interior.size, dtype=int)
    for b, blk in enumerate(blocks):
        block_id[blk] = b
    coo = A_ii.tocoo()
    if np.any(block_id[coo.row] != block_id[coo.col]):
        raise AssertionError("interior DOFs couple across coarse elements")
    rows, cols, vals = [], [], []
    for blk in blocks:
        sub = A_ii[blk][:, blk].toarray()
        try:
            inv = hpd_inverse(sub)
        except la_core.NotPositiveDefinite as exc:
            raise SingularInteriorBlock(f"interior block singular at pivot {exc.pivot}") from exc
        rows.append(np.repeat(blk, blk.size))
        cols.append(np.tile(blk, blk.size))
        vals.append(la_core.hermitian_part(inv).ravel())
    ni = interior.size
    Aii_inv = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(ni, ni))
    A_mi = A[macro][:, interior].tocsr()
    A_im = A[interior][:, macro].tocsr()
    Ahat = (A_mm - A_mi @ (Aii_inv @ A_im)).tocsr()
    Ahat = la_core.hermitian_part(Ahat).tocsr()
    return MacroCondensation(macro, interior, Ahat, A_mi, A_im, Aii_inv, layout.ndof)


# ---------------------------------------------------------------------------
# stage 2: natural inclusion


def _coarse_edge_containing(coarse_layout: TraceLayout, orient: str, c: int, a: int, b: int):
    for seg in coarse_layout._lines.get((orient, c), ()):
        if seg[2] <= a and b <= seg[3]:
            return seg
    return None


def _coarse_value_at(coarse_layout: TraceLayout, pt: tuple[int, int]) -> dict[int, float]:
    """Coarse phat at a lattice point on the coarse skeleton, as coarse-DOF weights."""
    if pt in coarse_layout.vertex_dof or pt in coarse_layout.mesh.hanging:
        return coarse_layout.vertex_map(pt)
    X, Y = pt
    for orient, c, s in (("h", Y, X), ("v", X, Y)):
        seg = _coarse_edge_containing(coarse_layout, orient, c, s, s)
        if seg is not None and seg[2] < s < seg[3]:
            p = coarse_layout.mesh.edges[seg]["order"]
            t = 2.0 * (s - seg[2]) / (seg[3] - seg[2]) - 1.0
            phi = h1_1d(p, np.array([t]))[0][:, 0]
            return _combine(zip(phi, coarse_layout.edge_h1_map(seg)))
    raise ValueError(f"point {pt} is not on the coarse skeleton")


def build_inclusion(coarse_layout: TraceLayout, fine_layout: TraceLayout,
                    macro: np.ndarray | None = None) -> sp.csr_matrix:
    """Matrix expressing coarse trace basis functions in the fine (macro) basis.

    Rows are the fine DOFs listed in ``macro`` (default: all fine DOFs on the
    coarse skeleton), columns the coarse DOFs.
    """
    if macro is None:
        macro = np.flatnonzero(on_coarse_skeleton(coarse_layout.mesh, fine_layout))
    rows, cols, vals = [], [], []
    edge_cache: dict[tuple, tuple] = {}

    def coarse_restriction(seg):
        """Coarse edge coefficient dicts restricted to fine edge ``seg``."""
        if seg in edge_cache:
            return edge_cache[seg]
        E = _coarse_edge_containing(coarse_layout, seg[0], seg[1], seg[2], seg[3])
        if E is None:
            raise ValueError(f"fine edge {seg} is not on the coarse skeleton")
        pc = coarse_layout.mesh.edges[E]["order"]
        h1 = coarse_layout.edge_h1_map(E)
        flux = ([{int(d): 1.0} for d in coarse_layout.edge_flux[E]]
                if E in coarse_layout.edge_flux else None)
        if E != seg:
            half = 0 if seg[2] == E[2] else 1
            if seg[3] - seg[2] != (E[3] - E[2]) // 2:
                raise ValueError(f"fine edge {seg} is not a half of coarse edge {E}")
            cc = constraint_coeffs(pc)
            h1 = [_combine(zip(row, h1)) for row in cc.h1[half][: pc + 1, : pc + 1]]
            if flux is not None:
                flux = [_combine(zip(row, flux)) for row in cc.flux[half][:pc, :pc]]
        edge_cache[seg] = (pc, h1, flux)
        return edge_cache[seg]

    for r, d in enumerate(macro):
        kind = fine_layout.kind[d]
        ent = fine_layout.entity[d]
        mode = fine_layout.mode[d]
        if kind == VERTEX:
            weights = _coarse_value_at(coarse_layout, ent)
        else:
            pc, h1, flux = coarse_restriction(ent)
            if kind == BUBBLE:
                weights = h1[mode] if mode <= pc else {}
            else:
                if flux is None:
                    raise ValueError(f"flux DOF on coarse boundary edge {ent}")
                weights = flux[mode] if mode < pc else {}
        for c, v in weights.items():
            if v != 0.0:
                rows.append(r)
                cols.append(c)
                vals.append(v)
    return sp.csr_matrix((vals, (rows, cols)), shape=(macro.size, coarse_layout.ndof))


def coarse_operator(mode: str, Ahat, P, stored_A=None) -> sp.csr_matrix:
    if mode == "restrict":
        return triple_product(P, Ahat)
    if mode == "store":
        if stored_A is None:
            raise MissingStoredSystem("store mode needs the system assembled on the coarse mesh")
        return sp.csr_matrix(stored_A)
    raise ValueError(f"unknown coarse operator mode {mode!r}")


# ---------------------------------------------------------------------------
# smoother


@dataclass
class Smoother:
    """Additive Schwarz: S = sum_i R_i^T A_i^{-1} R_i, applied with damping."""

    S: sp.csr_matrix
    damping: float
    overlap: int
    n_patches: int

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.damping * (self.S @ r)


def build_smoother(A, patches: list[np.ndarray], damping: float | None = None) -> Smoother:
    A = sp.csr_matrix(A)
    n = A.shape[0]
    rows, cols, vals = [], [], []
    count = np.zeros(n, dtype=int)
    for idx in patches:
        if idx.size == 0:
            continue
        blk = A[idx][:, idx].toarray()
        inv = la_core.hermitian_part(hpd_inverse(blk))
        rows.append(np.repeat(idx, idx.size))
        cols.append(np.tile(idx, idx.size))
        vals.append(inv.ravel())
        count[idx] += 1
    if n and count.min() == 0:
        raise ValueError("smoothing patches do not cover every DOF")
    S = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)) if rows else sp.csr_matrix((n, n), dtype=complex)
    S = la_core.hermitian_part(S).tocsr()
    overlap = int(count.max()) if n else 1
    theta = 1.0 / overlap if damping is None else damping
    return Smoother(S, theta, overlap, len(patches))


def smooth(level: "GridLevel", residual: np.ndarray, config: CycleConfig | None = None) -> np.ndarray:
    """One additive Schwarz step on the level's macro system."""
    return level.smoother(residual)


# ---------------------------------------------------------------------------
# hierarchy and cycle


@dataclass
class GridLevel:
    mesh: Mesh
    layout: TraceLayout
    A: sp.csr_matrix                       # full system of this level
    macro: MacroCondensation | None = None  # w.r.t. the next coarser mesh
    P: sp.csr_matrix | None = None          # coarse DOFs -> macro DOFs
    smoother: Smoother | None = None        # on the macro system (bottom: on A)
    bottom_factor: la_core.CholeskyFactor | None = None

    @property
    def operator(self) -> sp.csr_matrix:
        return self.A if self.macro is None else self.macro.Ahat


@dataclass
class Hierarchy:
    levels: list[GridLevel]
    cycle: CycleConfig
    mode: str
    stats: dict = field(default_factory=dict)

    @property
    def finest(self) -> GridLevel:
        return self.levels[-1]

    def precondition(self, r: np.ndarray) -> np.ndarray:
        return self._solve_level(len(self.levels) - 1, r)

    def _bottom(self, r: np.ndarray) -> np.ndarray:
        lv = self.levels[0]
        if self.cycle.bottom == "exact_solve":
            return la_core.cholesky_solve(lv.bottom_factor, r)
        x = np.zeros_like(r, dtype=complex)
        steps = max(self.cycle.pre_smooth + self.cycle.post_smooth, 1)
        for _ in range(steps):
            x += lv.smoother(r - lv.A @ x)
        return x

    def _solve_level(self, i: int, r: np.ndarray) -> np.ndarray:
        if i == 0:
            return self._bottom(r)
        lv = self.levels[i]
        rm = lv.macro.restrict(r)
        xm = self.v_cycle(i, rm)
        return lv.macro.expand(xm, r)

    def v_cycle(self, i: int, rm: np.ndarray) -> np.ndarray:
        """V-cycle correction on the macro system of level i."""
        lv = self.levels[i]
        Ah = lv.macro.Ahat
        x = np.zeros_like(rm, dtype=complex)
        for _ in range(self.cycle.pre_smooth):
            x += lv.smoother(rm - Ah @ x)
        rc = lv.P.conj().T @ (rm - Ah @ x)
        x += lv.P @ self._solve_level(i - 1, rc)
        for _ in range(self.cycle.post_smooth):
            x += lv.smoother(rm - Ah @ x)
        return x

    def operator_matrix(self) -> np.ndarray:
        """Dense preconditioner matrix (small problems only)."""
        n = self.finest.A.shape[0]
        return np.column_stack([self.precondition(e) for e in np.eye(n, dtype=complex)])


def build_hierarchy(meshes: list[Mesh], A_finest, cycle: CycleConfig | None = None,
                    mode: str = "restrict", stored: list | None = None,
                    layouts: list[TraceLayout] | None = None) -> Hierarchy:
    """Levels for meshes[0] (initial) .. meshes[-1] (finest).

    ``stored`` holds the systems assembled on each mesh (needed for
    mode='store'; entry -1 is ignored).
    """
    cycle = CycleConfig() if cycle is None else cycle
    if mode not in ("restrict", "store"):
        raise ValueError(f"unknown coarse operator mode {mode!r}")
    if layouts is None:
        layouts = [TraceLayout(m) for m in meshes]
    L = len(meshes) - 1
    A = sp.csr_matrix(A_finest)
    levels: list[GridLevel] = [None] * (L + 1)  # type: ignore[list-item]
    for i in range(L, 0, -1):
        fine, coarse = layouts[i], layouts[i - 1]
        mc = macro_condense(A, fine, meshes[i - 1])
        P = build_inclusion(coarse, fine, mc.macro)
        pos = np.full(fine.ndof, -1)
        pos[mc.macro] = np.arange(mc.macro.size)
        patches = [pos[p.dofs] for p in vertex_patches(meshes[i - 1], fine, mc.macro)]
        sm = build_smoother(mc.Ahat, patches, cycle.damping)
        levels[i] = GridLevel(meshes[i], fine, A, mc, P, sm)
        stored_A = None if stored is None else stored[i - 1]
        A = coarse_operator(mode, mc.Ahat, P, stored_A)
    bottom = GridLevel(meshes[0], layouts[0], A)
    if cycle.bottom == "exact_solve":
        bottom.bottom_factor = la_core.hermitian_cholesky(A.toarray())
    patches = [p.dofs for p in vertex_patches(meshes[0], layouts[0])]
    bottom.smoother = build_smoother(A, patches, cycle.damping)
    levels[0] = bottom
    return Hierarchy(levels, cycle, mode)


def prolongate(hierarchy: Hierarchy, x_coarse: np.ndarray) -> np.ndarray:
    """Carry a solution of the previous mesh to the finest mesh.

    Inclusion onto the macro grid, then harmonic extension into the DOFs
    interior to the previous elements.
    """
    top = hierarchy.finest
    if top.macro is None:
        return np.array(x_coarse, dtype=complex)
    xm = top.P @ x_coarse
    return top.macro.expand(xm, np.zeros(top.macro.n, dtype=complex))


def solve(hierarchy: Hierarchy, b: np.ndarray, tol: float = 1e-7, max_iter: int = 2000,
          x0: np.ndarray | None = None) -> PCGResult:
    """PCG on the finest system with one V-cycle as preconditioner.

    Raises MaxIterationsExceeded (carrying the last iterate) when the
    tolerance is not met within ``max_iter`` iterations.
    """
    A = hierarchy.finest.A
    res = pcg(A, hierarchy.precondition, b, tol=tol, max_iter=max_iter, x0=x0)
    if not res.converged:
        raise MaxIterationsExceeded(res)
    return res
