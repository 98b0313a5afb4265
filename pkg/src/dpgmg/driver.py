"""Study protocols: uniform h, uniform p, hp-adaptive and frequency sweeps.

Each grid of a study is assembled, a multigrid hierarchy is built over all
meshes produced so far, and PCG is run to the configured tolerance.  The
result of each grid is a :class:`ConvergenceRecord`; callers that need the
full state (tests, plots) can pass an ``observer`` that receives a
:class:`GridState` after every solve.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from . import mg
from .dpg import ElementCache, GaussianBeam, GlobalSystem, ProblemConfig, assemble_global, plane_wave
from .la_core import PCGResult
from .mesh import (Mesh, dorfler_mark, initial_mesh, refine, uniform_marks, wavelength,
                   wavelength_edge_test)

log = logging.getLogger(__name__)

STUDIES = ("uniform_h", "uniform_p", "hp_adaptive")
LOADS = ("plane_wave", "gaussian_beam")


@dataclass(frozen=True)
class StudyConfig:
    study: str
    omegas: tuple[float, ...] = (2 * math.pi,)
    Z: float = 1.0
    alpha: float = 1.0
    delta_p: int = 1
    wavespeed: float = 1.0
    p0: int = 2
    p_max: int = 5
    grids: int = 4
    theta: float = 0.5
    mark_exponent: int = 2          # mark on eta_K^2 (2) or eta_K (1)
    pre_smooth: int = 1
    post_smooth: int = 1
    damping: float | None = None
    bottom: str = "none"
    coarse_op: str = "restrict"
    tol: float = 1e-7
    max_iter: int = 2000
    warm_start: bool = False
    load: str = "plane_wave"
    wave_direction: tuple[float, float] = (0.6, 0.8)
    beam_waist: float = 0.1
    beam_angle: float = math.pi / 4
    beam_origin: tuple[float, float] = (0.0, 0.0)
    vtk: bool = False

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"study must be one of {STUDIES}, got {self.study!r}")
        if not self.omegas or any(not w > 0 for w in self.omegas):
            raise ValueError("omegas must be a non-empty list of positive numbers")
        if not 0.0 < self.tol < 1.0:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.grids < 1:
            raise ValueError(f"grids must be >= 1, got {self.grids}")
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if self.mark_exponent not in (1, 2):
            raise ValueError("mark_exponent must be 1 or 2")
        if not 2 <= self.p0 <= self.p_max:
            raise ValueError(f"need 2 <= p0 <= p_max, got p0={self.p0}, p_max={self.p_max}")
        if self.coarse_op not in ("restrict", "store"):
            raise ValueError(f"coarse_op must be restrict or store, got {self.coarse_op!r}")
        if self.load not in LOADS:
            raise ValueError(f"load must be one of {LOADS}, got {self.load!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        # remaining checks live in the configs built from these values
        self.cycle()
        self.problem(self.omegas[0])

    def cycle(self) -> mg.CycleConfig:
        return mg.CycleConfig(self.pre_smooth, self.post_smooth, self.damping, self.bottom)

    def beam(self, omega: float) -> GaussianBeam:
        return GaussianBeam(omega, self.beam_waist, tuple(self.beam_origin), self.beam_angle,
                            self.Z, self.wavespeed)

    def problem(self, omega: float) -> ProblemConfig:
        if self.load == "plane_wave":
            u0 = plane_wave(omega, self.wave_direction, self.Z, self.wavespeed)[0]
        else:
            u0 = self.beam(omega)
        return ProblemConfig(omega, self.Z, self.alpha, self.delta_p, self.wavespeed, u0)

    def replace(self, **changes) -> "StudyConfig":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(changes)
        return StudyConfig(**vals)


@dataclass(frozen=True)
class ConvergenceRecord:
    grid: int
    ndof: int
    iterations: int
    final_residual: float
    dpg_eta: float
    assembly_s: float
    solve_s: float


@dataclass
class GridState:
    """Everything produced on one grid, handed to observers."""

    grid: int
    omega: float
    mesh: Mesh
    system: GlobalSystem
    solution: np.ndarray
    pcg: PCGResult
    indicators: np.ndarray
    hierarchy: mg.Hierarchy
    record: ConvergenceRecord
    marks: dict[int, str] = field(default_factory=dict)


Observer = Callable[[GridState], None]


def count_ndof(system: GlobalSystem) -> int:
    """System dimension plus constrained (hanging) DOFs, each counted once."""
    return system.layout.ndof + system.layout.n_constrained


class _Study:
    """Shared grid loop state: meshes, retained systems, element cache."""

    def __init__(self, cfg: StudyConfig, omega: float, observer: Observer | None):
        self.cfg = cfg
        self.omega = omega
        self.problem = cfg.problem(omega)
        self.observer = observer
        self.cache = ElementCache()
        self.meshes: list[Mesh] = []
        self.matrices: list = []
        self.layouts: list = []
        self.records: list[ConvergenceRecord] = []
        self.x_prev: np.ndarray | None = None

    def solve(self, mesh: Mesh) -> GridState:
        cfg = self.cfg
        t0 = time.perf_counter()
        system = assemble_global(mesh, self.problem, self.cache)
        t_asm = time.perf_counter() - t0

        t0 = time.perf_counter()
        self.meshes.append(mesh)
        self.matrices.append(system.A)
        self.layouts.append(system.layout)
        stored = self.matrices if cfg.coarse_op == "store" else None
        H = mg.build_hierarchy(self.meshes, system.A, cfg.cycle(), cfg.coarse_op, stored, self.layouts)
        x0 = None
        if cfg.warm_start and self.x_prev is not None:
            x0 = mg.prolongate(H, self.x_prev)
        res = mg.solve(H, system.rhs, cfg.tol, cfg.max_iter, x0)
        t_solve = time.perf_counter() - t0

        eta2 = system.error_indicators(res.x)
        rec = ConvergenceRecord(len(self.records), count_ndof(system), res.iterations,
                                float(res.relative_residual), float(math.sqrt(eta2.sum())),
                                t_asm, t_solve)
        if self.records and rec.dpg_eta > self.records[-1].dpg_eta:
            log.info("dpg residual increased on grid %d: %.4e -> %.4e",
                     rec.grid, self.records[-1].dpg_eta, rec.dpg_eta)
        self.records.append(rec)
        self.x_prev = res.x
        log.info("grid %d: ndof=%d iterations=%d eta=%.4e", rec.grid, rec.ndof,
                 rec.iterations, rec.dpg_eta)
        return GridState(rec.grid, self.omega, mesh, system, res.x, res, eta2, H, rec)

    def notify(self, state: GridState):
        if self.observer is not None:
            self.observer(state)


def _omega(cfg: StudyConfig, omega: float | None) -> float:
    return cfg.omegas[0] if omega is None else float(omega)


def run_uniform_h(cfg: StudyConfig, omega: float | None = None,
                  observer: Observer | None = None) -> list[ConvergenceRecord]:
    """``cfg.grids`` meshes, each a uniform h-refinement of the previous one."""
    st = _Study(cfg, _omega(cfg, omega), observer)
    mesh = initial_mesh(cfg.p0, cfg.p_max)
    for g in range(cfg.grids):
        if g:
            mesh = refine(mesh, uniform_marks(mesh, "h"))
        st.notify(st.solve(mesh))
    return st.records


def nyquist_refinements(omega: float, wavespeed: float = 1.0) -> int:
    """Uniform bisections of the unit element until h <= lambda / 2."""
    half = 0.5 * wavelength(omega, wavespeed)
    n, h = 0, 1.0
    while h > half * (1.0 + 1e-12):
        h *= 0.5
        n += 1
    return n


def run_uniform_p(cfg: StudyConfig, omega: float | None = None,
                  observer: Observer | None = None) -> list[ConvergenceRecord]:
    """Uniform h until two elements per wavelength, then uniform p up to p_max.

    Every mesh of both phases is solved and recorded; ``cfg.grids`` is not used.
    """
    w = _omega(cfg, omega)
    st = _Study(cfg, w, observer)
    mesh = initial_mesh(cfg.p0, cfg.p_max)
    st.notify(st.solve(mesh))
    for _ in range(nyquist_refinements(w, cfg.wavespeed)):
        mesh = refine(mesh, uniform_marks(mesh, "h"))
        st.notify(st.solve(mesh))
    while min(el.order for el in mesh.elements) < cfg.p_max:
        mesh = refine(mesh, uniform_marks(mesh, "p"))
        st.notify(st.solve(mesh))
    return st.records


def classify_marks(mesh: Mesh, marked: list[int], omega: float, wavespeed: float = 1.0) -> dict[int, str]:
    """h for elements with an edge of at least half a wavelength, else p.
    A p-mark at p_max turns into h (as refine would do)."""
    out = {}
    for eid in marked:
        el = mesh.elements[eid]
        if wavelength_edge_test(el, omega, wavespeed) or el.order >= mesh.p_max:
            out[eid] = "h"
        else:
            out[eid] = "p"
    return out


def run_hp_adaptive(cfg: StudyConfig, omega: float | None = None,
                    observer: Observer | None = None) -> list[ConvergenceRecord]:
    """Dörfler-marked hp refinement.

    Stops one mesh after a marking round that requests no h-refinement,
    or after ``cfg.grids`` meshes, whichever comes first.
    """
    w = _omega(cfg, omega)
    st = _Study(cfg, w, observer)
    mesh = initial_mesh(cfg.p0, cfg.p_max)
    last = False
    for g in range(cfg.grids):
        state = st.solve(mesh)
        if last or g == cfg.grids - 1:
            st.notify(state)
            break
        eta = state.indicators if cfg.mark_exponent == 2 else np.sqrt(state.indicators)
        marks = classify_marks(mesh, dorfler_mark(eta, cfg.theta), w, cfg.wavespeed)
        state.marks = marks
        st.notify(state)
        if "h" not in marks.values():
            last = True
        mesh = refine(mesh, marks)
    return st.records


RUNNERS = {"uniform_h": run_uniform_h, "uniform_p": run_uniform_p, "hp_adaptive": run_hp_adaptive}


def run_study(cfg: StudyConfig, omega: float | None = None,
              observer: Observer | None = None) -> list[ConvergenceRecord]:
    return RUNNERS[cfg.study](cfg, omega, observer)


@dataclass(frozen=True)
class OmegaSweep:
    omegas: tuple[float, ...]
    max_iterations: tuple[int, ...]
    slope: float | None
    records: tuple[tuple[ConvergenceRecord, ...], ...]


def loglog_slope(x, y) -> float | None:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.unique(x).size < 2:
        return None
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def run_omega_sweep(cfg: StudyConfig, omegas=None, observer: Observer | None = None) -> OmegaSweep:
    """Run ``cfg.study`` at every frequency and fit max iterations against omega."""
    omegas = tuple(float(w) for w in (cfg.omegas if omegas is None else omegas))
    recs, top = [], []
    for w in omegas:
        r = run_study(cfg, w, observer)
        recs.append(tuple(r))
        top.append(max(x.iterations for x in r))
    slope = loglog_slope(omegas, top)
    return OmegaSweep(omegas, tuple(top), slope, tuple(recs))


# ---------------------------------------------------------------------------
# beam corridor diagnostics


def in_beam_corridor(beam: GaussianBeam, x, y, widths: float = 2.0, slack=0.0) -> np.ndarray:
    """Points within ``widths`` beam radii (plus ``slack``) of the beam axis, downstream of the waist."""
    s, r = beam.coords(x, y)
    return (np.abs(r) <= widths * beam.width(np.maximum(s, 0.0)) + slack) & (s >= -slack)


def corridor_fraction(beam: GaussianBeam, mesh: Mesh, marks: dict[int, str], widths: float = 2.0) -> float:
    """Fraction of the h-marked elements whose centre lies in the beam corridor.

    Half the element diagonal is allowed as slack so that large elements
    straddling the corridor count as inside.
    """
    ids = [e for e, k in marks.items() if k == "h"]
    if not ids:
        return float("nan")
    inside = 0
    for e in ids:
        el = mesh.elements[e]
        cx, cy = el.origin[0] + 0.5 * el.h, el.origin[1] + 0.5 * el.h
        inside += bool(in_beam_corridor(beam, cx, cy, widths, slack=el.h / math.sqrt(2)))
    return inside / len(ids)
