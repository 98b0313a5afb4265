"""Acceptance criteria, one test per criterion at the stated tolerance.

Each test records a PASS/FAIL line that is echoed in the terminal summary.
"""
import math
import time

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import report
from dpgmg import la_core
from dpgmg.dpg import (ProblemConfig, assemble_global, assemble_uncondensed, direct_solve,
                       element_gram, global_residual, l2_field_error, plane_wave)
from dpgmg.driver import StudyConfig, run_omega_sweep, run_study
from dpgmg.mesh import SCALE, initial_mesh, refine, uniform_marks
from dpgmg.mg import build_hierarchy, coarse_operator

PI = math.pi
SWEEP = (2 * PI, 4 * PI, 8 * PI, 16 * PI)
SWEEP_GRIDS = 7


def pw_problem(omega, p=None):
    load, pressure, velocity = plane_wave(omega, (0.6, 0.8))
    return ProblemConfig(omega, boundary_load=load), pressure, velocity


def steps(kinds, p0=2, p_max=6):
    meshes = [initial_mesh(p0, p_max)]
    for k in kinds:
        meshes.append(refine(meshes[-1], uniform_marks(meshes[-1], k)))
    return meshes


def relerr(a, b):
    a, b = (x.toarray() if sp.issparse(x) else np.asarray(x) for x in (a, b))
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class GridAudit:
    """Observer checking the indicator identity and the stopping rule on every grid."""

    def __init__(self):
        self.eta_err = []
        self.residuals = []
        self.zero_start = []

    def __call__(self, state):
        S, x = state.system, state.solution
        fields = S.recover_fields(x)
        glob = global_residual(S, x, fields)
        eta2 = S.error_indicators(x, fields).sum()
        self.eta_err.append(abs(eta2 - glob) / glob if glob else abs(eta2))
        self.residuals.append(state.pcg.relative_residual)
        bnorm = np.linalg.norm(S.rhs)
        self.zero_start.append(bool(np.isclose(state.pcg.residuals[0], bnorm, rtol=1e-14)))


AUDIT = GridAudit()


def study(**kw):
    base = dict(study="uniform_h", coarse_op="restrict", tol=1e-7, warm_start=False)
    base.update(kw)
    return StudyConfig(**base)


@pytest.fixture(scope="module")
def h_restrict():
    return run_study(study(omegas=(8 * PI,), grids=5), observer=AUDIT)


@pytest.fixture(scope="module")
def h_store():
    return run_study(study(omegas=(8 * PI,), grids=5, coarse_op="store"), observer=AUDIT)


@pytest.fixture(scope="module")
def sweep():
    return run_omega_sweep(study(omegas=SWEEP, grids=SWEEP_GRIDS), observer=AUDIT)


@pytest.fixture(scope="module")
def sweep_v55():
    cfg = study(omegas=(SWEEP[-1],), grids=SWEEP_GRIDS, pre_smooth=5, post_smooth=5)
    return run_study(cfg, observer=AUDIT)


@pytest.fixture(scope="module")
def p_study():
    seen = []

    def obs(state):
        seen.append(state.mesh.elements[0].order)
        AUDIT(state)

    recs = run_study(study(study="uniform_p", omegas=(8 * PI,), p0=2, p_max=5), observer=obs)
    return recs, seen


def test_criterion_01_oracle_equivalence():
    t0 = time.perf_counter()
    cfg, *_ = pw_problem(2 * PI)
    two = steps("h")[-1]
    meshes = [initial_mesh(2), two, refine(two, {1: "p", 2: "p"})]
    worst = 0.0
    for m in meshes:
        assert len(m) <= 4
        M, r, offs = assemble_uncondensed(m, cfg)
        full = np.linalg.solve(M, r)
        S = assemble_global(m, cfg)
        x = direct_solve(S)
        ours = np.concatenate([np.concatenate(S.recover_fields(x)), x])
        worst = max(worst, np.linalg.norm(ours - full) / np.linalg.norm(full))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 10
    assert report(1, ok, f"max relative difference {worst:.2e} (<= 1e-10), {dt:.1f} s (< 10 s)")


def test_criterion_02_hpd_suite():
    t0 = time.perf_counter()
    herm, pd, checked = 0.0, True, 0
    for omega in (2 * PI, 8 * PI, 32 * PI):
        cfg, *_ = pw_problem(omega)
        for p in (2, 3):
            meshes = steps("hhh", p0=p)
            for m in meshes:
                h = m.elements[0].h
                G = element_gram(cfg, h, p + cfg.delta_p)
                A = assemble_global(m, cfg).A.toarray()
                for X in (G, A):
                    herm = max(herm, np.abs(X - X.conj().T).max() / np.abs(X).max())
                    try:
                        la_core.hermitian_cholesky(X)
                    except la_core.NotPositiveDefinite:
                        pd = False
                    checked += 1
    dt = time.perf_counter() - t0
    ok = herm <= 1e-12 and pd and dt < 120
    assert report(2, ok, f"{checked} matrices, hermitian defect {herm:.1e} (<= 1e-12), "
                         f"cholesky {'ok' if pd else 'failed'}, {dt:.1f} s")


def _coarse_skeleton_gap(meshes):
    cfg, *_ = pw_problem(2 * PI)
    fine = assemble_global(meshes[-1], cfg)
    H = build_hierarchy(meshes, fine.A)
    top = H.finest
    Lc, Lf = H.levels[-2].layout, top.layout
    EP = (top.macro.extension() @ top.P).toarray()
    s = np.random.default_rng(0).uniform(0, 1, 7)
    worst = 0.0
    for j in range(Lc.ndof):
        xc = np.zeros(Lc.ndof)
        xc[j] = 1.0
        for E, info in meshes[-2].edges.items():
            orient, c, a, b = E
            pts = (a + s * (b - a)) / SCALE
            for k in (0, 1):
                if k == 1 and info["boundary"]:
                    continue
                want = Lc.evaluate(xc, orient, c, pts)[k]
                got = Lf.evaluate(EP[:, j], orient, c, pts)[k]
                worst = max(worst, np.abs(want - got).max())
    return worst


def test_criterion_03_transfer_exactness():
    base = steps("h")[-1]
    mixed = refine(base, {0: "h", 3: "p"})
    cases = {
        "h-only": [base, refine(base, uniform_marks(base))],
        "p-only": [base, refine(base, uniform_marks(base, "p"))],
        "mixed": [base, mixed],
        "mixed-hanging": [mixed, refine(mixed, {0: "p", 4: "h", 5: "p"})],
    }
    gaps = {name: _coarse_skeleton_gap(ms) for name, ms in cases.items()}
    ok = max(gaps.values()) <= 1e-12
    detail = ", ".join(f"{k} {v:.1e}" for k, v in gaps.items())
    assert report(3, ok, f"max pointwise defect per step type: {detail} (<= 1e-12)")


def test_criterion_04_restrict_identity():
    cfg, *_ = pw_problem(2 * PI)
    meshes = steps("hph")
    A = assemble_global(meshes[-1], cfg).A
    H = build_hierarchy(meshes, A, mode="restrict")
    worst = 0.0
    for i in range(1, len(H.levels)):
        lv = H.levels[i]
        EP = lv.macro.extension() @ lv.P
        galerkin = EP.conj().T @ lv.A @ EP
        worst = max(worst, relerr(H.levels[i - 1].A, galerkin))
    # restrict vs store across the last h-step (both from the same fine system)
    lv = H.levels[-1]
    restricted = coarse_operator("restrict", lv.macro.Ahat, lv.P)
    stored = coarse_operator("store", lv.macro.Ahat, lv.P, assemble_global(meshes[-2], cfg).A)
    dist = sp.linalg.norm(restricted - stored) / sp.linalg.norm(restricted)
    ok = worst <= 1e-12 and dist > 1e-10
    assert report(4, ok, f"max relative |A_c - P^H A_f P| {worst:.1e} (<= 1e-12); "
                         f"restrict vs store relative Frobenius distance {dist:.2e} (> 0)")


def test_criterion_05_preconditioner_validity():
    rng = np.random.default_rng(2024)
    cfg, *_ = pw_problem(8 * PI)
    herm, pos = 0.0, True
    levels = []
    for kinds in ("h", "hh", "hhh", "hph"):
        meshes = steps(kinds)
        H = build_hierarchy(meshes, assemble_global(meshes[-1], cfg).A)
        levels.append(len(H.levels))
        n = H.finest.A.shape[0]
        for _ in range(10):
            x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            y = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            Bx, By = H.precondition(x), H.precondition(y)
            d = abs(np.vdot(y, Bx) - np.vdot(By, x)) / (np.linalg.norm(Bx) * np.linalg.norm(y))
            herm = max(herm, d)
            q = np.vdot(x, Bx)
            pos &= q.real > 0 and abs(q.imag) <= 1e-10 * abs(q)
    ok = herm <= 1e-10 and pos and {2, 3, 4} <= set(levels)
    assert report(5, ok, f"levels {levels}, symmetry defect {herm:.1e} (<= 1e-10), "
                         f"x^H B x > 0: {pos}")


def test_criterion_06_h_robustness(h_restrict, h_store):
    its = [r.iterations for r in h_restrict]
    st = [r.iterations for r in h_store]
    spread = abs(its[-1] - its[-2])
    ok = spread <= 2 and st[-1] > its[-1]
    assert report(6, ok, f"restrict {its} (last two differ by {spread} <= 2); "
                         f"store {st} (finest {st[-1]} > {its[-1]})")


def test_criterion_07_omega_linearity(sweep):
    slope = sweep.slope
    ok = slope is not None and 0.65 <= slope <= 1.35
    assert report(7, ok, f"max iterations {list(sweep.max_iterations)} at omega/pi "
                         f"{[round(w / PI) for w in sweep.omegas]}, log-log slope {slope:.3f} "
                         f"(in [0.65, 1.35])")


def test_criterion_08_smoothing_tradeoff(sweep, sweep_v55):
    v11 = sweep.max_iterations[-1]
    v55 = max(r.iterations for r in sweep_v55)
    ok = v55 >= v11 / 2.5
    assert report(8, ok, f"omega = 16 pi: V(5,5) {v55} vs V(1,1) {v11} "
                         f"(>= {v11 / 2.5:.1f}, ratio {v11 / v55:.2f})")


def test_criterion_09_p_robustness(p_study):
    recs, orders = p_study
    its = [r.iterations for r in recs]
    # the p-phase consists of the grids produced by order increments
    phase = [it for k, it in enumerate(its) if k and orders[k] > orders[k - 1]]
    spread = max(phase) - min(phase)
    ok = orders[-1] == 5 and spread <= 3
    assert report(9, ok, f"iterations {its} at orders {orders}; p-phase {phase}, spread {spread} (<= 3)")


def test_criterion_10_indicator_identity(h_restrict, h_store, sweep, sweep_v55, p_study):
    worst = max(AUDIT.eta_err)
    ok = worst <= 1e-12
    assert report(10, ok, f"{len(AUDIT.eta_err)} grids, max relative |sum eta_K^2 - residual^2| "
                          f"{worst:.1e} (<= 1e-12)")


def _rates(order, omega=4 * PI, grids=(2, 3, 4, 5)):
    cfg, pressure, velocity = pw_problem(omega)
    m = initial_mesh(order, p_max=order)
    errs = []
    for g in range(grids[-1] + 1):
        if g:
            m = refine(m, uniform_marks(m))
        if g in grids:
            S = assemble_global(m, cfg)
            x = direct_solve(S)
            errs.append(l2_field_error(S, S.recover_fields(x), pressure, velocity))
    errs = np.array(errs)
    return np.log2(errs[:-1] / errs[1:])


def test_criterion_11_discretisation_sanity():
    # p is the field degree; element order p + 1 carries fields of degree p
    ok, parts = True, []
    for p in (2, 3):
        r = _rates(p + 1)
        ok &= bool(np.all(r >= p))
        parts.append(f"p={p}: rates {np.round(r, 3).tolist()}")
    info = [f"order {k}: {np.round(_rates(k), 3).tolist()}" for k in (2, 3)]
    assert report(11, ok, "; ".join(parts) + " (>= p) | element orders for reference: " + "; ".join(info))


def test_criterion_12_tolerance_discipline(h_restrict, h_store, sweep, sweep_v55, p_study):
    worst = max(AUDIT.residuals)
    zero = all(AUDIT.zero_start)
    ok = worst <= 1e-7 and zero
    assert report(12, ok, f"{len(AUDIT.residuals)} solves, max relative residual {worst:.2e} "
                          f"(<= 1e-7), all from zero: {zero}")
