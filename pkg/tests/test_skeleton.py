import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpgmg.mesh import SCALE, initial_mesh, refine, side_segment, uniform_marks
from dpgmg.shape import h1_1d, legendre_1d
from dpgmg.skeleton import (BUBBLE, FLUX, SIDE_SIGN, VERTEX, TraceLayout, coarse_parent_map,
                            on_coarse_skeleton)


def hanging_mesh():
    m = refine(initial_mesh(2), uniform_marks(initial_mesh(2)))
    m = refine(m, {0: "h", 3: "p"})
    m = refine(m, {1: "h", 2: "p", 5: "p"})
    return m


def test_counts_single_element():
    L = TraceLayout(initial_mesh(2))
    # 4 vertices + one bubble per boundary edge; no flux on the boundary
    assert L.ndof == 8
    assert (L.kind == VERTEX).sum() == 4 and (L.kind == BUBBLE).sum() == 4


def test_counts_two_by_two():
    m = refine(initial_mesh(2), uniform_marks(initial_mesh(2)))
    L = TraceLayout(m)
    assert L.ndof == 9 + 12 + 4 * 2
    assert (L.kind == FLUX).sum() == 8
    assert L.n_constrained == 0


def test_counts_with_hanging_nodes():
    m = refine(refine(initial_mesh(2), uniform_marks(initial_mesh(2))), {0: "h"})
    L = TraceLayout(m)
    # two hanging vertices and four constrained half sides (p=2: 1 bubble + 2 fluxes each)
    assert L.n_constrained == 2 + 4 * 3
    assert len(L.vertex_dof) == len(m.vertices)


def test_hanging_vertex_map_is_edge_midpoint_value():
    m = refine(refine(initial_mesh(3), uniform_marks(initial_mesh(3))), {0: "h"})
    L = TraceLayout(m)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(L.ndof) + 1j * rng.standard_normal(L.ndof)
    for pt, seg in m.hanging.items():
        val = sum(w * x[d] for d, w in L.vertex_map(pt).items())
        orient, c = seg[0], seg[1]
        s = (pt[0] if orient == "h" else pt[1]) / SCALE
        ph, _ = L.evaluate(x, orient, c, [s])
        assert val == pytest.approx(ph[0], abs=1e-13)


def _local_vs_global(m, seed):
    L = TraceLayout(m)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(L.ndof) + 1j * rng.standard_normal(L.ndof)
    t = rng.uniform(-1, 1, 4)
    worst = 0.0
    for el, (g, C) in zip(m.elements, L.element_maps):
        loc = L.local_layout(el.id)
        xl = C @ x[g]
        for s in range(4):
            seg = side_segment(el.key, s)
            phys = (seg[2] + 0.5 * (t + 1) * (seg[3] - seg[2])) / SCALE
            ph, un = L.evaluate(x, seg[0], seg[1], phys)
            ps = loc.side_orders[s]
            ph_loc = xl[loc.side_h1(s)] @ h1_1d(ps, t)[0]
            worst = max(worst, np.abs(ph_loc - ph).max())
            if loc.fluxes[s] is not None:
                un_loc = SIDE_SIGN[s] * (xl[loc.fluxes[s]] @ legendre_1d(ps - 1, t))
                worst = max(worst, np.abs(un_loc - un).max())
    return worst


def test_element_maps_match_global_trace():
    assert _local_vs_global(hanging_mesh(), 1) <= 1e-12


@given(st.lists(st.tuples(st.integers(0, 99), st.sampled_from("hp")), min_size=1, max_size=5),
       st.integers(0, 100))
def test_element_maps_match_global_trace_random(marks, seed):
    m = refine(initial_mesh(2, p_max=4), uniform_marks(initial_mesh(2, p_max=4)))
    m = refine(m, {e % len(m): k for e, k in marks})
    assert _local_vs_global(m, seed) <= 1e-12


def test_evaluate_is_linear():
    L = TraceLayout(hanging_mesh())
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal(L.ndof), rng.standard_normal(L.ndof)
    s = [0.1, 0.3, 0.7]
    lhs = L.evaluate(2 * a + 3j * b, "h", SCALE // 2, s)
    ra, rb = L.evaluate(a, "h", SCALE // 2, s), L.evaluate(b, "h", SCALE // 2, s)
    for k in range(2):
        assert np.allclose(lhs[k], 2 * ra[k] + 3j * rb[k])


def test_coarse_parent_map():
    coarse = refine(initial_mesh(2), uniform_marks(initial_mesh(2)))
    fine = refine(coarse, uniform_marks(coarse))
    owner = coarse_parent_map(coarse, fine)
    assert np.bincount(owner).tolist() == [4, 4, 4, 4]


def test_on_coarse_skeleton_single_element():
    coarse = initial_mesh(2)
    fine = refine(coarse, uniform_marks(coarse))
    L = TraceLayout(fine)
    mask = on_coarse_skeleton(coarse, L)
    # interior cross: centre vertex, 4 half edges with 1 bubble + 2 fluxes
    assert (~mask).sum() == 1 + 4 * 3
    # pure p-step: everything lies on the coarse skeleton
    fine_p = refine(coarse, {0: "p"})
    assert on_coarse_skeleton(coarse, TraceLayout(fine_p)).all()
