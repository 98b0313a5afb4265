import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpgmg.shape import (EDGES, child_to_parent, constraint_coeffs, edge_points, edge_trace_h1,
                         eval_h1, eval_hdiv, eval_l2, gauss_2d, h1_1d, hdiv_size, legendre_1d)

FD = 1e-5


def seeded_points(n, seed=0):
    return np.random.default_rng(seed).uniform(-0.95, 0.95, size=(n, 2))


def test_h1_corner_kronecker():
    vals, _ = eval_h1(1, [[-1.0, -1.0]])
    assert np.allclose(vals[:, 0], [1, 0, 0, 0])


@given(st.floats(-1, 1), st.floats(-1, 1), st.integers(1, 6))
def test_h1_vertex_partition_of_unity(x, y, p):
    vals, _ = eval_h1(p, [[x, y]])
    assert vals[:4, 0].sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("p", [1, 2, 3, 5])
def test_h1_gradient_finite_differences(p):
    xi = seeded_points(5, p)
    _, g = eval_h1(p, xi)
    for d in range(2):
        e = np.zeros(2)
        e[d] = FD
        fd = (eval_h1(p, xi + e)[0] - eval_h1(p, xi - e)[0]) / (2 * FD)
        assert np.abs(fd - g[..., d]).max() <= 1e-6


def test_h1_edge_bubbles_vanish_at_corners():
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    vals, _ = eval_h1(4, corners)
    assert np.allclose(vals[4:], 0.0, atol=1e-15)
    assert np.allclose(vals[:4], np.eye(4))


def test_h1_1d_bubble_derivative_is_scaled_legendre():
    t = np.linspace(-1, 1, 7)
    _, d = h1_1d(4, t)
    P = legendre_1d(3, t)
    for k in range(2, 5):
        assert np.allclose(d[k], np.sqrt((2 * k - 1) / 2) * P[k - 1])


def test_hdiv_lowest_order_edge_function_bottom():
    p = 1
    k = hdiv_size(p) // 2  # first y-directed function: hat(y) = (1 - y) / 2
    t = np.linspace(-1, 1, 5)
    for edge, (_, _, normal) in enumerate(EDGES):
        v, _ = eval_hdiv(p, edge_points(edge, t))
        vn = v[k] @ np.array(normal)
        if edge == 0:
            assert np.allclose(vn, vn[0]) and abs(vn[0]) > 0
        else:
            assert np.allclose(vn, 0.0)


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_hdiv_divergence_in_l2_span(p):
    pts, _ = gauss_2d(p + 3)
    _, div = eval_hdiv(p, pts)
    L = eval_l2(p - 1, pts).T
    coef, *_ = np.linalg.lstsq(L, div.T, rcond=None)
    assert np.abs(L @ coef - div.T).max() <= 1e-12


@pytest.mark.parametrize("p", [1, 2, 4])
def test_hdiv_divergence_finite_differences(p):
    xi = seeded_points(5, 10 + p)
    _, div = eval_hdiv(p, xi)
    fd = np.zeros_like(div)
    for d in range(2):
        e = np.zeros(2)
        e[d] = FD
        fd += (eval_hdiv(p, xi + e)[0][..., d] - eval_hdiv(p, xi - e)[0][..., d]) / (2 * FD)
    assert np.abs(fd - div).max() <= 1e-6


@pytest.mark.parametrize("p", [1, 2, 3])
def test_hdiv_normal_trace_degree(p):
    t = np.linspace(-1, 1, 2 * p + 3)
    for edge, (_, _, normal) in enumerate(EDGES):
        v, _ = eval_hdiv(p, edge_points(edge, t))
        vn = v @ np.array(normal)
        # fits exactly with degree p - 1 Legendre
        L = legendre_1d(p - 1, t).T
        coef, *_ = np.linalg.lstsq(L, vn.T, rcond=None)
        assert np.abs(L @ coef - vn.T).max() <= 1e-12


def test_l2_mass_matrix_diagonal():
    pts, w = gauss_2d(8)
    B = eval_l2(4, pts)
    M = (B * w) @ B.T
    off = M - np.diag(np.diag(M))
    assert np.abs(off).max() <= 1e-12


@pytest.mark.parametrize("p", [2, 3, 4])
def test_h1_gradient_tangential_trace_degree(p):
    t = np.linspace(-1, 1, 2 * p + 3)
    for edge, (axis, _, _) in enumerate(EDGES):
        _, g = eval_h1(p, edge_points(edge, t))
        tang = g[..., 1 - axis]
        L = legendre_1d(p - 1, t).T
        coef, *_ = np.linalg.lstsq(L, tang.T, rcond=None)
        assert np.abs(L @ coef - tang.T).max() <= 1e-12


def test_edge_trace_constant():
    p = 3
    c = np.zeros((p + 1) ** 2)
    c[:4] = 2.5  # vertex functions sum to one
    for edge in range(4):
        tr = edge_trace_h1(p, edge) @ c
        assert np.allclose(tr[:2], 2.5) and np.allclose(tr[2:], 0.0)


def test_edge_trace_interior_functions_vanish():
    p = 4
    n_boundary = 4 + 4 * (p - 1)
    for edge in range(4):
        T = edge_trace_h1(p, edge)
        assert not np.any(T[:, n_boundary:])


@pytest.mark.parametrize("p", [2, 3, 5])
def test_edge_trace_matches_direct_evaluation(p):
    rng = np.random.default_rng(p)
    c = rng.standard_normal((p + 1) ** 2)
    t = rng.uniform(-1, 1, 7)
    for edge in range(4):
        direct = c @ eval_h1(p, edge_points(edge, t))[0]
        via = (edge_trace_h1(p, edge) @ c) @ h1_1d(p, t)[0]
        assert np.abs(direct - via).max() <= 1e-12


def test_constraint_p1_hat():
    cc = constraint_coeffs(1)
    # left-endpoint hat of the parent restricted to each child
    assert np.allclose(cc.h1[0][:, 0], [1.0, 0.5])
    assert np.allclose(cc.h1[1][:, 0], [0.5, 0.0])


@pytest.mark.parametrize("p", [1, 2, 4])
def test_constraint_constant_flux_nested(p):
    cc = constraint_coeffs(p)
    for c in (0, 1):
        e0 = np.zeros(p + 1)
        e0[0] = 1.0
        assert np.allclose(cc.flux[c][:, 0], e0)


def test_constraint_p3_reproduction():
    cc = constraint_coeffs(3)
    s = np.random.default_rng(9).uniform(-1, 1, 9)
    for c in (0, 1):
        t = child_to_parent(c, s)
        parent = h1_1d(3, t)[0]
        child = cc.h1[c].T @ h1_1d(3, s)[0]
        assert np.abs(parent - child).max() <= 1e-12
        parent = legendre_1d(3, t)
        child = cc.flux[c].T @ legendre_1d(3, s)
        assert np.abs(parent - child).max() <= 1e-12


@given(st.integers(1, 7), st.lists(st.floats(-1, 1), min_size=1, max_size=6))
def test_constraint_reproduction_property(p, s):
    s = np.array(s)
    cc = constraint_coeffs(p)
    for c in (0, 1):
        t = child_to_parent(c, s)
        assert np.abs(h1_1d(p, t)[0] - cc.h1[c].T @ h1_1d(p, s)[0]).max() <= 1e-12
        assert np.abs(legendre_1d(p, t) - cc.flux[c].T @ legendre_1d(p, s)).max() <= 1e-12


def test_constraint_tables_are_hierarchical():
    big = constraint_coeffs(5)
    for p in (1, 2, 3, 4):
        small = constraint_coeffs(p)
        for c in (0, 1):
            assert np.allclose(big.h1[c][: p + 1, : p + 1], small.h1[c], atol=1e-13)
            assert np.allclose(big.flux[c][: p + 1, : p + 1], small.flux[c], atol=1e-13)


@pytest.mark.parametrize("p", [2, 3])
def test_trace_commutes_with_constraint(p):
    rng = np.random.default_rng(40 + p)
    c = rng.standard_normal((p + 1) ** 2)
    s = rng.uniform(-1, 1, 6)
    cc = constraint_coeffs(p)
    for edge in range(4):
        tr = edge_trace_h1(p, edge) @ c
        for child in (0, 1):
            constrained = (cc.h1[child] @ tr) @ h1_1d(p, s)[0]
            direct = c @ eval_h1(p, edge_points(edge, child_to_parent(child, s)))[0]
            assert np.abs(constrained - direct).max() <= 1e-12


def test_orders_below_one_rejected():
    with pytest.raises(ValueError):
        eval_h1(0, [[0.0, 0.0]])
    with pytest.raises(ValueError):
        eval_hdiv(0, [[0.0, 0.0]])
    with pytest.raises(ValueError):
        constraint_coeffs(0)
