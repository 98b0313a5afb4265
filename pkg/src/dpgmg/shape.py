"""Exact-sequence shape functions on the master square [-1, 1]^2.

Conventions
-----------
* 1D H1 basis of order p: two vertex hats followed by p - 1 integrated
  Legendre bubbles.  The basis is hierarchical, so raising p only appends
  functions.
* L2 basis of order p: tensor Legendre polynomials of degree <= p per
  direction.
* H(div) basis of order p: the rotated tensor family
  ``(phi_i(x) l_j(y), 0)`` and ``(0, l_j(x) phi_i(y))`` with ``phi`` from the
  1D H1 basis of order p and ``l`` Legendre of degree <= p - 1.  Normal
  traces have degree p - 1 and divergences lie in the L2 basis of order
  p - 1.

Edges of the master square are numbered 0 (bottom), 1 (right), 2 (top),
3 (left).  Every edge is parametrised by ``t`` in [-1, 1] running in the
direction of increasing coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# edge -> (fixed axis, fixed value, outward normal)
EDGES = (
    (1, -1.0, (0.0, -1.0)),
    (0, 1.0, (1.0, 0.0)),
    (1, 1.0, (0.0, 1.0)),
    (0, -1.0, (-1.0, 0.0)),
)
# corners in counter-clockwise order, and the two corners of each edge (t=-1, t=+1)
CORNERS = ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0))
EDGE_CORNERS = ((0, 1), (1, 2), (3, 2), (0, 3))


def edge_points(edge: int, t: np.ndarray) -> np.ndarray:
    """Map edge parameters to master-square points, shape (len(t), 2)."""
    axis, value, _ = EDGES[edge]
    t = np.asarray(t, dtype=float)
    pts = np.empty((t.size, 2))
    pts[:, axis] = value
    pts[:, 1 - axis] = t
    return pts


def legendre(n: int, t) -> tuple[np.ndarray, np.ndarray]:
    """Legendre polynomials P_0..P_n and derivatives, each (n + 1, len(t))."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    P = np.zeros((n + 1, t.size))
    dP = np.zeros_like(P)
    P[0] = 1.0
    if n >= 1:
        P[1] = t
        dP[1] = 1.0
    for k in range(2, n + 1):
        P[k] = ((2 * k - 1) * t * P[k - 1] - (k - 1) * P[k - 2]) / k
        dP[k] = dP[k - 2] + (2 * k - 1) * P[k - 1]
    return P, dP


def h1_1d(p: int, t) -> tuple[np.ndarray, np.ndarray]:
    """Hierarchical 1D H1 basis of order p and derivatives, (p + 1, len(t))."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    P, _ = legendre(max(p, 1), t)
    phi = np.empty((p + 1, t.size))
    dphi = np.empty_like(phi)
    phi[0] = 0.5 * (1.0 - t)
    phi[1] = 0.5 * (1.0 + t)
    dphi[0] = -0.5
    dphi[1] = 0.5
    for k in range(2, p + 1):
        # scaled integral of P_{k-1} from -1 to t
        c = np.sqrt((2 * k - 1) / 2.0)
        phi[k] = c * (P[k] - P[k - 2]) / (2 * k - 1)
        dphi[k] = c * P[k - 1]
    return phi, dphi


def legendre_1d(n: int, t) -> np.ndarray:
    """Legendre P_0..P_n at t; used for L2 fields and normal traces."""
    return legendre(n, t)[0]


def gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def gauss_2d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss points (n*n, 2) and weights on [-1, 1]^2."""
    x, w = gauss(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel()


@lru_cache(maxsize=None)
def h1_index(p: int) -> tuple[tuple[int, int], ...]:
    """Tensor index pairs ordered vertices, edges (0..3), interior."""
    verts = [(0, 0), (1, 0), (1, 1), (0, 1)]
    edges = (
        [(k, 0) for k in range(2, p + 1)]
        + [(1, k) for k in range(2, p + 1)]
        + [(k, 1) for k in range(2, p + 1)]
        + [(0, k) for k in range(2, p + 1)]
    )
    interior = [(i, j) for j in range(2, p + 1) for i in range(2, p + 1)]
    return tuple(verts + edges + interior)


def eval_h1(p: int, xi) -> tuple[np.ndarray, np.ndarray]:
    """H1 basis of order p at master points.

    Returns values (n, npts) and reference gradients (n, npts, 2) with
    n = (p + 1)**2, ordered as in :func:`h1_index`.
    """
    if p < 1:
        raise ValueError(f"H1 order must be >= 1, got {p}")
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    fx, dfx = h1_1d(p, xi[:, 0])
    fy, dfy = h1_1d(p, xi[:, 1])
    idx = np.array(h1_index(p))
    i, j = idx[:, 0], idx[:, 1]
    vals = fx[i] * fy[j]
    grads = np.stack([dfx[i] * fy[j], fx[i] * dfy[j]], axis=-1)
    return vals, grads


def hdiv_size(p: int) -> int:
    return 2 * p * (p + 1)


def eval_hdiv(p: int, xi) -> tuple[np.ndarray, np.ndarray]:
    """H(div) basis of order p at master points.

    Returns vector values (n, npts, 2) and reference divergences (n, npts).
    The first half of the basis is x-directed, the second y-directed.
    Within each half, functions with a vertex-hat factor are the
    edge-associated ones.
    """
    if p < 1:
        raise ValueError(f"H(div) order must be >= 1, got {p}")
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    npts = xi.shape[0]
    fx, dfx = h1_1d(p, xi[:, 0])
    fy, dfy = h1_1d(p, xi[:, 1])
    lx = legendre_1d(p - 1, xi[:, 0])
    ly = legendre_1d(p - 1, xi[:, 1])
    n = hdiv_size(p)
    vals = np.zeros((n, npts, 2))
    div = np.zeros((n, npts))
    k = 0
    for i in range(p + 1):
        for j in range(p):
            vals[k, :, 0] = fx[i] * ly[j]
            div[k] = dfx[i] * ly[j]
            k += 1
    for i in range(p + 1):
        for j in range(p):
            vals[k, :, 1] = lx[j] * fy[i]
            div[k] = lx[j] * dfy[i]
            k += 1
    return vals, div


def eval_l2(p: int, xi) -> np.ndarray:
    """Tensor Legendre basis of degree <= p per direction, (n, npts)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    lx = legendre_1d(p, xi[:, 0])
    ly = legendre_1d(p, xi[:, 1])
    return np.einsum("ip,jp->ijp", lx, ly).reshape((p + 1) ** 2, -1)


def edge_trace_h1(p: int, edge: int) -> np.ndarray:
    """Matrix (p + 1, (p + 1)**2) mapping element H1 coefficients to the
    1D H1 coefficients [hat(-1), hat(+1), bubbles] of its trace on ``edge``."""
    idx = h1_index(p)
    T = np.zeros((p + 1, len(idx)))
    for col, (i, j) in enumerate(idx):
        if edge == 0 and j == 0:
            T[i, col] = 1.0
        elif edge == 1 and i == 1:
            T[j, col] = 1.0
        elif edge == 2 and j == 1:
            T[i, col] = 1.0
        elif edge == 3 and i == 0:
            T[j, col] = 1.0
    return T


@dataclass(frozen=True)
class ConstraintCoeffs:
    """Restriction of parent-edge trace bases to the two bisected halves.

    ``h1[c]`` is (p + 1, p + 1): column k holds the child-c coefficients of
    parent H1 function k.  ``flux[c]`` is the same for Legendre normal
    traces of degree <= p.  Child 0 covers t in [-1, 0], child 1 [0, 1].
    Both tables are hierarchical: the leading (k+1)x(k+1) block is the
    table for order k.
    """

    p: int
    h1: tuple[np.ndarray, np.ndarray]
    flux: tuple[np.ndarray, np.ndarray]


def child_to_parent(child: int, s):
    """Parent edge parameter of the point with child parameter s."""
    return 0.5 * (np.asarray(s) - 1.0) if child == 0 else 0.5 * (np.asarray(s) + 1.0)


@lru_cache(maxsize=None)
def constraint_coeffs(p: int) -> ConstraintCoeffs:
    if p < 1:
        raise ValueError(f"order must be >= 1, got {p}")
    s, _ = gauss(p + 2)
    h1, flux = [], []
    for c in (0, 1):
        t = child_to_parent(c, s)
        # H1: endpoint values are interpolated exactly, bubbles by least squares
        Bc = h1_1d(p, s)[0].T
        Bp = h1_1d(p, t)[0].T
        h1.append(np.linalg.lstsq(Bc, Bp, rcond=None)[0])
        Lc = legendre_1d(p, s).T
        Lp = legendre_1d(p, t).T
        flux.append(np.linalg.lstsq(Lc, Lp, rcond=None)[0])
    for tab in h1 + flux:
        tab[np.abs(tab) < 1e-14] = 0.0
        tab.setflags(write=False)
    return ConstraintCoeffs(p, tuple(h1), tuple(flux))
