"""Complex Hermitian linear algebra shared by assembly and the multigrid solver."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

Operator = Callable[[np.ndarray], np.ndarray]


class NotPositiveDefinite(np.linalg.LinAlgError):
    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (pivot {pivot})")
        self.pivot = pivot


class DimensionMismatch(ValueError):
    pass


class BreakdownNonpositiveCurvature(ArithmeticError):
    pass


@dataclass(frozen=True)
class CholeskyFactor:
    L: np.ndarray

    @property
    def n(self) -> int:
        return self.L.shape[0]


def hermitian_part(A):
    return 0.5 * (A + A.conj().T)


def is_hermitian(A, rtol: float = 1e-12) -> bool:
    if sp.issparse(A):
        nrm = sp.linalg.norm(A)
        diff = sp.linalg.norm(A - A.conj().T)
    else:
        nrm = np.linalg.norm(A)
        diff = np.linalg.norm(A - A.conj().T)
    return diff <= rtol * max(nrm, np.finfo(float).tiny)


def hermitian_cholesky(A: np.ndarray) -> CholeskyFactor:
    """Lower Cholesky factor of a Hermitian positive definite matrix.

    Raises NotPositiveDefinite with the (0-based) failing pivot.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {A.shape}")
    dtype = np.complex128 if np.iscomplexobj(A) else np.float64
    potrf = sla.get_lapack_funcs("potrf", dtype=dtype)
    L, info = potrf(np.asarray(A, dtype=dtype), lower=True, clean=True)
    if info > 0:
        raise NotPositiveDefinite(info - 1)
    if info < 0:
        raise ValueError(f"potrf: illegal argument {-info}")
    return CholeskyFactor(L)


def cholesky_solve(F: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b)
    if b.shape[0] != F.n:
        raise DimensionMismatch(f"factor has size {F.n}, rhs has {b.shape[0]}")
    y = sla.solve_triangular(F.L, b, lower=True)
    return sla.solve_triangular(F.L, y, lower=True, trans="C")


def hpd_inverse(A: np.ndarray) -> np.ndarray:
    """Inverse of an HPD matrix through its Cholesky factor, re-symmetrised."""
    F = hermitian_cholesky(A)
    Linv = sla.solve_triangular(F.L, np.eye(F.n, dtype=F.L.dtype), lower=True)
    return Linv.conj().T @ Linv


def triple_product(P, A):
    """P^H A P for sparse P (m x k) and Hermitian A (m x m), symmetrised."""
    if P.shape[0] != A.shape[0] or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"P is {P.shape}, A is {A.shape}")
    P = sp.csr_matrix(P)
    A = sp.csr_matrix(A)
    C = (P.conj().T @ (A @ P)).tocsr()
    return hermitian_part(C).tocsr()


@dataclass
class PCGResult:
    x: np.ndarray
    iterations: int
    residuals: list[float] = field(default_factory=list)
    converged: bool = True
    reference: float = 0.0

    @property
    def relative_residual(self) -> float:
        return self.residuals[-1] / self.reference if self.reference > 0 else 0.0


class MaxIterationsExceeded(RuntimeError):
    def __init__(self, result: PCGResult):
        super().__init__(f"PCG did not converge in {result.iterations} iterations "
                         f"(relative residual {result.relative_residual:.3e})")
        self.result = result


def _as_operator(A) -> Operator:
    if callable(A):
        return A
    return lambda v: A @ v


def pcg(apply_A, apply_M, b: np.ndarray, tol: float = 1e-7, max_iter: int = 1000,
        x0: np.ndarray | None = None, recompute_every: int = 50,
        callback: Callable[[np.ndarray], None] | None = None) -> PCGResult:
    """Preconditioned conjugate gradients for Hermitian positive definite systems.

    Stops when the true residual norm ||b - A x||_2 falls below ``tol`` times
    ||b||_2 (for a zero initial guess, the initial residual).  The residual is
    carried by recurrence and recomputed from scratch every
    ``recompute_every`` iterations.  ``residuals[k]`` is the residual norm
    after k iterations.  ``callback`` sees a copy of every iterate.
    """
    A = _as_operator(apply_A)
    M = _as_operator(apply_M)
    b = np.asarray(b, dtype=complex)
    n = b.shape[0]
    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return PCGResult(np.zeros(n, dtype=complex), 0, [0.0], True, 0.0)
    r = b - A(x) if x0 is not None else b.copy()
    rnorm = np.linalg.norm(r)
    history = [rnorm]
    if rnorm <= tol * bnorm:
        return PCGResult(x, 0, history, True, bnorm)

    z = M(r)
    rz = np.vdot(r, z)
    if rz.real <= 0:
        raise BreakdownNonpositiveCurvature(f"preconditioner not positive: <r, Mr> = {rz}")
    d = z.copy()
    it = 0
    while it < max_iter:
        Ad = A(d)
        dAd = np.vdot(d, Ad).real
        if dAd <= 0:
            raise BreakdownNonpositiveCurvature(f"<d, Ad> = {dAd} at iteration {it}")
        alpha = rz / dAd
        x += alpha * d
        it += 1
        if callback is not None:
            callback(x.copy())
        if it % recompute_every == 0:
            r = b - A(x)
        else:
            r -= alpha * Ad
        rnorm = np.linalg.norm(r)
        history.append(rnorm)
        if rnorm <= tol * bnorm:
            # confirm against the true residual before declaring convergence
            true = np.linalg.norm(b - A(x))
            if true <= tol * bnorm:
                history[-1] = true
                return PCGResult(x, it, history, True, bnorm)
            r = b - A(x)
        z = M(r)
        rz_new = np.vdot(r, z)
        if rz_new.real <= 0:
            raise BreakdownNonpositiveCurvature(f"preconditioner not positive: <r, Mr> = {rz_new}")
        beta = rz_new / rz
        rz = rz_new
        d = z + beta * d
    log.warning("pcg: no convergence after %d iterations (rel. residual %.3e)",
                it, history[-1] / bnorm)
    return PCGResult(x, it, history, False, bnorm)
