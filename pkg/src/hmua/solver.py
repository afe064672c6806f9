"""ADMM solvers for nonnegative L1-regularized unmixing.

Both problems are split as ``U = V``: ``U`` carries the quadratic terms and is
updated by a linear solve, ``V`` carries the L1 penalty and the
nonnegativity constraint and is updated by a shifted, clipped threshold.
The linear system matrix does not depend on the pixel, so it is factored
once per solve and applied to all columns at every iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import AbundanceMap, DimensionMismatch, InvalidParameter, SolverParams, SpectralLibrary

_FLOOR = 1e-300


@dataclass(frozen=True)
class SolveResult:
    X: AbundanceMap
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    mu: float
    converged: bool
    history: Optional[np.ndarray] = field(default=None, repr=False)


def _matrix(lib) -> np.ndarray:
    return lib.data if isinstance(lib, SpectralLibrary) else np.asarray(lib, dtype=np.float64)


def objective(kind: str, Y, A, X, lam: float, beta: float = 0.0, Xd=None) -> float:
    """Objective of the coarse or the cross-scale regularized problem at ``X``.

    coarse:       0.5 ||Y - AX||^2 + lam * ||X||_{1,1}
    regularized:  the above + 0.5 * beta * ||Xd - X||^2
    """
    A = _matrix(A)
    Y = np.asarray(Y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if A.shape[0] != Y.shape[0] or A.shape[1] != X.shape[0] or X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"inconsistent shapes Y{Y.shape} A{A.shape} X{X.shape}")
    r = Y - A @ X
    val = 0.5 * float(np.vdot(r, r)) + lam * float(np.abs(X).sum())
    if kind == "coarse":
        return val
    if kind != "regularized":
        raise ValueError(f"unknown objective kind {kind!r}")
    Xd = np.asarray(Xd, dtype=np.float64)
    if Xd.shape != X.shape:
        raise DimensionMismatch(f"Xd shape {Xd.shape} != X shape {X.shape}")
    e = Xd - X
    return val + 0.5 * beta * float(np.vdot(e, e))


def _norm(a: np.ndarray) -> float:
    flat = a.ravel()
    return math.sqrt(float(np.dot(flat, flat)))


def default_mu(AtY: np.ndarray) -> float:
    mu = 0.1 * float(np.mean(np.abs(AtY))) if AtY.size else 0.0
    return mu if mu > 0 and np.isfinite(mu) else 1.0


def _admm(A, Y, lam, beta, Xd, params: SolverParams, record: bool):
    P = A.shape[1]
    n = Y.shape[1]
    AtY = A.T @ Y
    mu = params.mu if params.mu is not None else default_mu(AtY)
    rhs = AtY if beta == 0 else AtY + beta * Xd
    factor = cho_factor(A.T @ A + (mu + beta) * np.eye(P))
    # explicit inverse turns the per-iteration solve into one GEMM
    Binv = cho_solve(factor, np.eye(P))
    base = Binv @ rhs
    muBinv = mu * Binv
    thresh = lam / mu

    V = np.zeros((P, n))
    D = np.zeros((P, n))
    U = np.empty((P, n))
    W = np.empty((P, n))
    V_prev = np.empty((P, n))
    kind = "coarse" if beta == 0 else "regularized"
    hist = [objective(kind, Y, A, V, lam, beta, Xd)] if record else None
    primal = dual = np.inf
    it = 0
    for it in range(1, params.max_iters + 1):
        np.subtract(V, D, out=W)
        np.matmul(muBinv, W, out=U)
        U += base
        V, V_prev = V_prev, V
        np.add(U, D, out=V)
        V -= thresh
        np.maximum(V, 0.0, out=V)
        D += U
        D -= V
        # W is free again; reuse it for the residuals
        np.subtract(U, V, out=W)
        r_p = _norm(W)
        np.subtract(V, V_prev, out=W)
        r_d = _norm(W)
        vn = _norm(V)
        primal = r_p / max(_norm(U), vn, _FLOOR)
        dual = r_d / max(vn, _norm(D), _FLOOR)
        if record:
            hist.append(objective(kind, Y, A, V, lam, beta, Xd))
        if max(primal, dual) <= params.tol:
            break
    obj = objective(kind, Y, A, V, lam, beta, Xd)
    converged = bool(max(primal, dual) <= params.tol)
    return SolveResult(
        AbundanceMap(V), it, float(primal), float(dual), obj, float(mu), converged,
        np.asarray(hist) if record else None,
    )


def solve_coarse(Yc, A, lam_c: float, params: SolverParams = SolverParams(), record: bool = False) -> SolveResult:
    """Nonnegative lasso ``min 0.5||Yc - A Xc||^2 + lam_c ||Xc||_1, Xc >= 0``."""
    A = _matrix(A)
    Yc = np.asarray(Yc, dtype=np.float64)
    if Yc.ndim != 2 or Yc.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"data has shape {Yc.shape}, library has {A.shape[0]} bands")
    if not lam_c >= 0:
        raise InvalidParameter(f"lambda must be >= 0, got {lam_c}")
    return _admm(A, Yc, lam_c, 0.0, None, params, record)


def solve_regularized(
    Y, A, Xd, lam: float, beta: float, params: SolverParams = SolverParams(), record: bool = False
) -> SolveResult:
    """Nonnegative lasso with a quadratic pull ``(beta/2)||Xd - X||^2`` toward ``Xd``."""
    A = _matrix(A)
    Y = np.asarray(Y, dtype=np.float64)
    Xd = np.asarray(Xd, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"data has shape {Y.shape}, library has {A.shape[0]} bands")
    if Xd.shape != (A.shape[1], Y.shape[1]):
        raise DimensionMismatch(f"Xd has shape {Xd.shape}, expected {(A.shape[1], Y.shape[1])}")
    if not (lam >= 0 and beta >= 0):
        raise InvalidParameter(f"lambda and beta must be >= 0, got {lam}, {beta}")
    return _admm(A, Y, lam, float(beta), Xd, params, record)
