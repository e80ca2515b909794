"""Matrix-free conjugate gradients and power iteration for ``||A^T A||``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class CGDivergence(ArithmeticError):
    """CG produced a non-finite iterate or hit a non-positive curvature direction."""


@dataclass
class CGResult:
    x: np.ndarray
    iters: int
    residual: float
    converged: bool


def cg_solve(M: Callable[[np.ndarray], np.ndarray], b: np.ndarray, x0: np.ndarray | None = None,
             tol: float = 1e-7, max_iter: int = 1000) -> CGResult:
    """Solve ``M x = b`` for symmetric positive definite ``M`` given as a callable.

    Stops when ``||b - M x|| / ||b|| <= tol`` (recurrence residual) or after
    ``max_iter`` iterations.  ``residual`` in the result is the true relative
    residual of the returned iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return CGResult(np.zeros_like(b), 0, 0.0, True)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - M(x) if x0 is not None else b.copy()
    p = r.copy()
    rr = r @ r
    it = 0
    while it < max_iter and np.sqrt(rr) > tol * bnorm:
        Mp = M(p)
        pMp = p @ Mp
        if not np.isfinite(pMp) or pMp <= 0:
            raise CGDivergence(f"non-positive curvature p'Mp={pMp:g} at iteration {it}")
        alpha = rr / pMp
        x += alpha * p
        r -= alpha * Mp
        rr_new = r @ r
        if not np.isfinite(rr_new):
            raise CGDivergence(f"non-finite residual at iteration {it}")
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    if not np.all(np.isfinite(x)):
        raise CGDivergence("non-finite iterate")
    res = float(np.linalg.norm(b - M(x)) / bnorm)
    return CGResult(x, it, res, bool(np.sqrt(rr) <= tol * bnorm))


def _matvecs(A):
    if hasattr(A, "matvec") and hasattr(A, "rmatvec"):
        return A.matvec, A.rmatvec, A.n_cols if hasattr(A, "n_cols") else A.shape[1]
    return (lambda v: A @ v), (lambda v: A.T @ v), A.shape[1]


def estimate_opnorm_sq(A, tol: float = 1e-6, max_iter: int = 200, seed: int = 0) -> float:
    """Largest eigenvalue of ``A^T A`` by power iteration from a seeded start vector.

    ``A`` may be a :class:`~abelrecon.abelop.SparseOperator`, a scipy sparse
    matrix or a dense array.
    """
    matvec, rmatvec, n = _matvecs(A)
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = rmatvec(matvec(v))
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - est) <= tol * new:
            return new
        est = new
    return est
