r"""ADMM reconstruction drivers.

:func:`reconstruct_l1l2` solves

.. math::
   \min_u \frac{\|\nabla u\|_1}{\|\nabla u\|_2} + \frac{\lambda}{2}\|Au - d\|_2^2
   \quad\text{s.t.}\quad \alpha \le u \le \beta

with a nested ADMM (outer loop on the scale variable ``h``, inner loop on the
TV split ``dvec`` and the box split ``v``; every ``u``-update is a CG solve).
:func:`reconstruct_tv` is the single-loop box-constrained TV baseline.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .abelop import SparseOperator
from .diffops import grad, grad_transpose
from .grid import Field2D
from .krylov import CGDivergence, cg_solve, estimate_opnorm_sq
from .prox import HBranch, box_project, h_update, shrink

LAMBDA_SAFETY = 0.99


class NumericalFailure(ArithmeticError):
    """A solver iterate became non-finite or the inner CG solve diverged."""


@dataclass(frozen=True)
class SolverParams:
    """Solver controls; ``None`` selects the method's automatic default.

    Automatic values: ``lam = 0.99 / ||A^T A||``; for L1/L2
    ``rho1 = rho2 = 5e-3 dr^2``, ``rho3 = 1``, ``j_max = 5``; for TV
    ``rho1 = 1e-2 dr^2``, ``rho2 = 1``, ``j_max = 150``.  ``dr`` is the
    radial pitch of the reconstruction grid.
    """

    lam: float | None = None
    rho1: float | None = None
    rho2: float | None = None
    rho3: float | None = None
    eps: float = 1e-7
    k_max: int = 30
    j_max: int | None = None
    alpha: float = 0.0
    beta: float = math.inf
    cg_tol: float = 1e-7
    cg_max_iter: int = 1000
    seed: int = 0
    opnorm_tol: float = 1e-6
    opnorm_max_iter: int = 200

    def __post_init__(self):
        if self.alpha > self.beta:
            raise ValueError(f"alpha={self.alpha} exceeds beta={self.beta}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.k_max < 1 or (self.j_max is not None and self.j_max < 1) or self.cg_max_iter < 1:
            raise ValueError("iteration caps must be >= 1")
        for name in ("lam", "rho1", "rho2", "rho3"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive, got {val}")

    def resolved(self, A: SparseOperator, method: str) -> "SolverParams":
        """Copy with every automatic value filled in for operator ``A``."""
        dr2 = A.recon.spacing_col ** 2
        if method == "l1l2":
            defaults = dict(rho1=5e-3 * dr2, rho2=5e-3 * dr2, rho3=1.0, j_max=5)
        elif method == "tv":
            defaults = dict(rho1=1e-2 * dr2, rho2=1.0, rho3=1.0, j_max=150)
        else:
            raise ValueError(f"unknown method {method!r}")
        updates = {k: v for k, v in defaults.items() if getattr(self, k) is None}
        if self.lam is None:
            updates["lam"] = auto_lambda(A, self.opnorm_tol, self.opnorm_max_iter, self.seed)
        return dataclasses.replace(self, **updates)


def auto_lambda(A: SparseOperator, tol: float = 1e-6, max_iter: int = 200, seed: int = 0) -> float:
    """``0.99 / ||A^T A||`` with the norm from seeded power iteration."""
    return LAMBDA_SAFETY / estimate_opnorm_sq(A, tol=tol, max_iter=max_iter, seed=seed)


@dataclass
class ReconResult:
    """Solver output and diagnostics.

    ``u`` is the box-feasible split variable ``v`` at exit; ``u_raw`` is the
    last CG iterate.  Histories start with the zero initial point, so they
    hold ``outer_iters + 1`` entries.
    """

    u: Field2D
    u_raw: Field2D
    method: str
    params: SolverParams
    outer_iters: int
    total_inner_iters: int
    total_cg_iters: int
    converged: bool
    seed: int
    objective_history: list[float] = field(default_factory=list)
    residual_history: list[float] = field(default_factory=list)
    h_norm_history: list[float] = field(default_factory=list)
    rel_change_history: list[float] = field(default_factory=list)
    h_norm_min: float = math.nan
    tv_split_gap: float = math.nan
    box_split_gap: float = math.nan
    degenerate_ratio: bool = False
    fallback_count: int = 0

    def history_rows(self):
        """``(k, objective, residual, h_norm, rel_change)`` tuples."""
        return list(zip(range(len(self.objective_history)), self.objective_history,
                        self.residual_history, self.h_norm_history, self.rel_change_history))


@dataclass(frozen=True)
class Objective:
    total: float
    ratio: float
    data: float
    degenerate: bool


def objective_l1l2(u, A: SparseOperator, d, lam: float) -> Objective:
    """``||grad u||_1 / ||grad u||_2 + lam/2 ||A u - d||^2``.

    For constant ``u`` the ratio is 0/0; it is reported as 0 and flagged.
    """
    uv = _flat(u)
    g = grad(uv.reshape(A.recon.shape))
    l2 = float(np.linalg.norm(g))
    degenerate = l2 == 0.0
    ratio = 0.0 if degenerate else float(np.abs(g).sum()) / l2
    data = 0.5 * lam * float(np.sum((A.matvec(uv) - _flat(d)) ** 2))
    return Objective(ratio + data, ratio, data, degenerate)


def objective_tv(u, A: SparseOperator, d, lam: float) -> float:
    uv = _flat(u)
    tv = float(np.abs(grad(uv.reshape(A.recon.shape))).sum())
    return tv + 0.5 * lam * float(np.sum((A.matvec(uv) - _flat(d)) ** 2))


def _flat(x) -> np.ndarray:
    return (x.values if isinstance(x, Field2D) else np.asarray(x, dtype=float)).ravel()


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    diff = float(np.linalg.norm(new - old))
    norm = float(np.linalg.norm(new))
    if norm == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / norm


def _check_inputs(A: SparseOperator, d):
    dv = _flat(d)
    if dv.size != A.n_rows:
        raise ValueError(f"data has {dv.size} samples, operator expects {A.n_rows}")
    if isinstance(d, Field2D) and d.shape != A.detector.shape:
        raise ValueError(f"data shape {d.shape} does not match detector {A.detector.shape}")
    if not np.all(np.isfinite(dv)):
        raise NumericalFailure("data contains non-finite values")
    return dv


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalFailure("non-finite iterate")


def _normal_operator(A, shape, lam, rho_grad, rho_id):
    def M(x):
        gtg = grad_transpose(grad(x.reshape(shape))).ravel()
        return lam * A.rmatvec(A.matvec(x)) + rho_grad * gtg + rho_id * x
    return M


def _cg(M, rhs, x0, p):
    try:
        return cg_solve(M, rhs, x0, tol=p.cg_tol, max_iter=p.cg_max_iter)
    except CGDivergence as exc:
        raise NumericalFailure(f"CG diverged: {exc}") from exc


def reconstruct_l1l2(A: SparseOperator, d, params: SolverParams | None = None) -> ReconResult:
    """Box-constrained L1/L2 reconstruction by nested ADMM.

    Both loops run while the iteration count is below its cap *and* the
    relative change of ``u`` exceeds ``eps``.  Multipliers ``b1`` and ``e``
    carry over between outer passes.
    """
    p = (params or SolverParams()).resolved(A, "l1l2")
    dv = _check_inputs(A, d)
    shape = A.recon.shape
    rng = np.random.default_rng(p.seed)
    M = _normal_operator(A, shape, p.lam, p.rho1 + p.rho2, p.rho3)
    Atd = p.lam * A.rmatvec(dv)

    n = A.n_cols
    u = np.zeros(n)
    v = np.zeros(n)
    e = np.zeros(n)
    zero_vec = np.zeros((2,) + shape)
    dvec, b1, b2, h = zero_vec.copy(), zero_vec.copy(), zero_vec.copy(), zero_vec.copy()

    obj0 = objective_l1l2(u, A, dv, p.lam)
    objective = [obj0.total]
    residual = [float(np.linalg.norm(dv))]
    h_norms = [0.0]
    rel_hist = [math.inf]
    inner_total = cg_total = fallbacks = 0

    k = 0
    rel_outer = math.inf
    while k < p.k_max and rel_outer > p.eps:
        u_outer = u
        h_norm = float(np.linalg.norm(h))
        d_thresh = math.inf if h_norm == 0.0 else 1.0 / (p.rho1 * h_norm)
        h_term = p.rho2 * grad_transpose(h - b2).ravel()
        j = 0
        rel_inner = math.inf
        while j < p.j_max and rel_inner > p.eps:
            rhs = Atd + p.rho1 * grad_transpose(dvec - b1).ravel() + h_term + p.rho3 * (v - e)
            sol = _cg(M, rhs, u, p)
            cg_total += sol.iters
            u_new = sol.x
            gu = grad(u_new.reshape(shape))
            dvec = shrink(gu + b1, d_thresh)
            v = box_project(u_new + e, p.alpha, p.beta)
            b1 = b1 + gu - dvec
            e = e + u_new - v
            _finite(u_new, dvec, b1, e)
            rel_inner = _rel_change(u_new, u)
            u = u_new
            j += 1
        inner_total += j

        gu = grad(u.reshape(shape))
        upd = h_update(gu + b2, p.rho2, float(np.abs(gu).sum()), rng)
        if upd.branch is HBranch.RANDOM_FALLBACK:
            fallbacks += 1
        h = upd.h
        b2 = b2 + gu - h
        _finite(h, b2)
        k += 1
        rel_outer = _rel_change(u, u_outer)

        obj = objective_l1l2(u, A, dv, p.lam)
        objective.append(obj.total)
        residual.append(float(np.linalg.norm(A.matvec(u) - dv)))
        h_norms.append(float(np.linalg.norm(h)))
        rel_hist.append(rel_outer)

    gu = grad(u.reshape(shape))
    return ReconResult(
        u=A.recon.with_values(v.reshape(shape)),
        u_raw=A.recon.with_values(u.reshape(shape)),
        method="l1l2",
        params=p,
        outer_iters=k,
        total_inner_iters=inner_total,
        total_cg_iters=cg_total,
        converged=rel_outer <= p.eps,
        seed=p.seed,
        objective_history=objective,
        residual_history=residual,
        h_norm_history=h_norms,
        rel_change_history=rel_hist,
        h_norm_min=min(h_norms[1:]) if k else math.nan,
        tv_split_gap=float(np.linalg.norm(gu - dvec)) / max(1.0, float(np.linalg.norm(gu))),
        box_split_gap=float(np.linalg.norm(u - v)) / max(1.0, float(np.linalg.norm(u))),
        degenerate_ratio=objective_l1l2(u, A, dv, p.lam).degenerate,
        fallback_count=fallbacks,
    )


def reconstruct_tv(A: SparseOperator, d, params: SolverParams | None = None) -> ReconResult:
    """Box-constrained anisotropic TV reconstruction (single-loop ADMM).

    ``rho3`` and ``k_max`` are unused; ``j_max`` caps the iterations.
    """
    p = (params or SolverParams()).resolved(A, "tv")
    dv = _check_inputs(A, d)
    shape = A.recon.shape
    M = _normal_operator(A, shape, p.lam, p.rho1, p.rho2)
    Atd = p.lam * A.rmatvec(dv)
    shrink_mu = 1.0 / p.rho1

    n = A.n_cols
    u = np.zeros(n)
    v = np.zeros(n)
    e = np.zeros(n)
    h = np.zeros((2,) + shape)
    b = np.zeros_like(h)

    objective = [objective_tv(u, A, dv, p.lam)]
    residual = [float(np.linalg.norm(dv))]
    h_norms = [0.0]
    rel_hist = [math.inf]
    cg_total = 0

    j = 0
    rel = math.inf
    while j < p.j_max and rel > p.eps:
        rhs = Atd + p.rho1 * grad_transpose(h - b).ravel() + p.rho2 * (v - e)
        sol = _cg(M, rhs, u, p)
        cg_total += sol.iters
        u_new = sol.x
        gu = grad(u_new.reshape(shape))
        h = shrink(gu + b, shrink_mu)
        b = b + gu - h
        v = box_project(u_new + e, p.alpha, p.beta)
        e = e + u_new - v
        _finite(u_new, h, b, e)
        rel = _rel_change(u_new, u)
        u = u_new
        j += 1

        objective.append(objective_tv(u, A, dv, p.lam))
        residual.append(float(np.linalg.norm(A.matvec(u) - dv)))
        h_norms.append(float(np.linalg.norm(h)))
        rel_hist.append(rel)

    gu = grad(u.reshape(shape))
    return ReconResult(
        u=A.recon.with_values(v.reshape(shape)),
        u_raw=A.recon.with_values(u.reshape(shape)),
        method="tv",
        params=p,
        outer_iters=j,
        total_inner_iters=j,
        total_cg_iters=cg_total,
        converged=rel <= p.eps,
        seed=p.seed,
        objective_history=objective,
        residual_history=residual,
        h_norm_history=h_norms,
        rel_change_history=rel_hist,
        h_norm_min=min(h_norms[1:]) if j else math.nan,
        tv_split_gap=float(np.linalg.norm(gu - h)) / max(1.0, float(np.linalg.norm(gu))),
        box_split_gap=float(np.linalg.norm(u - v)) / max(1.0, float(np.linalg.norm(u))),
    )
