"""Closed-form ADMM subproblem solutions: soft thresholding, box projection and
the scale-invariant h-update of the L1/L2 splitting."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

TAU_SMALL_D = 1e-14


def shrink(x, mu: float) -> np.ndarray:
    """Soft threshold ``sign(x) * max(|x| - mu, 0)``; ``mu = inf`` returns zeros."""
    if mu < 0:
        raise ValueError(f"shrink threshold must be non-negative, got {mu}")
    x = np.asarray(x, dtype=float)
    if np.isinf(mu):
        return np.zeros_like(x)
    return np.sign(x) * np.maximum(np.abs(x) - mu, 0.0)


def box_project(x, alpha: float, beta: float) -> np.ndarray:
    """Clamp ``x`` elementwise to ``[alpha, beta]`` (either bound may be infinite)."""
    if alpha > beta:
        raise ValueError(f"empty box: alpha={alpha} > beta={beta}")
    return np.minimum(np.maximum(np.asarray(x, dtype=float), alpha), beta)


def tau_coefficient(D: float) -> float:
    """Real root ``tau >= 1`` of ``tau**3 - tau**2 - D = 0`` via Cardano's formula.

    ``C = cbrt((27D + 2 + sqrt((27D + 2)**2 - 4)) / 2)`` and
    ``tau = (C + 1 + 1/C) / 3``.  The discriminant is evaluated as
    ``27D (27D + 4)`` to avoid cancellation for small ``D``.
    """
    if not (np.isfinite(D) and D > 0):
        raise ValueError(f"tau_coefficient needs finite D > 0, got {D}")
    if D < TAU_SMALL_D:
        return 1.0
    p = 27.0 * D
    C = np.cbrt((p + 2.0 + np.sqrt(p * (p + 4.0))) / 2.0)
    return float((C + 1.0 + 1.0 / C) / 3.0)


class HBranch(str, enum.Enum):
    CUBIC_ROOT = "cubic_root"
    RANDOM_FALLBACK = "random_fallback"


@dataclass
class HUpdateResult:
    h: np.ndarray
    branch: HBranch
    tau: float | None = None


def h_update(w: np.ndarray, rho2: float, grad_l1: float,
             rng: np.random.Generator) -> HUpdateResult:
    """Minimise ``||grad u||_1 / ||h||_2 + rho2/2 ||w - h||^2`` over ``h``.

    The minimiser is ``tau * w`` with ``D = grad_l1 / (rho2 ||w||^3)``.  When
    ``w = 0`` any ``h`` of norm ``(grad_l1 / rho2)**(1/3)`` is optimal and a
    random one (uniform on ``[-1, 1)`` before rescaling) is returned.
    """
    if rho2 <= 0:
        raise ValueError("rho2 must be positive")
    w = np.asarray(w, dtype=float)
    wn = float(np.linalg.norm(w))
    if wn > 0:
        D = grad_l1 / (rho2 * wn ** 3)
        tau = tau_coefficient(D) if D > 0 else 1.0
        return HUpdateResult(tau * w, HBranch.CUBIC_ROOT, tau)
    if grad_l1 == 0:
        return HUpdateResult(np.zeros_like(w), HBranch.RANDOM_FALLBACK)
    e = rng.uniform(-1.0, 1.0, size=w.shape)
    target = (grad_l1 / rho2) ** (1.0 / 3.0)
    return HUpdateResult(e * (target / np.linalg.norm(e)), HBranch.RANDOM_FALLBACK)
