"""Forward-difference gradient with reflecting boundaries, its adjoint, and the Laplacian.

Vector fields are stacked arrays of shape ``(2, rows, cols)``: component 0 is
the radial difference (along columns), component 1 the axial difference
(along rows).  Differences are plain index differences; grid spacings are
absorbed into the penalty weights.
"""

import numpy as np

from .grid import Field2D


def _values(f):
    return f.values if isinstance(f, Field2D) else np.asarray(f, dtype=float)


def grad(f) -> np.ndarray:
    """Forward differences; the trailing row/column difference is 0 (reflecting edge)."""
    f = _values(f)
    g = np.zeros((2,) + f.shape)
    g[0, :, :-1] = f[:, 1:] - f[:, :-1]
    g[1, :-1, :] = f[1:, :] - f[:-1, :]
    return g


def grad_transpose(g: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`grad` under the unweighted inner product."""
    g = np.asarray(g, dtype=float)
    out = np.zeros(g.shape[1:])
    gr = g[0, :, :-1]
    out[:, :-1] -= gr
    out[:, 1:] += gr
    gy = g[1, :-1, :]
    out[:-1, :] -= gy
    out[1:, :] += gy
    return out


def laplacian(f) -> np.ndarray:
    """Neumann 5-point Laplacian, defined as ``-grad_transpose(grad(f))``."""
    return -grad_transpose(grad(f))


def grad_l1(f) -> tuple[float, float]:
    """``(||grad_r f||_1, ||grad_y f||_1)``."""
    g = grad(f)
    return float(np.abs(g[0]).sum()), float(np.abs(g[1]).sum())


def tv_norm(f) -> float:
    """Anisotropic total variation ``||grad_r f||_1 + ||grad_y f||_1``."""
    return float(np.abs(grad(f)).sum())
