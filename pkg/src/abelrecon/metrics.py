"""Reconstruction quality metrics: RMSE, block SSIM and two-class CNR."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Field2D

K1 = 0.01
K2 = 0.03


def _arr(f):
    return f.values if isinstance(f, Field2D) else np.asarray(f, dtype=float)


def _pair(u, v):
    a, b = _arr(u), _arr(v)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(u, u_ref) -> float:
    """``||u - u_ref||_2 / N`` with ``N`` the pixel count.

    Note the divisor is ``N``, not ``sqrt(N)``; see :func:`rmse_conventional`.
    """
    a, b = _pair(u, u_ref)
    return float(np.linalg.norm(a - b) / a.size)


def rmse_conventional(u, u_ref) -> float:
    """Root of the mean squared difference, ``||u - u_ref||_2 / sqrt(N)``."""
    a, b = _pair(u, u_ref)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _blocks(a, block):
    rows, cols = (a.shape[0] // block) * block, (a.shape[1] // block) * block
    if rows == 0 or cols == 0:
        raise ValueError(f"field {a.shape} smaller than one {block}x{block} block")
    a = a[:rows, :cols]
    return a.reshape(rows // block, block, cols // block, block).swapaxes(1, 2).reshape(-1, block * block)


def ssim(u, u_ref, block: int = 10) -> float:
    """Mean SSIM over an exact tiling of ``block x block`` squares.

    Trailing partial blocks are dropped.  Stabilisers are
    ``c1 = (0.01 L)^2``, ``c2 = (0.03 L)^2`` with ``L`` the dynamic range of
    ``u_ref`` (1 when ``u_ref`` is constant); block variances and covariance
    use the unbiased ``n - 1`` denominator.
    """
    a, b = _pair(u, u_ref)
    L = float(b.max() - b.min())
    if L == 0.0:
        if np.array_equal(a, b):
            return 1.0
        L = 1.0
    c1, c2 = (K1 * L) ** 2, (K2 * L) ** 2
    va, vb = _blocks(a, block), _blocks(b, block)
    n = block * block
    mu_a, mu_b = va.mean(axis=1), vb.mean(axis=1)
    da, db = va - mu_a[:, None], vb - mu_b[:, None]
    var_a = (da * da).sum(axis=1) / (n - 1)
    var_b = (db * db).sum(axis=1) / (n - 1)
    cov = (da * db).sum(axis=1) / (n - 1)
    per_block = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(per_block.mean())


@dataclass
class MetricReport:
    rmse: float
    ssim: float
    cnr: float | None = None
    block_size: int = 10
    c1: float = math.nan
    c2: float = math.nan


def evaluate(u, u_ref, block: int = 10) -> MetricReport:
    b = _arr(u_ref)
    L = float(b.max() - b.min()) or 1.0
    return MetricReport(rmse(u, u_ref), ssim(u, u_ref, block), None, block,
                        (K1 * L) ** 2, (K2 * L) ** 2)


def cnr(d, threshold: float = 0.5) -> float:
    """``|mu1 - mu2| / |sigma1 - sigma2|`` for the classes ``d < threshold`` and ``d >= threshold``.

    Standard deviations are population (``ddof=0``).  Returns ``inf`` when
    the two class deviations coincide.
    """
    a = _arr(d).ravel()
    low, high = a[a < threshold], a[a >= threshold]
    if low.size == 0 or high.size == 0:
        raise ValueError(f"threshold {threshold} leaves an empty class")
    num = abs(low.mean() - high.mean())
    den = abs(low.std() - high.std())
    if den == 0.0:
        return math.inf
    return float(num / den)
