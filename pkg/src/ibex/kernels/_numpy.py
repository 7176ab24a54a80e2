"""Pure-numpy reference implementations of the hot kernels.

The compiled backend in ``_core.pyx`` mirrors these semantics exactly;
agreement is enforced by tests. Loss kernels take a [B, I] matrix of
classifier confidences y in (0, 1) and return (scalar loss, dL/dy).

Shared numerical guards: row sums are guarded with +1e-12 before
normalization, logarithm arguments are clamped to [1e-7, 1 - 1e-7], and
gradients treat the clamp as a dead zone.
"""

from __future__ import annotations

import numpy as np

Q_EPS = 1e-12
CLAMP_LO = 1e-7
CLAMP_HI = 1.0 - 1e-7
_LN2 = float(np.log(2.0))
_INV_LN2 = 1.0 / _LN2


def _as_batch(y: np.ndarray) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"expected a [B, I] confidence matrix, got shape {y.shape}")
    return y


def sparsity_loss_grad(y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean row entropy (bits) of the normalized confidences q = y / sum(y)."""
    y = _as_batch(y)
    b = y.shape[0]
    s = y.sum(axis=1, keepdims=True) + Q_EPS
    q = y / s
    qc = np.clip(q, CLAMP_LO, CLAMP_HI)
    log_q = np.log2(qc)
    value = float(-(q * log_q).sum(axis=1).mean())
    interior = (q > CLAMP_LO) & (q < CLAMP_HI)
    g = -(log_q + _INV_LN2 * interior)  # d(row loss)/dq_i
    dot = (q * g).sum(axis=1, keepdims=True)
    grad = (g - dot) / (s * b)
    return value, grad


def max_activation_loss_grad(y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over rows of -sum_i q_i log2(y_i), pushing top confidences to 1."""
    y = _as_batch(y)
    b = y.shape[0]
    s = y.sum(axis=1, keepdims=True) + Q_EPS
    q = y / s
    yc = np.clip(y, CLAMP_LO, CLAMP_HI)
    log_y = np.log2(yc)
    value = float(-(q * log_y).sum(axis=1).mean())
    h = -log_y  # d(row loss)/dq_i
    dot = (q * h).sum(axis=1, keepdims=True)
    interior = (y > CLAMP_LO) & (y < CLAMP_HI)
    grad = ((h - dot) / s - q / (yc * _LN2) * interior) / b
    return value, grad


def inactive_loss_grad(
    y: np.ndarray, nu: np.ndarray, gamma: float
) -> tuple[float, np.ndarray]:
    """Linear penalty for detectors whose sharpened mean activation is
    below their threshold: mean_i (1/nu_i) relu(nu_i - mean_p y_{p,i}^gamma).
    """
    y = _as_batch(y)
    nu = np.ascontiguousarray(nu, dtype=np.float64)
    b, n = y.shape
    if nu.shape != (n,):
        raise ValueError(f"nu has shape {nu.shape}, expected ({n},)")
    u = (y**gamma).mean(axis=0)
    deficit = nu - u
    active = deficit > 0  # only possible when nu_i > 0
    inv_nu = np.divide(1.0, nu, out=np.zeros_like(nu), where=nu > 0)
    value = float(np.mean(np.where(active, deficit, 0.0) * inv_nu))
    coef = -(gamma / (n * b)) * active * inv_nu
    grad = coef[None, :] * y ** (gamma - 1.0)
    return value, grad


def upsample_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-center alignment.

    Sample point for output cell (r, c) is ((r + .5) * h/H - .5,
    (c + .5) * w/W - .5) in source coordinates, clamped to the source grid.
    Constant inputs map to constant outputs.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    if src.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {src.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("target size must be at least 1x1")
    h, w = src.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def overlap_counts(
    maps: np.ndarray, masks: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pairwise intersection counts between binary detector maps and masks.

    maps: [I, P] and masks: [C, P], both in {0, 1}. Returns int64
    (intersections [I, C], map areas [I], mask areas [C]); unions follow as
    area_i + area_c - inter.
    """
    maps = np.ascontiguousarray(maps, dtype=np.uint8)
    masks = np.ascontiguousarray(masks, dtype=np.uint8)
    if maps.ndim != 2 or masks.ndim != 2 or maps.shape[1] != masks.shape[1]:
        raise ValueError(
            f"incompatible shapes: maps {maps.shape}, masks {masks.shape}"
        )
    inter = maps.astype(np.int64) @ masks.astype(np.int64).T
    return inter, maps.sum(axis=1, dtype=np.int64), masks.sum(axis=1, dtype=np.int64)
