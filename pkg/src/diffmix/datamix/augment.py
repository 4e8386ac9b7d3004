"""Mixup and CutMix on ``(images, labels)`` batches.

Each item is paired with item ``(i + shift) % B`` for one random nonzero
shift, so partners always differ. Images are ``(B, H, W, ...)`` arrays;
flat ``(B, D)`` vectors are cut along their single axis.
"""

from __future__ import annotations

import math

import numpy as np

from .. import kernels


def _partners(B: int, rng) -> np.ndarray:
    return (np.arange(B) + int(rng.integers(1, B))) % B


def _check_alpha(alpha):
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")


def mixup(batch, alpha: float, rng, lam: float | None = None):
    """Convex combination ``lam * x_a + (1 - lam) * x_b`` with labels mixed alike."""
    _check_alpha(alpha)
    x, y = (np.asarray(a) for a in batch)
    if len(x) < 2:
        return x.copy(), y.copy()
    j = _partners(len(x), rng)
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    xm = (lam * x + (1.0 - lam) * x[j]).astype(x.dtype, copy=False)
    return xm, lam * y + (1.0 - lam) * y[j]


def random_box(shape, lam: float, rng) -> tuple[int, int, int, int]:
    """Box ``(y0, y1, x0, x1)`` covering about ``1 - lam`` of an ``(H, W)`` grid."""
    H, W = shape
    if W == 1:
        cut_h, cut_w = int(round(H * (1.0 - lam))), 1
    else:
        r = math.sqrt(1.0 - lam)
        cut_h, cut_w = int(round(H * r)), int(round(W * r))
    cy, cx = int(rng.integers(H)), int(rng.integers(W))
    y0, y1 = np.clip([cy - cut_h // 2, cy - cut_h // 2 + cut_h], 0, H)
    x0, x1 = np.clip([cx - cut_w // 2, cx - cut_w // 2 + cut_w], 0, W)
    if W == 1:
        x0, x1 = 0, 1
    return int(y0), int(y1), int(x0), int(x1)


def cutmix(batch, alpha: float, rng, lam: float | None = None, box=None):
    """Paste one box from each partner; the partner's label weight is the box's area share.

    ``box`` fixes ``(y0, y1, x0, x1)``; otherwise ``lam ~ Beta(alpha, alpha)``
    (or the given ``lam``) sets the box size and its centre is uniform.
    """
    _check_alpha(alpha)
    x, y = (np.asarray(a) for a in batch)
    if len(x) < 2:
        return x.copy(), y.copy()
    j = _partners(len(x), rng)
    flat = x.ndim == 2
    grid = x[:, :, None] if flat else x
    H, W = grid.shape[1], grid.shape[2]
    if box is None:
        if lam is None:
            lam = float(rng.beta(alpha, alpha))
        box = random_box((H, W), lam, rng)
    y0, y1, x0, x1 = (int(v) for v in box)
    if not (0 <= y0 <= y1 <= H and 0 <= x0 <= x1 <= W):
        raise ValueError(f"box {box} outside a {H}x{W} image")
    boxes = np.tile(np.array([[y0, y1, x0, x1]], dtype=np.int64), (len(x), 1))
    out = kernels.cutmix_paste(np.ascontiguousarray(grid), np.ascontiguousarray(grid[j]), boxes)
    r = (y1 - y0) * (x1 - x0) / (H * W)
    return (out[:, :, 0] if flat else out), (1.0 - r) * y + r * y[j]
