"""Pure-numpy reference kernels.

These are the fallback path and the correctness reference for the numba
versions in ``_numba.py``. Signatures and return conventions must match.
"""

import numpy as np


def attention_forward(q, keys, vals, mask):
    """Single-query masked softmax attention.

    q: (B, A); keys, vals: (B, L, A); mask: (B, L) bool, at least one True per row.
    Returns (out (B, A), weights (B, L)).
    """
    scale = 1.0 / np.sqrt(q.shape[1])
    scores = np.einsum("ba,bla->bl", q, keys) * scale
    scores = np.where(mask, scores, -np.inf)
    scores = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    weights = weights.astype(q.dtype, copy=False)
    out = np.einsum("bl,bla->ba", weights, vals)
    return out, weights


def attention_backward(d_out, q, keys, vals, weights):
    scale = 1.0 / np.sqrt(q.shape[1])
    d_w = np.einsum("ba,bla->bl", d_out, vals)
    d_vals = weights[:, :, None] * d_out[:, None, :]
    d_scores = weights * (d_w - (weights * d_w).sum(axis=1, keepdims=True))
    d_q = np.einsum("bl,bla->ba", d_scores, keys) * scale
    d_keys = d_scores[:, :, None] * q[:, None, :] * scale
    return d_q.astype(q.dtype, copy=False), d_keys.astype(q.dtype, copy=False), d_vals


def silu_forward(x):
    # exp overflow for very negative x gives x / inf = -0, which is correct
    with np.errstate(over="ignore"):
        return x / (1.0 + np.exp(-x))


def silu_backward(x, d_out):
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-x))
    return d_out * (sig + x * sig * (1.0 - sig))


def ancestral_step(x, eps, ab_t, ab_prev, z):
    """One DDPM posterior step between cumulative levels ab_t -> ab_prev.

    ab_prev == 1 returns the clean estimate with no added noise.
    """
    x0 = (x - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
    a_eff = ab_t / ab_prev
    b_eff = 1.0 - a_eff
    c0 = np.sqrt(ab_prev) * b_eff / (1.0 - ab_t)
    ct = np.sqrt(a_eff) * (1.0 - ab_prev) / (1.0 - ab_t)
    var = (1.0 - ab_prev) / (1.0 - ab_t) * b_eff
    out = c0 * x0 + ct * x + np.sqrt(var) * z
    return out.astype(x.dtype, copy=False)


def cutmix_paste(xa, xb, boxes):
    """Paste box region of xb into xa per item. boxes: (B, 4) int rows (y0, y1, x0, x1)."""
    out = xa.copy()
    for i in range(xa.shape[0]):
        y0, y1, x0, x1 = boxes[i]
        out[i, y0:y1, x0:x1] = xb[i, y0:y1, x0:x1]
    return out


def nearest_centroid(points, centroids):
    """Returns (argmin index (n,), min squared distance (n,))."""
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    idx = d2.argmin(axis=1)
    return idx, d2[np.arange(points.shape[0]), idx]


def soft_xent(logits, labels):
    """Per-row soft cross-entropy and its gradient with respect to logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = -(labels * logp).sum(axis=1)
    grad = np.exp(logp) * labels.sum(axis=1, keepdims=True) - labels
    return loss, grad
