"""numba twins of the kernels in ``_numpy.py``.

Loops run per item so the small attention/softmax shapes used by the toy
backend avoid einsum dispatch overhead.
"""

import math

import numpy as np
from numba import njit

_opts = dict(cache=True, nogil=True, fastmath=False)


@njit(**_opts)
def attention_forward(q, keys, vals, mask):
    B, L, A = keys.shape
    scale = 1.0 / math.sqrt(A)
    out = np.zeros((B, A), dtype=q.dtype)
    weights = np.zeros((B, L), dtype=q.dtype)
    scores = np.empty(L, dtype=np.float64)
    for b in range(B):
        top = -np.inf
        for l in range(L):
            if mask[b, l]:
                acc = 0.0
                for a in range(A):
                    acc += q[b, a] * keys[b, l, a]
                acc *= scale
                scores[l] = acc
                if acc > top:
                    top = acc
        total = 0.0
        for l in range(L):
            if mask[b, l]:
                scores[l] = math.exp(scores[l] - top)
                total += scores[l]
            else:
                scores[l] = 0.0
        for l in range(L):
            w = scores[l] / total
            weights[b, l] = w
            if w != 0.0:
                for a in range(A):
                    out[b, a] += w * vals[b, l, a]
    return out, weights


@njit(**_opts)
def attention_backward(d_out, q, keys, vals, weights):
    B, L, A = keys.shape
    scale = 1.0 / math.sqrt(A)
    d_q = np.zeros((B, A), dtype=q.dtype)
    d_keys = np.zeros((B, L, A), dtype=q.dtype)
    d_vals = np.zeros((B, L, A), dtype=q.dtype)
    d_w = np.empty(L, dtype=np.float64)
    for b in range(B):
        dot = 0.0
        for l in range(L):
            acc = 0.0
            for a in range(A):
                acc += d_out[b, a] * vals[b, l, a]
                d_vals[b, l, a] = weights[b, l] * d_out[b, a]
            d_w[l] = acc
            dot += weights[b, l] * acc
        for l in range(L):
            ds = weights[b, l] * (d_w[l] - dot) * scale
            if ds != 0.0:
                for a in range(A):
                    d_q[b, a] += ds * keys[b, l, a]
                    d_keys[b, l, a] = ds * q[b, a]
    return d_q, d_keys, d_vals


@njit(**_opts)
def silu_forward(x):
    out = np.empty_like(x)
    xf = x.ravel()
    of = out.ravel()
    for i in range(xf.size):
        v = xf[i]
        of[i] = v / (1.0 + math.exp(-v))
    return out


@njit(**_opts)
def silu_backward(x, d_out):
    out = np.empty_like(x)
    xf = x.ravel()
    df = d_out.ravel()
    of = out.ravel()
    for i in range(xf.size):
        v = xf[i]
        s = 1.0 / (1.0 + math.exp(-v))
        of[i] = df[i] * (s + v * s * (1.0 - s))
    return out


@njit(**_opts)
def ancestral_step(x, eps, ab_t, ab_prev, z):
    a_eff = ab_t / ab_prev
    b_eff = 1.0 - a_eff
    c0 = math.sqrt(ab_prev) * b_eff / (1.0 - ab_t)
    ct = math.sqrt(a_eff) * (1.0 - ab_prev) / (1.0 - ab_t)
    sd = math.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * b_eff)
    se = math.sqrt(1.0 - ab_t)
    sa = math.sqrt(ab_t)
    out = np.empty_like(x)
    xf = x.ravel()
    ef = eps.ravel()
    zf = z.ravel()
    of = out.ravel()
    for i in range(xf.size):
        x0 = (xf[i] - se * ef[i]) / sa
        of[i] = c0 * x0 + ct * xf[i] + sd * zf[i]
    return out


@njit(**_opts)
def cutmix_paste(xa, xb, boxes):
    out = xa.copy()
    for i in range(xa.shape[0]):
        y0, y1, x0, x1 = boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3]
        out[i, y0:y1, x0:x1] = xb[i, y0:y1, x0:x1]
    return out


@njit(**_opts)
def nearest_centroid(points, centroids):
    n, D = points.shape
    k = centroids.shape[0]
    idx = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    for i in range(n):
        bi = 0
        bd = np.inf
        for c in range(k):
            acc = 0.0
            for d in range(D):
                diff = points[i, d] - centroids[c, d]
                acc += diff * diff
            if acc < bd:
                bd = acc
                bi = c
        idx[i] = bi
        best[i] = bd
    return idx, best


@njit(**_opts)
def soft_xent(logits, labels):
    B, N = logits.shape
    loss = np.empty(B, dtype=logits.dtype)
    grad = np.empty_like(logits)
    for b in range(B):
        top = logits[b, 0]
        for c in range(1, N):
            if logits[b, c] > top:
                top = logits[b, c]
        total = 0.0
        for c in range(N):
            total += math.exp(logits[b, c] - top)
        lse = math.log(total)
        mass = 0.0
        for c in range(N):
            mass += labels[b, c]
        acc = 0.0
        for c in range(N):
            logp = logits[b, c] - top - lse
            acc -= labels[b, c] * logp
            grad[b, c] = math.exp(logp) * mass - labels[b, c]
        loss[b] = acc
    return loss, grad
