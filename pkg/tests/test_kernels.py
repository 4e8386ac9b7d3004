import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from diffmix import kernels

nb = kernels.numba_impl
np_impl = kernels.numpy_impl
needs_numba = pytest.mark.skipif(nb is None, reason="numba not installed")


def _attn_inputs(rng, dtype=np.float64):
    B, L, A = 7, 5, 4
    q = rng.standard_normal((B, A)).astype(dtype)
    k = rng.standard_normal((B, L, A)).astype(dtype)
    v = rng.standard_normal((B, L, A)).astype(dtype)
    mask = rng.random((B, L)) < 0.7
    mask[:, 0] = True
    return q, k, v, mask


@needs_numba
def test_attention_parity(rng):
    q, k, v, mask = _attn_inputs(rng)
    (o1, w1), (o2, w2) = np_impl.attention_forward(q, k, v, mask), nb.attention_forward(q, k, v, mask)
    np.testing.assert_allclose(o1, o2, atol=1e-12)
    np.testing.assert_allclose(w1, w2, atol=1e-12)
    assert np.all(w1[~mask] == 0)
    d = rng.standard_normal(o1.shape)
    for a, b in zip(np_impl.attention_backward(d, q, k, v, w1), nb.attention_backward(d, q, k, v, w1)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_attention_backward_finite_difference(rng):
    q, k, v, mask = _attn_inputs(rng)
    d = rng.standard_normal((q.shape[0], q.shape[1]))
    out, w = kernels.attention_forward(q, k, v, mask)
    dq, dk, dv = kernels.attention_backward(d, q, k, v, w)
    h = 1e-6
    for arr, grad in ((q, dq), (k, dk), (v, dv)):
        for flat in (0, 5, arr.size - 1):
            idx = np.unravel_index(flat, arr.shape)
            arr[idx] += h
            up = (kernels.attention_forward(q, k, v, mask)[0] * d).sum()
            arr[idx] -= 2 * h
            down = (kernels.attention_forward(q, k, v, mask)[0] * d).sum()
            arr[idx] += h
            assert abs((up - down) / (2 * h) - grad[idx]) < 1e-6


@needs_numba
def test_elementwise_and_step_parity(rng):
    x = rng.standard_normal((6, 5)) * 4
    d = rng.standard_normal((6, 5))
    np.testing.assert_allclose(np_impl.silu_forward(x), nb.silu_forward(x), rtol=1e-12)
    np.testing.assert_allclose(np_impl.silu_backward(x, d), nb.silu_backward(x, d), rtol=1e-12)
    eps, z = rng.standard_normal((2, 6, 5))
    for ab_t, ab_prev in ((0.3, 0.6), (0.9, 1.0)):
        np.testing.assert_allclose(np_impl.ancestral_step(x, eps, ab_t, ab_prev, z),
                                   nb.ancestral_step(x, eps, ab_t, ab_prev, z), atol=1e-12)


def test_ancestral_final_step_returns_clean_estimate(rng):
    x, eps, z = rng.standard_normal((3, 4, 2))
    out = kernels.ancestral_step(x, eps, 0.5, 1.0, z)
    np.testing.assert_allclose(out, (x - np.sqrt(0.5) * eps) / np.sqrt(0.5), atol=1e-12)


@needs_numba
def test_cutmix_centroid_xent_parity(rng):
    xa, xb = rng.standard_normal((2, 4, 6, 5))
    boxes = np.array([[0, 3, 1, 4], [2, 2, 0, 5], [0, 6, 0, 5], [1, 4, 2, 3]])
    np.testing.assert_array_equal(np_impl.cutmix_paste(xa, xb, boxes), nb.cutmix_paste(xa, xb, boxes))
    pts, cents = rng.standard_normal((50, 3)), rng.standard_normal((4, 3))
    for a, b in zip(np_impl.nearest_centroid(pts, cents), nb.nearest_centroid(pts, cents)):
        np.testing.assert_allclose(a, b, atol=1e-12)
    logits = rng.standard_normal((8, 5)) * 10
    labels = rng.dirichlet(np.ones(5), size=8)
    for a, b in zip(np_impl.soft_xent(logits, labels), nb.soft_xent(logits, labels)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_env_flag_selects_numpy():
    code = "from diffmix import kernels; print(kernels.backend())"
    env = dict(os.environ, DIFFMIX_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["DIFFMIX_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == ("numba" if nb is not None else "numpy")


def test_silu_always_numpy():
    assert kernels.silu_forward is np_impl.silu_forward
    assert set(kernels.NUMPY_ALWAYS) <= set(kernels.KERNELS)
