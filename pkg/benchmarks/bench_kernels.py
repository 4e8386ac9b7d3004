"""Time every hot kernel under the numpy and numba implementations.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--batch 256]

Numba timings exclude the first (compiling) call.
"""

import argparse
import timeit

import numpy as np

from diffmix import kernels


def inputs(B: int, rng):
    L, A, E, D, H, N = 8, 32, 32, 64, 64, 10
    q = rng.standard_normal((B, A))
    keys = rng.standard_normal((B, L, A))
    vals = rng.standard_normal((B, L, E))
    mask = np.ones((B, L))
    mask[:, L // 2:] = rng.random((B, L - L // 2)) < 0.5
    _, w = kernels.numpy_impl.attention_forward(q, keys, vals, mask)
    d_out = rng.standard_normal((B, E))
    x = rng.standard_normal((B, H))
    images = rng.standard_normal((B, 32, 32, 3))
    boxes = np.tile(np.array([[4, 20, 8, 24]]), (B, 1))
    pts = rng.standard_normal((B * 8, D))
    cents = rng.standard_normal((N, D))
    logits = rng.standard_normal((B, N))
    labels = rng.dirichlet(np.ones(N), size=B)
    return {
        "attention_forward": (q, keys, vals, mask),
        "attention_backward": (d_out, q, keys, vals, w),
        "silu_forward": (x,),
        "silu_backward": (x, x),
        "ancestral_step": (x, x, 0.3, 0.5, x),
        "cutmix_paste": (images, images[::-1].copy(), boxes),
        "nearest_centroid": (pts, cents),
        "soft_xent": (logits, labels),
    }


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=256)
    args = ap.parse_args(argv)
    if kernels.numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")
    data = inputs(args.batch, np.random.default_rng(0))
    print(f"{'kernel':<20} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for name in kernels.KERNELS:
        a = data[name]
        f_np = getattr(kernels.numpy_impl, name)
        f_nb = getattr(kernels.numba_impl, name)
        f_nb(*a)  # compile
        t_np = min(timeit.repeat(lambda: f_np(*a), number=1, repeat=args.repeat)) * 1e6
        t_nb = min(timeit.repeat(lambda: f_nb(*a), number=1, repeat=args.repeat)) * 1e6
        print(f"{name:<20} {t_np:>10.1f} {t_nb:>10.1f} {t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
