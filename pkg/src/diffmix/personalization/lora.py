"""Low-rank residual adapters on named weight matrices."""

from __future__ import annotations

import numpy as np


class LowRankAdapter:
    """Trainable residual ``A @ B.T`` on a frozen ``m x n`` weight.

    ``A`` is Gaussian-initialised and ``B`` starts at zero, so a freshly
    attached adapter leaves the effective weight bitwise equal to the base.
    """

    def __init__(self, target: str, shape: tuple[int, int], rank: int = 10, rng=None, dtype=np.float32):
        m, n = shape
        if rank < 1:
            raise ValueError("rank must be >= 1")
        if rank > min(m, n):
            raise ValueError(f"rank {rank} exceeds min dimension of {target} ({m}x{n})")
        rng = np.random.default_rng() if rng is None else rng
        self.target = target
        self.rank = rank
        self.A = (rng.standard_normal((m, rank)) / np.sqrt(rank)).astype(dtype)
        self.B = np.zeros((n, rank), dtype=dtype)

    @property
    def n_params(self) -> int:
        return self.A.size + self.B.size

    def delta(self) -> np.ndarray:
        return self.A @ self.B.T

    def grads(self, d_weight: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Chain a gradient on the effective weight to ``(dA, dB)``."""
        return d_weight @ self.B, d_weight.T @ self.A


def attach_adapters(model, rank: int = 10, seed: int = 0, targets=None):
    """Attach a fresh adapter to every attention weight of ``model``.

    The base weights are frozen. Returns ``(model, adapters)``; the model is
    modified in place.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    targets = list(model.attention_weights() if targets is None else targets)
    for name in targets:
        m, n = model.params[name].shape
        if rank > min(m, n):
            raise ValueError(f"rank {rank} exceeds min dimension of {name} ({m}x{n})")
    rng = np.random.default_rng(seed)
    adapters = []
    for name in targets:
        ad = LowRankAdapter(name, model.params[name].shape, rank, rng=rng, dtype=model.dtype)
        model.adapters[name] = ad
        adapters.append(ad)
    model.base_trainable = False
    model.adapters_trainable = True
    return model, adapters


def detach_adapters(model) -> dict:
    adapters = dict(model.adapters)
    model.adapters.clear()
    return adapters
