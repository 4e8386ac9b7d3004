"""Noise-prediction objective and one optimisation step."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .schedule import NoiseSchedule, forward_noise_batch
from .text import Condition


def diffusion_loss(model, x0: np.ndarray, cond: Condition, sched: NoiseSchedule, rng, *, with_grad: bool = False):
    """Mean over items of ``||eps - eps_hat||^2`` at uniformly drawn steps.

    With ``with_grad`` returns ``(loss, grads, d_tokens)`` from the model's
    ``backward``; otherwise ``(loss, None, None)``.
    """
    x0 = np.asarray(x0)
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    dtype = getattr(model, "dtype", x0.dtype)
    x0 = x0.astype(dtype, copy=False)
    B = x0.shape[0]
    t = rng.integers(1, sched.T + 1, size=B)
    eps = rng.standard_normal(x0.shape).astype(dtype)
    x_t = forward_noise_batch(x0, t, eps, sched)
    if with_grad:
        pred, cache = model.forward(x_t, cond, t)
    else:
        pred = model.predict(x_t, cond, t)
    resid = pred.astype(np.float64) - eps
    loss = float((resid.reshape(B, -1) ** 2).sum(axis=1).mean())
    if not with_grad:
        return loss, None, None
    grads, d_tok = model.backward(cache, (2.0 / B) * resid)
    return loss, grads, d_tok


def train_step(
    model,
    batch: tuple[np.ndarray, Condition],
    sched: NoiseSchedule,
    rng,
    optimizer=None,
    cond_grad: Callable[[np.ndarray], dict] | None = None,
) -> float:
    """Compute the loss on ``batch`` and, given an optimizer, update.

    Only arrays in ``model.trainable_parameters()`` (plus whatever
    ``cond_grad`` returns for the token gradient) receive updates.
    """
    x0, cond = batch
    if len(x0) == 0:
        raise ValueError("empty batch")
    if optimizer is None:
        return diffusion_loss(model, x0, cond, sched, rng)[0]
    loss, grads, d_tok = diffusion_loss(model, x0, cond, sched, rng, with_grad=True)
    trainable = model.trainable_parameters()
    update = {k: grads[k] for k in trainable if k in grads}
    if cond_grad is not None:
        update.update(cond_grad(d_tok))
    optimizer.step(update)
    return loss
