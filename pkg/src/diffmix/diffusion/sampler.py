"""Guided reverse process starting from an arbitrary inference step."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .. import kernels
from .schedule import NoiseSchedule
from .text import Condition


@dataclass(frozen=True)
class SamplerConfig:
    T_infer: int = 25
    guidance_scale: float = 7.5
    solver: Literal["ancestral", "high_order_ode"] = "ancestral"
    seed: int = 0

    def __post_init__(self):
        if self.T_infer < 1:
            raise ValueError("T_infer must be >= 1")
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be >= 0")
        if self.solver not in ("ancestral", "high_order_ode"):
            raise ValueError(f"unknown solver {self.solver!r}")


def _broadcast(cond: Condition, n: int) -> Condition:
    if len(cond) == n:
        return cond
    if len(cond) == 1:
        return Condition(np.repeat(cond.tokens, n, axis=0), np.repeat(cond.mask, n, axis=0))
    raise ValueError(f"condition batch {len(cond)} does not match {n}")


def guided_eps(model, x, cond: Condition, uncond: Condition | None, t: int, w: float) -> np.ndarray:
    """Classifier-free guided noise: ``eps_u + w * (eps_c - eps_u)``."""
    n = x.shape[0]
    tt = np.full(n, t)
    eps_c = model.predict(x, _broadcast(cond, n), tt)
    if uncond is None or w == 1.0:
        return eps_c
    eps_u = model.predict(x, _broadcast(uncond, n), tt)
    return eps_u + np.asarray(w, dtype=eps_c.dtype) * (eps_c - eps_u)


def denoise_from(
    x_start: np.ndarray,
    t_start: int,
    cond: Condition,
    uncond: Condition | None,
    model,
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    rng=None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Run inference steps ``t_start, ..., 1`` and return the clean estimate.

    ``noise`` optionally supplies the ancestral noise, shaped
    ``(t_start, *x_start.shape)`` with row ``k - 1`` consumed at step ``k``.
    Otherwise noise comes from ``rng`` (default: seeded by ``cfg.seed``).
    """
    if not 0 <= t_start <= cfg.T_infer:
        raise ValueError(f"t_start={t_start} outside [0, {cfg.T_infer}]")
    if t_start == 0:
        return x_start
    taus = sched.inference_timesteps(cfg.T_infer)
    if noise is not None and noise.shape[0] < t_start:
        raise ValueError("noise has fewer rows than steps")
    if rng is None and noise is None and cfg.solver == "ancestral":
        rng = np.random.default_rng(cfg.seed)
    dtype = getattr(model, "dtype", np.float32)
    x = np.asarray(x_start, dtype=dtype)
    x0_last = None
    h_last = None
    for k in range(t_start, 0, -1):
        t, t_prev = int(taus[k]), int(taus[k - 1])
        ab_t, ab_prev = sched.alpha_bar(t), sched.alpha_bar(t_prev)
        eps = guided_eps(model, x, cond, uncond, t, cfg.guidance_scale)
        if cfg.solver == "ancestral":
            z = noise[k - 1] if noise is not None else rng.standard_normal(x.shape)
            x = kernels.ancestral_step(x, eps, ab_t, ab_prev, np.asarray(z, dtype=dtype))
        else:
            x, x0_last, h_last = _dpmpp_2m(x, eps, ab_t, ab_prev, x0_last, h_last)
    return x


def _dpmpp_2m(x, eps, ab_t, ab_prev, x0_last, h_last):
    """Second-order multistep update in data-prediction form.

    Falls back to first order on the first step and on the final step to
    the clean endpoint.
    """
    a_t, s_t = math.sqrt(ab_t), math.sqrt(1.0 - ab_t)
    a_p, s_p = math.sqrt(ab_prev), math.sqrt(1.0 - ab_prev)
    x0 = (x - s_t * eps) / a_t
    if s_p == 0.0:
        return x0.astype(x.dtype), x0, None
    h = math.log(a_p / s_p) - math.log(a_t / s_t)
    D = x0
    if x0_last is not None and h_last is not None:
        r = h_last / h
        D = (1.0 + 0.5 / r) * x0 - (0.5 / r) * x0_last
    x_new = (s_p / s_t) * x - a_p * math.expm1(-h) * D
    return x_new.astype(x.dtype), x0, h
