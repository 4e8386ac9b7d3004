"""Discrete noise schedules and the closed-form forward process."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

ScheduleKind = Literal["linear", "cosine"]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step retention factors and their running products.

    Steps are 1-based in the API: ``alpha_bar(t)`` for ``t`` in ``1..T``
    reads ``alpha_bars[t - 1]``, and ``alpha_bar(0) == 1`` denotes clean data.
    """

    kind: str
    T: int
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside [0, {self.T}]")
        return float(self.alpha_bars[t - 1])

    def inference_timesteps(self, T_infer: int) -> np.ndarray:
        """Training steps visited by a ``T_infer``-step sampler.

        Entry ``k`` is the training step of inference step ``k``; entry 0 is
        the clean endpoint. The grid is evenly spaced and ends at ``T``.
        """
        if T_infer < 1:
            raise ValueError("T_infer must be >= 1")
        if T_infer > self.T:
            raise ValueError(f"T_infer={T_infer} exceeds training steps {self.T}")
        k = np.arange(T_infer + 1, dtype=np.int64)
        return (k * self.T) // T_infer

    def to_dict(self) -> dict:
        return {"kind": self.kind, "T": self.T}


def build_schedule(
    kind: ScheduleKind,
    T: int,
    *,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    cosine_offset: float = 0.008,
) -> NoiseSchedule:
    """Build a ``T``-step schedule.

    ``linear`` spaces betas evenly between ``beta_start`` and ``beta_end``
    rescaled by ``1000 / T`` so short schedules still reach low signal.
    ``cosine`` uses the squared-cosine cumulative profile with betas capped
    at 0.999.
    """
    if not isinstance(T, (int, np.integer)) or isinstance(T, bool) or T <= 0:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    T = int(T)
    if kind == "linear":
        scale = 1000.0 / T
        betas = np.linspace(scale * beta_start, scale * beta_end, T, dtype=np.float64)
    elif kind == "cosine":
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + cosine_offset) / (1.0 + cosine_offset) * math.pi / 2) ** 2
        betas = 1.0 - f[1:] / f[:-1]
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    betas = np.clip(betas, 1e-8, 0.999)
    alphas = 1.0 - betas
    return NoiseSchedule(kind, T, _frozen(alphas), _frozen(np.cumprod(alphas)))


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Sample ``x_t`` given ``x0`` with explicit noise ``eps``."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    if not 1 <= t <= sched.T:
        raise ValueError(f"step {t} outside [1, {sched.T}]")
    ab = sched.alpha_bar(t)
    dtype = np.result_type(x0.dtype, eps.dtype, np.float32)
    return (math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps).astype(dtype, copy=False)


def forward_noise_batch(x0: np.ndarray, t: np.ndarray, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Row-wise ``forward_noise`` with a per-row step vector."""
    ab = sched.alpha_bars[np.asarray(t) - 1]
    shape = (-1,) + (1,) * (x0.ndim - 1)
    a = np.sqrt(ab).reshape(shape).astype(x0.dtype)
    b = np.sqrt(1.0 - ab).reshape(shape).astype(x0.dtype)
    return a * x0 + b * eps


def insertion_step(s: float, T_infer: int) -> int:
    """Inference step at which a reference enters the reverse process."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"strength s={s} outside [0, 1]")
    if T_infer < 1:
        raise ValueError("T_infer must be >= 1")
    return int(math.floor(s * T_infer))


def insert_reference(
    x_ref: np.ndarray,
    s: float,
    eps: np.ndarray,
    sched: NoiseSchedule,
    T_infer: int,
) -> tuple[np.ndarray, int]:
    """Noise a reference to the level of inference step ``floor(s * T_infer)``.

    Returns the noised array and that step. At ``s == 0`` the reference is
    returned unchanged with step 0.
    """
    k = insertion_step(s, T_infer)
    if k == 0:
        if np.shape(x_ref) != np.shape(eps):
            raise ValueError("shape mismatch between reference and noise")
        return x_ref, 0
    t = int(sched.inference_timesteps(T_infer)[k])
    return forward_noise(x_ref, t, eps, sched), k
