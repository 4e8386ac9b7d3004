"""Bundled base model: a toy denoiser pretrained on a generic prompt world.

In the generic world the token in the concept slot of
``"photo of a [V^1] <meta>"`` determines the image: an image is a fixed
linear rendering of that token's vector plus isotropic noise, and the
trailing meta word carries no information. A model pretrained here knows
how to turn token vectors into images but knows nothing about any
particular downstream dataset, which is the role the vanilla base model
plays before personalization.

With ``object_dims`` set, only the leading ``object_dims`` coordinates
render the token; the remaining "scene" coordinates are drawn
independently of the prompt, so the base model learns that any object can
sit in any scene.
"""

from __future__ import annotations

import copy
import functools
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .denoiser import ToyDenoiser
from .optim import Adam
from .schedule import NoiseSchedule, build_schedule
from .text import ToyTextEncoder
from .training import train_step

log = logging.getLogger(__name__)

META_WORDS = ("object", "bird", "car", "flower", "dog", "aircraft", "thing", "animal")


def toy_schedule() -> NoiseSchedule:
    # final alpha_bar ~ 1.6e-3; the cosine profile ends near 1e-9, which makes
    # the first reverse step amplify prediction error by ~1e3
    return build_schedule("linear", 1000, beta_start=0.00085, beta_end=0.012)


@dataclass(frozen=True)
class ToyWorld:
    data_dim: int
    token_dim: int = 16
    scale: float = 2.0
    spread: float = 0.3
    seed: int = 0
    object_dims: int | None = None
    scene_scale: float = 1.0

    def __post_init__(self):
        if self.object_dims is not None and not 1 <= self.object_dims <= self.data_dim:
            raise ValueError(f"object_dims must lie in [1, {self.data_dim}]")

    @property
    def rendered_dims(self) -> int:
        return self.data_dim if self.object_dims is None else self.object_dims

    def render_matrix(self) -> np.ndarray:
        rng = np.random.default_rng([self.seed, self.rendered_dims, 7])
        return rng.standard_normal((self.rendered_dims, self.token_dim)) * self.scale / np.sqrt(self.token_dim)

    def sample(self, n: int, rng, encoder: ToyTextEncoder, drop: float = 0.1):
        G = self.render_matrix()
        z = rng.standard_normal((n, self.token_dim))
        obj = z @ G.T + self.spread * rng.standard_normal((n, self.rendered_dims))
        scene = self.scene_scale * rng.standard_normal((n, self.data_dim - self.rendered_dims))
        x = np.concatenate([obj, scene], axis=1)
        metas = rng.integers(0, len(META_WORDS), size=n)
        keep = rng.random(n) >= drop
        prompts = [
            f"photo of a [V^{b + 1}] {META_WORDS[m]}" if k else ""
            for b, (m, k) in enumerate(zip(metas, keep))
        ]
        cond, _ = encoder.encode(prompts, identifiers=z.astype(encoder.dtype))
        return x.astype(np.float32), cond


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 4000
    batch_size: int = 256
    lr: float = 2e-3
    seed: int = 0
    hidden: int = 64
    attn_dim: int = 32
    n_blocks: int = 2


def pretrain_base(world: ToyWorld, cfg: PretrainConfig = PretrainConfig(), sched: NoiseSchedule | None = None):
    """Train a fresh toy denoiser on ``world``. Returns ``(model, encoder, losses)``."""
    sched = toy_schedule() if sched is None else sched
    encoder = ToyTextEncoder(dim=world.token_dim, seed=world.seed)
    model = ToyDenoiser(
        world.data_dim, hidden=cfg.hidden, attn_dim=cfg.attn_dim, token_dim=world.token_dim,
        n_blocks=cfg.n_blocks, seed=cfg.seed,
    )
    opt = Adam(model.trainable_parameters(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    losses = []
    for step in range(cfg.steps):
        # cosine decay keeps the late phase quiet for a clean base model
        opt.lr = cfg.lr * 0.5 * (1 + np.cos(np.pi * step / cfg.steps))
        x, cond = world.sample(cfg.batch_size, rng, encoder)
        losses.append(train_step(model, (x, cond), sched, rng, opt))
        if step % 1000 == 0:
            log.debug("pretrain step %d loss %.4f", step, losses[-1])
    return model, encoder, np.array(losses)


def _cache_dir() -> Path | None:
    root = os.environ.get("DIFFMIX_CACHE_DIR")
    return Path(root) if root else None


@functools.lru_cache(maxsize=8)
def _base_cached(world: ToyWorld, cfg: PretrainConfig):
    cache = _cache_dir()
    key = "base_" + "_".join(f"{v}" for v in (*asdict(world).values(), *asdict(cfg).values())) + ".npz"
    if cache is not None and (cache / key).exists():
        model = ToyDenoiser.load(cache / key)
    else:
        model = pretrain_base(world, cfg)[0]
        if cache is not None:
            cache.mkdir(parents=True, exist_ok=True)
            model.save(cache / key)
    return model


def toy_base(data_dim: int, world: ToyWorld | None = None, cfg: PretrainConfig = PretrainConfig()):
    """Pretrained base denoiser and encoder for ``data_dim``; a fresh copy per call."""
    world = ToyWorld(data_dim) if world is None else world
    model = copy.deepcopy(_base_cached(world, cfg))
    return model, ToyTextEncoder(dim=world.token_dim, seed=world.seed)
