from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from ..data import LabeledSet
from ..diffusion.optim import Adam
from ..diffusion.schedule import NoiseSchedule
from ..diffusion.training import train_step
from ..errors import FingerprintMismatch
from .checkpoint import PersonalizedCheckpoint
from .identifiers import IdentifierTable, encode_classes
from .lora import attach_adapters

log = logging.getLogger(__name__)

Strategy = Literal["TI", "DB", "TI_DB"]


@dataclass(frozen=True)
class FinetuneConfig:
    strategy: Strategy = "TI_DB"
    steps: int = 35000
    batch_size: int = 8
    learning_rate: float = 5e-5
    resolution: int = 512
    seed: int = 0
    rank: int = 10
    cond_dropout: float = 0.1
    checkpoint_every: int = 500
    keep_checkpoints: int = 2

    def __post_init__(self):
        if self.strategy not in ("TI", "DB", "TI_DB"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @property
    def tunes_identifiers(self) -> bool:
        return self.strategy in ("TI", "TI_DB")

    @property
    def tunes_adapters(self) -> bool:
        return self.strategy in ("DB", "TI_DB")

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def _periodic(workdir: Path) -> list[Path]:
    return sorted((workdir / "periodic").glob("step_*.npz"))


def finetune(
    dataset: LabeledSet,
    model,
    table: IdentifierTable,
    encoder,
    cfg: FinetuneConfig,
    sched: NoiseSchedule,
    workdir=None,
) -> PersonalizedCheckpoint:
    """Personalize ``model`` and ``table`` on ``dataset`` in place.

    Identifier embeddings train under TI and TI_DB, low-rank adapters on
    the attention weights under DB and TI_DB; base weights never change.
    Batches and noise for step ``k`` derive from ``(cfg.seed, k)`` only, so
    strategies run on matched data. With ``workdir`` a snapshot is written
    every ``cfg.checkpoint_every`` steps and an interrupted run resumes
    from the newest one.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.labels.min() < 1 or dataset.labels.max() > table.num_classes:
        raise ValueError(f"class indices must lie in [1, {table.num_classes}]")
    base_fp = model.base_checksum()[:16]
    data_fp = dataset.fingerprint()

    model.base_trainable = False
    if cfg.tunes_adapters and not model.adapters:
        attach_adapters(model, rank=cfg.rank, seed=cfg.seed)
    model.adapters_trainable = cfg.tunes_adapters
    params = dict(model.trainable_parameters()) if cfg.tunes_adapters else {}
    if cfg.tunes_identifiers:
        params["identifiers"] = table.embeddings
    opt = Adam(params, lr=cfg.learning_rate)

    losses: list[float] = []
    start = 0
    workdir = None if workdir is None else Path(workdir)
    if workdir is not None:
        snaps = _periodic(workdir)
        if snaps:
            snap = PersonalizedCheckpoint.load(snaps[-1])
            if snap.config != asdict(cfg) or snap.dataset_fingerprint != data_fp or snap.base_fingerprint != base_fp:
                raise FingerprintMismatch(f"{workdir} holds snapshots from a different run")
            _restore(model, table, snap)
            opt.load_state_dict(snap.optim)
            losses = list(snap.losses)
            start = snap.step
            log.info("resuming fine-tune at step %d", start)

    n = len(dataset)
    images = dataset.images.reshape(n, -1).astype(model.dtype)

    def cond_grad(d_tok):
        return {"identifiers": encoder.identifier_grad(d_tok, slots, table.num_classes)}

    for step in range(start, cfg.steps):
        rng = np.random.default_rng([cfg.seed, step])
        idx = rng.choice(n, cfg.batch_size, replace=n < cfg.batch_size)
        keep = rng.random(cfg.batch_size) >= cfg.cond_dropout
        cond, slots = encode_classes(encoder, table, dataset.labels[idx], "identifier", keep)
        loss = train_step(model, (images[idx], cond), sched, rng, opt,
                          cond_grad if cfg.tunes_identifiers else None)
        losses.append(loss)
        done = step + 1
        if workdir is not None and done % cfg.checkpoint_every == 0 and done < cfg.steps:
            snap = _checkpoint(model, table, cfg, data_fp, base_fp, done, losses, opt.state_dict())
            snap.save(workdir / "periodic" / f"step_{done:08d}.npz")
            for old in _periodic(workdir)[: -cfg.keep_checkpoints]:
                old.unlink()
        if done % 500 == 0:
            log.info("fine-tune %s step %d loss %.4f", cfg.strategy, done, float(np.mean(losses[-100:])))
    return _checkpoint(model, table, cfg, data_fp, base_fp, cfg.steps, losses)


def _checkpoint(model, table, cfg, data_fp, base_fp, step, losses, optim=None) -> PersonalizedCheckpoint:
    return PersonalizedCheckpoint(
        adapters={t: (ad.A.copy(), ad.B.copy()) for t, ad in model.adapters.items()},
        identifiers=table.embeddings.copy(),
        metaclass=table.metaclass,
        config=asdict(cfg),
        dataset_fingerprint=data_fp,
        base_fingerprint=base_fp,
        terminology_names=table.terminology_names,
        step=step,
        losses=np.asarray(losses, dtype=np.float64),
        optim={} if optim is None else optim,
    )


def _restore(model, table, snap: PersonalizedCheckpoint) -> None:
    # copy into the existing arrays so optimizer references stay valid
    table.embeddings[...] = snap.identifiers
    for target, (A, B) in snap.adapters.items():
        model.adapters[target].A[...] = A
        model.adapters[target].B[...] = B
