"""Synthetic sample generation: from scratch (gen) or by translating a reference (aug, mix)."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..data import LabeledSet, save_image
from ..diffusion.sampler import SamplerConfig, denoise_from
from ..diffusion.schedule import NoiseSchedule, insert_reference
from ..errors import FingerprintMismatch
from ..personalization.identifiers import IdentifierTable, encode_classes
from .manifest import DatasetManifest, SyntheticSample
from .policy import ReferencePolicy, TranslationSpec, reference_index

log = logging.getLogger(__name__)

PARTIAL = "records.partial.jsonl"
MANIFEST = "manifest.jsonl"


def check_policy(spec: TranslationSpec, policy: ReferencePolicy) -> None:
    if spec.strategy == "aug" and policy.kind != "intra_class":
        raise ValueError("aug draws references from the target class; use the intra_class policy")
    if spec.strategy == "mix" and policy.kind == "intra_class":
        raise ValueError("mix needs a full_set or restricted reference policy")


@dataclass
class _Plan:
    target: int
    reference_class: int | None
    strength: float | None
    start: int
    x: np.ndarray
    noise: np.ndarray | None


def _plan(target, spec, policy, trainset, cfg, sched, rng) -> _Plan:
    shape = trainset.images.shape[1:]
    if spec.strategy == "gen":
        x = rng.standard_normal(shape).astype(np.float32)
        ref_class = strength = None
        start = cfg.T_infer
    else:
        i = reference_index(target, policy, trainset, rng)
        ref_class = int(trainset.labels[i])
        strength = spec.strengths[int(rng.integers(len(spec.strengths)))]
        ref = trainset.images[i]
        eps = rng.standard_normal(shape).astype(ref.dtype)
        x, start = insert_reference(ref, strength, eps, sched, cfg.T_infer)
    noise = None
    if cfg.solver == "ancestral":
        noise = rng.standard_normal((start, *shape)).astype(np.float32)
    return _Plan(int(target), ref_class, strength, start, x, noise)


def _render(plans: list[_Plan], spec, model, table, encoder, cfg, sched) -> list[np.ndarray]:
    """Denoise a list of plans, batching those that share a start step."""
    out: list[np.ndarray | None] = [None] * len(plans)
    mode = "identifier" if spec.personalized else "terminology"
    ctx = nullcontext() if spec.personalized else model.adapters_disabled()
    with ctx:
        for start in sorted({p.start for p in plans}):
            idx = [i for i, p in enumerate(plans) if p.start == start]
            if start == 0:
                for i in idx:
                    out[i] = plans[i].x
                continue
            x = np.stack([plans[i].x for i in idx])
            shape = x.shape
            cond, _ = encode_classes(encoder, table, [plans[i].target for i in idx], mode)
            uncond = encoder.uncond(1)
            noise = None
            if cfg.solver == "ancestral":
                noise = np.stack([plans[i].noise for i in idx], axis=1).reshape(start, len(idx), -1)
            res = denoise_from(x.reshape(len(idx), -1), start, cond, uncond, model, cfg, sched, noise=noise)
            res = res.reshape(shape)
            for j, i in enumerate(idx):
                out[i] = res[j]
    return out


def synthesize_one(
    target_class: int,
    spec: TranslationSpec,
    policy: ReferencePolicy,
    model,
    table: IdentifierTable,
    encoder,
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    rng,
    trainset: LabeledSet,
    out_path=None,
) -> tuple[SyntheticSample, np.ndarray]:
    """Generate one sample for ``target_class``.

    gen runs the full reverse process from Gaussian noise; aug and mix draw
    a reference under ``policy``, a strength uniformly from
    ``spec.strengths`` and enter the reverse process at
    ``floor(s * T_infer)``. Prompts use identifiers when ``spec.personalized``
    and class names (with adapters disabled) otherwise. The image is saved
    to ``out_path`` when given. Returns ``(record, image)``.
    """
    check_policy(spec, policy)
    if not 1 <= target_class <= table.num_classes:
        raise ValueError(f"target class {target_class} outside [1, {table.num_classes}]")
    plan = _plan(target_class, spec, policy, trainset, cfg, sched, rng)
    image = _render([plan], spec, model, table, encoder, cfg, sched)[0]
    ref = ""
    if out_path is not None:
        save_image(out_path, image)
        ref = Path(out_path).name
    rec = SyntheticSample(ref, plan.target, plan.reference_class, plan.strength, spec.gamma)
    return rec, image


def _targets(trainset: LabeledSet, spec: TranslationSpec, target_counts) -> np.ndarray:
    if target_counts is None:
        n = len(trainset)
        return trainset.labels[np.arange(spec.multiplier * n) % n]
    counts = np.asarray(target_counts, dtype=np.int64)
    if len(counts) != trainset.num_classes or (counts < 0).any():
        raise ValueError("target_counts needs one nonnegative count per class")
    return np.repeat(np.arange(1, trainset.num_classes + 1), counts)


def _fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _chunk_job(args):
    (indices, targets, seed, spec, policy, trainset, model, table, encoder, cfg, sched, out_dir) = args
    plans = [
        _plan(t, spec, policy, trainset, cfg, sched, np.random.default_rng([seed, int(i)]))
        for i, t in zip(indices, targets)
    ]
    images = _render(plans, spec, model, table, encoder, cfg, sched)
    rows = []
    for i, plan, img in zip(indices, plans, images):
        ref = f"images/{spec.strategy}_s{seed}_{int(i):06d}.npy"
        save_image(Path(out_dir) / ref, img)
        rec = SyntheticSample(ref, plan.target, plan.reference_class, plan.strength, spec.gamma)
        rows.append((int(i), rec))
    return rows


def synthesize_dataset(
    trainset: LabeledSet,
    spec: TranslationSpec,
    policy: ReferencePolicy,
    model,
    table: IdentifierTable,
    encoder,
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    seed: int,
    out_dir,
    target_counts=None,
    checkpoint_fingerprint: str | None = None,
    dataset_name: str = "dataset",
    chunk_size: int = 256,
    workers: int = 1,
) -> DatasetManifest:
    """Generate ``spec.multiplier * len(trainset)`` records into ``out_dir``.

    Targets cycle through the training labels, so per-class counts follow
    the real class distribution; ``target_counts`` (one count per class)
    overrides this. Record ``i`` draws all randomness from ``(seed, i)`` and
    records are produced in fixed chunks of ``chunk_size``, so output is
    identical for any worker count and after resuming. Completed chunks are
    logged to a partial file; a rerun skips them and refuses to continue a
    run made with different settings.
    """
    check_policy(spec, policy)
    if len(trainset) == 0:
        raise ValueError("empty training set")
    out_dir = Path(out_dir)
    targets = _targets(trainset, spec, target_counts)
    M = len(targets)
    settings = {
        "spec": spec.to_dict(),
        "policy": policy.to_dict(),
        "sampler": asdict(cfg),
        "schedule": sched.to_dict(),
        "seed": seed,
        "train_fingerprint": trainset.fingerprint(),
        "target_counts": None if target_counts is None else [int(c) for c in target_counts],
        "chunk_size": chunk_size,
    }
    header = {
        "dataset": dataset_name,
        "num_classes": trainset.num_classes,
        "metaclass": table.metaclass,
        "spec_fingerprint": _fingerprint(settings),
        "checkpoint_fingerprint": checkpoint_fingerprint,
        "count": M,
        **settings,
    }

    final = out_dir / MANIFEST
    if final.exists():
        existing = DatasetManifest.read(final)
        if _same_run(existing.header, header):
            return existing
        raise FingerprintMismatch(f"{final} was produced with different settings")

    partial = out_dir / PARTIAL
    done: dict[int, SyntheticSample] = {}
    if partial.exists():
        with open(partial) as f:
            lines = [json.loads(ln) for ln in f if ln.strip()]
        if not lines or not _same_run(lines[0].get("header", {}), header):
            raise FingerprintMismatch(f"{partial} belongs to a run with different settings")
        for row in lines[1:]:
            done[row["index"]] = SyntheticSample.from_json(row["record"])
        log.info("resuming synthesis with %d/%d records", len(done), M)
    else:
        out_dir.mkdir(parents=True, exist_ok=True)
        partial.write_text(json.dumps({"header": header}, sort_keys=True) + "\n")

    jobs = []
    for c0 in range(0, M, chunk_size):
        idx = np.arange(c0, min(c0 + chunk_size, M))
        if all(int(i) in done for i in idx):
            continue
        jobs.append((idx, targets[idx], seed, spec, policy, trainset, model, table, encoder, cfg, sched, out_dir))

    def record(rows):
        with open(partial, "a") as f:
            for i, rec in rows:
                f.write(json.dumps({"index": i, "record": rec.to_json()}, sort_keys=True) + "\n")
                done[i] = rec

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rows in pool.map(_chunk_job, jobs):
                record(rows)
    else:
        for job in jobs:
            record(_chunk_job(job))

    if len(done) != M or set(done) != set(range(M)):
        raise RuntimeError(f"synthesis produced {len(done)} of {M} records")
    manifest = DatasetManifest(header, [done[i] for i in range(M)], out_dir)
    manifest.check()
    manifest.write(final)
    partial.unlink()
    return manifest


def _same_run(a: dict, b: dict) -> bool:
    return (
        a.get("spec_fingerprint") == b["spec_fingerprint"]
        and a.get("checkpoint_fingerprint") == b["checkpoint_fingerprint"]
    )
