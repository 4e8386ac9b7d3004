"""Command-line entry point.

Every command takes ``--config FILE`` (YAML). Values are looked up as
command-line flag, then the file's section named after the command, then
the file's top level, then the built-in default. Relative output paths are
placed under ``$DIFFMIX_OUTPUT_ROOT`` when it is set.

Each command writes a ``run.json`` next to its outputs holding the
fingerprints of its inputs and settings. Rerunning with the same inputs is
a no-op; rerunning into the same output with different inputs is refused.

Exit codes: 0 success, 1 unexpected failure, 2 bad arguments or missing
paths, 3 fingerprint or state conflicts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import yaml

from . import toy
from .data import LabeledSet, export_set, load_set, subset_records, write_index
from .datamix import MixedSampler, MixedSamplerConfig, make_longtail, subsample_fewshot, synthetic_target_counts
from .diffusion.pretrain import ToyWorld, toy_base, toy_schedule
from .diffusion.sampler import SamplerConfig
from .errors import FingerprintMismatch, InvalidStateError
from .experiments import TOY_FINETUNE, TOY_GUIDANCE, ToyE2EConfig, run_toy_e2e
from .personalization import FinetuneConfig, IdentifierTable, PersonalizedCheckpoint, finetune
from .synthesis import CentroidScorer, DatasetManifest, ReferencePolicy, TranslationSpec, clean, synthesize_dataset
from .train_eval import (GroupSpec, MetricsReport, MLPClassifier, TrainConfig, evaluate_accuracy, fid,
                         group_accuracy, shot_band_accuracy, train_classifier)

log = logging.getLogger("diffmix")

RUN_FILE = "run.json"


class UsageError(Exception):
    """Bad arguments or missing inputs (exit code 2)."""


# ---------------------------------------------------------------- helpers

def _fp(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _existing(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"missing required {what}")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _out(path) -> Path:
    if path is None:
        raise UsageError("missing required --out")
    p = Path(path)
    root = os.environ.get("DIFFMIX_OUTPUT_ROOT")
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _floats(v):
    if v is None or isinstance(v, (list, tuple)):
        return v
    return [float(x) for x in str(v).split(",") if x.strip()]


def _ints(v):
    if v is None or isinstance(v, (list, tuple)):
        return v
    return [int(x) for x in str(v).split(",") if x.strip()]


def load_data(index, what: str = "--data") -> LabeledSet:
    """Load an index file plus the optional ``meta.json`` beside it."""
    path = _existing(index, what)
    meta_path = path.parent / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    ds = load_set(path, meta.get("num_classes"))
    ds.meta.update(meta)
    return ds


def _write_meta(root: Path, ds: LabeledSet) -> None:
    meta = {k: v for k, v in ds.meta.items()}
    meta["num_classes"] = ds.num_classes
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _guard(out: Path, key: dict, force: bool = False) -> bool:
    """True when ``out`` already holds a run with fingerprint ``key``."""
    run = out / RUN_FILE
    fp = _fp(key)
    if run.exists():
        prev = json.loads(run.read_text())
        if prev.get("fingerprint") == fp and prev.get("complete"):
            return True
        if prev.get("fingerprint") != fp and not force:
            raise FingerprintMismatch(
                f"{out} holds outputs from different inputs or settings "
                f"(fingerprint {prev.get('fingerprint')} vs {fp}); use another --out or --force"
            )
    out.mkdir(parents=True, exist_ok=True)
    run.write_text(json.dumps({"fingerprint": fp, "inputs": key, "complete": False}, indent=2,
                              sort_keys=True, default=str) + "\n")
    return False


def _finish(out: Path, **extra) -> None:
    run = out / RUN_FILE
    info = json.loads(run.read_text())
    info.update(complete=True, **extra)
    run.write_text(json.dumps(info, indent=2, sort_keys=True, default=str) + "\n")


def _run_info(out: Path) -> dict:
    return json.loads((out / RUN_FILE).read_text())


def _world_for(ds: LabeledSet, object_dims=None) -> ToyWorld:
    dim = int(np.prod(ds.images.shape[1:]))
    od = object_dims if object_dims is not None else ds.meta.get("fg_dim")
    return ToyWorld(dim, object_dims=od)


# ---------------------------------------------------------------- commands

def cmd_toy_data(o) -> int:
    out = _out(o.out)
    out.mkdir(parents=True, exist_ok=True)
    if o.name == "three_class":
        sets = {"train": toy.three_class(o.n_per_class, seed=o.seed)}
        sets["test"] = toy.three_class(o.n_per_class, seed=o.seed + 1000)
    elif o.name == "spurious":
        tr, te = toy.spurious(n_train=o.n_train, seed=o.seed)
        sets = {"train": tr, "test": te}
    else:
        raise UsageError(f"unknown toy dataset {o.name!r}")
    for split, ds in sets.items():
        export_set(ds, out / split, "index.jsonl")
        _write_meta(out / split, ds)
        print(out / split / "index.jsonl")
    return 0


def cmd_finetune(o) -> int:
    ds = load_data(o.data)
    out = _out(o.out)
    cfg = FinetuneConfig(strategy=o.strategy, steps=o.steps, batch_size=o.batch_size, learning_rate=o.lr,
                         seed=o.seed, rank=o.rank, checkpoint_every=o.checkpoint_every)
    world = _world_for(ds, o.object_dims)
    metaclass = o.metaclass or ds.meta.get("metaclass", "object")
    key = {"command": "finetune", "data": ds.fingerprint(), "config": asdict(cfg), "world": asdict(world),
           "metaclass": metaclass}
    ckpt_path = out / "checkpoint.npz"
    if _guard(out, key, o.force) and ckpt_path.exists():
        print(f"up to date: {ckpt_path}")
        return 0
    model, encoder = toy_base(world.data_dim, world)
    table = IdentifierTable.from_metaclass(metaclass, ds.num_classes, encoder, ds.meta.get("names"))
    ckpt = finetune(ds, model, table, encoder, cfg, toy_schedule(), workdir=out)
    ckpt.save(ckpt_path)
    losses = ckpt.losses
    every = max(1, len(losses) // 10)
    for i in range(every - 1, len(losses), every):
        print(f"step {i + 1:>6d}  loss {np.mean(losses[max(0, i - every + 1): i + 1]):.4f}")
    _finish(out, checkpoint_fingerprint=ckpt.fingerprint(), world=asdict(world))
    print(f"checkpoint {ckpt_path} fingerprint {ckpt.fingerprint()}")
    return 0


def _load_personalized(ckpt_dir: Path, ds: LabeledSet):
    ckpt_path = ckpt_dir / "checkpoint.npz" if ckpt_dir.is_dir() else ckpt_dir
    _existing(ckpt_path, "checkpoint")
    run_dir = ckpt_path.parent
    info = _run_info(run_dir) if (run_dir / RUN_FILE).exists() else {}
    ckpt = PersonalizedCheckpoint.load(ckpt_path)
    if ckpt.dataset_fingerprint != ds.fingerprint():
        raise FingerprintMismatch("checkpoint was fine-tuned on a different dataset than --data")
    world = ToyWorld(**info["world"]) if "world" in info else _world_for(ds)
    model, encoder = toy_base(world.data_dim, world)
    ckpt.apply(model)
    return model, encoder, ckpt.table(), ckpt


def cmd_synthesize(o) -> int:
    ds = load_data(o.data)
    out = _out(o.out)
    model, encoder, table, ckpt = _load_personalized(_existing(o.checkpoint, "--checkpoint"), ds)
    spec = TranslationSpec(o.strategy, o.personalized, tuple(_floats(o.strengths)), o.gamma, o.multiplier)
    policy = ReferencePolicy(o.policy, o.referable_classes, o.seed)
    sampler = SamplerConfig(T_infer=o.t_infer, guidance_scale=o.guidance, solver=o.solver, seed=o.seed)
    counts = None
    if o.longtail_spec:
        lt = json.loads(_existing(o.longtail_spec, "--longtail-spec").read_text())
        counts = lt["synthetic_quota"]
    manifest = synthesize_dataset(ds, spec, policy, model, table, encoder, sampler, toy_schedule(), o.seed, out,
                                  target_counts=counts, checkpoint_fingerprint=ckpt.fingerprint(),
                                  dataset_name=o.name, workers=o.workers)
    print(f"{out / 'manifest.jsonl'}: {len(manifest)} records ({spec.name})")
    if o.clean_fraction:
        cleaned = clean(manifest, o.clean_fraction, CentroidScorer.fit(ds))
        path = cleaned.write(out / "manifest.clean.jsonl")
        print(f"{path}: {len(cleaned)} records after cleaning")
    return 0


def cmd_clean(o) -> int:
    ds = load_data(o.data)
    manifest = DatasetManifest.read(_existing(o.manifest, "--manifest"))
    if manifest.header.get("train_fingerprint") not in (None, ds.fingerprint()):
        raise FingerprintMismatch("manifest was synthesized from a different dataset than --data")
    out = _out(o.out) if o.out else Path(manifest.root) / "manifest.clean.jsonl"
    if out.exists():
        prev = DatasetManifest.read(out)
        same = (prev.header.get("spec_fingerprint") == manifest.header.get("spec_fingerprint")
                and prev.header.get("cleaned_fraction") == o.fraction
                and prev.header.get("cleaned_per_class") == o.per_class)
        if same:
            print(f"up to date: {out} ({len(prev)} records)")
            return 0
        if not o.force:
            raise FingerprintMismatch(f"{out} was cleaned from a different manifest or fraction")
    cleaned = clean(manifest, o.fraction, CentroidScorer.fit(ds), per_class=o.per_class)
    # keep image references valid relative to the new file
    if out.parent.resolve() != Path(manifest.root).resolve():
        rel = os.path.relpath(Path(manifest.root).resolve(), out.parent.resolve())
        cleaned = cleaned.with_records([replace(r, image_ref=str(Path(rel) / r.image_ref))
                                        for r in cleaned.records])
    cleaned.write(out)
    print(f"{out}: {len(cleaned)} of {len(manifest)} records kept")
    return 0


def cmd_train(o) -> int:
    ds = load_data(o.data)
    out = _out(o.out)
    manifest = None
    if o.synthetic:
        manifest = DatasetManifest.read(_existing(o.synthetic, "--synthetic"))
        if manifest.header.get("train_fingerprint") not in (None, ds.fingerprint()):
            raise FingerprintMismatch("synthetic manifest was built from a different training set")
    scfg = MixedSamplerConfig(o.p, o.epoch_length, o.seed, o.batch_size, o.smoothing, o.long_tail, o.gamma)
    tcfg = TrainConfig(epochs=o.epochs, lr=o.lr, seed=o.seed, augment=o.augment, alpha=o.alpha)
    key = {"command": "train", "data": ds.fingerprint(), "sampler": asdict(scfg), "train": asdict(tcfg),
           "hidden": o.hidden, "synthetic": None if manifest is None else manifest.lines()}
    model_path = out / "model.npz"
    if _guard(out, key, o.force) and model_path.exists():
        print(f"up to date: {model_path}")
        return 0
    stream = MixedSampler(ds, manifest, scfg)
    dim = int(np.prod(ds.images.shape[1:]))
    model = MLPClassifier(dim, ds.num_classes, o.hidden, seed=o.seed)
    model, hist = train_classifier(stream, model, tcfg)
    model.save(model_path, {"train_fingerprint": ds.fingerprint()})
    (out / "history.json").write_text(json.dumps({"epoch_loss": hist.epoch_loss}, indent=2) + "\n")
    for e, loss in enumerate(hist.epoch_loss):
        if e % max(1, len(hist.epoch_loss) // 10) == 0 or e == len(hist.epoch_loss) - 1:
            print(f"epoch {e:>4d}  loss {loss:.4f}")
    _finish(out)
    print(f"model {model_path}")
    return 0


def cmd_eval(o) -> int:
    model, _ = MLPClassifier.load(_existing(o.model, "--model"))
    test = load_data(o.data)
    if model.num_classes != test.num_classes:
        raise InvalidStateError(f"model predicts {model.num_classes} classes, test set has {test.num_classes}")
    report = MetricsReport(evaluate_accuracy(model, test))
    groups = None
    if o.groups:
        groups = GroupSpec.from_file(_existing(o.groups, "--groups"), test)
    elif test.groups is not None:
        groups = GroupSpec.from_testset(test)
    if groups is not None:
        report.per_group, _ = group_accuracy(model, test, groups)
        report.group_names = groups.names
    if o.train_data:
        counts = load_data(o.train_data, "--train-data").class_counts()
        report.bands = shot_band_accuracy(model, test, counts, tuple(_ints(o.thresholds)))
    if o.fid_manifest:
        synth = DatasetManifest.read(_existing(o.fid_manifest, "--fid-manifest")).images()
        ref = load_data(o.fid_reference or o.train_data or o.data, "--fid-reference")
        report.fid = fid(synth.reshape(len(synth), -1), ref.images.reshape(len(ref), -1))
    report.__post_init__()
    if o.out:
        report.save(_out(o.out))
    print(report.table())
    return 0


def cmd_longtail(o) -> int:
    ds = load_data(o.data)
    out = _out(o.out)
    sub, spec = make_longtail(ds, o.rho, o.seed)
    write_index(out / "index.jsonl", _relative(subset_records(sub), Path(o.data).parent, out))
    info = {**spec.to_dict(), "synthetic_quota": synthetic_target_counts(spec).tolist(),
            "total": int(spec.counts.sum()), "source_fingerprint": ds.fingerprint(),
            "subset_fingerprint": sub.fingerprint()}
    (out / "longtail.json").write_text(json.dumps(info, indent=2) + "\n")
    _copy_meta(o.data, out, sub)
    print(f"{out / 'index.jsonl'}: {info['total']} images, counts {spec.counts.tolist()}")
    return 0


def cmd_fewshot(o) -> int:
    ds = load_data(o.data)
    out = _out(o.out)
    shots = o.shots if o.shots == "all" else int(o.shots)
    sub = subsample_fewshot(ds, shots, o.seed)
    write_index(out / "index.jsonl", _relative(subset_records(sub), Path(o.data).parent, out))
    _copy_meta(o.data, out, sub)
    print(f"{out / 'index.jsonl'}: {len(sub)} images")
    return 0


def _relative(records, src_dir: Path, out: Path):
    rel = os.path.relpath(src_dir.resolve(), out.resolve())
    return [{**r, "image_ref": str(Path(rel) / r["image_ref"])} for r in records]


def _copy_meta(index, out: Path, sub: LabeledSet) -> None:
    out.mkdir(parents=True, exist_ok=True)
    meta_path = Path(index).parent / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    meta["num_classes"] = sub.num_classes
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def cmd_toy_e2e(o) -> int:
    out = _out(o.out) if o.out else None
    seeds = _ints(o.seeds) if o.seeds is not None else [o.seed]
    rows = []
    for seed in seeds:
        cfg = ToyE2EConfig(seed=seed, finetune_steps=o.finetune_steps, guidance=o.guidance)
        base, mix = run_toy_e2e(cfg)
        if out is not None:
            base.save(out / f"baseline_seed{seed}.json")
            mix.save(out / f"diffmix_seed{seed}.json")
        rows.append((seed, base, mix))
    names = rows[0][1].group_names
    head = ["seed", "model", "top1", *[names.get(g, str(g)) for g in sorted(rows[0][1].per_group)], "counterfactual"]
    print("  ".join(head))
    for seed, base, mix in rows:
        for label, r in (("baseline", base), ("diff-mix", mix)):
            vals = [f"{r.top1:.3f}", *[f"{r.per_group[g]:.3f}" for g in sorted(r.per_group)],
                    f"{r.info['counterfactual_accuracy']:.3f}"]
            print("  ".join([str(seed), label, *vals]))
    return 0


# ---------------------------------------------------------------- parser

DEFAULTS = {
    "toy-data": {"name": "three_class", "seed": 0, "n_per_class": 40, "n_train": 100},
    "finetune": {"strategy": "TI_DB", "steps": TOY_FINETUNE["steps"], "batch_size": TOY_FINETUNE["batch_size"],
                 "lr": TOY_FINETUNE["learning_rate"], "seed": 0, "rank": 10, "checkpoint_every": 500},
    "synthesize": {"strategy": "mix", "personalized": True, "strengths": "0.5,0.7,0.9", "gamma": 0.5,
                   "multiplier": 5, "policy": "full_set", "seed": 0, "clean_fraction": 0.0, "t_infer": 25,
                   "guidance": TOY_GUIDANCE, "solver": "ancestral", "workers": 1, "name": "dataset"},
    "clean": {"fraction": 0.1, "per_class": False},
    "train": {"p": 0.0, "epochs": 30, "lr": 1e-2, "seed": 0, "batch_size": 32, "smoothing": 0.9,
              "augment": "none", "alpha": 1.0, "hidden": 32, "long_tail": False},
    "eval": {"thresholds": "20,5"},
    "longtail": {"seed": 0},
    "fewshot": {"seed": 0, "shots": "all"},
    "toy-e2e": {"seed": 0, "finetune_steps": ToyE2EConfig.finetune_steps, "guidance": ToyE2EConfig.guidance},
}


def _bool(v):
    if isinstance(v, bool):
        return v
    if str(v).lower() in ("1", "true", "yes"):
        return True
    if str(v).lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--force", action="store_true", default=None, help="overwrite outputs from other runs")
    common.add_argument("-v", "--verbose", action="store_true", default=None)

    p = argparse.ArgumentParser(prog="diffmix", description="Diffusion-based inter-class augmentation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("toy-data", parents=[common], help="export a bundled toy dataset")
    s.add_argument("--name", choices=["three_class", "spurious"])
    s.add_argument("--seed", type=int)
    s.add_argument("--n-per-class", type=int)
    s.add_argument("--n-train", type=int)
    s.add_argument("--out")

    s = sub.add_parser("finetune", parents=[common], help="personalize the base model on a dataset")
    s.add_argument("--data")
    s.add_argument("--metaclass")
    s.add_argument("--strategy", choices=["TI", "DB", "TI_DB"])
    s.add_argument("--steps", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--rank", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--checkpoint-every", type=int)
    s.add_argument("--object-dims", type=int)
    s.add_argument("--out")

    s = sub.add_parser("synthesize", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--data")
    s.add_argument("--checkpoint")
    s.add_argument("--strategy", choices=["gen", "aug", "mix"])
    s.add_argument("--personalized", type=_bool, nargs="?", const=True)
    s.add_argument("--strengths")
    s.add_argument("--gamma", type=float)
    s.add_argument("--multiplier", type=int)
    s.add_argument("--policy", choices=["intra_class", "full_set", "restricted"])
    s.add_argument("--referable-classes", type=int)
    s.add_argument("--clean-fraction", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--t-infer", type=int)
    s.add_argument("--guidance", type=float)
    s.add_argument("--solver", choices=["ancestral", "high_order_ode"])
    s.add_argument("--workers", type=int)
    s.add_argument("--longtail-spec")
    s.add_argument("--name")
    s.add_argument("--out")

    s = sub.add_parser("clean", parents=[common], help="drop low-confidence synthetic records")
    s.add_argument("--manifest")
    s.add_argument("--data")
    s.add_argument("--fraction", type=float)
    s.add_argument("--per-class", type=_bool, nargs="?", const=True)
    s.add_argument("--out")

    s = sub.add_parser("train", parents=[common], help="train a classifier on real (+ synthetic) data")
    s.add_argument("--data")
    s.add_argument("--synthetic")
    s.add_argument("--p", type=float, help="replacement probability")
    s.add_argument("--epochs", type=int)
    s.add_argument("--epoch-length", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--smoothing", type=float)
    s.add_argument("--gamma", type=float)
    s.add_argument("--augment", choices=["none", "mixup", "cutmix"])
    s.add_argument("--alpha", type=float)
    s.add_argument("--hidden", type=int)
    s.add_argument("--long-tail", type=_bool, nargs="?", const=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")

    s = sub.add_parser("eval", parents=[common], help="evaluate a trained classifier")
    s.add_argument("--model")
    s.add_argument("--data")
    s.add_argument("--groups")
    s.add_argument("--train-data")
    s.add_argument("--thresholds")
    s.add_argument("--fid-manifest")
    s.add_argument("--fid-reference")
    s.add_argument("--out")

    s = sub.add_parser("longtail", parents=[common], help="build a long-tail subset")
    s.add_argument("--data")
    s.add_argument("--rho", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")

    s = sub.add_parser("fewshot", parents=[common], help="build a few-shot subset")
    s.add_argument("--data")
    s.add_argument("--shots")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")

    s = sub.add_parser("toy-e2e", parents=[common], help="spurious-correlation toy experiment")
    s.add_argument("--seed", type=int)
    s.add_argument("--seeds")
    s.add_argument("--finetune-steps", type=int)
    s.add_argument("--guidance", type=float)
    s.add_argument("--out")
    return p


COMMANDS = {
    "toy-data": cmd_toy_data, "finetune": cmd_finetune, "synthesize": cmd_synthesize, "clean": cmd_clean,
    "train": cmd_train, "eval": cmd_eval, "longtail": cmd_longtail, "fewshot": cmd_fewshot,
    "toy-e2e": cmd_toy_e2e,
}


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the config file and the built-in defaults."""
    file_cfg = {}
    if args.config:
        path = _existing(args.config, "--config")
        file_cfg = yaml.safe_load(path.read_text()) or {}
        if not isinstance(file_cfg, dict):
            raise UsageError(f"{path} must hold a mapping")
    section = file_cfg.get(args.command, {}) or {}
    top = {k: v for k, v in file_cfg.items() if not isinstance(v, dict)}
    norm = lambda d: {k.replace("-", "_"): v for k, v in d.items()}
    layers = [norm(section), norm(top), DEFAULTS.get(args.command, {})]
    out = argparse.Namespace(**vars(args))
    for name, value in vars(args).items():
        if value is not None:
            continue
        for layer in layers:
            if name in layer:
                setattr(out, name, layer[name])
                break
    out.force = bool(out.force)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve(args)
        logging.basicConfig(level=logging.INFO if opts.verbose else logging.WARNING,
                            format="%(message)s", stream=sys.stderr)
        return COMMANDS[opts.command](opts)
    except UsageError as e:
        print(f"diffmix {args.command}: {e}", file=sys.stderr)
        return 2
    except (FingerprintMismatch, InvalidStateError) as e:
        print(f"diffmix {args.command}: {e}", file=sys.stderr)
        return 3
    except (ValueError, argparse.ArgumentTypeError) as e:
        print(f"diffmix {args.command}: invalid argument: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
