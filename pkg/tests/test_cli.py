import json

import numpy as np
import pytest
from scipy import stats

from diffmix import toy
from diffmix.cli import main
from diffmix.data import LabeledSet, export_set
from diffmix.personalization import PersonalizedCheckpoint
from diffmix.synthesis import DatasetManifest
from diffmix.train_eval import MetricsReport


def _export(ds, root):
    path = export_set(ds, root, "index.jsonl")
    (root / "meta.json").write_text(json.dumps({**ds.meta, "num_classes": ds.num_classes}))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Fine-tune (10 steps) and synthesize on a 40-image toy set via the CLI."""
    root = tmp_path_factory.mktemp("cli")
    ds = toy.three_class(n_per_class=14, seed=0).subset(np.arange(40))
    data = _export(ds, root / "train")
    assert main(["finetune", "--data", data, "--steps", "10", "--out", str(root / "ft")]) == 0
    rc = main(["synthesize", "--data", data, "--checkpoint", str(root / "ft"), "--multiplier", "5",
               "--t-infer", "5", "--clean-fraction", "0.1", "--out", str(root / "syn")])
    assert rc == 0
    return root, data


def test_missing_dataset_exit_code(tmp_path, capsys):
    rc = main(["finetune", "--data", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_bad_value_exit_code(tmp_path, pipeline):
    _, data = pipeline
    assert main(["finetune", "--data", data, "--steps", "0", "--out", str(tmp_path / "o")]) == 2


def test_finetune_writes_loadable_checkpoint(pipeline):
    root, _ = pipeline
    ckpt = PersonalizedCheckpoint.load(root / "ft" / "checkpoint.npz")
    assert ckpt.step == 10 and len(ckpt.losses) == 10
    run = json.loads((root / "ft" / "run.json").read_text())
    assert run["complete"] and run["checkpoint_fingerprint"] == ckpt.fingerprint()


def test_finetune_rerun_and_conflict(pipeline, capsys):
    root, data = pipeline
    assert main(["finetune", "--data", data, "--steps", "10", "--out", str(root / "ft")]) == 0
    assert "up to date" in capsys.readouterr().out
    assert main(["finetune", "--data", data, "--steps", "11", "--out", str(root / "ft")]) == 3


def test_strategies_give_distinct_fingerprints(pipeline, tmp_path):
    _, data = pipeline
    fps = []
    for s in ("TI", "DB"):
        assert main(["finetune", "--data", data, "--steps", "5", "--strategy", s, "--out", str(tmp_path / s)]) == 0
        fps.append(PersonalizedCheckpoint.load(tmp_path / s / "checkpoint.npz").fingerprint())
    assert fps[0] != fps[1]


def test_synthesize_counts(pipeline):
    root, _ = pipeline
    m = DatasetManifest.read(root / "syn" / "manifest.jsonl")
    assert len(m) == 200
    c = DatasetManifest.read(root / "syn" / "manifest.clean.jsonl")
    assert len(c) == 180
    assert all(r.confidence is not None for r in c.records)


def test_synthesize_refuses_other_dataset(pipeline, tmp_path):
    root, _ = pipeline
    other = _export(toy.three_class(n_per_class=5, seed=9), tmp_path / "other")
    rc = main(["synthesize", "--data", other, "--checkpoint", str(root / "ft"), "--out", str(tmp_path / "s")])
    assert rc == 3


def test_clean_command(pipeline, tmp_path):
    root, data = pipeline
    out = tmp_path / "cleaned.jsonl"
    assert main(["clean", "--manifest", str(root / "syn" / "manifest.jsonl"), "--data", data,
                 "--fraction", "0.1", "--out", str(out)]) == 0
    m = DatasetManifest.read(out)
    assert len(m) == 180
    m.image(0)  # references resolve from the new location


def test_train_and_eval(pipeline, tmp_path, capsys):
    root, data = pipeline
    model_dir = tmp_path / "model"
    rc = main(["train", "--data", data, "--synthetic", str(root / "syn" / "manifest.jsonl"), "--p", "0.3",
               "--epochs", "5", "--out", str(model_dir)])
    assert rc == 0
    assert len(json.loads((model_dir / "history.json").read_text())["epoch_loss"]) == 5
    capsys.readouterr()
    test = _export(toy.three_class(n_per_class=30, seed=5), tmp_path / "test")
    rc = main(["eval", "--model", str(model_dir / "model.npz"), "--data", test, "--train-data", data,
               "--fid-manifest", str(root / "syn" / "manifest.jsonl"), "--out", str(tmp_path / "r.json")])
    assert rc == 0
    printed = capsys.readouterr().out
    assert printed.splitlines()[0].startswith("top1")
    r = MetricsReport.load(tmp_path / "r.json")
    assert 0 <= r.top1 <= 1 and r.fid is not None and r.fid >= 0
    assert set(r.bands) == {"medium"}


def test_untrained_model_near_chance(tmp_path, capsys):
    rng = np.random.default_rng(0)
    n, N = 3000, 3
    train = LabeledSet(rng.standard_normal((30, 2)).astype(np.float32), np.repeat([1, 2, 3], 10), N)
    # labels independent of inputs, so any fixed model scores about 1/N
    test = LabeledSet(rng.standard_normal((n, 2)).astype(np.float32), rng.integers(1, N + 1, n), N)
    assert main(["train", "--data", _export(train, tmp_path / "tr"), "--epochs", "0",
                 "--out", str(tmp_path / "m")]) == 0
    assert main(["eval", "--model", str(tmp_path / "m" / "model.npz"), "--data", _export(test, tmp_path / "te"),
                 "--out", str(tmp_path / "r.json")]) == 0
    acc = MetricsReport.load(tmp_path / "r.json").top1
    lo, hi = stats.binomtest(round(acc * n), n).proportion_ci(0.999)
    assert lo <= 1 / N <= hi


def test_longtail_and_fewshot(tmp_path):
    ds = LabeledSet(np.arange(24, dtype=np.float32)[:, None], np.repeat([1, 2, 3], 8), 3)
    data = _export(ds, tmp_path / "d")
    assert main(["longtail", "--data", data, "--rho", "4", "--out", str(tmp_path / "lt")]) == 0
    info = json.loads((tmp_path / "lt" / "longtail.json").read_text())
    assert info["counts"] == [8, 4, 2] and info["synthetic_quota"] == [2, 4, 8] and info["total"] == 14
    assert main(["fewshot", "--data", str(tmp_path / "lt" / "index.jsonl"), "--shots", "3",
                 "--out", str(tmp_path / "fs")]) == 0
    lines = (tmp_path / "fs" / "index.jsonl").read_text().splitlines()
    assert len(lines) == 8
    assert main(["fewshot", "--data", data, "--shots", "0", "--out", str(tmp_path / "bad")]) == 2


def test_config_file_and_output_root(tmp_path, monkeypatch):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 3\ntoy-data:\n  name: three_class\n  n_per_class: 4\n")
    monkeypatch.setenv("DIFFMIX_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["toy-data", "--config", str(cfg), "--out", "toy"]) == 0
    lines = (tmp_path / "root" / "toy" / "train" / "index.jsonl").read_text().splitlines()
    assert len(lines) == 12
    # a flag beats the file
    assert main(["toy-data", "--config", str(cfg), "--n-per-class", "2", "--out", "toy2"]) == 0
    assert len((tmp_path / "root" / "toy2" / "train" / "index.jsonl").read_text().splitlines()) == 6


@pytest.mark.slow
def test_toy_e2e_deterministic(tmp_path, capsys):
    args = ["toy-e2e", "--seed", "0", "--finetune-steps", "200"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    first = capsys.readouterr().out
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert capsys.readouterr().out == first
    for name in ("baseline_seed0.json", "diffmix_seed0.json"):
        a = MetricsReport.load(tmp_path / "a" / name)
        assert a == MetricsReport.load(tmp_path / "b" / name)
        assert all(0 <= v <= 1 for v in [a.top1, *a.per_group.values()])
