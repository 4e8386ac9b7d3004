import math

import numpy as np
import pytest
from scipy import linalg, optimize, stats

from diffmix import toy
from diffmix.data import LabeledSet, write_index
from diffmix.datamix import MixedSampler, MixedSamplerConfig, one_hot, smooth_label
from diffmix.train_eval import (
    GroupSpec, MetricsReport, MLPClassifier, TrainConfig, evaluate_accuracy, fid, group_accuracy,
    predictions, shot_band_accuracy, soft_cross_entropy, train_classifier,
)


class Fixed:
    """Classifier returning preset logits per item index stored in x[:, 0]."""

    def __init__(self, logits):
        self.logits = np.asarray(logits, dtype=float)
        self.num_classes = self.logits.shape[1]

    def predict_logits(self, x):
        return self.logits[np.asarray(x)[:, 0].astype(int)]


def _indexed(labels, N):
    labels = np.asarray(labels)
    return LabeledSet(np.arange(len(labels), dtype=float)[:, None], labels, N)


# -- loss --------------------------------------------------------------------

def test_xent_uniform_logits():
    assert abs(soft_cross_entropy(np.zeros(4), one_hot(2, 4)) - math.log(4)) < 1e-12


def test_xent_equals_entropy_at_log_label():
    y = np.array([0.2, 0.5, 0.3])
    assert abs(soft_cross_entropy(np.log(y), y) - stats.entropy(y)) < 1e-12


def test_xent_minimised_at_label():
    y = np.array([0.6, 0.3, 0.1])
    res = optimize.minimize(lambda z: soft_cross_entropy(z, y), np.zeros(3), method="BFGS")
    p = np.exp(res.x - res.x.max())
    np.testing.assert_allclose(p / p.sum(), y, atol=1e-4)


def test_xent_shape_mismatch():
    with pytest.raises(ValueError):
        soft_cross_entropy(np.zeros(3), np.ones(4) / 4)


def test_smoothing_bounds_loss_by_entropy(rng):
    y = smooth_label(one_hot(1, 5), 0.9)
    H = stats.entropy(y)
    for _ in range(200):
        assert soft_cross_entropy(rng.standard_normal(5) * 5, y) >= H - 1e-12
    assert abs(soft_cross_entropy(np.log(y), y) - H) < 1e-12


# -- training ----------------------------------------------------------------

def test_training_decreases_loss():
    x = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])
    y = np.stack([one_hot(c, 2) for c in (1, 1, 2, 2)])
    batches = [(x[[0, 2]], y[[0, 2]]), (x[[1, 3]], y[[1, 3]])]
    model = MLPClassifier(2, 2, hidden=8, seed=0)
    before = soft_cross_entropy(model.predict_logits(x), y)
    _, hist = train_classifier(batches, model, TrainConfig(epochs=1, lr=0.05))
    assert soft_cross_entropy(model.predict_logits(x), y) < before
    assert len(hist.epoch_loss) == 1


def test_p0_stream_matches_real_training(tmp_path):
    from diffmix.synthesis import DatasetManifest, SyntheticSample

    real = toy.three_class(n_per_class=10, seed=0)
    np.save(tmp_path / "a.npy", np.zeros(2, dtype=np.float32))
    man = DatasetManifest({}, [SyntheticSample("a.npy", c, c, 0.5) for c in (1, 2, 3)], tmp_path)
    runs = []
    for m in (None, man):
        stream = MixedSampler(real, m, MixedSamplerConfig(0.0, seed=2, batch_size=8))
        _, hist = train_classifier(stream, MLPClassifier(2, 3, seed=1), TrainConfig(epochs=5, seed=2))
        runs.append(hist)
    assert runs[0].batch_loss == runs[1].batch_loss


def test_training_is_deterministic():
    real = toy.three_class(n_per_class=10, seed=0)
    outs = []
    for _ in range(2):
        stream = MixedSampler(real, None, MixedSamplerConfig(0.0, seed=2, batch_size=8))
        m, h = train_classifier(stream, MLPClassifier(2, 3, seed=1), TrainConfig(epochs=3, augment="mixup"))
        outs.append((m.params["w1"].tobytes(), h.epoch_loss))
    assert outs[0] == outs[1]


def test_empty_stream_rejected():
    with pytest.raises(ValueError):
        train_classifier([], MLPClassifier(2, 2), TrainConfig(epochs=1))


def test_classifier_save_load(tmp_path):
    m = MLPClassifier(3, 4, hidden=5, seed=3)
    m.save(tmp_path / "m.npz", {"note": "x"})
    m2, meta = MLPClassifier.load(tmp_path / "m.npz")
    x = np.random.default_rng(0).standard_normal((6, 3))
    assert np.array_equal(m.predict_logits(x), m2.predict_logits(x))
    assert meta["note"] == "x" and meta["num_classes"] == 4


# -- accuracy ----------------------------------------------------------------

def test_perfect_model():
    labels = [1, 3, 2, 2]
    model = Fixed([one_hot(c, 3) for c in labels])
    assert evaluate_accuracy(model, _indexed(labels, 3)) == 1.0


def test_tie_rule_picks_lowest_class():
    labels = np.repeat([1, 2, 3, 4], 5)
    model = Fixed(np.zeros((20, 4)))
    assert np.all(predictions(model, _indexed(labels, 4)) == 1)
    assert evaluate_accuracy(model, _indexed(labels, 4)) == 0.25
    assert evaluate_accuracy(model, _indexed(np.ones(8, int), 4)) == 1.0


def test_random_model_near_chance(rng):
    N, n = 5, 20000
    labels = rng.integers(1, N + 1, size=n)
    acc = evaluate_accuracy(Fixed(rng.standard_normal((n, N))), _indexed(labels, N))
    lo, hi = stats.binomtest(int(acc * n), n).proportion_ci(0.999)
    assert lo <= 1 / N <= hi


def test_group_accuracy_examples():
    labels = np.array([1, 1, 2, 2])
    model = Fixed([one_hot(1, 2), one_hot(1, 2), one_hot(1, 2), one_hot(1, 2)])
    ts = _indexed(labels, 2)
    per, avg = group_accuracy(model, ts, GroupSpec(np.array([0, 0, 1, 1])))
    assert per == {0: 1.0, 1: 0.0} and avg == 0.5
    per, avg = group_accuracy(model, ts, GroupSpec(np.zeros(4, int)))
    assert avg == evaluate_accuracy(model, ts)
    with pytest.raises(ValueError):
        group_accuracy(model, ts, GroupSpec(np.zeros(3, int)))


def test_group_spec_from_file(tmp_path):
    ts = LabeledSet(np.zeros((3, 1)), [1, 2, 1], 2, refs=["a.npy", "b.npy", "c.npy"])
    write_index(tmp_path / "g.jsonl", [{"image_ref": r, "group_id": g} for r, g in zip(["c.npy", "a.npy", "b.npy"], [2, 0, 1])])
    spec = GroupSpec.from_file(tmp_path / "g.jsonl", ts)
    assert spec.group_of.tolist() == [0, 1, 2]
    write_index(tmp_path / "h.jsonl", [{"image_ref": "a.npy", "group_id": 0}])
    with pytest.raises(ValueError):
        GroupSpec.from_file(tmp_path / "h.jsonl", ts)


def test_shot_bands():
    labels = np.array([1, 1, 2, 2, 3, 3])
    model = Fixed([one_hot(c, 3) for c in [1, 2, 2, 2, 1, 1]])
    bands = shot_band_accuracy(model, _indexed(labels, 3), [21, 10, 2], (20, 5))
    assert bands == {"many": 0.5, "medium": 1.0, "few": 0.0}
    only = shot_band_accuracy(model, _indexed(labels, 3), [30, 30, 30], (20, 5))
    assert set(only) == {"many"}
    with pytest.raises(ValueError):
        shot_band_accuracy(model, _indexed(labels, 3), [1, 1, 1], (5, 20))


def test_shot_band_partition(rng):
    labels = rng.integers(1, 11, size=300)
    counts = rng.integers(1, 40, size=10)
    model = Fixed(rng.standard_normal((300, 10)))
    n = counts[labels - 1]
    sizes = [(n > 20).sum(), ((n >= 5) & (n <= 20)).sum(), (n < 5).sum()]
    assert sum(sizes) == 300
    bands = shot_band_accuracy(model, _indexed(labels, 10), counts)
    hit = predictions(model, _indexed(labels, 10)) == labels
    total = sum(bands[b] * s for b, s in zip(("many", "medium", "few"), sizes) if b in bands)
    assert abs(total / 300 - hit.mean()) < 1e-12


# -- FID ---------------------------------------------------------------------

def _scipy_fid(a, b):
    ca, cb = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    s = linalg.sqrtm(ca @ cb).real
    d = a.mean(0) - b.mean(0)
    return d @ d + np.trace(ca + cb - 2 * s)


def test_fid_self_zero(rng):
    a = rng.standard_normal((300, 4))
    assert fid(a, a) < 1e-6


def test_fid_shifted_gaussians(rng):
    a = rng.standard_normal(200_000)
    b = rng.standard_normal(200_000) + 1.0
    assert abs(fid(a, b) - 1.0) < 0.05


def test_fid_symmetric_and_matches_scipy(rng):
    a = rng.standard_normal((500, 3)) @ rng.standard_normal((3, 3))
    b = rng.standard_normal((400, 3)) + 0.5
    assert abs(fid(a, b) - fid(b, a)) < 1e-8
    assert abs(fid(a, b) - _scipy_fid(a, b)) < 1e-6


def test_fid_rotation_invariant(rng):
    a = rng.standard_normal((300, 5)) * [1, 2, 3, 0.5, 1]
    b = rng.standard_normal((300, 5)) + 0.3
    q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    assert abs(fid(a, b) - fid(a @ q, b @ q)) < 1e-6


def test_fid_errors():
    with pytest.raises(ValueError):
        fid(np.zeros((5, 2)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        fid(np.zeros((1, 2)), np.zeros((5, 2)))
    with pytest.raises(ValueError):
        fid(np.full((3, 2), np.nan), np.zeros((5, 2)))


# -- reports -----------------------------------------------------------------

def test_report_round_trip_and_table(tmp_path):
    r = MetricsReport(0.75, {0: 1.0, 1: 0.5}, {0: "a_on_b"}, {"few": 0.25, "many": 0.9}, 1.5, {"seed": 1})
    r.save(tmp_path / "r.json")
    assert MetricsReport.load(tmp_path / "r.json") == r
    names = [k for k, _ in r.rows()]
    assert names == ["top1", "group 0 a_on_b", "group 1", "many", "few", "fid"]
    with pytest.raises(ValueError):
        MetricsReport(1.2)
