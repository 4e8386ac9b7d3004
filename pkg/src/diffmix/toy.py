"""Bundled toy datasets.

``three_class`` is a 2-D point set with three elongated class clusters.
``spurious`` mimics a foreground/background benchmark: the first
``fg_dim`` coordinates carry a noisy class signal (foreground), the
remaining ``bg_dim`` coordinates carry a clean "place" signal (background)
that agrees with the class for a ``correlation`` fraction of training items.
As in photographs, the background spans many more coordinates than the
object, so it survives moderate noise better than the foreground does.
Its test split is balanced over the four (class, place) groups.
"""

from __future__ import annotations

import numpy as np

from .data import LabeledSet

THREE_CLASS_NAMES = ["Pileated Woodpecker", "American Three toed Woodpecker", "Red headed Woodpecker"]
SPURIOUS_NAMES = ["Landbird", "Waterbird"]
PLACES = ("land", "water")


def three_class_modes(radius: float = 2.5) -> np.ndarray:
    ang = np.deg2rad([90.0, 210.0, 330.0])
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def three_class(n_per_class: int = 40, seed: int = 0, radius: float = 2.5,
                tangent_sd: float = 0.5, radial_sd: float = 0.15) -> LabeledSet:
    rng = np.random.default_rng([seed, 11])
    modes = three_class_modes(radius)
    xs, ys = [], []
    for c, m in enumerate(modes):
        radial = m / np.linalg.norm(m)
        tangent = np.array([-radial[1], radial[0]])
        a = rng.standard_normal(n_per_class) * tangent_sd
        b = rng.standard_normal(n_per_class) * radial_sd
        xs.append(m + a[:, None] * tangent + b[:, None] * radial)
        ys.append(np.full(n_per_class, c + 1))
    ds = LabeledSet(np.concatenate(xs).astype(np.float32), np.concatenate(ys), 3)
    ds.meta.update(metaclass="bird", names=list(THREE_CLASS_NAMES))
    return ds


def spurious(
    n_train: int = 100,
    n_test_per_group: int = 250,
    correlation: float = 0.9,
    seed: int = 0,
    fg_dim: int = 2,
    bg_dim: int = 32,
    fg_shift: float = 0.7,
    fg_sd: float = 0.6,
    bg_shift: float = 1.0,
    bg_sd: float = 0.3,
) -> tuple[LabeledSet, LabeledSet]:
    """Train/test split of the foreground/background toy.

    Groups are numbered ``2 * (class - 1) + place`` with place 0 = land,
    1 = water; class 1 (landbird) matches land and class 2 (waterbird)
    matches water.
    """
    rng = np.random.default_rng([seed, 13])
    fg_dir = np.ones(fg_dim) / np.sqrt(fg_dim)
    bg_dir = np.ones(bg_dim) / np.sqrt(bg_dim)

    def draw(labels, places):
        n = len(labels)
        sign_fg = np.where(labels == 1, -1.0, 1.0)[:, None]
        sign_bg = np.where(places == 0, -1.0, 1.0)[:, None]
        fg = sign_fg * fg_shift * np.sqrt(fg_dim) * fg_dir + fg_sd * rng.standard_normal((n, fg_dim))
        bg = sign_bg * bg_shift * np.sqrt(bg_dim) * bg_dir + bg_sd * rng.standard_normal((n, bg_dim))
        return np.concatenate([fg, bg], axis=1).astype(np.float32)

    labels = rng.integers(1, 3, size=n_train)
    agree = rng.random(n_train) < correlation
    places = np.where(agree, labels - 1, 2 - labels)
    train = LabeledSet(draw(labels, places), labels, 2, groups=2 * (labels - 1) + places)

    t_labels = np.repeat([1, 1, 2, 2], n_test_per_group)
    t_places = np.tile(np.repeat([0, 1], n_test_per_group), 2)
    test = LabeledSet(draw(t_labels, t_places), t_labels, 2, groups=2 * (t_labels - 1) + t_places)
    for ds in (train, test):
        ds.meta.update(
            metaclass="bird", names=list(SPURIOUS_NAMES), fg_dim=fg_dim,
            group_names=[f"{SPURIOUS_NAMES[g // 2].lower()}_on_{PLACES[g % 2]}" for g in range(4)],
            counterfactual_groups=[1, 2],
        )
    return train, test
