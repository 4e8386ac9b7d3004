import time

import numpy as np
import pytest

from diffmix import toy
from diffmix.diffusion import Adam, ToyDenoiser, ToyTextEncoder, train_step
from diffmix.diffusion.pretrain import toy_schedule
from diffmix.experiments import personalize_toy
from diffmix.personalization import IdentifierTable, encode_classes


# wall time of expensive shared fixtures, for runtime budgets in the acceptance tests
FIXTURE_TIMES: dict[str, float] = {}


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def three_class():
    return toy.three_class(n_per_class=40, seed=0)


@pytest.fixture(scope="session")
def personalized(three_class):
    """TI_DB-personalized toy model on the three-class set (2000 steps)."""
    t0 = time.perf_counter()
    model, table, encoder, ckpt = personalize_toy(three_class, "TI_DB", seed=0)
    FIXTURE_TIMES["personalized"] = time.perf_counter() - t0
    return model, table, encoder, ckpt


@pytest.fixture(scope="session")
def two_gaussian_model():
    """Denoiser trained from scratch on two well separated 2-D Gaussians."""
    modes = np.array([[-2.0, 0.0], [2.0, 0.0]])
    encoder = ToyTextEncoder(dim=16, seed=0)
    table = IdentifierTable.from_metaclass("object", 2, encoder)
    table.embeddings[:] = np.random.default_rng(5).standard_normal(table.embeddings.shape)
    model = ToyDenoiser(2, hidden=64, token_dim=16, seed=0)
    sched = toy_schedule()
    opt = Adam(model.trainable_parameters(), lr=2e-3)
    rng = np.random.default_rng(0)
    for _ in range(1500):
        labels = rng.integers(1, 3, size=128)
        x = modes[labels - 1] + 0.3 * rng.standard_normal((128, 2))
        keep = rng.random(128) >= 0.1
        cond, _ = encode_classes(encoder, table, labels, "identifier", keep)
        train_step(model, (x.astype(np.float32), cond), sched, rng, opt)
    return model, table, encoder, modes
