import math

import mpmath
import numpy as np
import pytest

from diffmix.diffusion import (
    SamplerConfig, ToyDenoiser, ToyTextEncoder, build_schedule, denoise_from, diffusion_loss,
    forward_noise, insert_reference, insertion_step, train_step, Adam,
)
from diffmix.diffusion.pretrain import toy_schedule
from diffmix.diffusion.text import Condition
from diffmix.personalization import encode_classes


def schedule_with(alpha_bar, T=10):
    """Schedule whose step 1 has the given cumulative level."""
    s = build_schedule("linear", T)
    ab = np.array(s.alpha_bars)
    ab[0] = alpha_bar
    return type(s)(s.kind, T, s.alphas, ab)


# -- schedules ---------------------------------------------------------------

def test_linear_schedule_invariants():
    s = build_schedule("linear", 1000)
    assert s.alpha_bars.shape == (1000,)
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert s.alpha_bars[0] == s.alphas[0] < 1
    assert s.alpha_bars[-1] > 0
    run = np.cumprod(s.alphas)
    np.testing.assert_allclose(s.alpha_bars, run, rtol=1e-12)


def test_single_step_schedule():
    s = build_schedule("linear", 1)
    assert s.alpha_bars.tolist() == [s.alphas[0]]
    assert 0 < s.alphas[0] < 1


def test_cosine_matches_high_precision_product():
    mpmath.mp.dps = 50
    T, off = 25, mpmath.mpf("0.008")

    def f(t):
        return mpmath.cos((mpmath.mpf(t) / T + off) / (1 + off) * mpmath.pi / 2) ** 2

    prod = mpmath.mpf(1)
    for t in range(1, T + 1):
        beta = min(max(1 - f(t) / f(t - 1), mpmath.mpf("1e-8")), mpmath.mpf("0.999"))
        prod *= 1 - beta
    s = build_schedule("cosine", 25)
    assert abs(s.alpha_bars[-1] - float(prod)) <= 1e-12 * float(prod)
    assert np.all(np.diff(s.alpha_bars) < 0)


def test_schedule_deterministic_and_immutable():
    a, b = build_schedule("cosine", 50), build_schedule("cosine", 50)
    assert np.array_equal(a.alpha_bars, b.alpha_bars)
    with pytest.raises(ValueError):
        a.alpha_bars[0] = 0.5


@pytest.mark.parametrize("T", [0, -3])
def test_schedule_rejects_nonpositive_T(T):
    with pytest.raises(ValueError):
        build_schedule("linear", T)


# -- forward process ---------------------------------------------------------

def test_forward_noise_zero_noise():
    s = schedule_with(0.25)
    out = forward_noise(np.array([1.0, 2.0]), 1, np.zeros(2), s)
    np.testing.assert_allclose(out, [0.5, 1.0], atol=1e-12)


def test_forward_noise_zero_signal():
    s = schedule_with(0.25)
    out = forward_noise(np.zeros(2), 1, np.array([2.0, -2.0]), s)
    np.testing.assert_allclose(out, [1.7321, -1.7321], atol=1e-4)


def test_forward_noise_closed_form(rng):
    s = schedule_with(0.64)
    for _ in range(100):
        x0, eps = rng.standard_normal((2, 5, 3))
        out = forward_noise(x0, 1, eps, s)
        assert np.max(np.abs(out - (0.8 * x0 + 0.6 * eps))) <= 1e-9


def test_forward_noise_second_moment(rng):
    s = build_schedule("linear", 1000)
    t = 300
    x0 = rng.standard_normal(4)
    eps = rng.standard_normal((20000, 4))
    out = forward_noise(np.broadcast_to(x0, eps.shape), t, eps, s)
    var = (out - math.sqrt(s.alpha_bar(t)) * x0).var()
    assert abs(var / (1 - s.alpha_bar(t)) - 1) < 0.05


def test_forward_noise_errors():
    s = build_schedule("linear", 10)
    with pytest.raises(ValueError):
        forward_noise(np.zeros(2), 1, np.zeros(3), s)
    for t in (0, 11):
        with pytest.raises(ValueError):
            forward_noise(np.zeros(2), t, np.zeros(2), s)


# -- insertion ---------------------------------------------------------------

@pytest.mark.parametrize("s,expected", [(0.7, 17), (1.0, 25), (0.0, 0)])
def test_insertion_step(s, expected):
    assert insertion_step(s, 25) == expected


@pytest.mark.parametrize("s", [-0.01, 1.01])
def test_insertion_step_rejects_out_of_range(s):
    with pytest.raises(ValueError):
        insertion_step(s, 25)


def test_insertion_step_monotone_and_surjective():
    grid = np.linspace(0, 1, 2001)
    steps = [insertion_step(float(s), 25) for s in grid]
    assert all(a <= b for a, b in zip(steps, steps[1:]))
    assert set(steps) == set(range(26))


def test_insert_reference_identity_at_zero(rng):
    x = rng.standard_normal((3, 4)).astype(np.float32)
    out, k = insert_reference(x, 0.0, rng.standard_normal((3, 4)), toy_schedule(), 25)
    assert k == 0
    assert out is x or np.array_equal(out, x)
    assert out.tobytes() == x.tobytes()


def test_insert_reference_full_strength_keeps_signal(rng):
    s = toy_schedule()
    x = rng.standard_normal(8)
    eps = rng.standard_normal(8)
    out, k = insert_reference(x, 1.0, eps, s, 25)
    assert k == 25
    ab = s.alpha_bar(int(s.inference_timesteps(25)[25]))
    assert ab > 0
    np.testing.assert_allclose(out, math.sqrt(ab) * x + math.sqrt(1 - ab) * eps, atol=1e-12)


def test_insert_reference_composes_step_and_noise(rng):
    s = toy_schedule()
    x, eps = rng.standard_normal((2, 6))
    out, k = insert_reference(x, 0.7, eps, s, 25)
    assert k == 17
    t = int(s.inference_timesteps(25)[17])
    np.testing.assert_array_equal(out, forward_noise(x, t, eps, s))


def test_inference_grid_even():
    s = build_schedule("linear", 1000)
    taus = s.inference_timesteps(25)
    assert taus[0] == 0 and taus[-1] == 1000
    assert np.all(np.diff(taus) == 40)


# -- sampling ----------------------------------------------------------------

@pytest.fixture(scope="module")
def small_model():
    enc = ToyTextEncoder(dim=16, seed=0)
    model = ToyDenoiser(4, hidden=16, attn_dim=8, token_dim=16, seed=3)
    cond, _ = enc.encode(["photo of a bird"] * 5)
    return model, enc, cond


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(T_infer=0)
    with pytest.raises(ValueError):
        SamplerConfig(guidance_scale=-1)


def test_denoise_from_zero_steps_is_identity(small_model, rng):
    model, enc, cond = small_model
    x = rng.standard_normal((5, 4)).astype(np.float32)
    out = denoise_from(x, 0, cond, enc.uncond(1), model, SamplerConfig(), toy_schedule())
    assert np.array_equal(out, x)


def test_denoise_from_rejects_bad_start(small_model, rng):
    model, enc, cond = small_model
    x = rng.standard_normal((5, 4))
    for t in (-1, 26):
        with pytest.raises(ValueError):
            denoise_from(x, t, cond, enc.uncond(1), model, SamplerConfig(), toy_schedule())


@pytest.mark.parametrize("solver", ["ancestral", "high_order_ode"])
def test_unit_guidance_with_equal_conditions_is_unguided(small_model, rng, solver):
    model, enc, cond = small_model
    x = rng.standard_normal((5, 4)).astype(np.float32)
    cfg = SamplerConfig(guidance_scale=1.0, solver=solver, seed=4)
    guided = denoise_from(x, 25, cond, cond, model, cfg, toy_schedule())
    plain = denoise_from(x, 25, cond, None, model, cfg, toy_schedule())
    assert np.array_equal(guided, plain)
    # equal conditions cancel the guidance term at any scale
    cfg7 = SamplerConfig(guidance_scale=7.5, solver=solver, seed=4)
    np.testing.assert_allclose(denoise_from(x, 25, cond, cond, model, cfg7, toy_schedule()), plain, atol=1e-5)


def test_denoise_is_reproducible(small_model, rng):
    model, enc, cond = small_model
    x = rng.standard_normal((5, 4)).astype(np.float32)
    cfg = SamplerConfig(seed=9)
    a = denoise_from(x, 20, cond, enc.uncond(1), model, cfg, toy_schedule())
    b = denoise_from(x, 20, cond, enc.uncond(1), model, cfg, toy_schedule())
    assert a.tobytes() == b.tobytes()


def test_insert_then_denoise_at_zero_is_exact(small_model, rng):
    model, enc, cond = small_model
    x = rng.standard_normal((5, 4)).astype(np.float32)
    xs, k = insert_reference(x, 0.0, rng.standard_normal(x.shape), toy_schedule(), 25)
    out = denoise_from(xs, k, cond, enc.uncond(1), model, SamplerConfig(), toy_schedule())
    assert out.tobytes() == x.tobytes()


@pytest.mark.slow
@pytest.mark.parametrize("solver", ["ancestral", "high_order_ode"])
def test_two_gaussian_conditional_samples(two_gaussian_model, solver):
    model, table, encoder, modes = two_gaussian_model
    n = 400
    cond, _ = encode_classes(encoder, table, np.ones(n, dtype=int))
    x = np.random.default_rng(7).standard_normal((n, 2)).astype(np.float32)
    cfg = SamplerConfig(T_infer=25, guidance_scale=2.0, solver=solver, seed=1)
    out = denoise_from(x, 25, cond, encoder.uncond(1), model, cfg, toy_schedule())
    d = ((out[:, None, :] - modes[None]) ** 2).sum(-1)
    assert (d.argmin(1) == 0).mean() >= 0.9


@pytest.mark.slow
def test_solvers_agree_at_many_steps(two_gaussian_model):
    model, table, encoder, modes = two_gaussian_model
    n = 400
    cond, _ = encode_classes(encoder, table, np.full(n, 2))
    x = np.random.default_rng(8).standard_normal((n, 2)).astype(np.float32)
    means = []
    for solver in ("ancestral", "high_order_ode"):
        cfg = SamplerConfig(T_infer=200, guidance_scale=1.0, solver=solver, seed=2)
        means.append(denoise_from(x, 200, cond, encoder.uncond(1), model, cfg, toy_schedule()).mean(0))
    assert np.linalg.norm(means[0] - means[1]) < 0.25


# -- training objective ------------------------------------------------------

class _Oracle:
    """Returns the noise that was injected, recovered from x_t and x0."""

    dtype = np.float64

    def __init__(self, x0, sched):
        self.x0, self.sched = x0, sched

    def predict(self, x_t, cond, t):
        ab = self.sched.alpha_bars[np.asarray(t) - 1][:, None]
        return (x_t - np.sqrt(ab) * self.x0) / np.sqrt(1 - ab)


class _Zeros:
    dtype = np.float64

    def predict(self, x_t, cond, t):
        return np.zeros_like(x_t)


def test_perfect_predictor_has_zero_loss(rng):
    s = build_schedule("linear", 1000)
    x0 = rng.standard_normal((16, 3))
    loss = train_step(_Oracle(x0, s), (x0, None), s, rng)
    assert loss < 1e-20


def test_zero_predictor_loss_is_dimension(rng):
    s = build_schedule("linear", 1000)
    D = 6
    x0 = rng.standard_normal((2000, D))
    loss = train_step(_Zeros(), (x0, None), s, rng)
    assert abs(loss / D - 1) < 0.05


def test_empty_batch_rejected(rng):
    with pytest.raises(ValueError):
        train_step(_Zeros(), (np.zeros((0, 2)), None), build_schedule("linear", 10), rng)


def test_training_reduces_loss(three_class):
    enc = ToyTextEncoder(dim=16, seed=0)
    model = ToyDenoiser(2, hidden=32, attn_dim=16, token_dim=16, seed=0)
    s = toy_schedule()
    cond, _ = enc.encode(["photo of a bird"] * len(three_class))
    x = three_class.images
    opt = Adam(model.trainable_parameters(), lr=3e-3)
    rng = np.random.default_rng(0)
    eval_rng = lambda: np.random.default_rng(99)  # noqa: E731
    before = diffusion_loss(model, x, cond, s, eval_rng())[0]
    curve = [train_step(model, (x, cond), s, rng, opt) for _ in range(200)]
    after = diffusion_loss(model, x, cond, s, eval_rng())[0]
    assert after < before
    assert np.mean(curve[-50:]) < np.mean(curve[:50])


def test_gradients_match_finite_differences():
    enc = ToyTextEncoder(dim=8, seed=0)
    model = ToyDenoiser(3, hidden=8, attn_dim=4, token_dim=8, n_blocks=2, time_dim=8, seed=1, dtype=np.float64)
    cond, _ = enc.encode(["photo of a bird", "a car"])
    cond = Condition(cond.tokens.astype(np.float64), cond.mask)
    x = np.random.default_rng(0).standard_normal((2, 3))
    t = np.array([10, 500])
    target = np.random.default_rng(1).standard_normal((2, 3))

    def loss():
        return 0.5 * ((model.predict(x, cond, t) - target) ** 2).sum()

    pred, cache = model.forward(x, cond, t)
    grads, _ = model.backward(cache, pred - target)
    h = 1e-6
    for name in ("in.x", "blocks.0.attn.q", "blocks.1.attn.k", "blocks.0.attn.v", "blocks.1.attn.out",
                 "blocks.0.mlp.w1", "out.b"):
        W = model.params[name]
        idx = tuple(np.unravel_index(3 % W.size, W.shape))
        W[idx] += h
        up = loss()
        W[idx] -= 2 * h
        down = loss()
        W[idx] += h
        assert abs((up - down) / (2 * h) - grads[name][idx]) < 1e-5 * max(1.0, abs(grads[name][idx]))
