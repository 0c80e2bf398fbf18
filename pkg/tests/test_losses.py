import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtgan import autodiff as ad
from dtgan.autodiff import DiffArray, gradcheck
from dtgan.generator import GaussianParams
from dtgan.losses import (DENSITY_FLOOR, LossConfig, canonical_variant, gaussian_nll, total_generator_loss,
                          uniform_nll, variety_mse, wgan_losses)


def test_wgan_equal_scores_give_zero():
    d, _ = wgan_losses(np.full(4, 2.5), np.full(4, 2.5))
    assert d.item() == 0.0


def test_wgan_arithmetic():
    d, g = wgan_losses([1.0, 1.0], [0.0, 0.0])
    assert (d.item(), g.item()) == (1.0, -1.0)


def test_wgan_matches_mean_difference(rng):
    fake, real = rng.normal(size=17), rng.normal(size=17)
    d, g = wgan_losses(fake, real)
    assert d.item() == pytest.approx(fake.mean() - real.mean(), abs=1e-14)
    assert g.item() == pytest.approx(-fake.mean(), abs=1e-14)


def test_wgan_rejects_empty():
    with pytest.raises(ValueError):
        wgan_losses([], [])


def test_variety_exact_sample_gives_zero(rng):
    truth = rng.normal(size=(12, 3, 2))
    assert variety_mse([truth.copy()], truth).item() == 0.0
    assert variety_mse([truth.copy(), truth + 1.0], truth).item() == 0.0


def variety_oracle(samples, truth):
    total = 0.0
    N = truth.shape[1]
    for i in range(N):
        best = math.inf
        for s in samples:
            err = np.mean([np.sum((s[t, i] - truth[t, i]) ** 2) for t in range(truth.shape[0])])
            best = min(best, err)
        total += best
    return total / N


def test_variety_matches_brute_force(rng):
    truth = rng.normal(size=(12, 4, 2))
    samples = [truth + rng.normal(size=truth.shape) for _ in range(5)]
    assert variety_mse(samples, truth).item() == pytest.approx(variety_oracle(samples, truth), abs=1e-12)


def test_variety_non_increasing_in_nested_k(rng):
    truth = rng.normal(size=(12, 4, 2))
    samples = [truth + rng.normal(size=truth.shape) for _ in range(10)]
    values = [variety_mse(samples[:k], truth).item() for k in range(1, 11)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def gaussian_params(T=12, N=3, mu=0.0, sigma=1.0, rho=0.0):
    return GaussianParams(np.full((T, N, 2), mu), np.full((T, N, 2), sigma), np.full((T, N), rho))


def test_gaussian_nll_at_mean_is_log_two_pi():
    nll = gaussian_nll(gaussian_params(T=12), np.zeros((12, 3, 2))).item()
    assert nll / 12 == pytest.approx(math.log(2 * math.pi), abs=1e-9)


def univariate_nll(x, mu, s):
    return 0.5 * math.log(2 * math.pi) + math.log(s) + 0.5 * ((x - mu) / s) ** 2


def test_gaussian_nll_decomposes_when_uncorrelated(rng):
    mu, sigma = rng.normal(size=(5, 2, 2)), rng.uniform(0.2, 2, size=(5, 2, 2))
    truth = rng.normal(size=(5, 2, 2))
    got = gaussian_nll(GaussianParams(mu, sigma, np.zeros((5, 2))), truth).item()
    want = sum(univariate_nll(truth[t, i, d], mu[t, i, d], sigma[t, i, d])
               for t in range(5) for i in range(2) for d in range(2)) / 2
    assert got == pytest.approx(want, abs=1e-9)


def density_oracle(x, y, mx, my, sx, sy, r):
    """Bivariate normal density written out from the quadratic form."""
    cov = np.array([[sx * sx, r * sx * sy], [r * sx * sy, sy * sy]])
    d = np.array([x - mx, y - my])
    q = d @ np.linalg.solve(cov, d)
    return math.exp(-0.5 * q) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))


def test_gaussian_nll_matches_density_oracle(rng):
    T, N = 6, 3
    mu, sigma = rng.normal(size=(T, N, 2)), rng.uniform(0.3, 2, size=(T, N, 2))
    rho, truth = rng.uniform(-0.9, 0.9, size=(T, N)), rng.normal(size=(T, N, 2))
    got = gaussian_nll(GaussianParams(mu, sigma, rho), truth).item()
    want = -sum(math.log(density_oracle(*truth[t, i], *mu[t, i], *sigma[t, i], rho[t, i]))
                for t in range(T) for i in range(N)) / N
    assert got == pytest.approx(want, abs=1e-9)


def test_gaussian_nll_minimised_at_truth(rng):
    truth = rng.normal(size=(4, 2, 2))
    mu = DiffArray(truth.copy(), requires_grad=True)
    gp = GaussianParams(mu, rng.uniform(0.5, 1.5, size=(4, 2, 2)), rng.uniform(-0.5, 0.5, size=(4, 2)))
    gaussian_nll(gp, truth).backward()
    assert np.abs(mu.grad).max() < 1e-12
    base = gaussian_nll(gp, truth).item()
    h = 1e-4
    for idx in np.ndindex(truth.shape):
        for sign in (1, -1):
            shifted = truth.copy()
            shifted[idx] += sign * h
            moved = GaussianParams(shifted, gp.sigma, gp.rho)
            assert gaussian_nll(moved, truth).item() > base - 1e-6


def test_gaussian_nll_reports_nonfinite():
    gp = gaussian_params(T=3, N=2)
    gp.mu[1, 0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="frame 1, pedestrian 0"):
        gaussian_nll(gp, np.zeros((3, 2, 2)))


def test_uniform_in_disk_is_log_pi():
    nll = uniform_nll(np.ones((1, 1)), np.array([[[0.2, 0.1]]]), epsilon=0.0).item()
    assert nll == pytest.approx(math.log(math.pi), abs=1e-9)


def test_uniform_outside_disk_is_floor_penalty():
    nll = uniform_nll(np.ones((1, 1)), np.array([[[2.0, 0.0]]]), epsilon=0.0).item()
    assert nll == pytest.approx(-math.log(DENSITY_FLOOR), abs=1e-9)


def test_uniform_matches_piecewise_oracle(rng):
    T, N = 7, 4
    r = rng.uniform(0.1, 2.0, size=(T, N))
    d = rng.normal(size=(T, N, 2))
    eps = 1e-6
    want = 0.0
    for t in range(T):
        for i in range(N):
            inside = math.hypot(*d[t, i]) < r[t, i]
            dens = 1.0 / (math.pi * r[t, i] ** 2 + eps) if inside else 0.0
            want -= math.log(dens + DENSITY_FLOOR)
    assert uniform_nll(r, d, eps).item() == pytest.approx(want / N, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 5.0), st.floats(1.0001, 3.0))
def test_uniform_increasing_in_radius_for_inside_points(r, factor):
    d = np.array([[[0.3, 0.2]]])
    small = uniform_nll(np.array([[r]]), d).item()
    large = uniform_nll(np.array([[r * factor]]), d).item()
    assert large > small


def test_total_loss_gamma_zero_and_arithmetic():
    for variant in ("dtgan", "dtgan-m", "dtgan-g", "dtgan-u"):
        cfg = LossConfig(variant, gamma=0.0)
        assert total_generator_loss(cfg, DiffArray(0.7), DiffArray(3.0)).item() == 0.7
    assert total_generator_loss(LossConfig("dtgan_g", gamma=1.0), DiffArray(0.5), DiffArray(1.5)).item() == 2.0


def test_total_loss_gradient_is_sum_of_parts(rng):
    w = DiffArray(rng.normal(size=3), requires_grad=True)
    cfg = LossConfig("dtgan_m", gamma=0.7)
    adv = lambda: ad.sum_(ad.tanh(w))
    task = lambda: ad.sum_(ad.square(w))
    report = gradcheck(lambda: total_generator_loss(cfg, adv(), task()), [w], 3, rng)
    assert max(r[4] for r in report) < 1e-4
    w.zero_grad()
    total_generator_loss(cfg, adv(), task()).backward()
    parts = (1 - np.tanh(w.values) ** 2) + 0.7 * 2 * w.values
    np.testing.assert_allclose(w.grad, parts, atol=1e-12)


def test_variant_names():
    assert canonical_variant("dtgan-g") == "dtgan_g"
    assert LossConfig("dtgan-u").head == "uniform"
    with pytest.raises(ValueError):
        canonical_variant("dtgan-x")
