"""Adversarial and task objectives."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray
from .generator import GaussianParams

VARIANTS = ("dtgan", "dtgan_m", "dtgan_g", "dtgan_u")
VARIANT_HEAD = {"dtgan": "point", "dtgan_m": "point", "dtgan_g": "gaussian", "dtgan_u": "uniform"}
LOG_2PI = math.log(2 * math.pi)
DENSITY_FLOOR = 1e-12


def canonical_variant(name: str) -> str:
    v = name.strip().lower().replace("-", "_")
    if v not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of dtgan, dtgan-m, dtgan-g, dtgan-u")
    return v


@dataclass
class LossConfig:
    variant: str = "dtgan_g"
    gamma: float = 1.0
    K: int = 20
    r_hat_epsilon: float = 1e-6

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.r_hat_epsilon <= 0:
            raise ValueError("r_hat_epsilon must be > 0")

    @property
    def head(self) -> str:
        return VARIANT_HEAD[self.variant]

    def to_dict(self) -> dict:
        return asdict(self)


def wgan_losses(scores_fake, scores_real):
    """Critic loss mean(fake) - mean(real) and generator loss -mean(fake)."""
    fake, real = ad.as_diff(scores_fake), ad.as_diff(scores_real)
    if fake.values.size == 0 or real.values.size == 0:
        raise ValueError("wgan_losses needs non-empty score vectors")
    if fake.shape != real.shape:
        raise ad.ShapeError(f"wgan_losses: fake {fake.shape} and real {real.shape} differ")
    d_loss = ad.mean(fake) - ad.mean(real)
    g_loss = -ad.mean(fake)
    return d_loss, g_loss


def variety_mse(samples, truth) -> DiffArray:
    """Best-of-K squared error.

    Each sample's error for a pedestrian is the mean over frames of the
    squared Euclidean distance to the truth; the minimum over samples is
    averaged over pedestrians.
    """
    samples = [ad.as_diff(s) for s in samples]
    if not samples:
        raise ValueError("variety_mse needs at least one sample")
    truth = np.asarray(truth.values if isinstance(truth, DiffArray) else truth, dtype=float)
    per_sample = []
    for s in samples:
        if s.shape != truth.shape:
            raise ad.ShapeError(f"variety_mse: sample {s.shape} vs truth {truth.shape}")
        sq = ad.sum_(ad.square(s - truth), axis=-1)  # [T_p, N]
        per_sample.append(ad.mean(sq, axis=0))  # [N]
    errors = ad.stack(per_sample, axis=0)  # [K, N]
    return ad.mean(ad.min_(errors, axis=0))


def _check_finite(name: str, values: np.ndarray) -> None:
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        t, i = bad[0][:2]
        raise FloatingPointError(f"non-finite {name} at frame {t}, pedestrian {i}")


def gaussian_nll(params: GaussianParams, truth) -> DiffArray:
    """Sum over frames of the bi-variate normal NLL, averaged over pedestrians."""
    mu, sigma, rho = (ad.as_diff(v) for v in (params.mu, params.sigma, params.rho))
    truth = np.asarray(truth.values if isinstance(truth, DiffArray) else truth, dtype=float)
    for name, v in (("mu", mu.values), ("sigma", sigma.values), ("rho", rho.values), ("truth", truth)):
        _check_finite(name, v)
    if np.any(sigma.values <= 0) or np.any(np.abs(rho.values) >= 1):
        raise ValueError("gaussian_nll needs sigma > 0 and |rho| < 1")
    dx = (truth[..., 0] - mu[..., 0]) / sigma[..., 0]
    dy = (truth[..., 1] - mu[..., 1]) / sigma[..., 1]
    one_minus = 1.0 - ad.square(rho)
    z = ad.square(dx) + ad.square(dy) - 2.0 * rho * dx * dy
    nll = (LOG_2PI + ad.log(sigma[..., 0]) + ad.log(sigma[..., 1]) + 0.5 * ad.log(one_minus)
           + z / (2.0 * one_minus))  # [T_p, N]
    return ad.mean(ad.sum_(nll, axis=0))


def uniform_nll(r_hat, truth_disp, epsilon: float = 1e-6) -> DiffArray:
    """Disk-uniform NLL with a density floor for points outside the disk.

    ``truth_disp`` [T_p, N, 2] is each true position measured from its disk
    centre; ``r_hat`` [T_p, N] the predicted radii.
    """
    r = ad.as_diff(r_hat)
    if np.any(r.values <= 0):
        raise ValueError("uniform_nll needs r_hat > 0")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    d = np.asarray(truth_disp.values if isinstance(truth_disp, DiffArray) else truth_disp, dtype=float)
    inside = (np.linalg.norm(d, axis=-1) < r.values).astype(float)
    density = inside / (math.pi * ad.square(r) + epsilon)
    nll = -ad.log(density + DENSITY_FLOOR)
    return ad.mean(ad.sum_(nll, axis=0))


def total_generator_loss(cfg: LossConfig, g_adv, task) -> DiffArray:
    if cfg.variant == "dtgan":
        return ad.as_diff(g_adv)
    return ad.as_diff(g_adv) + cfg.gamma * ad.as_diff(task)
