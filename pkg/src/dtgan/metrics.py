"""Best-of-K displacement errors and distribution-aware metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generator import PredictionSet

COV_REG = 1e-8
DEGENERATE_RATIO = 1e-12  # det / trace^2 below this counts as a collapsed cloud


@dataclass
class FittedGaussian:
    mu_hat: np.ndarray  # [T_p, N, 2]
    cov_hat: np.ndarray  # [T_p, N, 2, 2]


def ade_fde(preds: PredictionSet) -> tuple:
    """Minimum over samples, taken per pedestrian and per metric, then averaged."""
    samples = np.asarray(preds.samples, dtype=float)
    if samples.ndim != 4 or samples.shape[0] < 1:
        raise ValueError(f"samples must be [K, T_p, N, 2] with K >= 1, got {samples.shape}")
    err = np.linalg.norm(samples - preds.truth[None], axis=-1)  # [K, T_p, N]
    ade = err.mean(axis=1).min(axis=0).mean()
    fde = err[:, -1].min(axis=0).mean()
    return float(ade), float(fde)


def fit_gaussians(samples: np.ndarray) -> FittedGaussian:
    """Per (t, i) sample mean and unbiased covariance over the K samples."""
    samples = np.asarray(samples, dtype=float)
    K = samples.shape[0]
    if K < 2:
        raise ValueError("fit_gaussians needs K >= 2 samples")
    # shift by the first sample: exact zeros for identical samples, less cancellation otherwise
    offsets = samples - samples[:1]
    mean_offset = offsets.mean(axis=0)
    mu = samples[0] + mean_offset
    centred = offsets - mean_offset[None]
    cov = np.einsum("ktna,ktnb->tnab", centred, centred) / (K - 1)
    return FittedGaussian(mu, cov)


def regularized(cov: np.ndarray) -> np.ndarray:
    """Add ``COV_REG * I`` to covariances that are singular or nearly so.

    Well-conditioned matrices are left untouched so the distance is exact.
    """
    cov = np.asarray(cov, dtype=float)
    det = cov[..., 0, 0] * cov[..., 1, 1] - cov[..., 0, 1] * cov[..., 1, 0]
    trace = cov[..., 0, 0] + cov[..., 1, 1]
    degenerate = ~(det > DEGENERATE_RATIO * trace * trace)
    return cov + np.where(degenerate[..., None, None], COV_REG * np.eye(2), 0.0)


def amd(fit: FittedGaussian, truth: np.ndarray) -> float:
    """Mean Mahalanobis distance from each true point to its fitted Gaussian."""
    cov = regularized(fit.cov_hat)
    a, b, c, d = cov[..., 0, 0], cov[..., 0, 1], cov[..., 1, 0], cov[..., 1, 1]
    det = a * d - b * c
    bad = np.argwhere(~(np.abs(det) > 0) | ~np.isfinite(det))
    if bad.size:
        t, i = bad[0]
        raise np.linalg.LinAlgError(f"singular covariance at frame {t}, pedestrian {i}")
    diff = np.asarray(truth, dtype=float) - fit.mu_hat
    dx, dy = diff[..., 0], diff[..., 1]
    quad = (d * dx * dx - (b + c) * dx * dy + a * dy * dy) / det
    return float(np.sqrt(np.maximum(quad, 0.0)).mean())


def eigen_2x2(cov: np.ndarray) -> np.ndarray:
    """Eigenvalues of symmetric 2x2 matrices, descending by magnitude: [..., 2]."""
    a, b, d = cov[..., 0, 0], 0.5 * (cov[..., 0, 1] + cov[..., 1, 0]), cov[..., 1, 1]
    half_tr = 0.5 * (a + d)
    disc = np.sqrt(np.maximum((0.5 * (a - d)) ** 2 + b * b, 0.0))
    l1, l2 = half_tr + disc, half_tr - disc
    swap = np.abs(l2) > np.abs(l1)
    return np.stack([np.where(swap, l2, l1), np.where(swap, l1, l2)], axis=-1)


def amv(fit: FittedGaussian) -> float:
    """Mean largest-magnitude covariance eigenvalue."""
    return float(eigen_2x2(fit.cov_hat)[..., 0].mean())


def evaluate_predictions(pred_adefde: PredictionSet, pred_amdamv: PredictionSet | None = None) -> dict:
    ade, fde = ade_fde(pred_adefde)
    report = {"ade": ade, "fde": fde}
    if pred_amdamv is not None:
        fit = fit_gaussians(pred_amdamv.samples)
        report["amd"] = amd(fit, pred_amdamv.truth)
        report["amv"] = amv(fit)
    return report


def format_report(rows: dict, columns=("ade", "fde", "amd", "amv")) -> str:
    """Text table: one row per scene plus an AVG row."""
    header = f"{'scene':<12}" + "".join(f"{c.upper():>10}" for c in columns)
    lines = [header]
    for scene, metrics in rows.items():
        lines.append(f"{scene:<12}" + "".join(f"{metrics.get(c, float('nan')):>10.4f}" for c in columns))
    if rows:
        avg = {c: float(np.mean([m[c] for m in rows.values() if c in m])) for c in columns}
        lines.append(f"{'AVG':<12}" + "".join(f"{avg[c]:>10.4f}" for c in columns))
    return "\n".join(lines)
