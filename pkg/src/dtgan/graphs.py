"""Graph sequences over the observation window."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TrajectoryBatch

EUCLIDEAN_EPS = 1e-8
FIXED_SCHEMES = ("ones", "euclidean_reciprocal", "arithmetic")


@dataclass
class GraphSequence:
    node_feats: np.ndarray  # [T_o, N, 2]
    adj: np.ndarray  # [T_o, N, N], zero diagonal

    @property
    def num_nodes(self) -> int:
        return self.node_feats.shape[1]


def random_adjacency(T: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform [0, 1) edge weights, drawn independently per (t, i, j), zero diagonal."""
    adj = rng.random((T, N, N))
    idx = np.arange(N)
    adj[:, idx, idx] = 0.0
    return adj


def _check(batch: TrajectoryBatch) -> None:
    if batch.num_peds < 2:
        raise ValueError(f"graph needs at least 2 pedestrians, batch has {batch.num_peds}")


def build_graphs(batch: TrajectoryBatch, seed) -> GraphSequence:
    """Observed displacements as node features plus a freshly seeded random adjacency.

    ``seed`` may be an integer or an existing ``numpy.random.Generator``.
    """
    _check(batch)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    feats = batch.obs_rel.copy()
    return GraphSequence(feats, random_adjacency(batch.obs_len, batch.num_peds, rng))


def build_fixed_weights(batch: TrajectoryBatch, scheme: str, start: float = 0.1,
                        step: float = 0.1) -> GraphSequence:
    """Deterministic comparison adjacencies.

    ``arithmetic`` fills the off-diagonal entries of each frame row-major with
    ``start, start + step, ...``.
    """
    _check(batch)
    T, N = batch.obs_len, batch.num_peds
    off = ~np.eye(N, dtype=bool)
    if scheme == "ones":
        adj = np.broadcast_to(off.astype(float), (T, N, N)).copy()
    elif scheme == "euclidean_reciprocal":
        pos = batch.obs_abs
        dist = np.linalg.norm(pos[:, :, None, :] - pos[:, None, :, :], axis=-1)
        adj = np.where(off, 1.0 / (dist + EUCLIDEAN_EPS), 0.0)
    elif scheme == "arithmetic":
        frame = np.zeros((N, N))
        frame[off] = start + step * np.arange(N * (N - 1))
        adj = np.broadcast_to(frame, (T, N, N)).copy()
    else:
        raise ValueError(f"unknown weight scheme {scheme!r}; expected one of {FIXED_SCHEMES}")
    return GraphSequence(batch.obs_rel.copy(), adj)
