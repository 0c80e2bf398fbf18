"""Raw trajectory files -> fixed-length multi-pedestrian windows -> splits."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

SCENES = ("ETH", "HOTEL", "UNIV", "ZARA1", "ZARA2")
SYNTHETIC_PREFIX = "SYNTHETIC"


class ParseError(ValueError):
    def __init__(self, path, lineno: int, line: str, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}: {line.strip()!r}")
        self.lineno = lineno


@dataclass(frozen=True, order=True)
class TrackPoint:
    frame_id: int
    ped_id: int
    x: float
    y: float


@dataclass
class TrajectoryBatch:
    """One window of ``obs_len + pred_len`` frames shared by N pedestrians."""

    ped_ids: list
    abs_pos: np.ndarray  # [slen, N, 2]
    rel_disp: np.ndarray  # [slen, N, 2], first frame zero
    obs_len: int
    pred_len: int
    scene: str = ""
    frames: list = field(default_factory=list)

    @property
    def num_peds(self) -> int:
        return len(self.ped_ids)

    @property
    def obs_abs(self) -> np.ndarray:
        return self.abs_pos[: self.obs_len]

    @property
    def obs_rel(self) -> np.ndarray:
        return self.rel_disp[: self.obs_len]

    @property
    def future_abs(self) -> np.ndarray:
        return self.abs_pos[self.obs_len:]

    @property
    def future_rel(self) -> np.ndarray:
        return self.rel_disp[self.obs_len:]


@dataclass
class DatasetSplit:
    name: str
    train: list
    val: list
    test: list

    def counts(self) -> tuple:
        return len(self.train), len(self.val), len(self.test)


def _parse_int(token: str) -> int:
    value = float(token)
    if not value.is_integer():
        raise ValueError(f"non-integer id {token}")
    return int(value)


def parse_raw(path) -> list:
    """Read ``frame_id ped_id x y`` lines (any whitespace) sorted by (frame, ped)."""
    points = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 4:
                raise ParseError(path, lineno, line, f"expected 4 fields, got {len(tokens)}")
            try:
                frame, ped = _parse_int(tokens[0]), _parse_int(tokens[1])
                x, y = float(tokens[2]), float(tokens[3])
            except ValueError as err:
                raise ParseError(path, lineno, line, str(err)) from None
            if frame < 0:
                raise ParseError(path, lineno, line, "negative frame id")
            if not (np.isfinite(x) and np.isfinite(y)):
                raise ParseError(path, lineno, line, "non-finite coordinate")
            points.append(TrackPoint(frame, ped, x, y))
    points.sort(key=lambda p: (p.frame_id, p.ped_id))
    return points


def write_raw(points: Iterable[TrackPoint], path) -> None:
    with open(path, "w") as fh:
        for p in points:
            fh.write(f"{p.frame_id}\t{p.ped_id}\t{p.x!r}\t{p.y!r}\n")


def make_batch(abs_pos: np.ndarray, ped_ids, obs_len: int, pred_len: int, scene: str = "",
               frames=()) -> TrajectoryBatch:
    abs_pos = np.asarray(abs_pos, dtype=np.float64)
    rel = np.zeros_like(abs_pos)
    rel[1:] = abs_pos[1:] - abs_pos[:-1]
    return TrajectoryBatch(list(ped_ids), abs_pos, rel, obs_len, pred_len, scene, list(frames))


def extract_sequences(points: Sequence[TrackPoint], slen: int, min_ped: int, skip: int = 1,
                      obs_len: int | None = None, scene: str = "") -> list:
    """Slide a window of ``slen`` consecutive unique frame ids over the data.

    A pedestrian joins the window's batch only when it has a record in every
    frame of the window; windows with ``min_ped`` or fewer such pedestrians
    are dropped.
    """
    if slen < 2:
        raise ValueError("slen must be >= 2")
    if min_ped < 1:
        raise ValueError("min_ped must be >= 1")
    if skip < 1:
        raise ValueError("skip must be >= 1")
    if obs_len is None:
        obs_len = slen // 2
    pts = sorted(points, key=lambda p: (p.frame_id, p.ped_id))
    if not pts:
        return []
    frame_ids = sorted({p.frame_id for p in pts})
    frame_index = {f: k for k, f in enumerate(frame_ids)}
    # per frame slot: ped -> (x, y); first record wins on duplicates
    by_frame = [dict() for _ in frame_ids]
    for p in pts:
        by_frame[frame_index[p.frame_id]].setdefault(p.ped_id, (p.x, p.y))

    batches = []
    for start in range(0, len(frame_ids) - slen + 1, skip):
        window = by_frame[start: start + slen]
        present = set(window[0])
        for slot in window[1:]:
            present &= slot.keys()
        if len(present) <= min_ped:
            continue
        peds = sorted(present)
        abs_pos = np.array([[slot[pid] for pid in peds] for slot in window])
        batches.append(make_batch(abs_pos, peds, obs_len, slen - obs_len, scene,
                                  frame_ids[start: start + slen]))
    return batches


def canonical_scene(name: str) -> str:
    upper = name.upper()
    if upper in SCENES or upper.startswith(SYNTHETIC_PREFIX):
        return upper
    raise ValueError(f"unknown scene {name!r}; expected one of {', '.join(SCENES)} or a synthetic tag")


def _scene_files(path) -> list:
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise FileNotFoundError(f"scene path {path} does not exist")
    return sorted(p for p in path.rglob("*.txt") if p.is_file())


def load_scene(path, T_o: int = 8, T_p: int = 12, min_ped: int = 3, skip: int = 1, scene: str = "") -> list:
    """Windows from every ``*.txt`` file under ``path``; windows never span files."""
    batches = []
    for f in _scene_files(path):
        batches.extend(extract_sequences(parse_raw(f), T_o + T_p, min_ped, skip, T_o, scene))
    return batches


def _train_val(batches: list, val_fraction: float, rng: np.random.Generator) -> tuple:
    n_val = int(round(val_fraction * len(batches)))
    val_idx = set(rng.permutation(len(batches))[:n_val].tolist())
    train = [b for k, b in enumerate(batches) if k not in val_idx]
    val = [b for k, b in enumerate(batches) if k in val_idx]
    return train, val


def make_splits(scene_dirs: Mapping[str, os.PathLike], held_out: str, T_o: int = 8, T_p: int = 12,
                min_ped: int = 3, skip: int = 1, val_fraction: float = 0.2, seed: int = 0) -> DatasetSplit:
    """Leave-one-out: test windows from ``held_out``, train/val from the rest.

    When ``held_out`` is the only scene supplied its windows serve both roles.
    """
    scenes = {canonical_scene(k): v for k, v in scene_dirs.items()}
    held = canonical_scene(held_out)
    if held not in scenes:
        raise ValueError(f"held-out scene {held_out!r} not among supplied scenes {sorted(scenes)}")
    for name, path in scenes.items():
        if not Path(path).exists():
            raise FileNotFoundError(f"scene {name}: path {path} does not exist")
    rng = np.random.default_rng(seed)
    test = load_scene(scenes[held], T_o, T_p, min_ped, skip, held)
    train, val = [], []
    sources = [n for n in scenes if n != held] or [held]
    for name in sources:
        batches = test if name == held else load_scene(scenes[name], T_o, T_p, min_ped, skip, name)
        tr, va = _train_val(batches, val_fraction, rng)
        train.extend(tr)
        val.extend(va)
    return DatasetSplit(held, train, val, test)


def _find_child(root: Path, name: str):
    for child in root.iterdir() if root.is_dir() else ():
        if child.name.upper() == name:
            return child
    return None


def discover_splits(data_dir, held_out: str, T_o: int = 8, T_p: int = 12, min_ped: int = 3,
                    skip: int = 1, val_fraction: float = 0.2, seed: int = 0) -> DatasetSplit:
    """Build splits from a data directory.

    Two layouts are recognised:

    * ``data_dir/<scene>/{train,val,test}/*.txt`` (the pre-split layout the
      public ETH/UCY release ships with) -- used verbatim;
    * ``data_dir/<scene>/*.txt`` raw per-scene files -- split by
      :func:`make_splits`.
    """
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory {root} does not exist")
    held = canonical_scene(held_out)
    held_dir = _find_child(root, held)
    if held_dir is not None and (held_dir / "train").is_dir():
        parts = {}
        for part in ("train", "val", "test"):
            sub = held_dir / part
            parts[part] = load_scene(sub, T_o, T_p, min_ped, skip, held) if sub.is_dir() else []
        return DatasetSplit(held, parts["train"], parts["val"], parts["test"])
    scene_dirs = {}
    for child in sorted(root.iterdir()):
        if child.is_dir():
            try:
                scene_dirs[canonical_scene(child.name)] = child
            except ValueError:
                continue
    if held not in scene_dirs:
        return DatasetSplit(held, [], [], [])
    return make_splits(scene_dirs, held, T_o, T_p, min_ped, skip, val_fraction, seed)


# ----------------------------------------------------------------------
# synthetic constant-velocity corpus
# ----------------------------------------------------------------------
def synthetic_tracks(n_traj: int = 200, group: int = 4, length: int = 28, noise: float = 0.01,
                     frame_step: int = 10, seed: int = 0) -> list:
    """Groups of ``group`` pedestrians walking at constant velocity.

    Groups occupy disjoint frame ranges, each pedestrian lives ``length``
    frames, and positions carry i.i.d. Gaussian jitter of std ``noise``.
    """
    rng = np.random.default_rng(seed)
    points = []
    n_groups = -(-n_traj // group)
    ped = 0
    for g in range(n_groups):
        members = min(group, n_traj - g * group)
        t0 = g * (length + 2)
        for _ in range(members):
            start = rng.uniform(-5.0, 5.0, size=2)
            speed = rng.uniform(0.2, 0.6)
            heading = rng.uniform(0.0, 2 * np.pi)
            vel = speed * np.array([np.cos(heading), np.sin(heading)])
            for k in range(length):
                pos = start + vel * k + rng.normal(0.0, noise, size=2)
                points.append(TrackPoint((t0 + k) * frame_step, ped, float(pos[0]), float(pos[1])))
            ped += 1
    points.sort(key=lambda p: (p.frame_id, p.ped_id))
    return points


def synthetic_split(n_traj: int = 200, T_o: int = 8, T_p: int = 12, min_ped: int = 3, seed: int = 0,
                    val_fraction: float = 0.2, noise: float = 0.01) -> DatasetSplit:
    """Train/val from one synthetic scene, test from an independently seeded one."""
    rng = np.random.default_rng(seed)
    slen = T_o + T_p
    train_pts = synthetic_tracks(n_traj, noise=noise, seed=seed)
    test_pts = synthetic_tracks(max(n_traj // 4, 4), noise=noise, seed=seed + 1_000_003)
    batches = extract_sequences(train_pts, slen, min_ped, 1, T_o, "SYNTHETIC")
    train, val = _train_val(batches, val_fraction, rng)
    test = extract_sequences(test_pts, slen, min_ped, 1, T_o, "SYNTHETIC")
    return DatasetSplit("SYNTHETIC", train, val, test)


def constant_velocity_predict(batch: TrajectoryBatch) -> np.ndarray:
    """Extrapolate the mean observed velocity; returns absolute [T_p, N, 2]."""
    obs = batch.obs_abs
    vel = (obs[-1] - obs[0]) / (batch.obs_len - 1)
    steps = np.arange(1, batch.pred_len + 1)[:, None, None]
    return obs[-1][None] + steps * vel[None]
