import numpy as np
import pytest

from dtgan.data import TrackPoint, extract_sequences, make_batch, write_raw
from dtgan.generator import Generator, GeneratorConfig


def random_batch(rng, N=4, T_o=8, T_p=12, scale=0.3):
    """A window whose displacements look like walking steps."""
    steps = rng.normal(0.0, scale, size=(T_o + T_p, N, 2))
    abs_pos = rng.uniform(-3, 3, size=(1, N, 2)) + np.cumsum(steps, axis=0)
    return make_batch(abs_pos, list(range(N)), T_o, T_p, "TEST", list(range(0, 10 * (T_o + T_p), 10)))


def constant_velocity_points(n_groups=6, group=4, length=24, seed=0, frame_step=10):
    """Noise-free straight walkers in disjoint frame blocks."""
    rng = np.random.default_rng(seed)
    pts = []
    ped = 0
    for g in range(n_groups):
        t0 = g * (length + 2)
        for _ in range(group):
            start = rng.uniform(-4, 4, size=2)
            vel = rng.uniform(-0.5, 0.5, size=2)
            for k in range(length):
                x, y = start + vel * k
                pts.append(TrackPoint((t0 + k) * frame_step, ped, float(x), float(y)))
            ped += 1
    return pts


def enumerate_windows(points, slen, min_ped, skip=1):
    """Exhaustive oracle: every run of slen consecutive frame ids, checked pedestrian by pedestrian."""
    table = {}
    for p in points:
        table.setdefault((p.frame_id, p.ped_id), (p.x, p.y))
    frames = sorted({f for f, _ in table})
    peds = sorted({q for _, q in table})
    out = []
    for start in range(0, len(frames) - slen + 1, skip):
        window = frames[start:start + slen]
        keep = [q for q in peds if all((f, q) in table for f in window)]
        if len(keep) > min_ped:
            pos = [[table[(f, q)] for q in keep] for f in window]
            out.append((tuple(window), tuple(keep), np.array(pos)))
    return out


def random_dataset(rng):
    """Random frame gaps and partial presence, for the extraction oracle."""
    n_frames = int(rng.integers(3, 30))
    gaps = rng.integers(1, 15, size=n_frames)
    frames = np.cumsum(gaps)
    pts = []
    for ped in range(int(rng.integers(1, 9))):
        present = rng.random(n_frames) < rng.uniform(0.4, 1.0)
        for f, here in zip(frames, present):
            if here:
                pts.append(TrackPoint(int(f), ped, float(rng.normal()), float(rng.normal())))
    return pts


def oracle_generator(T_o=8, T_p=12) -> Generator:
    """Point head that repeats the last observed displacement: exact on constant velocity."""
    cfg = GeneratorConfig(D=2, F=2, T_o=T_o, T_p=T_p, tcn_layers=0, cnn_layers=1, cnn_kernel=3,
                          decoder_kernel=3, output_head="point")
    gen = Generator(cfg, seed=0)
    p = gen.params
    p["generator.spe.weight"].values = np.eye(2)
    p["generator.spe.bias"].values = np.zeros(2)
    p["generator.gat.weight"].values = np.zeros((2, 2))
    p["generator.gat.attn"].values = np.zeros(4)
    w = np.zeros((T_p, T_o, 3))
    w[:, T_o - 1, 1] = 1.0
    p["generator.cnn.0.weight"].values = w
    p["generator.cnn.0.bias"].values = np.zeros(T_p)
    dec = np.zeros((2, 2, 3))
    dec[0, 0, 1] = dec[1, 1, 1] = 1.0
    p["generator.dec.weight"].values = dec
    p["generator.dec.bias"].values = np.zeros(2)
    return gen


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cv_data_dir(tmp_path):
    """Raw-layout data directory with one noise-free constant-velocity scene."""
    scene = tmp_path / "data" / "SYNTHETIC_CV"
    scene.mkdir(parents=True)
    write_raw(constant_velocity_points(), scene / "tracks.txt")
    return tmp_path / "data"


@pytest.fixture
def cv_windows():
    return extract_sequences(constant_velocity_points(), 20, 3, 1, 8, "SYNTHETIC_CV")
