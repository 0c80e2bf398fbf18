"""Trajectory critic: spatial embedding -> LSTM -> FC(ReLU) -> linear score."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray
from .params import ParameterStore

INPUT_MODES = ("future_only", "obs_plus_future")


@dataclass
class DiscriminatorConfig:
    F: int = 16
    hidden: int = 16
    input_mode: str = "obs_plus_future"

    def __post_init__(self):
        if self.hidden < 1 or self.F < 1:
            raise ValueError("F and hidden must be >= 1")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"unknown input_mode {self.input_mode!r}; expected one of {INPUT_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


def init_discriminator_params(cfg: DiscriminatorConfig, seed: int = 0,
                              prefix: str = "discriminator.", scale: float = 0.1) -> ParameterStore:
    """Uniform(-scale, scale) init, already inside the weight-clipping box."""
    rng = np.random.default_rng(seed)
    store = ParameterStore(seed)
    F, H = cfg.F, cfg.hidden
    u = lambda *shape: rng.uniform(-scale, scale, size=shape)
    store.add(prefix + "spe.weight", u(2, F))
    store.add(prefix + "spe.bias", np.zeros(F))
    store.add(prefix + "lstm.w_ih", u(F, 4 * H))
    store.add(prefix + "lstm.w_hh", u(H, 4 * H))
    store.add(prefix + "lstm.bias", np.zeros(4 * H))
    store.add(prefix + "fc.weight", u(H, H))
    store.add(prefix + "fc.bias", np.zeros(H))
    store.add(prefix + "out.weight", u(H, 1))
    store.add(prefix + "out.bias", np.zeros(1))
    return store


def lstm_cell(x, h, c, w_ih, w_hh, bias):
    """One step; gate columns ordered (input, forget, output, cell)."""
    H = w_hh.shape[0]
    z = ad.matmul(x, w_ih) + ad.matmul(h, w_hh) + bias
    gates = ad.sigmoid(z[:, 0:3 * H])
    i, f, o = gates[:, 0:H], gates[:, H:2 * H], gates[:, 2 * H:3 * H]
    g = ad.tanh(z[:, 3 * H:4 * H])
    c = f * c + i * g
    h = o * ad.tanh(c)
    return h, c


class Discriminator:
    def __init__(self, cfg: DiscriminatorConfig, params: ParameterStore | None = None, seed: int = 0,
                 prefix: str = "discriminator."):
        self.cfg = cfg
        self.prefix = prefix
        self.params = params if params is not None else init_discriminator_params(cfg, seed, prefix)

    def p(self, name: str) -> DiffArray:
        return self.params[self.prefix + name]

    def score(self, trajectories) -> DiffArray:
        """[T, N, 2] displacement sequences -> [N] unbounded scores."""
        traj = ad.as_diff(trajectories)
        if traj.ndim != 3 or traj.shape[0] < 1 or traj.shape[2] != 2:
            raise ad.ShapeError(f"score expects [T, N, 2] with T >= 1, got {traj.shape}")
        T, N = traj.shape[:2]
        H = self.cfg.hidden
        emb = ad.matmul(traj, self.p("spe.weight")) + self.p("spe.bias")  # [T, N, F]
        h = DiffArray(np.zeros((N, H)))
        c = DiffArray(np.zeros((N, H)))
        w_ih, w_hh, b = self.p("lstm.w_ih"), self.p("lstm.w_hh"), self.p("lstm.bias")
        for t in range(T):
            h, c = lstm_cell(emb[t], h, c, w_ih, w_hh, b)
        hidden = ad.relu(ad.matmul(h, self.p("fc.weight")) + self.p("fc.bias"))
        out = ad.matmul(hidden, self.p("out.weight")) + self.p("out.bias")
        return ad.reshape(out, (N,))

    __call__ = score

    def critic_input(self, obs_rel, future_rel):
        """Sequence the critic sees for a window, per ``input_mode``."""
        if self.cfg.input_mode == "future_only":
            return ad.as_diff(future_rel)
        return ad.concat([ad.as_diff(obs_rel), ad.as_diff(future_rel)], axis=0)
