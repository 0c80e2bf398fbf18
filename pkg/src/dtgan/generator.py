"""The attention-based trajectory generator.

Forward path for one window (shapes for T_o observed frames, N pedestrians):

    node features [T_o, N, 2]
      -> spatial embedding            [T_o, N, F]
      -> random-weight graph attention [T_o, N, F]
      -> causal TCN along time         [T_o, N, F]   (per pedestrian)
      -> time-as-channel CNNs          [T_p, N, F]
      -> convolutional decoder         [T_p, N, C]   C = 2 | 5 | 3 by head
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray
from .data import TrajectoryBatch
from .graphs import GraphSequence, build_graphs
from .params import ParameterStore

HEADS = {"point": 2, "gaussian": 5, "uniform": 3}
# tanh saturates to exactly 1.0 in float64; keep |rho| strictly below 1
RHO_MAX = 1.0 - 1e-6


@dataclass
class GeneratorConfig:
    D: int = 2
    F: int = 8
    T_o: int = 8
    T_p: int = 12
    tcn_layers: int = 2
    tcn_kernel: int = 3
    cnn_layers: int = 3
    cnn_kernel: int = 3
    decoder_kernel: int = 3
    output_head: str = "point"

    def __post_init__(self):
        if self.F < 1 or self.D < 1:
            raise ValueError("D and F must be >= 1")
        if self.decoder_kernel % 2 == 0 or self.cnn_kernel % 2 == 0:
            raise ValueError("decoder_kernel and cnn_kernel must be odd")
        if self.output_head not in HEADS:
            raise ValueError(f"unknown output_head {self.output_head!r}; expected one of {sorted(HEADS)}")
        if self.tcn_layers < 0 or self.cnn_layers < 1 or self.tcn_kernel < 1:
            raise ValueError("need tcn_layers >= 0, cnn_layers >= 1, tcn_kernel >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GaussianParams:
    """Per-frame bi-variate Gaussians over displacement; arrays or DiffArrays."""

    mu: object  # [T_p, N, 2]
    sigma: object  # [T_p, N, 2]
    rho: object  # [T_p, N]

    def numpy(self) -> "GaussianParams":
        conv = lambda v: v.values.copy() if isinstance(v, DiffArray) else np.asarray(v, dtype=float)
        return GaussianParams(conv(self.mu), conv(self.sigma), conv(self.rho))


@dataclass
class PredictionSet:
    samples: np.ndarray  # [K, T_p, N, 2] absolute
    truth: np.ndarray  # [T_p, N, 2] absolute
    gaussians: list | None = None  # one GaussianParams (numpy) per sample, gaussian head only

    @property
    def K(self) -> int:
        return self.samples.shape[0]


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_generator_params(cfg: GeneratorConfig, seed: int = 0, prefix: str = "generator.") -> ParameterStore:
    rng = np.random.default_rng(seed)
    store = ParameterStore(seed)
    F, k = cfg.F, cfg.tcn_kernel
    store.add(prefix + "spe.weight", _glorot(rng, (cfg.D, F), cfg.D, F))
    store.add(prefix + "spe.bias", np.zeros(F))
    store.add(prefix + "gat.weight", _glorot(rng, (F, F), F, F))
    store.add(prefix + "gat.attn", _glorot(rng, (2 * F,), 2 * F, 1))
    for layer in range(cfg.tcn_layers):
        store.add(prefix + f"tcn.{layer}.weight", _glorot(rng, (F, F, k), F * k, F * k))
        store.add(prefix + f"tcn.{layer}.bias", np.zeros(F))
    kc = cfg.cnn_kernel
    for layer in range(cfg.cnn_layers):
        c_in = cfg.T_o if layer == 0 else cfg.T_p
        store.add(prefix + f"cnn.{layer}.weight", _glorot(rng, (cfg.T_p, c_in, kc), c_in * kc, cfg.T_p * kc))
        store.add(prefix + f"cnn.{layer}.bias", np.zeros(cfg.T_p))
    out, kd = HEADS[cfg.output_head], cfg.decoder_kernel
    store.add(prefix + "dec.weight", _glorot(rng, (out, F, kd), F * kd, out * kd))
    store.add(prefix + "dec.bias", np.zeros(out))
    return store


def spatial_embed(node_feats, weight, bias) -> DiffArray:
    """Same affine map applied to every (t, i) feature vector."""
    return ad.matmul(node_feats, weight) + bias


def gat_attention(embeddings, adj, weight, attn, residual: bool = True):
    """Single-head graph attention modulated by fixed edge weights.

    ``embeddings`` is [..., N, F] and ``adj`` [..., N, N]. Attention is a
    softmax over j != i of LeakyReLU(a . [W h_i || W h_j]); it is then
    multiplied by ``adj`` and used to aggregate W h_j, followed by ReLU and
    (optionally) the residual h_i.

    Returns ``(alpha, alpha_hat, out)`` where ``alpha`` is the pre-modulation
    attention and ``alpha_hat`` the post-modulation weights.
    """
    embeddings = ad.as_diff(embeddings)
    N = embeddings.shape[-2]
    if N < 2:
        raise ValueError("graph attention needs at least 2 nodes")
    adj = np.asarray(adj.values if isinstance(adj, DiffArray) else adj, dtype=float)
    F_out = weight.shape[-1]
    wh = ad.matmul(embeddings, weight)
    a_src = ad.reshape(attn[:F_out], (F_out, 1))
    a_dst = ad.reshape(attn[F_out:], (F_out, 1))
    s_src = ad.matmul(wh, a_src)  # [..., N, 1]
    s_dst = ad.matmul(wh, a_dst)
    axes = tuple(range(s_dst.ndim - 2)) + (s_dst.ndim - 1, s_dst.ndim - 2)
    logits = ad.leaky_relu(s_src + ad.transpose(s_dst, axes))
    alpha = ad.softmax(logits, axis=-1, mask=~np.eye(N, dtype=bool))
    alpha_hat = alpha * adj
    out = ad.relu(ad.matmul(alpha_hat, wh))
    if residual:
        out = out + embeddings
    return alpha, alpha_hat, out


class Generator:
    def __init__(self, cfg: GeneratorConfig, params: ParameterStore | None = None, seed: int = 0,
                 prefix: str = "generator."):
        self.cfg = cfg
        self.prefix = prefix
        self.params = params if params is not None else init_generator_params(cfg, seed, prefix)

    def p(self, name: str) -> DiffArray:
        return self.params[self.prefix + name]

    # -- stages --------------------------------------------------------
    def embed(self, node_feats) -> DiffArray:
        return spatial_embed(node_feats, self.p("spe.weight"), self.p("spe.bias"))

    def attend(self, H, adj) -> DiffArray:
        return gat_attention(H, adj, self.p("gat.weight"), self.p("gat.attn"))[2]

    def temporal_stack(self, H) -> DiffArray:
        """[T_o, N, F] -> [T_p, N, F]."""
        cfg = self.cfg
        x = ad.transpose(H, (1, 2, 0))  # [N, F, T_o]: convolve each pedestrian along time
        k = cfg.tcn_kernel
        for layer in range(cfg.tcn_layers):
            d = 2**layer
            y = ad.conv1d(x, self.p(f"tcn.{layer}.weight"), self.p(f"tcn.{layer}.bias"),
                          dilation=d, padding=((k - 1) * d, 0))
            x = ad.relu(y) + x
        x = ad.transpose(x, (0, 2, 1))  # [N, T_o, F]: time is the channel axis
        half = cfg.cnn_kernel // 2
        for layer in range(cfg.cnn_layers):
            y = ad.conv1d(x, self.p(f"cnn.{layer}.weight"), self.p(f"cnn.{layer}.bias"), padding=(half, half))
            x = y if layer == 0 else ad.relu(y) + x
        return ad.transpose(x, (1, 0, 2))  # [T_p, N, F]

    def decode_raw(self, V) -> DiffArray:
        """[T_p, N, F] -> [T_p, N, C] pre-activation head channels."""
        half = self.cfg.decoder_kernel // 2
        x = ad.transpose(V, (1, 2, 0))  # [N, F, T_p]
        y = ad.conv1d(x, self.p("dec.weight"), self.p("dec.bias"), padding=(half, half))
        return ad.transpose(y, (2, 0, 1))

    def decode(self, V):
        return split_head(self.decode_raw(V), self.cfg.output_head)

    def forward(self, graph: GraphSequence):
        """Head outputs for one graph sequence (see :func:`split_head`)."""
        H = self.embed(graph.node_feats)
        H = self.attend(H, graph.adj)
        V = self.temporal_stack(H)
        return self.decode(V)

    __call__ = forward


def split_head(raw: DiffArray, head: str):
    """point -> displacements [T_p, N, 2];
    gaussian -> GaussianParams with sigma = exp(.), rho = RHO_MAX * tanh(.);
    uniform -> (displacements [T_p, N, 2], radius [T_p, N] = exp(.))."""
    if head == "point":
        return raw
    if head == "gaussian":
        return GaussianParams(raw[..., 0:2], ad.exp(raw[..., 2:4]), RHO_MAX * ad.tanh(raw[..., 4]))
    if head == "uniform":
        return raw[..., 0:2], ad.exp(raw[..., 2])
    raise ValueError(f"unknown head {head!r}")


def to_absolute(rel: np.ndarray, last_obs: np.ndarray) -> np.ndarray:
    """Cumulative displacement from the last observed position."""
    return last_obs[None] + np.cumsum(rel, axis=0)


def to_absolute_diff(rel: DiffArray, last_obs: np.ndarray) -> DiffArray:
    """Differentiable cumulative sum over the leading (time) axis."""
    T = rel.shape[0]
    lower = np.tril(np.ones((T, T)))
    flat = ad.reshape(rel, (T, -1))
    summed = ad.matmul(DiffArray(lower), flat)
    return ad.reshape(summed, rel.shape) + last_obs[None]


def gaussian_sample(gp: GaussianParams, rng: np.random.Generator):
    """Reparameterised draw; differentiable when the params are DiffArrays."""
    shape = gp.rho.shape
    z1 = rng.standard_normal(shape)
    z2 = rng.standard_normal(shape)
    if isinstance(gp.mu, DiffArray):
        sx, sy = gp.sigma[..., 0], gp.sigma[..., 1]
        x = gp.mu[..., 0] + sx * z1
        y = gp.mu[..., 1] + sy * (gp.rho * z1 + ad.sqrt(1.0 - ad.square(gp.rho)) * z2)
        T, N = shape
        return ad.concat([ad.reshape(x, (T, N, 1)), ad.reshape(y, (T, N, 1))], axis=-1)
    mu, sigma, rho = np.asarray(gp.mu), np.asarray(gp.sigma), np.asarray(gp.rho)
    x = mu[..., 0] + sigma[..., 0] * z1
    y = mu[..., 1] + sigma[..., 1] * (rho * z1 + np.sqrt(1.0 - rho**2) * z2)
    return np.stack([x, y], axis=-1)


def generate(model: Generator, batch: TrajectoryBatch, seed, K: int = 20) -> PredictionSet:
    """K sampled futures in absolute coordinates.

    Every sample uses a fresh random adjacency; the gaussian head additionally
    draws one point per predicted frame distribution.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    head = model.cfg.output_head
    last = batch.obs_abs[-1]
    samples, gaussians = [], [] if head == "gaussian" else None
    for _ in range(K):
        out = model(build_graphs(batch, rng))
        if head == "gaussian":
            gp = out.numpy()
            gaussians.append(gp)
            rel = gaussian_sample(gp, rng)
        elif head == "uniform":
            rel = out[0].values
        else:
            rel = out.values
        samples.append(to_absolute(rel, last))
    return PredictionSet(np.stack(samples), batch.future_abs.copy(), gaussians)
