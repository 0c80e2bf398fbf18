"""Pre-training, adversarial training and checkpoint evaluation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import TrajectoryBatch
from .discriminator import Discriminator, DiscriminatorConfig
from .generator import Generator, GeneratorConfig, PredictionSet, gaussian_sample, generate, to_absolute_diff
from .graphs import build_graphs
from .losses import LossConfig, gaussian_nll, total_generator_loss, uniform_nll, variety_mse, wgan_losses
from .metrics import ade_fde, amd, amv, fit_gaussians
from .params import clip_gradients, clip_weights, load_checkpoint, make_optimizer, save_checkpoint

log = logging.getLogger(__name__)

LOG_HEADER = "epoch,phase,batch,d_loss,g_loss,task_loss"
TABLE_SEEDS = (3, 42, 43, 123, 222)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    pretrain_lr: float = 1e-3
    adv_lr: float = 1e-5
    pretrain_epochs: int = 50
    adv_epochs: int = 100
    d_steps_per_g: int = 1
    g_grad_clip: tuple = (-1.0, 1.0)
    d_weight_clip: tuple = (-0.1, 0.1)
    seed: int = 0
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    pretrain_optimizer: str = "adam"
    adv_optimizer: str = "rmsprop"
    resample: str = "step"  # "step": fresh adjacency every forward pass; "epoch": frozen per epoch
    pretrain_K: int = 1  # generator samples per window for the best-of-K pre-training loss

    def __post_init__(self):
        if self.pretrain_lr <= 0 or self.adv_lr < 0:
            raise ValueError("pretrain_lr must be > 0 and adv_lr >= 0")
        if self.batch_size < 1 or self.d_steps_per_g < 1:
            raise ValueError("batch_size and d_steps_per_g must be >= 1")
        if self.resample not in ("step", "epoch"):
            raise ValueError("resample must be 'step' or 'epoch'")
        self.g_grad_clip = tuple(self.g_grad_clip)
        self.d_weight_clip = tuple(self.d_weight_clip)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["loss_cfg"] = self.loss_cfg.to_dict()
        return out


@dataclass
class LogRow:
    epoch: int
    phase: str
    batch: object  # int, or "mean" for the epoch summary
    d_loss: float | None = None
    g_loss: float | None = None
    task_loss: float | None = None

    def line(self) -> str:
        fmt = lambda v: "" if v is None else repr(float(v))
        return f"{self.epoch},{self.phase},{self.batch},{fmt(self.d_loss)},{fmt(self.g_loss)},{fmt(self.task_loss)}"


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    # largest |generator grad| seen at each adversarial step, after clipping
    g_grad_max: list = field(default_factory=list)
    # largest |discriminator weight| after each critic step
    d_weight_max: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def lines(self) -> list:
        return [r.line() for r in self.rows]

    def write(self, path) -> None:
        path = Path(path)
        new = not path.exists()
        with open(path, "a") as fh:
            if new:
                fh.write(LOG_HEADER + "\n")
            for line in self.lines():
                fh.write(line + "\n")


# ----------------------------------------------------------------------
# model bundle persistence
# ----------------------------------------------------------------------
def save_models(path, generator: Generator, discriminator: Discriminator | None = None,
                loss_cfg: LossConfig | None = None, seed: int = 0) -> None:
    tensors = generator.params.state()
    meta = {"generator": generator.cfg.to_dict()}
    if discriminator is not None:
        tensors.update(discriminator.params.state())
        meta["discriminator"] = discriminator.cfg.to_dict()
    if loss_cfg is not None:
        meta["loss"] = loss_cfg.to_dict()
    save_checkpoint(path, tensors, rng_seed=seed, meta=meta)


def load_models(path):
    """Return ``(generator, discriminator_or_None, meta)`` from a checkpoint."""
    tensors, seed, meta = load_checkpoint(path)
    gcfg = GeneratorConfig(**meta["generator"])
    gen = Generator(gcfg, seed=seed)
    gen.params.load_state({k: v for k, v in tensors.items() if k.startswith("generator.")})
    disc = None
    if "discriminator" in meta:
        dcfg = DiscriminatorConfig(**meta["discriminator"])
        disc = Discriminator(dcfg, seed=seed)
        disc.params.load_state({k: v for k, v in tensors.items() if k.startswith("discriminator.")})
    return gen, disc, meta


# ----------------------------------------------------------------------
# per-window computations
# ----------------------------------------------------------------------
class _GraphSource:
    """Adjacency draws: fresh every forward pass, or frozen per epoch."""

    def __init__(self, rng: np.random.Generator, mode: str):
        self.rng = rng
        self.mode = mode
        self.epoch_seed = None

    def new_epoch(self) -> None:
        if self.mode == "epoch":
            self.epoch_seed = int(self.rng.integers(2**63))

    def graphs(self, batch: TrajectoryBatch, index: int, draw: int = 0):
        if self.mode == "epoch":
            return build_graphs(batch, np.random.default_rng([self.epoch_seed, index, draw]))
        return build_graphs(batch, self.rng)


def _fake_displacements(out, head: str, rng: np.random.Generator):
    if head == "gaussian":
        return gaussian_sample(out, rng)
    if head == "uniform":
        return out[0]
    return out


def _uniform_task(out, batch: TrajectoryBatch, eps: float):
    disp, radius = out
    pred_abs = to_absolute_diff(disp, batch.obs_abs[-1]).values
    centres = np.concatenate([batch.obs_abs[-1][None], pred_abs[:-1]], axis=0)
    return uniform_nll(radius, batch.future_abs - centres, eps)


def window_losses(gen: Generator, batch: TrajectoryBatch, loss_cfg: LossConfig, graphs, K: int,
                  rng: np.random.Generator, index: int = 0):
    """Run the generator on one window.

    Returns ``(task_loss, fake_displacements)``: the variant's task loss (MSE
    for plain dtgan) and one differentiable generated future for the critic.
    """
    head = gen.cfg.output_head
    variant = loss_cfg.variant
    if variant in ("dtgan", "dtgan_m"):
        draws = K if variant == "dtgan_m" else 1
        outs = [gen(graphs.graphs(batch, index, k)) for k in range(draws)]
        samples = [to_absolute_diff(o, batch.obs_abs[-1]) for o in outs]
        return variety_mse(samples, batch.future_abs), outs[0]
    out = gen(graphs.graphs(batch, index))
    if variant == "dtgan_g":
        task = gaussian_nll(out, batch.future_rel)
    else:
        task = _uniform_task(out, batch, loss_cfg.r_hat_epsilon)
    return task, _fake_displacements(out, head, rng)


def _check_finite(value: float, what: str, epoch: int, batch: int) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what} at epoch {epoch}, batch {batch}")


def _guarded(fn, epoch: int, batch: int):
    """Run a loss computation, reporting numerical failures with their position."""
    try:
        return fn()
    except (FloatingPointError, ValueError) as err:
        raise TrainingError(f"loss failed at epoch {epoch}, batch {batch}: {err}") from err


def _minibatches(n: int, size: int, rng: np.random.Generator) -> list:
    order = rng.permutation(n)
    return [order[k: k + size] for k in range(0, n, size)]


# ----------------------------------------------------------------------
# phases
# ----------------------------------------------------------------------
def validation_loss(gen: Generator, batches: list, loss_cfg: LossConfig, seed: int = 0, K: int = 1) -> float:
    if not batches:
        return float("nan")
    rng = np.random.default_rng(seed)
    graphs = _GraphSource(rng, "step")
    total = 0.0
    with ad.no_grad():
        for k, b in enumerate(batches):
            total += window_losses(gen, b, loss_cfg, graphs, K, rng, k)[0].item()
    return total / len(batches)


def pretrain(gen: Generator, train: list, cfg: TrainConfig, val: list | None = None,
             out_dir=None) -> TrainingLog:
    """Fit the generator on its task loss alone with Adam."""
    log_ = TrainingLog()
    if cfg.pretrain_epochs <= 0:
        return log_
    if not train:
        raise ValueError("pretrain needs a non-empty training split")
    rng = np.random.default_rng(cfg.seed)
    graphs = _GraphSource(rng, cfg.resample)
    opt = make_optimizer(cfg.pretrain_optimizer, gen.params, cfg.pretrain_lr)
    best = float("inf")
    best_state = None
    for epoch in range(cfg.pretrain_epochs):
        graphs.new_epoch()
        epoch_losses = []
        for b_idx, idx in enumerate(_minibatches(len(train), cfg.batch_size, rng)):
            gen.params.zero_grads()
            total = 0.0
            for k in idx:
                task, _ = _guarded(lambda: window_losses(gen, train[k], cfg.loss_cfg, graphs, cfg.pretrain_K,
                                                         rng, int(k)), epoch, b_idx)
                _check_finite(task.item(), "pre-training loss", epoch, b_idx)
                (task * (1.0 / len(idx))).backward()
                total += task.item()
            opt.step()
            mean_loss = total / len(idx)
            epoch_losses.append(mean_loss)
            log_.rows.append(LogRow(epoch, "pretrain", b_idx, task_loss=mean_loss))
        log_.rows.append(LogRow(epoch, "pretrain", "mean", task_loss=float(np.mean(epoch_losses))))
        if val:
            v = validation_loss(gen, val, cfg.loss_cfg, seed=cfg.seed, K=cfg.pretrain_K)
            log_.val_loss.append(v)
            if v < best:
                best, best_state = v, gen.params.state()
                if out_dir is not None:
                    save_models(Path(out_dir) / "pretrain_best.ckpt", gen, loss_cfg=cfg.loss_cfg, seed=cfg.seed)
        log.debug("pretrain epoch %d loss %.5f", epoch, epoch_losses[-1])
    if best_state is not None:
        gen.params.load_state(best_state)
    return log_


def adversarial_train(gen: Generator, disc: Discriminator, train: list, cfg: TrainConfig) -> TrainingLog:
    """Alternate critic and generator updates with the WGAN objective.

    Each minibatch's pedestrians are pooled along the pedestrian axis, so
    both expectations are means over every pedestrian in the minibatch.
    Critic weights are clipped after every critic step; generator gradients
    are clipped before every generator step.
    """
    log_ = TrainingLog()
    if cfg.adv_epochs <= 0:
        return log_
    if not train:
        raise ValueError("adversarial_train needs a non-empty training split")
    rng = np.random.default_rng(cfg.seed + 1)
    graphs = _GraphSource(rng, cfg.resample)
    d_opt = make_optimizer(cfg.adv_optimizer, disc.params, cfg.adv_lr)
    g_opt = make_optimizer(cfg.adv_optimizer, gen.params, cfg.adv_lr)
    lcfg = cfg.loss_cfg
    clip_weights(disc.params, *cfg.d_weight_clip)
    for epoch in range(cfg.adv_epochs):
        graphs.new_epoch()
        for b_idx, idx in enumerate(_minibatches(len(train), cfg.batch_size, rng)):
            windows = [train[k] for k in idx]
            real_in = ad.concat([disc.critic_input(w.obs_rel, w.future_rel) for w in windows], axis=1)
            # critic
            for _ in range(cfg.d_steps_per_g):
                disc.params.zero_grads()
                with ad.no_grad():
                    fakes = [_guarded(lambda: window_losses(gen, w, lcfg, graphs, 1, rng, int(k)), epoch,
                                      b_idx)[1].values for k, w in zip(idx, windows)]
                fake_in = ad.concat([disc.critic_input(w.obs_rel, f) for w, f in zip(windows, fakes)], axis=1)
                d_loss, _ = wgan_losses(disc(fake_in), disc(real_in))
                _check_finite(d_loss.item(), "critic loss", epoch, b_idx)
                d_loss.backward()
                d_opt.step()
                clip_weights(disc.params, *cfg.d_weight_clip)
                log_.d_weight_max.append(disc.params.max_abs())
            # generator
            gen.params.zero_grads()
            tasks, fakes = [], []
            for k, w in zip(idx, windows):
                task, fake = _guarded(lambda: window_losses(gen, w, lcfg, graphs, lcfg.K, rng, int(k)), epoch, b_idx)
                tasks.append(task)
                fakes.append(disc.critic_input(w.obs_rel, fake))
            g_adv = -ad.mean(disc(ad.concat(fakes, axis=1)))
            task = ad.mean(ad.stack(tasks))
            loss = total_generator_loss(lcfg, g_adv, task)
            _check_finite(loss.item(), "generator loss", epoch, b_idx)
            loss.backward()
            clip_gradients(gen.params, *cfg.g_grad_clip)
            log_.g_grad_max.append(max(float(np.abs(p.grad).max()) for _, p in gen.params))
            g_opt.step()
            log_.rows.append(LogRow(epoch, "adversarial", b_idx, d_loss.item(), g_adv.item(), task.item()))
    disc.params.zero_grads()
    return log_


def train(gen: Generator, disc: Discriminator, train_split: list, cfg: TrainConfig, val: list | None = None,
          out_dir=None, skip_pretrain: bool = False):
    """Pre-train then adversarially train; returns ``(pretrain_log, adversarial_log)``."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    pre_log = TrainingLog() if skip_pretrain else pretrain(gen, train_split, cfg, val, out)
    adv_log = adversarial_train(gen, disc, train_split, cfg)
    if out is not None:
        log_path = out / "train_log.csv"
        if log_path.exists():
            log_path.unlink()
        pre_log.write(log_path)
        adv_log.write(log_path)
        save_models(out / "final.ckpt", gen, disc, cfg.loss_cfg, cfg.seed)
    return pre_log, adv_log


# ----------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------
def generator_sampler(gen: Generator):
    def sample(batch: TrajectoryBatch, rng: np.random.Generator, K: int) -> PredictionSet:
        with ad.no_grad():
            return generate(gen, batch, rng, K)
    return sample


def evaluate_batches(batches: list, sampler, k_adefde: int = 20, k_amdamv: int = 100, seed: int = 0) -> dict:
    """ADE/FDE (best of ``k_adefde``) and AMD/AMV (Gaussian fit over ``k_amdamv``).

    Window metrics are averaged with weight N, i.e. over all pedestrians
    (and frames, for AMD/AMV) of the split.
    """
    if not batches:
        raise ValueError("no test windows to evaluate")
    rng = np.random.default_rng(seed)
    sums = dict(ade=0.0, fde=0.0, amd=0.0, amv=0.0)
    n_total = 0
    for b in batches:
        n = b.num_peds
        ade, fde = ade_fde(sampler(b, rng, k_adefde))
        sums["ade"] += ade * n
        sums["fde"] += fde * n
        if k_amdamv:
            pred = sampler(b, rng, k_amdamv)
            fit = fit_gaussians(pred.samples)
            sums["amd"] += amd(fit, pred.truth) * n
            sums["amv"] += amv(fit) * n
        n_total += n
    report = {k: v / n_total for k, v in sums.items()}
    if not k_amdamv:
        report.pop("amd")
        report.pop("amv")
    return report


def check_horizons(cfg: GeneratorConfig, batches: list) -> None:
    for b in batches:
        if b.obs_len != cfg.T_o or b.pred_len != cfg.T_p:
            raise ValueError(f"horizon mismatch: checkpoint expects {cfg.T_o}/{cfg.T_p}, "
                             f"data has {b.obs_len}/{b.pred_len}")


def evaluate_checkpoint(checkpoint, test_splits: dict, k_adefde: int = 20, k_amdamv: int = 100,
                        seed: int = 0) -> dict:
    """Per-scene metric rows plus an ``AVG`` row.

    ``checkpoint`` is a path or a Generator; ``test_splits`` maps scene name
    to a list of windows.
    """
    gen = checkpoint if isinstance(checkpoint, Generator) else load_models(checkpoint)[0]
    rows = {}
    for scene, batches in test_splits.items():
        check_horizons(gen.cfg, batches)
        rows[scene] = evaluate_batches(batches, generator_sampler(gen), k_adefde, k_amdamv, seed)
    if rows:
        keys = next(iter(rows.values())).keys()
        rows["AVG"] = {k: float(np.mean([r[k] for r in rows.values()])) for k in keys}
    return rows


def seed_summary(per_seed: dict) -> dict:
    """Mean and population std across seed rows: ``{metric: (mean, std)}``."""
    values = list(per_seed.values())
    keys = values[0].keys()
    return {k: (float(np.mean([v[k] for v in values])), float(np.std([v[k] for v in values])))
            for k in keys}


def evaluate_seeds(checkpoint, test_splits: dict, seeds=TABLE_SEEDS, k_adefde: int = 20,
                   k_amdamv: int = 100) -> dict:
    """Multi-seed protocol: each seed draws its own random graph weights.

    Returns ``{scene: (per_seed_rows, summary)}`` with ``summary`` as in
    :func:`seed_summary`.
    """
    gen = checkpoint if isinstance(checkpoint, Generator) else load_models(checkpoint)[0]
    out = {}
    for scene, batches in test_splits.items():
        check_horizons(gen.cfg, batches)
        per_seed = {s: evaluate_batches(batches, generator_sampler(gen), k_adefde, k_amdamv, seed=s) for s in seeds}
        out[scene] = (per_seed, seed_summary(per_seed))
    return out


def seed_robustness(split_train: list, split_test: list, gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig,
                    cfg: TrainConfig, seeds=TABLE_SEEDS, val: list | None = None, k_adefde: int = 20,
                    k_amdamv: int = 0) -> tuple:
    """Train and evaluate once per seed; returns ``(per_seed_rows, summary)``."""
    per_seed = {}
    for s in seeds:
        run_cfg = TrainConfig(**{**asdict(cfg), "seed": s, "loss_cfg": cfg.loss_cfg})
        gen = Generator(gen_cfg, seed=s)
        disc = Discriminator(disc_cfg, seed=s)
        train(gen, disc, split_train, run_cfg, val)
        per_seed[s] = evaluate_batches(split_test, generator_sampler(gen), k_adefde, k_amdamv, seed=s)
    return per_seed, seed_summary(per_seed)
