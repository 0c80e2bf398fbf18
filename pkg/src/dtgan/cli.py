"""Command-line entry point: ``dtgan {preprocess,train,evaluate,export}``.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import DATA_DIR_ENV, SYNTHETIC, ConfigError, RunConfig
from .data import DatasetSplit, canonical_scene, discover_splits, make_batch, synthetic_split
from .discriminator import Discriminator
from .generator import Generator, generate
from .params import load_checkpoint, save_checkpoint
from .trainer import TABLE_SEEDS, evaluate_seeds, load_models, train

log = logging.getLogger("dtgan")

VARIANT_CHOICES = ("dtgan", "dtgan-m", "dtgan-g", "dtgan-u")
SPLITS = ("train", "val", "test")
CSV_COLUMNS = ("scene", "ped_id", "sample_id", "frame", "kind", "x", "y")
GAUSSIAN_COLUMNS = ("mu_x", "mu_y", "sigma_x", "sigma_y", "rho")
METRICS = ("ade", "fde", "amd", "amv")


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------
# data loading
# ----------------------------------------------------------------------
def save_split_cache(path, split: DatasetSplit, meta: dict) -> None:
    """Windows of every split as tensors in the checkpoint container."""
    tensors = {}
    for part in SPLITS:
        for k, b in enumerate(getattr(split, part)):
            tensors[f"{part}.{k}.abs_pos"] = b.abs_pos
            tensors[f"{part}.{k}.ped_ids"] = np.asarray(b.ped_ids, dtype=float)
            tensors[f"{part}.{k}.frames"] = np.asarray(b.frames, dtype=float)
    meta = dict(meta, scene=split.name, counts=dict(zip(SPLITS, split.counts())))
    save_checkpoint(path, tensors, rng_seed=meta.get("seed", 0), meta=meta)


def load_split_cache(path) -> DatasetSplit:
    tensors, _, meta = load_checkpoint(path)
    parts = {}
    for part in SPLITS:
        windows = []
        for k in range(meta["counts"][part]):
            frames = [int(f) for f in tensors[f"{part}.{k}.frames"]]
            windows.append(make_batch(tensors[f"{part}.{k}.abs_pos"],
                                      [int(p) for p in tensors[f"{part}.{k}.ped_ids"]],
                                      meta["obs_len"], meta["pred_len"], meta["scene"], frames))
        parts[part] = windows
    return DatasetSplit(meta["scene"], parts["train"], parts["val"], parts["test"])


def load_split(data_dir: str, scene: str | None, obs_len: int, pred_len: int, min_ped: int = 3, skip: int = 1,
               val_fraction: float = 0.2, seed: int = 0, synthetic_trajectories: int = 200) -> DatasetSplit:
    """``synthetic``, a preprocess cache file, or an ETH/UCY-style directory."""
    if data_dir == SYNTHETIC:
        return synthetic_split(synthetic_trajectories, obs_len, pred_len, min_ped, seed, val_fraction)
    path = Path(data_dir)
    if path.is_file():
        return load_split_cache(path)
    if not path.is_dir():
        raise UsageError(f"data directory {data_dir} does not exist")
    if scene is None:
        raise ConfigError("missing required config key 'scene'")
    try:
        scene = canonical_scene(scene)
    except ValueError as err:
        raise UsageError(str(err)) from None
    return discover_splits(path, scene, obs_len, pred_len, min_ped, skip, val_fraction, seed)


def _default_data_dir(value):
    return value if value is not None else os.environ.get(DATA_DIR_ENV)


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------
def cmd_preprocess(args) -> int:
    data_dir = _default_data_dir(args.data_dir)
    if data_dir is None:
        raise UsageError(f"--data-dir not given and ${DATA_DIR_ENV} is unset")
    if args.obs_len >= args.slen:
        raise UsageError("--obs-len must be smaller than --slen")
    pred_len = args.slen - args.obs_len
    split = load_split(data_dir, args.scene, args.obs_len, pred_len, args.min_ped, args.skip,
                       args.val_fraction, args.seed)
    for part, count in zip(SPLITS, split.counts()):
        print(f"{part} {count}")
    if args.out:
        meta = dict(obs_len=args.obs_len, pred_len=pred_len, min_ped=args.min_ped, skip=args.skip, seed=args.seed)
        save_split_cache(args.out, split, meta)
    return 0


def cmd_train(args) -> int:
    overrides = dict(variant=args.variant, seed=args.seed, out_dir=args.out_dir, data_dir=args.data_dir,
                     scene=args.scene, pretrain_epochs=args.pretrain_epochs, adv_epochs=args.adv_epochs)
    cfg = RunConfig.load(args.config, overrides)
    cfg.require("data_dir", "out_dir", "variant")
    if cfg.get("data_dir") != SYNTHETIC:
        cfg.require("scene")
    cfg.validate_paths()
    cfg.build("loss")
    gen_cfg = cfg.build("generator")
    disc_cfg = cfg.build("discriminator")
    train_cfg = cfg.build("train")
    split = load_split(cfg.get("data_dir"), cfg.values.get("scene"), cfg.get("obs_len"), cfg.get("pred_len"),
                       cfg.get("min_ped"), cfg.get("skip"), cfg.get("val_fraction"), cfg.get("data_seed"),
                       cfg.get("synthetic_trajectories"))
    if not split.train:
        raise UsageError(f"no training windows found under {cfg.get('data_dir')}")
    out = Path(cfg.get("out_dir"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text("".join(f"{k} = {_fmt_value(v)}\n" for k, v in sorted(cfg.values.items())))
    gen = Generator(gen_cfg, seed=train_cfg.seed)
    disc = Discriminator(disc_cfg, seed=train_cfg.seed)
    pre_log, adv_log = train(gen, disc, split.train, train_cfg, split.val, out)
    print(f"pretrain rows {len(pre_log)}, adversarial rows {len(adv_log)}; checkpoint {out / 'final.ckpt'}")
    return 0


def _fmt_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _load_generator(path) -> Generator:
    if not Path(path).is_file():
        raise UsageError(f"checkpoint {path} does not exist")
    return load_models(path)[0]


def format_seed_report(results: dict) -> str:
    """Per-seed rows then a mean±std row for each scene."""
    lines = [f"{'scene':<12}{'seed':>10}" + "".join(f"{m.upper():>20}" for m in METRICS)]
    for scene, (per_seed, summary) in results.items():
        for seed, row in per_seed.items():
            lines.append(f"{scene:<12}{seed:>10}" + "".join(f"{row[m]:>20.6f}" for m in METRICS))
        lines.append(f"{scene:<12}{'mean±std':>10}"
                     + "".join(f"{summary[m][0]:>11.6f}±{summary[m][1]:.6f}" for m in METRICS))
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    gen = _load_generator(args.checkpoint)
    obs_len = args.obs_len if args.obs_len is not None else gen.cfg.T_o
    pred_len = args.pred_len if args.pred_len is not None else gen.cfg.T_p
    data_dir = _default_data_dir(args.data_dir)
    if data_dir is None:
        raise UsageError(f"--data-dir not given and ${DATA_DIR_ENV} is unset")
    try:
        seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    tests = {}
    for scene in args.scene.split(","):
        split = load_split(data_dir, scene, obs_len, pred_len, args.min_ped, args.skip, seed=args.data_seed,
                           synthetic_trajectories=args.synthetic_trajectories)
        if not split.test:
            raise UsageError(f"no test windows for scene {scene}")
        if split.test[0].obs_len != gen.cfg.T_o or split.test[0].pred_len != gen.cfg.T_p:
            raise UsageError(f"horizon mismatch: checkpoint expects {gen.cfg.T_o}/{gen.cfg.T_p}, scene {scene} "
                             f"has {split.test[0].obs_len}/{split.test[0].pred_len}")
        tests[split.name] = split.test
    results = evaluate_seeds(gen, tests, seeds, args.k_adefde, args.k_amdamv)
    report = format_seed_report(results)
    print(report)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".eval.txt")
    out.write_text(report + "\n")
    return 0


def export_rows(gen: Generator, batch, K: int, seed: int) -> list:
    """CSV rows (as string lists) for one window: obs, truth, then K samples."""
    gaussian = gen.cfg.output_head == "gaussian"
    with ad.no_grad():
        pred = generate(gen, batch, seed, K)
    frames = batch.frames or list(range(batch.obs_len + batch.pred_len))
    blank = [""] * len(GAUSSIAN_COLUMNS) if gaussian else []
    rows = []

    def emit(ped, sample, frame, kind, xy, extra=blank):
        rows.append([batch.scene, str(ped), sample, str(frame), kind, repr(float(xy[0])), repr(float(xy[1]))]
                    + extra)

    for i, ped in enumerate(batch.ped_ids):
        for t in range(batch.obs_len):
            emit(ped, "", frames[t], "obs", batch.abs_pos[t, i])
        for t in range(batch.pred_len):
            emit(ped, "", frames[batch.obs_len + t], "truth", batch.future_abs[t, i])
    for k in range(K):
        for i, ped in enumerate(batch.ped_ids):
            for t in range(batch.pred_len):
                extra = blank
                if gaussian:
                    gp = pred.gaussians[k]
                    extra = [repr(float(v)) for v in (*gp.mu[t, i], *gp.sigma[t, i], gp.rho[t, i])]
                emit(ped, str(k), frames[batch.obs_len + t], "pred", pred.samples[k, t, i], extra)
    return rows


def cmd_export(args) -> int:
    gen = _load_generator(args.checkpoint)
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    data_dir = _default_data_dir(args.data_dir)
    if data_dir is None:
        raise UsageError(f"--data-dir not given and ${DATA_DIR_ENV} is unset")
    split = load_split(data_dir, args.scene, gen.cfg.T_o, gen.cfg.T_p, args.min_ped, args.skip,
                       seed=args.data_seed, synthetic_trajectories=args.synthetic_trajectories)
    windows = getattr(split, args.split)
    if not 0 <= args.batch_index < len(windows):
        raise UsageError(f"batch index {args.batch_index} out of range for {len(windows)} {args.split} windows")
    batch = windows[args.batch_index]
    if batch.obs_len != gen.cfg.T_o or batch.pred_len != gen.cfg.T_p:
        raise UsageError("horizon mismatch between checkpoint and data")
    header = list(CSV_COLUMNS) + (list(GAUSSIAN_COLUMNS) if gen.cfg.output_head == "gaussian" else [])
    rows = export_rows(gen, batch, args.samples, args.seed)
    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------
def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", help=f"data directory, preprocess cache, or 'synthetic' (default ${DATA_DIR_ENV})")
    p.add_argument("--min-ped", type=int, default=3)
    p.add_argument("--skip", type=int, default=1)
    p.add_argument("--data-seed", type=int, default=0, help="seed for the val split and the synthetic corpus")
    p.add_argument("--synthetic-trajectories", type=int, default=200)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="extract windows and print split counts")
    p.add_argument("--data-dir")
    p.add_argument("--scene", required=True)
    p.add_argument("--slen", type=int, default=20)
    p.add_argument("--obs-len", type=int, default=8)
    p.add_argument("--min-ped", type=int, default=3)
    p.add_argument("--skip", type=int, default=1)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional cache file")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="pre-train then adversarially train")
    p.add_argument("--config")
    p.add_argument("--variant", choices=VARIANT_CHOICES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--data-dir")
    p.add_argument("--scene")
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--adv-epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="multi-seed ADE/FDE/AMD/AMV report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True, help="held-out scene, or a comma-separated list")
    p.add_argument("--k-adefde", type=int, default=20)
    p.add_argument("--k-amdamv", type=int, default=100)
    p.add_argument("--seeds", default=",".join(str(s) for s in TABLE_SEEDS))
    p.add_argument("--obs-len", type=int, help="data horizon (default: the checkpoint's)")
    p.add_argument("--pred-len", type=int)
    p.add_argument("--out", help="report file (default: <checkpoint>.eval.txt)")
    _data_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="write observed, true and sampled trajectories as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch-index", type=int, required=True)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--out", default="-")
    p.add_argument("--scene")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--seed", type=int, default=0)
    _data_args(p)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as err:
        print(f"dtgan {args.command}: error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - report any runtime failure as exit 1
        log.debug("runtime failure", exc_info=True)
        print(f"dtgan {args.command}: failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())
