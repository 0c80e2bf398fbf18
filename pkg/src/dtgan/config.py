"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Every key is listed in
:data:`KEYS` with its type and default; unknown keys are rejected.
``data_dir`` may be the literal ``synthetic`` to use the built-in
constant-velocity corpus, and defaults to ``$DTGAN_DATA_DIR``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .discriminator import DiscriminatorConfig
from .generator import GeneratorConfig
from .losses import VARIANT_HEAD, LossConfig, canonical_variant
from .trainer import TrainConfig

DATA_DIR_ENV = "DTGAN_DATA_DIR"
SYNTHETIC = "synthetic"


class ConfigError(ValueError):
    pass


def _pair(text: str) -> tuple:
    lo, hi = (float(v) for v in text.split(","))
    return lo, hi


def _int_list(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


# key -> (parser, default); default None means required where used
KEYS = {
    "data_dir": (str, None),
    "scene": (str, None),
    "out_dir": (str, None),
    "obs_len": (int, 8),
    "pred_len": (int, 12),
    "min_ped": (int, 3),
    "skip": (int, 1),
    "val_fraction": (float, 0.2),
    "synthetic_trajectories": (int, 200),
    "data_seed": (int, 0),
    "F": (int, 8),
    "tcn_layers": (int, 2),
    "tcn_kernel": (int, 3),
    "cnn_layers": (int, 3),
    "cnn_kernel": (int, 3),
    "decoder_kernel": (int, 3),
    "d_F": (int, 16),
    "d_hidden": (int, 16),
    "d_input_mode": (str, "obs_plus_future"),
    "batch_size": (int, 32),
    "pretrain_lr": (float, 1e-3),
    "adv_lr": (float, 1e-5),
    "pretrain_epochs": (int, 50),
    "adv_epochs": (int, 100),
    "d_steps_per_g": (int, 1),
    "g_grad_clip": (_pair, (-1.0, 1.0)),
    "d_weight_clip": (_pair, (-0.1, 0.1)),
    "resample": (str, "step"),
    "pretrain_K": (int, 1),
    "variant": (str, "dtgan_g"),
    "gamma": (float, 1.0),
    "K": (int, 20),
    "r_hat_epsilon": (float, 1e-6),
    "seed": (int, 0),
    "k_adefde": (int, 20),
    "k_amdamv": (int, 100),
    "seeds": (_int_list, (3, 42, 43, 123, 222)),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = KEYS[key][0](value)
        except ValueError as err:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {err}") from None
    return values


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        """File values, then non-None ``overrides`` (flags win)."""
        values = {}
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file {path} does not exist")
            values.update(parse_config_text(path.read_text(), str(path)))
        for key, value in (overrides or {}).items():
            if key not in KEYS:
                raise ConfigError(f"unknown key {key!r}")
            if value is not None:
                values[key] = value
        if "data_dir" not in values and os.environ.get(DATA_DIR_ENV):
            values["data_dir"] = os.environ[DATA_DIR_ENV]
        return cls(values)

    def get(self, key: str):
        if key in self.values:
            return self.values[key]
        default = KEYS[key][1]
        if default is None:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def require(self, *keys: str) -> None:
        for key in keys:
            self.get(key)

    def validate_paths(self) -> None:
        data_dir = self.get("data_dir")
        if data_dir != SYNTHETIC and not Path(data_dir).is_dir():
            raise ConfigError(f"data_dir {data_dir} does not exist")

    # -- typed views ---------------------------------------------------
    def build(self, what: str):
        """``what`` in loss/generator/discriminator/train; bad values raise ConfigError."""
        try:
            return getattr(self, f"{what}_config")()
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def loss_config(self) -> LossConfig:
        return LossConfig(canonical_variant(self.get("variant")), self.get("gamma"), self.get("K"),
                          self.get("r_hat_epsilon"))

    def generator_config(self) -> GeneratorConfig:
        head = VARIANT_HEAD[canonical_variant(self.get("variant"))]
        return GeneratorConfig(2, self.get("F"), self.get("obs_len"), self.get("pred_len"), self.get("tcn_layers"),
                               self.get("tcn_kernel"), self.get("cnn_layers"), self.get("cnn_kernel"),
                               self.get("decoder_kernel"), head)

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(self.get("d_F"), self.get("d_hidden"), self.get("d_input_mode"))

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.get("batch_size"), self.get("pretrain_lr"), self.get("adv_lr"),
                           self.get("pretrain_epochs"), self.get("adv_epochs"), self.get("d_steps_per_g"),
                           self.get("g_grad_clip"), self.get("d_weight_clip"), self.get("seed"),
                           self.loss_config(), resample=self.get("resample"), pretrain_K=self.get("pretrain_K"))
