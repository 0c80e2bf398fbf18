"""Named parameter storage, optimizers, clipping and the checkpoint container."""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .autodiff import DiffArray

CHECKPOINT_MAGIC = b"DTGANCKP"
CHECKPOINT_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}; step aborted")
        self.name = name


class ParameterStore:
    """Insertion-ordered mapping from dotted names to trainable arrays."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self._params: "OrderedDict[str, DiffArray]" = OrderedDict()

    def add(self, name: str, values) -> DiffArray:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = DiffArray(np.array(values, dtype=np.float64), requires_grad=True)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> DiffArray:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list:
        return list(self._params)

    def values(self) -> list:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = np.zeros_like(p.values)

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.values.copy()) for k, p in self._params.items())

    def load_state(self, state) -> None:
        for name, values in state.items():
            if name not in self._params:
                raise KeyError(f"unknown parameter {name!r} in state")
            p = self._params[name]
            values = np.asarray(values, dtype=np.float64)
            if values.shape != p.shape:
                raise ValueError(f"parameter {name!r}: stored shape {values.shape} != {p.shape}")
            p.values = values.copy()
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")

    def max_abs(self) -> float:
        return max((float(np.abs(p.values).max()) for p in self._params.values() if p.values.size), default=0.0)


def _check_finite(params: ParameterStore) -> None:
    for name, p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(name)


class Adam:
    def __init__(self, params: ParameterStore, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.values) for name, p in params}
        self.v = {name: np.zeros_like(p.values) for name, p in params}

    def step(self) -> None:
        _check_finite(self.params)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.values = p.values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class RMSProp:
    """v <- alpha v + (1 - alpha) g^2;  p <- p - lr g / (sqrt(v) + eps)."""

    def __init__(self, params: ParameterStore, lr: float, alpha: float = 0.99, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.alpha = alpha
        self.eps = eps
        self.v = {name: np.zeros_like(p.values) for name, p in params}

    def step(self) -> None:
        _check_finite(self.params)
        for name, p in self.params:
            g = p.grad
            self.v[name] = self.alpha * self.v[name] + (1.0 - self.alpha) * g * g
            p.values = p.values - self.lr * g / (np.sqrt(self.v[name]) + self.eps)


def make_optimizer(kind: str, params: ParameterStore, lr: float):
    if kind == "adam":
        return Adam(params, lr)
    if kind == "rmsprop":
        return RMSProp(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}; expected 'adam' or 'rmsprop'")


def optimizer_step(kind: str, lr: float, params: ParameterStore, state=None):
    """One update of ``params``; pass the returned optimizer back in as ``state``."""
    opt = state if state is not None else make_optimizer(kind, params, lr)
    opt.lr = lr
    opt.step()
    return opt


def _check_bounds(lo: float, hi: float) -> None:
    if lo > hi:
        raise ValueError(f"clip bounds inverted: lo={lo} > hi={hi}")


def clip_gradients(params: ParameterStore, lo: float, hi: float) -> None:
    _check_bounds(lo, hi)
    for _, p in params:
        np.clip(p.grad, lo, hi, out=p.grad)


def clip_weights(params: ParameterStore, lo: float, hi: float) -> None:
    _check_bounds(lo, hi)
    for _, p in params:
        p.values = np.clip(p.values, lo, hi)


# ----------------------------------------------------------------------
# checkpoint container
#
#   magic        8 bytes  b"DTGANCKP"
#   version      u32
#   rng_seed     u64
#   meta_len     u32, then meta_len bytes of UTF-8 JSON (configs, free-form)
#   count        u32
#   count x { name_len u32, name UTF-8, ndim u32, ndim x u64 dims,
#             prod(dims) x f64 values }
#
# all integers and reals little-endian.
# ----------------------------------------------------------------------
def save_checkpoint(path, tensors, rng_seed: int = 0, meta: dict | None = None) -> None:
    """Write an ordered ``name -> array`` mapping to ``path``."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<IQ", CHECKPOINT_VERSION, rng_seed & (2**64 - 1)),
              struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for name, values in tensors.items():
        arr = np.array(values, dtype="<f8", order="C")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path):
    """Return ``(tensors, rng_seed, meta)`` from a checkpoint file."""
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    pos = 8
    version, rng_seed = struct.unpack_from("<IQ", data, pos)
    pos += 12
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos: pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos: pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return tensors, rng_seed, meta
