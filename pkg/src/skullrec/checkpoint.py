"""Binary checkpoint format.

Layout (all little-endian)::

    b"SKRC" | u32 version | u64 json_len | json (utf-8)
    | optimizer blob: u64 t, f64 lr, f64 beta1, f64 beta2, f64 eps, u64 n, f32[n] m, f32[n] v
    | f32[n_params] parameters in model declaration order

The JSON block carries the config snapshot, epoch and bookkeeping.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import atomic_write
from .nn.model import InvalidConfig, Model, ModelConfig, build_autoencoder
from .optim import AdamState

MAGIC = b"SKRC"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_OPT_HEAD = struct.Struct("<QddddQ")


class CheckpointCorrupt(ValueError):
    pass


class VersionMismatch(CheckpointCorrupt):
    pass


@dataclass
class Checkpoint:
    config: dict
    epoch: int
    params: np.ndarray
    optimizer: AdamState
    info: dict = field(default_factory=dict)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_json(self.config["model"])

    def build_model(self) -> Model:
        model = build_autoencoder(self.model_config, 0)
        model.load_flat_parameters(self.params)
        return model

    @classmethod
    def capture(cls, model: Model, optimizer: AdamState, config: dict, epoch: int, **info) -> "Checkpoint":
        opt = AdamState(optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps, optimizer.t,
                        [m.copy() for m in optimizer.m], [v.copy() for v in optimizer.v])
        return cls(config, epoch, model.flat_parameters(), opt, dict(info))

    def restore_optimizer(self, model: Model) -> AdamState:
        """Unflatten the moment buffers to match ``model``'s parameter shapes."""
        st = self.optimizer
        shapes = [p.shape for p in model.parameters()]
        if isinstance(st.m, np.ndarray):
            m_flat, v_flat = st.m, st.v
        else:
            m_flat = np.concatenate([a.ravel() for a in st.m]) if st.m else np.zeros(0, np.float32)
            v_flat = np.concatenate([a.ravel() for a in st.v]) if st.v else np.zeros(0, np.float32)
        if m_flat.size == 0:
            return AdamState(st.lr, st.beta1, st.beta2, st.eps, st.t)
        m, v, pos = [], [], 0
        for shape in shapes:
            n = int(np.prod(shape))
            m.append(m_flat[pos:pos + n].reshape(shape).copy())
            v.append(v_flat[pos:pos + n].reshape(shape).copy())
            pos += n
        return AdamState(st.lr, st.beta1, st.beta2, st.eps, st.t, m, v)


def _flat(arrays) -> np.ndarray:
    if isinstance(arrays, np.ndarray):
        return arrays.astype("<f4").ravel()
    if not arrays:
        return np.zeros(0, dtype="<f4")
    return np.concatenate([np.asarray(a, dtype="<f4").ravel() for a in arrays])


def encode(ckpt: Checkpoint) -> bytes:
    meta = {"config": ckpt.config, "epoch": int(ckpt.epoch), "info": ckpt.info,
            "num_params": int(ckpt.params.size)}
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    st = ckpt.optimizer
    m, v = _flat(st.m), _flat(st.v)
    parts = [
        _PREFIX.pack(MAGIC, VERSION, len(meta_bytes)),
        meta_bytes,
        _OPT_HEAD.pack(st.t, st.lr, st.beta1, st.beta2, st.eps, m.size),
        m.tobytes(),
        v.tobytes(),
        np.asarray(ckpt.params, dtype="<f4").tobytes(),
    ]
    return b"".join(parts)


def decode(data: bytes) -> Checkpoint:
    data = bytes(data)
    if len(data) < _PREFIX.size:
        raise CheckpointCorrupt("file too short for a checkpoint header")
    magic, version, meta_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointCorrupt(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, this build reads {VERSION}")
    pos = _PREFIX.size
    if meta_len > len(data) - pos:
        raise CheckpointCorrupt("truncated config block")
    try:
        meta = json.loads(data[pos:pos + meta_len].decode())
        config, epoch, num_params = meta["config"], int(meta["epoch"]), int(meta["num_params"])
        info = meta.get("info", {})
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise CheckpointCorrupt(f"unreadable config block: {exc}") from exc
    pos += meta_len
    if len(data) - pos < _OPT_HEAD.size:
        raise CheckpointCorrupt("truncated optimizer header")
    t, lr, b1, b2, eps, n = _OPT_HEAD.unpack_from(data, pos)
    pos += _OPT_HEAD.size
    expected = pos + 4 * (2 * n + num_params)
    if n not in (0, num_params) or len(data) != expected:
        raise CheckpointCorrupt(f"checkpoint is {len(data)} bytes, layout implies {expected}")
    m = np.frombuffer(data, "<f4", n, pos).astype(np.float32)
    v = np.frombuffer(data, "<f4", n, pos + 4 * n).astype(np.float32)
    params = np.frombuffer(data, "<f4", num_params, pos + 8 * n).astype(np.float32)
    try:
        optimizer = AdamState(lr, b1, b2, eps, int(t), m, v)
        ckpt = Checkpoint(config, epoch, params, optimizer, info)
        model_cfg = ckpt.model_config
    except (ValueError, TypeError, KeyError, InvalidConfig) as exc:
        raise CheckpointCorrupt(f"invalid checkpoint contents: {exc}") from exc
    if build_autoencoder(model_cfg, 0).num_parameters() != num_params:
        raise CheckpointCorrupt("parameter count does not match the stored model config")
    return ckpt


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write(path, encode(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointCorrupt(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(data)
