"""Symmetric strided-conv autoencoder (no residual units, no normalization)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from math import prod, sqrt

import numpy as np

from . import functional as F
from .tensor import ShapeMismatch, Tensor, as_tensor, parameter

KERNEL = 3
PADDING = 1
PRELU_INIT = 0.25


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    out_channels: int = 2
    channels: tuple[int, ...] = (32, 64, 64, 128, 128, 256)
    strides: tuple[int, ...] = (2, 2, 2, 2, 2, 2)
    spatial_dims: int = 3
    num_res_units: int = 0
    activation: str = "prelu"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if self.spatial_dims != 3:
            raise InvalidConfig("only spatial_dims=3 is supported")
        if self.num_res_units != 0:
            raise InvalidConfig("residual units are not supported (num_res_units must be 0)")
        if not self.channels:
            raise InvalidConfig("channels must be nonempty")
        if len(self.channels) != len(self.strides):
            raise InvalidConfig(f"{len(self.channels)} channels but {len(self.strides)} strides")
        if min(self.strides) < 1 or min(self.channels) < 1:
            raise InvalidConfig("channels and strides must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1:
            raise InvalidConfig("in/out channels must be >= 1")
        if self.activation not in ("prelu", "relu"):
            raise InvalidConfig(f"activation must be 'prelu' or 'relu', got {self.activation!r}")

    @property
    def stride_product(self) -> int:
        return prod(self.strides)

    def to_json(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["strides"] = list(self.strides)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class Layer:
    name: str
    transposed: bool
    cin: int
    cout: int
    stride: int
    activation: bool


@dataclass
class Model:
    config: ModelConfig
    layers: list[Layer]
    params: dict[str, Tensor] = field(default_factory=dict)

    @property
    def encoder(self) -> list[Layer]:
        return [l for l in self.layers if not l.transposed]

    @property
    def decoder(self) -> list[Layer]:
        return [l for l in self.layers if l.transposed]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params.values()]).astype(np.float32)

    def load_flat_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float32)
        if flat.size != self.num_parameters():
            raise ValueError(f"expected {self.num_parameters()} parameters, got {flat.size}")
        pos = 0
        for p in self.params.values():
            p.data = flat[pos:pos + p.size].reshape(p.shape).copy()
            pos += p.size

    def check_input(self, shape) -> None:
        if len(shape) != 5:
            raise ShapeMismatch(f"input must be (N, C, D, H, W), got {shape}")
        if shape[1] != self.config.in_channels:
            raise ShapeMismatch(f"model expects {self.config.in_channels} input channels, got {shape[1]}")
        sp = self.config.stride_product
        for axis, n in zip("DHW", shape[2:]):
            if n % sp:
                raise InvalidConfig(f"spatial axis {axis} has size {n}, not divisible by stride product {sp}")

    def __call__(self, x) -> Tensor:
        return forward(self, x)


def build_autoencoder(cfg: ModelConfig, init_seed: int = 0) -> Model:
    """Encoder convs (kernel 3, padding 1) mirrored by transposed convs.

    The decoder walks the channel list backwards and ends at
    ``out_channels`` with no activation, so the output is raw logits.
    """
    if not isinstance(cfg, ModelConfig):
        raise InvalidConfig("expected a ModelConfig")
    layers = []
    cin = cfg.in_channels
    for i, (c, s) in enumerate(zip(cfg.channels, cfg.strides)):
        layers.append(Layer(f"encode.{i}", False, cin, c, s, True))
        cin = c
    targets = list(cfg.channels[-2::-1]) + [cfg.out_channels]
    for j, (c, s) in enumerate(zip(targets, cfg.strides[::-1])):
        last = j == len(targets) - 1
        layers.append(Layer(f"decode.{j}", True, cin, c, s, not last))
        cin = c

    rng = np.random.Generator(np.random.PCG64(int(init_seed)))
    gain = sqrt(2.0 / (1.0 + PRELU_INIT ** 2))
    params = {}
    for layer in layers:
        fan_in = layer.cin * KERNEL ** 3
        bound = gain * sqrt(3.0 / fan_in)
        shape = ((layer.cin, layer.cout) if layer.transposed else (layer.cout, layer.cin)) + (KERNEL,) * 3
        params[f"{layer.name}.weight"] = parameter(rng.uniform(-bound, bound, size=shape), f"{layer.name}.weight")
        params[f"{layer.name}.bias"] = parameter(np.zeros(layer.cout), f"{layer.name}.bias")
        if layer.activation and cfg.activation == "prelu":
            params[f"{layer.name}.alpha"] = parameter(np.full(1, PRELU_INIT), f"{layer.name}.alpha")
    return Model(cfg, layers, params)


def forward(model: Model, x) -> Tensor:
    """Logits of shape (N, out_channels, D, H, W)."""
    x = as_tensor(x)
    model.check_input(x.shape)
    p = model.params
    for layer in model.layers:
        w, b = p[f"{layer.name}.weight"], p[f"{layer.name}.bias"]
        if layer.transposed:
            x = F.conv_transpose3d(x, w, b, layer.stride, PADDING, output_padding=layer.stride - 1)
        else:
            x = F.conv3d(x, w, b, layer.stride, PADDING)
        if layer.activation:
            x = F.prelu(x, p[f"{layer.name}.alpha"]) if model.config.activation == "prelu" else F.relu(x)
    return x
