"""Layer modules built on :mod:`voxhand.nn.functional`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import functional as F
from .kernels import triple
from .tensor import Parameter, Tensor

DEFAULT_DTYPE = np.float32


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # Conv3D, MaxPool3D, ConvTranspose3D, BatchNorm, ReLU, Dropout, FullyConnected, AdaptiveAvgPool3D, ResidualAdd
    kernel: tuple[int, ...] | None = None
    stride: tuple[int, ...] | None = None
    filters: int | None = None
    rate: float | None = None
    eps: float | None = None
    momentum: float | None = None

    def __post_init__(self):
        for name in ("kernel", "stride"):
            v = getattr(self, name)
            if v is not None and any(k <= 0 for k in v):
                raise ValueError(f"{name} must be positive, got {v}")
        if self.filters is not None and self.filters <= 0:
            raise ValueError(f"filters must be positive, got {self.filters}")
        if self.rate is not None and not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


class Module:
    training = True

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, v in vars(self).items():
            if isinstance(v, Module):
                yield name, v
            elif isinstance(v, (list, tuple)):
                for i, item in enumerate(v):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.children():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, v in vars(self).items():
            if isinstance(v, Parameter):
                yield prefix + name, v
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(own) | set(buffers)) - set(state)
        unexpected = set(state) - set(own) - set(buffers)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data[...] = state[name]
        for name, buf in buffers.items():
            buf[...] = state[name]

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def layer_specs(self) -> list[LayerSpec]:
        specs = []
        for m in self.modules():
            spec = getattr(m, "spec", None)
            if spec is not None:
                specs.append(spec)
        return specs

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Conv3d(Module):
    def __init__(self, in_channels, out_channels, kernel=3, stride=1, padding=0, dtype=DEFAULT_DTYPE):
        self.kernel, self.stride, self.padding = triple(kernel), triple(stride), triple(padding)
        self.weight = Parameter(np.zeros((out_channels, in_channels) + self.kernel, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype))
        self.spec = LayerSpec("Conv3D", self.kernel, self.stride, out_channels)

    def forward(self, x):
        return F.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose3d(Module):
    def __init__(self, in_channels, out_channels, kernel=2, stride=2, dtype=DEFAULT_DTYPE):
        self.kernel, self.stride = triple(kernel), triple(stride)
        self.weight = Parameter(np.zeros((in_channels, out_channels) + self.kernel, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype))
        self.spec = LayerSpec("ConvTranspose3D", self.kernel, self.stride, out_channels)

    def forward(self, x):
        return F.conv_transpose3d(x, self.weight, self.bias, self.stride)


class BatchNorm(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=DEFAULT_DTYPE):
        self.gamma = Parameter(np.ones(channels, dtype))
        self.beta = Parameter(np.zeros(channels, dtype))
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.momentum, self.eps = momentum, eps
        self.spec = LayerSpec("BatchNorm", momentum=momentum, eps=eps)

    def forward(self, x):
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class ReLU(Module):
    spec = LayerSpec("ReLU")

    def forward(self, x):
        return F.relu(x)


class MaxPool3d(Module):
    def __init__(self, kernel=2, stride=None):
        self.kernel = triple(kernel)
        self.stride = self.kernel if stride is None else triple(stride)
        self.spec = LayerSpec("MaxPool3D", self.kernel, self.stride)

    def forward(self, x):
        return F.max_pool3d(x, self.kernel, self.stride)


class Dropout(Module):
    def __init__(self, rate=0.5, seed=0):
        self.rate = rate
        self.rng = np.random.default_rng(seed)
        self.spec = LayerSpec("Dropout", rate=rate)

    def reseed(self, seed) -> None:
        self.rng = np.random.default_rng(seed)

    def forward(self, x):
        return F.dropout(x, self.rate, self.training, self.rng)


class Linear(Module):
    def __init__(self, in_features, out_features, dtype=DEFAULT_DTYPE):
        self.weight = Parameter(np.zeros((out_features, in_features), dtype))
        self.bias = Parameter(np.zeros(out_features, dtype))
        self.spec = LayerSpec("FullyConnected", filters=out_features)

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class AdaptiveAvgPool3d(Module):
    def __init__(self, size):
        self.size = triple(size)
        self.spec = LayerSpec("AdaptiveAvgPool3D", kernel=self.size)

    def forward(self, x):
        return F.adaptive_avg_pool3d(x, self.size)


class Flatten(Module):
    def forward(self, x):
        return F.flatten(x)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)


class Residual(Module):
    """``body(x) + skip(x)``; the skip is a 1x1x1 projection when channels change.

    The projection is part of the residual add, not a trunk convolution.
    """

    def __init__(self, body: Module, in_channels: int, out_channels: int, dtype=DEFAULT_DTYPE):
        self.body = body
        self.proj_weight = self.proj_bias = None
        if in_channels != out_channels:
            self.proj_weight = Parameter(np.zeros((out_channels, in_channels, 1, 1, 1), dtype))
            self.proj_bias = Parameter(np.zeros(out_channels, dtype))
        self.spec = LayerSpec("ResidualAdd", kernel=(1, 1, 1), filters=out_channels)

    def forward(self, x):
        skip = x if self.proj_weight is None else F.conv3d(x, self.proj_weight, self.proj_bias)
        return F.add(self.body(x), skip)


def conv_bn_relu(cin, cout, kernel=3, padding=1, momentum=0.9, eps=1e-5, dtype=DEFAULT_DTYPE) -> list[Module]:
    return [Conv3d(cin, cout, kernel, 1, padding, dtype), BatchNorm(cout, momentum, eps, dtype), ReLU()]
