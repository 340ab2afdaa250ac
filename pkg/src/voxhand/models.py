"""The voxel-to-coordinate hand network and the 2-D hand localizer."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigInvalid, ShapeMismatch
from .nn import functional as F
from .nn.kernels import conv_output_shape, transpose_output_shape
from .nn.layers import (DEFAULT_DTYPE, AdaptiveAvgPool3d, BatchNorm, Conv3d, ConvTranspose3d, Dropout, Flatten,
                        Linear, MaxPool3d, Module, ReLU, Residual, Sequential, conv_bn_relu)
from .nn.optim import INIT_SIGMA, init_weights
from .nn.tensor import Tensor, no_grad

FC_MULTIPLIERS = (44, 11, 3)


@dataclass
class HandNetConfig:
    input_size: int = 88
    num_joints: int = 21
    # conv16 pair, residual conv32 pair, residual conv64 pair, conv64 pair, transpose, conv32 pair
    channels: tuple[int, ...] = (16, 32, 64, 64, 32, 32)
    adaptive_pool_size: int = 4
    dropout: float = 0.5
    coord_scale_mm: float = 150.0  # network outputs are multiplied by this to give mm
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 6 or min(self.channels) < 1:
            raise ConfigInvalid(f"channel plan needs 6 positive entries, got {self.channels}")
        if self.input_size < 8 or self.num_joints < 1 or self.adaptive_pool_size < 1:
            raise ConfigInvalid(f"invalid sizes in {self}")
        if self.input_size // 8 < 1 or 2 * (self.input_size // 8) < self.adaptive_pool_size:
            raise ConfigInvalid(f"input_size {self.input_size} too small for a {self.adaptive_pool_size}^3 pool")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigInvalid(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def fc_units(self) -> tuple[int, int, int]:
        return tuple(self.num_joints * c for c in FC_MULTIPLIERS)


@dataclass
class LocalizerConfig:
    input_size: int = 96
    channels: tuple[int, int, int] = (8, 16, 32)
    fc_hidden: int = 1024
    offset_scale_mm: float = 100.0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 3 or self.input_size % 8:
            raise ConfigInvalid(f"localizer needs 3 conv stages and an input divisible by 8, got {self}")


class HandNet(Module):
    """Voxel grid (N, 1, D, D, D) -> joint offsets (N, F*3) in mm from the grid center."""

    def __init__(self, cfg: HandNetConfig, dtype=DEFAULT_DTYPE, seed: int = 0):
        self.cfg = cfg
        c1, c2, c3, c4, ct, c5 = cfg.channels
        m, e = cfg.bn_momentum, cfg.bn_eps

        def block(cin, cout, k=3, p=1):
            return conv_bn_relu(cin, cout, k, p, m, e, dtype)

        self.features = Sequential(
            *block(1, c1), *block(c1, c1),
            MaxPool3d(2),
            Residual(Sequential(*block(c1, c2), *block(c2, c2)), c1, c2, dtype),
            MaxPool3d(2),
            Residual(Sequential(*block(c2, c3), *block(c3, c3)), c2, c3, dtype),
            MaxPool3d(2),
            *block(c3, c4), *block(c4, c4),
            ConvTranspose3d(c4, ct, 2, 2, dtype), BatchNorm(ct, m, e, dtype), ReLU(),
            *block(ct, c5), *block(c5, c5),
            *block(c5, cfg.num_joints, 1, 0),
            AdaptiveAvgPool3d(cfg.adaptive_pool_size),
            Flatten(),
        )
        u1, u2, u3 = cfg.fc_units
        flat = cfg.num_joints * cfg.adaptive_pool_size ** 3
        self.head = Sequential(
            Linear(flat, u1, dtype), ReLU(), Dropout(cfg.dropout, seed),
            Linear(u1, u2, dtype), ReLU(), Dropout(cfg.dropout, seed + 1),
            Linear(u2, u3, dtype),
        )
        for name, p in self.named_parameters():
            p.name = name

    def forward(self, x: Tensor) -> Tensor:
        d = self.cfg.input_size
        if x.ndim != 5 or x.shape[1:] != (1, d, d, d):
            raise ShapeMismatch(f"expected (N, 1, {d}, {d}, {d}) input, got {x.shape}")
        return F.scale(self.head(self.features(x)), self.cfg.coord_scale_mm)

    def reseed_dropout(self, seed: int) -> None:
        drops = [m for m in self.modules() if isinstance(m, Dropout)]
        for i, d in enumerate(drops):
            d.reseed([seed, i])


def build_handnet(cfg: HandNetConfig | None = None, seed: int = 0, sigma: float = INIT_SIGMA,
                  dtype=DEFAULT_DTYPE) -> HandNet:
    model = HandNet(cfg or HandNetConfig(), dtype, seed)
    init_weights(model, sigma, seed)
    return model


def spatial_trace(input_size: int) -> list[int]:
    """Spatial extent after the input, each of the three pools, and the up-sampling."""
    sizes = [input_size]
    s = input_size
    for _ in range(3):
        s = conv_output_shape((s,) * 3, 2, 2, 0)[0]
        sizes.append(s)
    sizes.append(transpose_output_shape((s,) * 3, 2, 2)[0])
    return sizes


def forward_handnet(model: HandNet, grids: np.ndarray, reference_points: np.ndarray | None = None,
                    training: bool = False) -> np.ndarray:
    """Absolute joints (N, F, 3) in mm: network offsets plus each frame's reference point."""
    model.train(training)
    grids = np.asarray(grids, dtype=model.features.layers[0].weight.dtype)
    if grids.ndim == 4:
        grids = grids[:, None]
    with no_grad():
        out = model(Tensor(grids)).data
    joints = out.reshape(out.shape[0], model.cfg.num_joints, 3).astype(np.float64)
    if reference_points is not None:
        joints = joints + np.asarray(reference_points, dtype=np.float64).reshape(-1, 1, 3)
    return joints


class Localizer(Module):
    """Depth crop (N, 1, S, S) -> reference-point offset (N, 3) in mm.

    2-D convolutions run as 3-D ones over a singleton depth axis.
    """

    def __init__(self, cfg: LocalizerConfig, dtype=DEFAULT_DTYPE):
        self.cfg = cfg
        layers: list[Module] = []
        cin = 1
        for c in cfg.channels:
            layers += [Conv3d(cin, c, (1, 3, 3), 1, (0, 1, 1), dtype), BatchNorm(c, dtype=dtype), ReLU(),
                       MaxPool3d((1, 2, 2))]
            cin = c
        layers.append(Flatten())
        self.features = Sequential(*layers)
        flat = cin * (cfg.input_size // 8) ** 2
        self.head = Sequential(Linear(flat, cfg.fc_hidden, dtype), ReLU(), Linear(cfg.fc_hidden, 3, dtype))
        for name, p in self.named_parameters():
            p.name = name

    def forward(self, x: Tensor) -> Tensor:
        s = self.cfg.input_size
        if x.ndim != 4 or x.shape[1:] != (1, s, s):
            raise ShapeMismatch(f"expected (N, 1, {s}, {s}) crops, got {x.shape}")
        x = F.reshape(x, (x.shape[0], 1, 1, s, s))
        return F.scale(self.head(self.features(x)), self.cfg.offset_scale_mm)


def build_localizer(cfg: LocalizerConfig | None = None, seed: int = 0, sigma: float = INIT_SIGMA,
                    dtype=DEFAULT_DTYPE) -> Localizer:
    model = Localizer(cfg or LocalizerConfig(), dtype)
    init_weights(model, sigma, seed)
    return model


def forward_localizer(model: Localizer, crops: np.ndarray) -> np.ndarray:
    model.eval()
    crops = np.asarray(crops, dtype=model.head.layers[0].weight.dtype)
    with no_grad():
        return model(Tensor(crops)).data.astype(np.float64)


def config_dict(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
