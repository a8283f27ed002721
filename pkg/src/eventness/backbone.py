"""Small convolutional feature extractor shared by the RPN and the RoI head."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter


@dataclass(frozen=True)
class BackboneConfig:
    channels: tuple = (16, 32, 64, 64)
    pools: tuple | None = None  # per block; None -> every block pools

    def __post_init__(self):
        if not self.channels:
            raise ValueError("backbone needs at least one block")
        if self.pools is not None and len(self.pools) != len(self.channels):
            raise ValueError("pools must give one flag per block")

    @property
    def block_pools(self):
        return tuple(self.pools) if self.pools is not None else (True,) * len(self.channels)

    @property
    def stride(self):
        return 2 ** sum(bool(p) for p in self.block_pools)

    @property
    def out_channels(self):
        return self.channels[-1]


@dataclass
class FeatureMap:
    values: ad.Tensor  # [C, H_f, W_f]
    stride: int

    @property
    def shape(self):
        return self.values.shape


def init_params(cfg, rng, in_channels=3):
    params = {}
    c_in = in_channels
    for i, c_out in enumerate(cfg.channels):
        fan_in = c_in * 9
        params[f"backbone.conv{i}.weight"] = Parameter(
            ad.he_uniform((c_out, c_in, 3, 3), fan_in, rng), f"backbone.conv{i}.weight"
        )
        params[f"backbone.conv{i}.bias"] = Parameter(np.zeros(c_out), f"backbone.conv{i}.bias")
        c_in = c_out
    return params


def output_shape(cfg, height, width):
    """Feature-map spatial shape for an input of ``height`` x ``width``."""
    for pool in cfg.block_pools:
        if pool:
            height, width = height // 2, width // 2
    return height, width


def extract_features(x, params, cfg):
    """Forward the [3, n_mels, n_frames] image through conv3x3/ReLU/maxpool blocks."""
    values = x.values if hasattr(x, "values") else x
    h, w = values.shape[-2:]
    if h < cfg.stride or w < cfg.stride:
        raise ValueError(f"input too small: {h}x{w} is below the backbone stride {cfg.stride}")
    out = values if isinstance(values, ad.Tensor) else ad.Tensor(values)
    for i, pool in enumerate(cfg.block_pools):
        out = ad.conv2d(
            out, params[f"backbone.conv{i}.weight"], params[f"backbone.conv{i}.bias"], padding=1
        )
        out = ad.relu(out)
        if pool:
            out = ad.maxpool2d(out, 2)
    return FeatureMap(out, cfg.stride)
