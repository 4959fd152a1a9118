"""
Feature pyramid extraction: dense maps F_s at scales s in {1, 2, 4, 8}.

A strided convolutional pyramid stands in for the ResNet backbone. Group
normalisation keeps every frame independent of the others in the batch.
"""

from dataclasses import dataclass
from typing import Dict, Iterator, Sequence, Tuple

import torch
from torch import nn

from .errors import InputValidationError

SCALES: Tuple[int, ...] = (1, 2, 4, 8)


@dataclass
class FeaturePyramid:
    """Dense feature maps keyed by scale, each (T, C_s, H/s, W/s)"""
    maps: Dict[int, torch.Tensor]

    def __getitem__(self, scale: int) -> torch.Tensor:
        return self.maps[scale]

    def __iter__(self) -> Iterator[int]:
        return iter(SCALES)

    @property
    def frames(self) -> int:
        return self.maps[1].shape[0]

    def select(self, index) -> "FeaturePyramid":
        """Frame subset (index or slice along T)"""
        return FeaturePyramid({s: m[index] for s, m in self.maps.items()})


def _groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class ConvBlock(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False),
            nn.GroupNorm(_groups(out_channels), out_channels),
            nn.ReLU(inplace=True),
        )


class PyramidEncoder(nn.Module):
    """
    Four-stage encoder. Stage s halves the resolution of stage s/2 (stage 1
    keeps full resolution) and adds `depth` extra 3x3 blocks.
    """

    def __init__(self, in_channels: int, channels: Sequence[int] = (32, 32, 64, 128), depth: int = 1):
        super().__init__()
        if len(channels) != 4:
            raise InputValidationError("channels must list (C_1, C_2, C_4, C_8)")
        self.channels = dict(zip(SCALES, channels))
        stages = []
        prev = in_channels
        for scale, width in zip(SCALES, channels):
            stride = 1 if scale == 1 else 2
            blocks = [ConvBlock(prev, width, stride)] + [ConvBlock(width, width) for _ in range(depth)]
            stages.append(nn.Sequential(*blocks))
            prev = width
        self.stages = nn.ModuleList(stages)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        """
        Args:
            x: Model input (T, 3 + C_e, H, W) with H and W divisible by 8

        Returns:
            FeaturePyramid with maps at scales 1, 2, 4, 8
        """
        if x.dim() != 4:
            raise InputValidationError(f"encoder input must be (T, C, H, W), got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise InputValidationError(f"input size {h}x{w} is not divisible by 8")
        maps = {}
        for scale, stage in zip(SCALES, self.stages):
            x = stage(x)
            maps[scale] = x
        return FeaturePyramid(maps)
