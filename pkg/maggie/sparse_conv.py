"""
Coordinate-list sparse tensors and the sparse convolutions the refinement
stage needs.

Active entries are rows of a (P, 4) coordinate list (t, i, y, x) with a
(P, C) value matrix. Convolutions only ever read active neighbours inside the
same (frame, instance) plane, so their cost scales with P rather than with
T x N x H x W.
"""

import math
from dataclasses import dataclass, replace
from typing import Tuple

import torch
from torch import nn

from .errors import InputValidationError

Shape4 = Tuple[int, int, int, int]


@dataclass
class SparseFeatureMap:
    """Sparse per-instance features X_s"""
    coords: torch.Tensor   # (P, 4) long, (t, i, y, x)
    values: torch.Tensor   # (P, C)
    scale: int
    shape: Shape4          # (T, N, H/s, W/s)

    def __post_init__(self):
        if self.coords.shape[0] != self.values.shape[0]:
            raise InputValidationError(
                f"{self.coords.shape[0]} coordinates but {self.values.shape[0]} feature rows"
            )

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: torch.Tensor) -> "SparseFeatureMap":
        return replace(self, values=values)

    def to_dense(self) -> torch.Tensor:
        """(T, N, C, h, w) dense copy, zero outside the active set"""
        t, n, h, w = self.shape
        out = self.values.new_zeros((t, n, h, w, self.channels))
        c = self.coords
        out[c[:, 0], c[:, 1], c[:, 2], c[:, 3]] = self.values
        return out.permute(0, 1, 4, 2, 3)

    def active_mask(self) -> torch.Tensor:
        """(T, N, h, w) boolean support"""
        return scatter_dense(torch.ones(len(self), dtype=torch.bool, device=self.coords.device), self.coords, self.shape)


def check_bounds(coords: torch.Tensor, shape: Shape4) -> None:
    if coords.numel() == 0:
        return
    if coords.dim() != 2 or coords.shape[1] != 4:
        raise InputValidationError(f"coordinates must be (P, 4), got {tuple(coords.shape)}")
    upper = torch.tensor(shape, device=coords.device)
    if torch.any(coords < 0) or torch.any(coords >= upper):
        raise InputValidationError(f"coordinates out of bounds for shape {shape}")


def index_grid(coords: torch.Tensor, shape: Shape4) -> torch.Tensor:
    """(T, N, h, w) map from position to row index, -1 where inactive"""
    grid = torch.full(shape, -1, dtype=torch.long, device=coords.device)
    if coords.numel():
        grid[coords[:, 0], coords[:, 1], coords[:, 2], coords[:, 3]] = torch.arange(
            coords.shape[0], device=coords.device
        )
    return grid


def neighbor_map(coords: torch.Tensor, shape: Shape4, kernel: int) -> torch.Tensor:
    """
    Row index of every kernel neighbour of every active entry.

    Returns:
        (P, kernel * kernel) long tensor, -1 where the neighbour is inactive.
        Column a * kernel + b holds offset (a - r, b - r) with r = kernel // 2.
    """
    if kernel % 2 == 0:
        raise InputValidationError("submanifold kernels must be odd")
    r = kernel // 2
    t, n, h, w = shape
    grid = torch.full((t, n, h + 2 * r, w + 2 * r), -1, dtype=torch.long, device=coords.device)
    grid[:, :, r:r + h, r:r + w] = index_grid(coords, shape)
    cols = []
    for a in range(kernel):
        for b in range(kernel):
            cols.append(grid[coords[:, 0], coords[:, 1], coords[:, 2] + a, coords[:, 3] + b])
    if not cols:
        return torch.empty((0, 0), dtype=torch.long, device=coords.device)
    return torch.stack(cols, dim=1)


def gather_dense(dense: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Instance-agnostic dense (T, C, h, w) features read at sparse (t, ., y, x) positions -> (P, C)"""
    return dense[coords[:, 0], :, coords[:, 2], coords[:, 3]]


def scatter_dense(values: torch.Tensor, coords: torch.Tensor, shape: Shape4) -> torch.Tensor:
    """Scatter (P,) values into a zero (T, N, h, w) tensor"""
    out = values.new_zeros(shape)
    if coords.numel():
        out[coords[:, 0], coords[:, 1], coords[:, 2], coords[:, 3]] = values
    return out


def upsample_coords(coords: torch.Tensor) -> torch.Tensor:
    """Each entry spawns its 2x2 children; children of parent p occupy rows 4p..4p+3"""
    offsets = torch.tensor([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=torch.long, device=coords.device)
    children = coords.repeat_interleave(4, dim=0)
    children[:, 2] = children[:, 2] * 2 + offsets[:, 0].repeat(coords.shape[0])
    children[:, 3] = children[:, 3] * 2 + offsets[:, 1].repeat(coords.shape[0])
    return children


class SubmanifoldConv2d(nn.Module):
    """
    Sparse convolution whose output set equals its input set.

    Equivalent to a dense Conv2d (padding kernel // 2) applied to features
    zeroed outside the active set and read back at the active positions.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, bias: bool = True):
        super().__init__()
        self.kernel = kernel
        self.weight = nn.Parameter(torch.empty(kernel * kernel, in_channels, out_channels))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        std = math.sqrt(2.0 / (kernel * kernel * in_channels))
        nn.init.normal_(self.weight, std=std)

    def dense_weight(self) -> torch.Tensor:
        """Weight in Conv2d layout (C_out, C_in, k, k)"""
        k = self.kernel
        return self.weight.reshape(k, k, self.weight.shape[1], self.weight.shape[2]).permute(3, 2, 0, 1)

    def forward(self, x: SparseFeatureMap, neighbors: torch.Tensor = None) -> SparseFeatureMap:
        if neighbors is None:
            neighbors = neighbor_map(x.coords, x.shape, self.kernel)
        p = len(x)
        if p == 0:
            return x.with_values(x.values.new_zeros((0, self.weight.shape[2])))
        padded = torch.cat([x.values, x.values.new_zeros((1, x.channels))], dim=0)
        gathered = padded[torch.where(neighbors < 0, p, neighbors)]        # (P, K, C_in)
        out = torch.einsum("pkc,kco->po", gathered, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return x.with_values(out)


class SparseInverseConv2d(nn.Module):
    """
    Transposed 2x2 / stride-2 sparse convolution: every entry writes its four
    children at the next finer scale.
    """

    def __init__(self, in_channels: int, out_channels: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(4, in_channels, out_channels))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        nn.init.normal_(self.weight, std=math.sqrt(1.0 / in_channels))

    def dense_weight(self) -> torch.Tensor:
        """Weight in ConvTranspose2d layout (C_in, C_out, 2, 2)"""
        return self.weight.reshape(2, 2, self.weight.shape[1], self.weight.shape[2]).permute(2, 3, 0, 1)

    def forward(self, x: SparseFeatureMap) -> SparseFeatureMap:
        if x.scale < 2:
            raise InputValidationError("cannot upsample below scale 1")
        t, n, h, w = x.shape
        out = torch.einsum("pc,kco->pko", x.values, self.weight).reshape(4 * len(x), self.weight.shape[2])
        if self.bias is not None:
            out = out + self.bias
        return SparseFeatureMap(
            coords=upsample_coords(x.coords),
            values=out,
            scale=x.scale // 2,
            shape=(t, n, h * 2, w * 2),
        )
