"""
Sparse refinement.

Only the coarse-matte locations that are neither background nor foreground
(the uncertainty set U) are refined. Instance features are built sparsely at
scale 8, gated onto F_4, aggregated with F_2 and F_1, and read out by two
sparse matte heads. The progressive refinement step then splices the finer
predictions into the coarse matte inside dilated uncertain regions.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .decoder import CoarseMatteBundle
from .encoder import FeaturePyramid
from .errors import InputValidationError
from .filters import dilate_torch
from .sparse_conv import (
    SparseFeatureMap,
    SparseInverseConv2d,
    SubmanifoldConv2d,
    check_bounds,
    gather_dense,
    neighbor_map,
    scatter_dense,
)

logger = logging.getLogger(__name__)


@dataclass
class UncertaintySet:
    """Uncertain coordinates (t, i, y, x) at scale 8"""
    coords: torch.Tensor  # (P, 4) long
    shape: Tuple[int, int, int, int]

    def __len__(self) -> int:
        return self.coords.shape[0]

    def to_mask(self, scale: int = 1) -> torch.Tensor:
        """(T, N, h*scale, w*scale) boolean mask, nearest upscaled"""
        mask = scatter_dense(
            torch.ones(len(self), dtype=torch.bool, device=self.coords.device), self.coords, self.shape
        )
        if scale > 1:
            mask = mask.repeat_interleave(scale, dim=-2).repeat_interleave(scale, dim=-1)
        return mask


@dataclass
class PRMResult:
    intermediate: torch.Tensor  # A after the R_4 step
    final: torch.Tensor
    r4: torch.Tensor            # bool refine masks
    r1: torch.Tensor


@dataclass
class RefinementOutput:
    uncertainty: UncertaintySet
    a4: torch.Tensor   # (T, N, H/2, W/2), zero outside the sparse support
    a1: torch.Tensor   # (T, N, H, W), zero outside the sparse support
    sparsity: Dict[int, float]


def uncertain(alpha: torch.Tensor, eps: float) -> torch.Tensor:
    return (alpha >= eps) & (alpha <= 1.0 - eps)


def extract_uncertainty(a8: torch.Tensor, eps: float = 1.0 / 255.0) -> UncertaintySet:
    """
    Args:
        a8: Coarse matte (T, N, h, w) in [0, 1]
        eps: Values within eps of 0 or 1 count as decided

    Returns:
        UncertaintySet in row-major (t, i, y, x) order
    """
    if a8.dim() != 4:
        raise InputValidationError(f"coarse matte must be (T, N, h, w), got {tuple(a8.shape)}")
    coords = torch.nonzero(uncertain(a8.detach(), eps), as_tuple=False)
    return UncertaintySet(coords=coords, shape=tuple(a8.shape))


class PointwiseMLP(nn.Sequential):
    def __init__(self, channels: int):
        super().__init__(nn.Linear(channels, channels), nn.ReLU(inplace=True), nn.Linear(channels, channels))


def dense_to_sparse(
    enriched: torch.Tensor,
    tokens: torch.Tensor,
    u: UncertaintySet,
    mlp: nn.Module,
) -> SparseFeatureMap:
    """
    X_8(p) = MLP(F_8_bar(y, x, t) * T_i) for every p = (t, i, y, x) in U.

    Args:
        enriched: (T, C_8, h, w)
        tokens: (T, N, C_8)
        u: Uncertain coordinates
        mlp: Row-wise network C_8 -> C_8

    Returns:
        SparseFeatureMap at scale 8
    """
    t, c, h, w = enriched.shape
    shape = (t, tokens.shape[1], h, w)
    if tokens.shape[0] != t or tokens.shape[2] != c:
        raise InputValidationError(f"tokens {tuple(tokens.shape)} do not match features {tuple(enriched.shape)}")
    check_bounds(u.coords, shape)
    feats = gather_dense(enriched, u.coords)
    tok = tokens[u.coords[:, 0], u.coords[:, 1]]
    return SparseFeatureMap(coords=u.coords, values=mlp(feats * tok), scale=8, shape=shape)


class InstanceGuidance(nn.Module):
    """
    X_4(p) = G({X'_4(p); F_4(p)}) * F_4(p), X'_4 the 2x upsampled coarse
    features and G two submanifold convolutions ending in a sigmoid.
    """

    def __init__(self, coarse_channels: int, fine_channels: int, kernel: int = 3):
        super().__init__()
        self.kernel = kernel
        self.up = SparseInverseConv2d(coarse_channels, fine_channels)
        self.gate1 = SubmanifoldConv2d(2 * fine_channels, fine_channels, kernel)
        self.gate2 = SubmanifoldConv2d(fine_channels, fine_channels, kernel)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x8: SparseFeatureMap, f4: torch.Tensor) -> SparseFeatureMap:
        x4 = self.up(x8)
        _check_dense(f4, x4)
        f = gather_dense(f4, x4.coords)
        nbr = neighbor_map(x4.coords, x4.shape, self.kernel)
        g = self.gate1(x4.with_values(torch.cat([x4.values, f], dim=1)), nbr)
        g = self.gate2(g.with_values(self.act(g.values)), nbr)
        return x4.with_values(torch.sigmoid(g.values) * f)


class DetailAggregation(nn.Module):
    """Upsample sparse features 2x, concatenate the dense map gathered at the children, convolve sparsely"""

    def __init__(self, in_channels: int, dense_channels: int, out_channels: int, kernel: int = 3):
        super().__init__()
        self.kernel = kernel
        self.up = SparseInverseConv2d(in_channels, out_channels)
        self.conv = SubmanifoldConv2d(out_channels + dense_channels, out_channels, kernel)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: SparseFeatureMap, f_dense: torch.Tensor) -> SparseFeatureMap:
        fine = self.up(x)
        _check_dense(f_dense, fine)
        f = gather_dense(f_dense, fine.coords)
        out = self.conv(fine.with_values(torch.cat([fine.values, f], dim=1)))
        return out.with_values(self.act(out.values))


class SparseMatteHead(nn.Module):
    """Two submanifold convolutions with LayerNorm between; zero outside the support"""

    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        hidden = max(channels // 2, 1)
        self.kernel = kernel
        self.conv1 = SubmanifoldConv2d(channels, hidden, kernel)
        self.norm = nn.LayerNorm(hidden)
        self.act = nn.LeakyReLU(0.2)
        self.conv2 = SubmanifoldConv2d(hidden, 1, kernel)

    def forward(self, x: SparseFeatureMap) -> torch.Tensor:
        if len(x) == 0:
            return x.values.new_zeros(x.shape)
        nbr = neighbor_map(x.coords, x.shape, self.kernel)
        h = self.conv1(x, nbr)
        h = h.with_values(self.act(self.norm(h.values)))
        out = self.conv2(h, nbr)
        return scatter_dense(torch.sigmoid(out.values[:, 0]), x.coords, x.shape)


def _check_dense(dense: torch.Tensor, sparse: SparseFeatureMap) -> None:
    t, _, h, w = sparse.shape
    if dense.dim() != 4 or dense.shape[0] != t or tuple(dense.shape[-2:]) != (h, w):
        raise InputValidationError(
            f"dense map {tuple(dense.shape)} does not match sparse scale {sparse.scale} grid {sparse.shape}"
        )


def sparsity_report(u: UncertaintySet, *maps: SparseFeatureMap) -> Dict[int, float]:
    """Active fraction |active| / (T N h w) per scale"""
    t, n, h, w = u.shape
    report = {8: len(u) / max(t * n * h * w, 1)}
    for m in maps:
        tt, nn_, hh, ww = m.shape
        report[m.scale] = len(m) / max(tt * nn_ * hh * ww, 1)
    return report


class SparseRefiner(nn.Module):
    """
    U -> X_8 -> X_4 (gated by F_4) -> X_2 (with F_2) -> A_4 head
                                   -> X_1 (with F_1) -> A_1 head
    """

    def __init__(self, channels: Sequence[int] = (32, 32, 64, 128), kernel: int = 3):
        super().__init__()
        c1, c2, c4, c8 = channels
        self.mlp = PointwiseMLP(c8)
        self.guidance = InstanceGuidance(c8, c4, kernel)
        self.agg2 = DetailAggregation(c4, c2, c2, kernel)
        self.head4 = SparseMatteHead(c2, kernel)
        self.agg1 = DetailAggregation(c2, c1, c1, kernel)
        self.head1 = SparseMatteHead(c1, kernel)

    def forward(self, coarse: CoarseMatteBundle, pyramid: FeaturePyramid, eps: float) -> RefinementOutput:
        u = extract_uncertainty(coarse.a8, eps)
        x8 = dense_to_sparse(coarse.enriched, coarse.tokens, u, self.mlp)
        x4 = self.guidance(x8, pyramid[4])
        x2 = self.agg2(x4, pyramid[2])
        a4 = self.head4(x2)
        x1 = self.agg1(x2, pyramid[1])
        a1 = self.head1(x1)
        sparsity = sparsity_report(u, x4, x2, x1)
        logger.debug("sparse refinement active fractions %s", sparsity)
        return RefinementOutput(uncertainty=u, a4=a4, a1=a1, sparsity=sparsity)


def upscale(alpha: torch.Tensor, factor: int, mode: str) -> torch.Tensor:
    """(T, N, h, w) -> (T, N, h*factor, w*factor)"""
    if factor == 1:
        return alpha
    if mode == "nearest":
        return alpha.repeat_interleave(factor, dim=-2).repeat_interleave(factor, dim=-1)
    return F.interpolate(alpha, scale_factor=factor, mode="bilinear", align_corners=False)


def refine_steps(
    a8: torch.Tensor,
    a4: torch.Tensor,
    a1: torch.Tensor,
    u: torch.Tensor,
    kernels: Tuple[int, int] = (30, 15),
    eps: float = 1.0 / 255.0,
) -> PRMResult:
    """
    Progressive refinement on full-resolution inputs.

        A   <- A_8
        R_4 <- D(A, k_4) & U
        A   <- A (1 - R_4) + R_4 A_4
        R_1 <- D(A, k_1) & U
        A   <- A (1 - R_1) + R_1 A_1

    D(A, k) is the k x k dilation of the uncertain region of A. U is the
    original uncertainty set for both steps.

    Args:
        a8, a4, a1: (T, N, H, W) mattes at full resolution
        u: (T, N, H, W) boolean upscaled uncertainty set
        kernels: Dilation sides for the two steps
    """
    shape = a8.shape
    if a4.shape != shape or a1.shape != shape or u.shape != shape:
        raise InputValidationError("progressive refinement inputs must share one resolution")
    u = u.bool()
    a = a8
    r4 = dilate_torch(uncertain(a, eps), kernels[0]) & u
    a = torch.where(r4, a4, a)
    intermediate = a
    r1 = dilate_torch(uncertain(a, eps), kernels[1]) & u
    a = torch.where(r1, a1, a)
    return PRMResult(intermediate=intermediate, final=a, r4=r4, r1=r1)


def progressive_refine(
    a8: torch.Tensor,
    a4: torch.Tensor,
    a1: torch.Tensor,
    u: torch.Tensor,
    kernels: Tuple[int, int] = (30, 15),
    eps: float = 1.0 / 255.0,
) -> torch.Tensor:
    return refine_steps(a8, a4, a1, u, kernels, eps).final
