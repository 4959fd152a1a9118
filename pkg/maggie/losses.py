"""
Training objectives.

Every function takes mattes shaped (T, N, H, W) and returns a scalar tensor.
`total_loss` applies the per-scale assignment:

    A_8          weighted L1 (W_8) + attention loss
    A_4, A_1     L1 inside the uncertain support U (+ Laplacian on A_1)
    intermediate L1 + Laplacian
    refined      L1 + Laplacian + gradient
    video        dtSSD on the refined matte + L1 on the Delta probabilities
"""

from typing import Dict, Optional, Tuple

import torch
import torch.nn.functional as F

from .config import LossConfig, LossWeights
from .errors import InputValidationError
from .filters import gauss_derivative_filters
from .sparse_refine import upscale
from .temporal import delta_ground_truth

_GAUSS_5 = (1.0, 4.0, 6.0, 4.0, 1.0)


def _planes(x: torch.Tensor) -> torch.Tensor:
    # (T, N, H, W) -> (T * N, 1, H, W)
    return x.reshape(-1, 1, x.shape[-2], x.shape[-1])


def _check_pair(pred: torch.Tensor, gt: torch.Tensor) -> None:
    if pred.shape != gt.shape:
        raise InputValidationError(f"prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ")


def l1_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    _check_pair(pred, gt)
    return (pred - gt).abs().mean()


def masked_l1_loss(pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over the pixels where mask is set; 0 (with a graph) for an empty mask"""
    _check_pair(pred, gt)
    _check_pair(mask, gt)
    m = mask.to(pred.dtype)
    return ((pred - gt).abs() * m).sum() / m.sum().clamp_min(1.0)


def downscale_alpha(gt: torch.Tensor, factor: int = 8) -> torch.Tensor:
    """Average-pool a full-resolution matte to scale `factor`"""
    t, n, h, w = gt.shape
    return F.avg_pool2d(_planes(gt), factor).reshape(t, n, h // factor, w // factor)


def attention_loss(aff: torch.Tensor, gt_a8: torch.Tensor) -> torch.Tensor:
    """
    sum_i |1 - Aff(i) . [A_gt_8(i) > 0]|, averaged over frames.

    Args:
        aff: (T, N, S) token-to-feature attention, rows sum to 1
        gt_a8: (T, N, h, w) with h * w = S
    """
    support = (gt_a8 > 0).flatten(2).to(aff.dtype)
    if support.shape != aff.shape:
        raise InputValidationError(f"affinity {tuple(aff.shape)} and support {tuple(support.shape)} differ")
    per_instance = (1.0 - (aff * support).sum(dim=-1)).abs()
    return per_instance.sum(dim=1).mean()


def uncertainty_weights(pred: torch.Tensor, gt: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    """W_8 = gamma where both gt and pred lie strictly inside (0, 1), else 1"""
    both = (gt > 0) & (gt < 1) & (pred > 0) & (pred < 1)
    return torch.where(both, torch.full_like(gt, gamma), torch.ones_like(gt))


def weighted_coarse_loss(pred_a8: torch.Tensor, gt_a8: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    _check_pair(pred_a8, gt_a8)
    w = uncertainty_weights(pred_a8.detach(), gt_a8, gamma)
    return (w * (pred_a8 - gt_a8).abs()).mean()


def _gauss_kernel(x: torch.Tensor) -> torch.Tensor:
    k = torch.tensor(_GAUSS_5, dtype=x.dtype, device=x.device) / 16.0
    return torch.outer(k, k).reshape(1, 1, 5, 5)


def _blur(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    return F.conv2d(F.pad(x, (2, 2, 2, 2), mode="replicate"), kernel)


def laplacian_pyramid(x: torch.Tensor, levels: int = 5):
    """
    Band-pass pyramid of (B, 1, H, W) images.

    Returns:
        `levels` tensors: levels - 1 detail bands followed by the low-pass residual
    """
    kernel = _gauss_kernel(x)
    bands = []
    cur = x
    for _ in range(levels - 1):
        down = _blur(cur, kernel)[..., ::2, ::2]
        up = _blur(F.interpolate(down, size=cur.shape[-2:], mode="nearest"), kernel)
        bands.append(cur - up)
        cur = down
    bands.append(cur)
    return bands


def laplacian_loss(pred: torch.Tensor, gt: torch.Tensor, levels: int = 5) -> torch.Tensor:
    _check_pair(pred, gt)
    bands_p = laplacian_pyramid(_planes(pred), levels)
    bands_g = laplacian_pyramid(_planes(gt), levels)
    return sum((bp - bg).abs().mean() for bp, bg in zip(bands_p, bands_g))


def gradient_magnitude(x: torch.Tensor, sigma: float = 1.4, eps: float = 1e-6) -> torch.Tensor:
    """Gaussian-derivative gradient magnitude of (B, 1, H, W) images, replicate borders"""
    fx, fy = gauss_derivative_filters(sigma)
    k = torch.from_numpy(fx).to(x)
    pad = k.shape[-1] // 2
    weight = torch.stack([k, torch.from_numpy(fy).to(x)]).unsqueeze(1)
    g = F.conv2d(F.pad(x, (pad, pad, pad, pad), mode="replicate"), weight)
    return torch.sqrt(g.pow(2).sum(dim=1, keepdim=True) + eps)


def gradient_loss(pred: torch.Tensor, gt: torch.Tensor, sigma: float = 1.4) -> torch.Tensor:
    _check_pair(pred, gt)
    return (gradient_magnitude(_planes(pred), sigma) - gradient_magnitude(_planes(gt), sigma)).abs().mean()


def dtssd_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean over consecutive frame pairs of the RMS difference between temporal derivatives"""
    _check_pair(pred, gt)
    if pred.shape[0] < 2:
        raise InputValidationError("dtSSD needs at least two frames")
    d = (pred[1:] - pred[:-1]) - (gt[1:] - gt[:-1])
    per_pair = torch.sqrt(d.pow(2).flatten(1).mean(dim=1) + 1e-12)
    return per_pair.mean()


def delta_loss(pred_prob: torch.Tensor, gt_delta: torch.Tensor) -> torch.Tensor:
    _check_pair(pred_prob, gt_delta)
    return (pred_prob - gt_delta).abs().mean()


_TERM_WEIGHTS = {
    "coarse_l1": "l1",
    "att": "att",
    "a4_l1": "sparse_l1",
    "a1_l1": "sparse_l1",
    "a1_lap": "sparse_lap",
    "intermediate_l1": "l1",
    "intermediate_lap": "lap",
    "l1": "l1",
    "lap": "lap",
    "grad": "grad",
    "dtssd": "dtssd",
    "delta": "delta",
}


def combine_terms(terms: Dict[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    """Weighted sum of named loss terms"""
    w = weights.model_dump()
    if any(v < 0 for v in w.values()):
        raise InputValidationError(f"loss weights must be non-negative: {w}")
    total = None
    for name, value in terms.items():
        contrib = w[_TERM_WEIGHTS[name]] * value
        total = contrib if total is None else total + contrib
    return total


def total_loss(
    output,
    gt: torch.Tensor,
    config: Optional[LossConfig] = None,
    video: bool = True,
) -> Tuple[torch.Tensor, Dict[str, float]]:
    """
    Args:
        output: MattingOutput
        gt: (T, N, H, W) ground-truth alphas
        config: Loss settings
        video: Add the temporal terms when T > 1

    Returns:
        (total, per-term breakdown as floats)
    """
    cfg = config or LossConfig()
    gt8 = downscale_alpha(gt, 8)
    support = output.uncertainty.to_mask(8)
    a4 = upscale(output.a4, 2, "nearest")
    terms = {
        "coarse_l1": weighted_coarse_loss(output.a8, gt8, cfg.gamma),
        "att": attention_loss(output.aff, gt8),
        "a4_l1": masked_l1_loss(a4, gt, support),
        "a1_l1": masked_l1_loss(output.a1, gt, support),
        "a1_lap": laplacian_loss(torch.where(support, output.a1, gt), gt, cfg.lap_levels),
        "intermediate_l1": l1_loss(output.intermediate, gt),
        "intermediate_lap": laplacian_loss(output.intermediate, gt, cfg.lap_levels),
        "l1": l1_loss(output.refined, gt),
        "lap": laplacian_loss(output.refined, gt, cfg.lap_levels),
        "grad": gradient_loss(output.refined, gt, cfg.grad_sigma),
    }
    if video and gt.shape[0] > 1:
        terms["dtssd"] = dtssd_loss(output.refined, gt)
        if output.delta_prob is not None:
            terms["delta"] = delta_loss(output.delta_prob, delta_ground_truth(gt, cfg.delta_beta))
    total = combine_terms(terms, cfg.weights)
    breakdown = {k: float(v.detach()) for k, v in terms.items()}
    breakdown["total"] = float(total.detach())
    return total, breakdown
