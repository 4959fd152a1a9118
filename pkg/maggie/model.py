"""
End-to-end mask-guided instance matting network.

guidance -> encoder -> temporal aggregation -> decoder -> sparse refinement
-> progressive refinement -> Delta prediction -> forward/backward fusion
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import torch
from torch import nn

from .config import ModelConfig
from .decoder import InstanceMatteDecoder, downscale_masks
from .encoder import PyramidEncoder
from .errors import InputValidationError
from .guidance import IdentityEmbedding
from .sparse_refine import SparseRefiner, UncertaintySet, refine_steps, upscale
from .temporal import BiConvGRU, DeltaNet, aggregate_sequence, binarize_delta, fuse_mattes

logger = logging.getLogger(__name__)


@dataclass
class MattingOutput:
    """
    Every intermediate the losses, metrics and CLI need.

    Mattes are (T, N, H, W) at full resolution unless noted.
    """
    a8: torch.Tensor                 # (T, N, H/8, W/8) coarse matte
    a4: torch.Tensor                 # (T, N, H/2, W/2) sparse head after F_2 aggregation
    a1: torch.Tensor                 # sparse head after F_1 aggregation
    intermediate: torch.Tensor       # A after the first refinement step
    refined: torch.Tensor            # PRM output
    final: torch.Tensor              # temporally fused output
    aff: torch.Tensor                # (T, N, H/8 * W/8)
    uncertainty: UncertaintySet
    sparsity: Dict[int, float]
    delta_prob: Optional[torch.Tensor] = None  # (T-1, 1, H, W)
    delta: Optional[torch.Tensor] = None


class MaggieNet(nn.Module):
    """
    Args:
        config: Architecture settings

    forward(frames, masks, video=True):
        frames: (T, 3, H, W) in [0, 1], H and W divisible by 8
        masks: (T, N, H, W) binary guidance masks
        video: Run temporal aggregation, Delta and fusion when T > 1;
            otherwise every frame is processed independently
    """

    def __init__(self, config: Optional[ModelConfig] = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        c8 = cfg.channels[3]
        self.embedding = IdentityEmbedding(cfg.max_instances, cfg.embed_dim, cfg.guidance_mode)
        self.encoder = PyramidEncoder(3 + self.embedding.out_channels, cfg.channels, cfg.encoder_depth)
        self.gru = BiConvGRU(c8)
        self.decoder = InstanceMatteDecoder(
            dim=c8,
            heads=cfg.attention_heads,
            rounds=cfg.attention_rounds,
            max_instances=cfg.max_instances,
            token_init=cfg.token_init,
            mask_injection=cfg.mask_injection,
        )
        self.refiner = SparseRefiner(cfg.channels, cfg.gate_kernel)
        self.delta_net = DeltaNet(c8)

    def forward(self, frames: torch.Tensor, masks: torch.Tensor, video: bool = True) -> MattingOutput:
        cfg = self.config
        if masks.dim() != 4 or masks.shape[0] != frames.shape[0] or masks.shape[-2:] != frames.shape[-2:]:
            raise InputValidationError(
                f"masks {tuple(masks.shape)} do not match frames {tuple(frames.shape)}"
            )
        t, _, h, w = frames.shape
        temporal = video and t > 1

        pyramid = self.encoder(self.embedding(frames, masks))
        f8 = pyramid[8]
        if temporal:
            f8 = aggregate_sequence(f8, self.gru, cfg.temporal_window, cfg.temporal_overlap, cfg.gru)
        coarse = self.decoder(f8, downscale_masks(masks, 8))
        refinement = self.refiner(coarse, pyramid, cfg.uncertainty_eps)

        prm = refine_steps(
            upscale(coarse.a8, 8, "bilinear"),
            upscale(refinement.a4, 2, "nearest"),
            refinement.a1,
            refinement.uncertainty.to_mask(8),
            cfg.prm_kernels,
            cfg.uncertainty_eps,
        )

        delta_prob = delta = None
        final = prm.final
        if temporal:
            delta_prob = self.delta_net(coarse.enriched, (h, w))
            delta = binarize_delta(delta_prob, cfg.delta_threshold)
            final = fuse_mattes(prm.final, delta, cfg.fusion)

        return MattingOutput(
            a8=coarse.a8,
            a4=refinement.a4,
            a1=refinement.a1,
            intermediate=prm.intermediate,
            refined=prm.final,
            final=final,
            aff=coarse.aff,
            uncertainty=refinement.uncertainty,
            sparsity=refinement.sparsity,
            delta_prob=delta_prob,
            delta=delta,
        )
