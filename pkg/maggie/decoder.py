"""
Instance Matte Decoder.

Instance tokens and the coarse feature map F_8 exchange information through
rounds of token self-attention, token->feature cross-attention and
feature->token cross-attention. The downscaled guidance masks M_8 enter as an
additive per-instance embedding on the attention keys. The coarse matte is
A_8 = sigmoid(<T_i, F_8_bar(p)> / sqrt(C_8)).
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InputValidationError


@dataclass
class CoarseMatteBundle:
    """Outputs of the decoder for T frames and N instances"""
    a8: torch.Tensor        # (T, N, h, w) in (0, 1)
    logits: torch.Tensor    # (T, N, h, w) pre-sigmoid
    enriched: torch.Tensor  # (T, C_8, h, w)
    tokens: torch.Tensor    # (T, N, C_8)
    aff: torch.Tensor       # (T, N, h*w), rows sum to 1


def scaled_dot_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    bias: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    softmax(Q K^T / sqrt(C) + bias) V over arbitrary leading batch dims.

    Args:
        q: (..., L, C)
        k: (..., S, C)
        v: (..., S, C_v)
        bias: Optional additive logits broadcastable to (..., L, S)

    Returns:
        (output (..., L, C_v), attention weights (..., L, S))
    """
    if q.shape[-1] != k.shape[-1]:
        raise InputValidationError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise InputValidationError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    logits = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(q.shape[-1])
    if bias is not None:
        logits = logits + bias
    weights = torch.softmax(logits, dim=-1)
    return torch.matmul(weights, v), weights


def downscale_masks(masks: torch.Tensor, factor: int = 8) -> torch.Tensor:
    """Max-pool (T, N, H, W) masks by `factor`: a cell belongs to an instance if any covered pixel does"""
    if factor == 1:
        return masks.float()
    t, n, h, w = masks.shape
    pooled = F.max_pool2d(masks.float().reshape(t * n, 1, h, w), kernel_size=factor, stride=factor)
    return pooled.reshape(t, n, h // factor, w // factor)


def coarse_matte(tokens: torch.Tensor, enriched: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Per-instance dot product between tokens (T, N, C) and features (T, C, h, w).

    Returns:
        (a8, logits), both (T, N, h, w)
    """
    logits = torch.einsum("tnc,tchw->tnhw", tokens, enriched) / math.sqrt(tokens.shape[-1])
    return torch.sigmoid(logits), logits


class MaskedMultiHeadAttention(nn.Module):
    """
    Multi-head attention whose keys receive an additive embedding `e` for
    every (query, key) pair flagged by a mask:

        k_ij = W_k (x_j + m_ij e)

    which adds m_ij * <q_i, W_k e> to the logits of head h.
    """

    def __init__(self, dim: int, heads: int, mask_embedding: bool = True):
        super().__init__()
        if dim % heads:
            raise InputValidationError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.mask_embed = nn.Parameter(torch.zeros(dim)) if mask_embedding else None
        if self.mask_embed is not None:
            nn.init.normal_(self.mask_embed, std=0.02)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # (B, L, C) -> (B, heads, L, head_dim)
        b, l, _ = x.shape
        return x.reshape(b, l, self.heads, self.head_dim).transpose(1, 2)

    def forward(
        self,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        key_mask: Optional[torch.Tensor] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            query: (B, L, C)
            key, value: (B, S, C)
            key_mask: Optional (B, L, S) flags selecting where the key embedding applies

        Returns:
            (output (B, L, C), head-averaged attention (B, L, S))
        """
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        bias = None
        if key_mask is not None and self.mask_embed is not None:
            # W_k e without the key bias term, which the k_proj call already added
            e = F.linear(self.mask_embed, self.k_proj.weight).reshape(self.heads, self.head_dim)
            q_dot_e = torch.einsum("bhlc,hc->bhl", q, e) / math.sqrt(self.head_dim)
            bias = q_dot_e.unsqueeze(-1) * key_mask.unsqueeze(1).to(q.dtype)
        out, weights = scaled_dot_attention(q, k, v, bias)
        b, _, l, _ = out.shape
        out = out.transpose(1, 2).reshape(b, l, self.heads * self.head_dim)
        return self.out_proj(out), weights.mean(dim=1)


class DecoderRound(nn.Module):
    """Token self-attention -> token-to-feature -> feature-to-token"""

    def __init__(self, dim: int, heads: int, mask_embedding: bool):
        super().__init__()
        self.self_attn = MaskedMultiHeadAttention(dim, heads, mask_embedding=False)
        self.norm1 = nn.LayerNorm(dim)
        self.token_to_feat = MaskedMultiHeadAttention(dim, heads, mask_embedding)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))
        self.norm3 = nn.LayerNorm(dim)
        self.feat_to_token = MaskedMultiHeadAttention(dim, heads, mask_embedding)
        self.norm4 = nn.LayerNorm(dim)

    def forward(
        self,
        tokens: torch.Tensor,
        feats: torch.Tensor,
        masks: Optional[torch.Tensor],
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        Args:
            tokens: (T, N, C)
            feats: (T, S, C)
            masks: (T, N, S) downscaled guidance, or None

        Returns:
            (tokens, feats, affinity (T, N, S))
        """
        out, _ = self.self_attn(tokens, tokens, tokens)
        tokens = self.norm1(tokens + out)

        out, aff = self.token_to_feat(tokens, feats, feats, masks)
        tokens = self.norm2(tokens + out)
        tokens = self.norm3(tokens + self.mlp(tokens))

        pixel_mask = masks.transpose(1, 2) if masks is not None else None
        out, _ = self.feat_to_token(feats, tokens, tokens, pixel_mask)
        feats = self.norm4(feats + out)
        return tokens, feats, aff


class InstanceMatteDecoder(nn.Module):
    """
    Attention decoder producing A_8, enriched features, instance tokens and
    the token->feature affinity used by the attention loss.

    token_init:
        "pooled": shared learned query plus a projection of F_8 averaged under
            each instance's mask. Instance identity comes from the mask, so the
            decoder is permutation equivariant in the instance axis.
        "slot": learned per-slot embeddings gathered by instance index.
    """

    def __init__(
        self,
        dim: int = 128,
        heads: int = 4,
        rounds: int = 2,
        max_instances: int = 10,
        token_init: str = "pooled",
        mask_injection: str = "key_embedding",
    ):
        super().__init__()
        if token_init not in ("pooled", "slot"):
            raise InputValidationError(f"unknown token_init {token_init!r}")
        self.token_init = token_init
        self.use_mask_keys = mask_injection == "key_embedding"
        self.query = nn.Parameter(torch.zeros(dim))
        nn.init.normal_(self.query, std=0.02)
        self.pool_proj = nn.Linear(dim, dim)
        self.slot_embed = nn.Embedding(max_instances, dim)
        self.feat_norm = nn.LayerNorm(dim)
        self.rounds = nn.ModuleList([DecoderRound(dim, heads, self.use_mask_keys) for _ in range(rounds)])
        self.token_out = nn.Linear(dim, dim)

    def initial_tokens(self, feats: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        """(T, S, C) features and (T, N, S) masks -> (T, N, C) tokens"""
        t, n, _ = masks.shape
        if self.token_init == "slot":
            if n > self.slot_embed.num_embeddings:
                raise InputValidationError(f"{n} instances exceed {self.slot_embed.num_embeddings} token slots")
            return self.slot_embed.weight[:n].unsqueeze(0).expand(t, -1, -1)
        area = masks.sum(dim=-1, keepdim=True).clamp(min=1.0)
        pooled = torch.einsum("tns,tsc->tnc", masks, feats) / area
        return self.query + self.pool_proj(pooled)

    def forward(self, f8: torch.Tensor, masks8: torch.Tensor) -> CoarseMatteBundle:
        """
        Args:
            f8: (T, C_8, h, w) coarse features
            masks8: (T, N, h, w) guidance masks at scale 8

        Returns:
            CoarseMatteBundle
        """
        if masks8.dim() != 4 or masks8.shape[1] == 0:
            raise InputValidationError("decoder needs at least one instance")
        t, c, h, w = f8.shape
        if masks8.shape[0] != t or masks8.shape[-2:] != (h, w):
            raise InputValidationError(
                f"masks {tuple(masks8.shape)} do not match coarse features {tuple(f8.shape)}"
            )
        feats = self.feat_norm(f8.flatten(2).transpose(1, 2))          # (T, S, C)
        masks = masks8.flatten(2).to(feats.dtype)                       # (T, N, S)
        tokens = self.initial_tokens(feats, masks)

        aff = None
        for layer in self.rounds:
            tokens, feats, aff = layer(tokens, feats, masks if self.use_mask_keys else None)

        tokens = self.token_out(tokens)
        enriched = feats.transpose(1, 2).reshape(t, c, h, w)
        a8, logits = coarse_matte(tokens, enriched)
        return CoarseMatteBundle(a8=a8, logits=logits, enriched=enriched, tokens=tokens, aff=aff)
