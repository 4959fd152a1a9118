"""
Mask guidance input construction.

Binary instance masks (T, N, H, W) are turned into C_e identity-embedding
channels, E(x, y) = M(x, y) D, and concatenated with the image.
"""

import torch
from torch import nn

from .errors import CapacityError, InputValidationError


def check_instance_masks(masks: torch.Tensor, require_one_hot: bool = True) -> None:
    """
    Validate a (T, N, H, W) instance mask set.

    Raises:
        InputValidationError: wrong rank, non-binary values, or overlapping instances
    """
    if masks.dim() != 4:
        raise InputValidationError(f"instance masks must be (T, N, H, W), got shape {tuple(masks.shape)}")
    if not torch.all((masks == 0) | (masks == 1)):
        raise InputValidationError("instance masks must be binary")
    if require_one_hot and masks.shape[1] > 0 and torch.any(masks.sum(dim=1) > 1):
        raise InputValidationError("instance masks overlap: at most one instance per pixel")


def embed_masks(masks: torch.Tensor, table: torch.Tensor) -> torch.Tensor:
    """
    Map every pixel to the embedding row of its instance (zero for background).

    Args:
        masks: Binary (T, N, H, W)
        table: Embedding table D (N_max, C_e)

    Returns:
        (T, C_e, H, W) embedding
    """
    check_instance_masks(masks, require_one_hot=False)
    n = masks.shape[1]
    if n > table.shape[0]:
        raise CapacityError(f"{n} instances exceed the embedding capacity of {table.shape[0]}")
    return torch.einsum("tnhw,nc->tchw", masks.to(table.dtype), table[:n])


def stack_masks(masks: torch.Tensor, max_instances: int) -> torch.Tensor:
    """Zero-pad the instance axis to `max_instances` channels (plain stacking, no embedding)"""
    check_instance_masks(masks, require_one_hot=False)
    t, n, h, w = masks.shape
    if n > max_instances:
        raise CapacityError(f"{n} instances exceed the stacking capacity of {max_instances}")
    out = masks.new_zeros((t, max_instances, h, w), dtype=torch.float32)
    out[:, :n] = masks.float()
    return out


def build_input(frames: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
    """
    Concatenate image and guidance channels.

    Args:
        frames: (T, 3, H, W) image in [0, 1]
        embedding: (T, C, H, W) guidance channels

    Returns:
        (T, 3 + C, H, W) model input
    """
    if frames.dim() != 4 or frames.shape[1] != 3:
        raise InputValidationError(f"frames must be (T, 3, H, W), got {tuple(frames.shape)}")
    if embedding.dim() != 4:
        raise InputValidationError(f"embedding must be (T, C, H, W), got {tuple(embedding.shape)}")
    if frames.shape[0] != embedding.shape[0] or frames.shape[-2:] != embedding.shape[-2:]:
        raise InputValidationError(
            f"frames {tuple(frames.shape)} and embedding {tuple(embedding.shape)} disagree on T, H or W"
        )
    return torch.cat([frames, embedding.to(frames.dtype)], dim=1)


class IdentityEmbedding(nn.Module):
    """
    Learnable ID embedding table D (N_max x C_e).

    With mode="stack" the table is unused and masks are stacked directly.
    """

    def __init__(self, max_instances: int = 10, embed_dim: int = 3, mode: str = "embed", init_std: float = 0.02):
        super().__init__()
        self.max_instances = max_instances
        self.mode = mode
        self.table = nn.Parameter(torch.empty(max_instances, embed_dim))
        nn.init.normal_(self.table, mean=0.0, std=init_std)

    @property
    def out_channels(self) -> int:
        return self.max_instances if self.mode == "stack" else self.table.shape[1]

    def forward(self, frames: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        if self.mode == "stack":
            guidance = stack_masks(masks, self.max_instances).to(frames.dtype)
        else:
            guidance = embed_masks(masks, self.table)
        return build_input(frames, guidance)
