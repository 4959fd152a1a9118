"""
Training clips read from a synthesized dataset, plus augmentation.
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import List

import numpy as np
import torch

from .config import OptimConfig
from .errors import InputValidationError
from .synth import list_samples, read_sample


@dataclass
class Clip:
    name: str
    frames: torch.Tensor  # (T, 3, H, W)
    alphas: torch.Tensor  # (T, N, H, W)
    masks: torch.Tensor   # (T, N, H, W) float in {0, 1}

    def to(self, device) -> "Clip":
        return replace(self, frames=self.frames.to(device), alphas=self.alphas.to(device), masks=self.masks.to(device))


class ClipDataset:
    """All samples under a dataset root, loaded once"""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.paths: List[Path] = list_samples(self.root)
        if not self.paths:
            raise InputValidationError(f"no samples found in {self.root}")
        self._cache = {}

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, index: int) -> Clip:
        if index not in self._cache:
            frames, alphas, masks, manifest = read_sample(self.paths[index])
            self._cache[index] = Clip(
                name=manifest.name,
                frames=torch.from_numpy(frames),
                alphas=torch.from_numpy(alphas),
                masks=torch.from_numpy(masks.astype(np.float32)),
            )
        return self._cache[index]


def augment_clip(
    clip: Clip,
    rng: np.random.Generator,
    cfg: OptimConfig,
    image_mode: bool = False,
) -> Clip:
    """
    Temporal window (one frame in image mode), random crop, horizontal flip,
    instance order shuffle and random instance omission keeping at least one.
    """
    t, n, h, w = clip.alphas.shape
    length = 1 if image_mode else min(cfg.clip_len, t)
    start = int(rng.integers(0, t - length + 1))
    sl = slice(start, start + length)
    frames, alphas, masks = clip.frames[sl], clip.alphas[sl], clip.masks[sl]

    crop = cfg.crop_size
    if crop < h or crop < w:
        ch, cw = min(crop, h), min(crop, w)
        y = int(rng.integers(0, h - ch + 1))
        x = int(rng.integers(0, w - cw + 1))
        frames = frames[..., y:y + ch, x:x + cw]
        alphas = alphas[..., y:y + ch, x:x + cw]
        masks = masks[..., y:y + ch, x:x + cw]

    if cfg.flip and rng.random() < 0.5:
        frames, alphas, masks = frames.flip(-1), alphas.flip(-1), masks.flip(-1)

    order = rng.permutation(n) if cfg.shuffle_masks else np.arange(n)
    keep = rng.random(n) >= cfg.omit_prob
    if not keep.any():
        keep[int(rng.integers(n))] = True
    order = torch.from_numpy(order[keep[order]].copy())
    return Clip(
        name=clip.name,
        frames=frames.contiguous(),
        alphas=alphas[:, order].contiguous(),
        masks=masks[:, order].contiguous(),
    )
