"""
Inference on a directory of frames and per-instance mask directories.
"""

import logging
from pathlib import Path
from typing import List

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import InputValidationError
from .guidance import check_instance_masks
from .model import MaggieNet
from .synth import read_frames, read_instance_planes, to_png16

logger = logging.getLogger(__name__)


def _pad8(x: torch.Tensor) -> torch.Tensor:
    h, w = x.shape[-2:]
    return F.pad(x, (0, (-w) % 8, 0, (-h) % 8), mode="replicate")


@torch.no_grad()
def infer_alphas(model: MaggieNet, frames: np.ndarray, masks: np.ndarray, device: str = "cpu") -> np.ndarray:
    """
    Args:
        frames: (T, 3, H, W) in [0, 1]
        masks: (T, N, H, W) binary

    Returns:
        (T, N, H, W) alphas; inputs are padded to a multiple of 8 and cropped back
    """
    if frames.shape[0] != masks.shape[0]:
        raise InputValidationError(f"{frames.shape[0]} frames but {masks.shape[0]} mask frames")
    if frames.shape[-2:] != masks.shape[-2:]:
        raise InputValidationError(f"frame size {frames.shape[-2:]} and mask size {masks.shape[-2:]} differ")
    h, w = frames.shape[-2:]
    f = torch.from_numpy(frames).float().to(device)
    m = torch.from_numpy(masks).float().to(device)
    check_instance_masks(m)
    out = model(_pad8(f), _pad8(m), video=True)
    return out.final[..., :h, :w].clamp(0.0, 1.0).cpu().numpy()


def checkerboard_preview(rgb: np.ndarray, alpha: np.ndarray, tile: int = 8) -> Image.Image:
    """Foreground composited over a grey checkerboard"""
    h, w = alpha.shape
    yy, xx = np.mgrid[0:h, 0:w]
    board = np.where(((yy // tile + xx // tile) % 2)[..., None] == 0, 0.8, 0.6)
    comp = alpha[..., None] * rgb + (1 - alpha[..., None]) * board
    return Image.fromarray(np.clip(comp * 255.0 + 0.5, 0, 255).astype(np.uint8))


def run_inference(
    model: MaggieNet,
    frames_dir: Path,
    masks_dir: Path,
    out_dir: Path,
    preview: bool = False,
    device: str = "cpu",
) -> List[Path]:
    """
    Writes out_dir/<inst>/%04d.png (16-bit alpha) and optionally
    out_dir/preview/<inst>/%04d.png.

    Returns:
        One output directory per instance
    """
    frames = read_frames(frames_dir)
    masks = (read_instance_planes(masks_dir) > 0.5).astype(np.float32)
    alphas = infer_alphas(model, frames, masks, device)
    out_dir = Path(out_dir)
    inst_names = sorted(p.name for p in Path(masks_dir).iterdir() if p.is_dir())
    written = []
    for i, name in enumerate(inst_names):
        d = out_dir / name
        d.mkdir(parents=True, exist_ok=True)
        for t in range(alphas.shape[0]):
            cv2.imwrite(str(d / f"{t:04d}.png"), to_png16(alphas[t, i]))
            if preview:
                pd = out_dir / "preview" / name
                pd.mkdir(parents=True, exist_ok=True)
                checkerboard_preview(frames[t].transpose(1, 2, 0), alphas[t, i]).save(pd / f"{t:04d}.png")
        written.append(d)
    logger.info("wrote %d instance sequences of %d frames to %s", len(written), alphas.shape[0], out_dir)
    return written
