"""
Morphology and derivative filters shared by refinement, losses, metrics and
dataset synthesis.

Square structuring elements follow OpenCV's centre-anchor convention on both
the numpy (cv2) and torch (max-pool) side, so the two agree pixel for pixel.
"""

from typing import Tuple

import cv2
import numpy as np
import torch
import torch.nn.functional as F


def dilate_np(mask: np.ndarray, kernel: int) -> np.ndarray:
    """
    Binary dilation with a kernel x kernel square.

    Args:
        mask: Boolean or {0,1} array (H, W)
        kernel: Side of the square; values <= 1 return the mask unchanged

    Returns:
        Boolean array (H, W)
    """
    m = (mask > 0).astype(np.uint8)
    if kernel <= 1:
        return m.astype(bool)
    return cv2.dilate(m, np.ones((kernel, kernel), np.uint8), iterations=1).astype(bool)


def erode_np(mask: np.ndarray, kernel: int) -> np.ndarray:
    """Binary erosion with a kernel x kernel square (border treated as foreground, as cv2 does)"""
    m = (mask > 0).astype(np.uint8)
    if kernel <= 1:
        return m.astype(bool)
    return cv2.erode(m, np.ones((kernel, kernel), np.uint8), iterations=1).astype(bool)


def dilate_torch(mask: torch.Tensor, kernel: int) -> torch.Tensor:
    """
    Binary dilation over the last two dimensions of a tensor of any rank.

    Separable max filter; the window covers offsets [-k//2, k - 1 - k//2].
    """
    m = mask.bool()
    if kernel <= 1 or m.numel() == 0:
        return m
    shape = m.shape
    x = m.reshape(-1, 1, shape[-2], shape[-1]).to(torch.float32)
    lo = kernel // 2
    hi = kernel - 1 - lo
    x = F.pad(x, (lo, hi, 0, 0), value=0.0)
    x = F.max_pool2d(x, kernel_size=(1, kernel), stride=1)
    x = F.pad(x, (0, 0, lo, hi), value=0.0)
    x = F.max_pool2d(x, kernel_size=(kernel, 1), stride=1)
    return (x > 0.5).reshape(shape)


def gaussian(x: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-x ** 2 / (2 * sigma ** 2)) / (sigma * np.sqrt(2 * np.pi))


def dgaussian(x: np.ndarray, sigma: float) -> np.ndarray:
    return -x * gaussian(x, sigma) / sigma ** 2


def gauss_derivative_filters(sigma: float = 1.4, epsilon: float = 1e-2) -> Tuple[np.ndarray, np.ndarray]:
    """
    First-order Gaussian derivative filters (x and y) used by the gradient
    loss and the Grad metric. The x filter has unit L2 norm.
    """
    half_size = np.ceil(sigma * np.sqrt(-2 * np.log(np.sqrt(2 * np.pi) * sigma * epsilon)))
    size = int(2 * half_size + 1)
    offsets = np.arange(size, dtype=np.float64) - half_size
    filter_x = np.outer(gaussian(offsets, sigma), dgaussian(offsets, sigma))
    filter_x /= np.sqrt((filter_x ** 2).sum())
    return filter_x, filter_x.T.copy()
