"""
Matting evaluation metrics.

Inputs are numpy arrays (T, N, H, W) with values in [0, 1]. Each metric is
computed per instance and then averaged over instances. Reporting scales
(MAD/MSE x1e3, SAD/Grad/Conn x1e-3, dtSSD x1e2, MESSDdt x1e3) are
arguments so that callers can pass the configured constants.
"""

from typing import Callable, Dict, Optional

import cv2
import numpy as np

from .config import MetricsConfig
from .errors import InputValidationError
from .filters import dilate_np, gauss_derivative_filters
from .schemas import MetricEntry

BACKGROUND = 0
UNKNOWN = 128
FOREGROUND = 255

REGIONS = {"foreground": FOREGROUND, "unknown": UNKNOWN, "background": BACKGROUND}


def _check(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape or pred.ndim != 4:
        raise InputValidationError(f"expected matching (T, N, H, W) arrays, got {pred.shape} and {gt.shape}")


def _entry(values, empty=()) -> MetricEntry:
    values = [float(v) for v in values]
    empty = [int(i) for i in empty]
    return MetricEntry(
        per_instance=values,
        mean=float(np.mean(values)) if values else 0.0,
        empty_region=bool(empty),
        empty_instances=empty,
    )


def estimate_trimap(gt: np.ndarray, dilate_px: int = 15) -> np.ndarray:
    """
    Trimap derived from ground truth.

    unknown = {0 < gt < 1} dilated by a (2 r + 1) square; foreground = {gt == 1}
    minus unknown; everything else is background.

    Returns:
        uint8 labels with the shape of gt (0 background, 128 unknown, 255 foreground)
    """
    gt = np.asarray(gt, dtype=np.float64)
    out = np.zeros(gt.shape, np.uint8)
    planes = gt.reshape(-1, *gt.shape[-2:])
    flat = out.reshape(-1, *gt.shape[-2:])
    for k, g in enumerate(planes):
        unknown = dilate_np((g > 0) & (g < 1), 2 * dilate_px + 1)
        fg = (g == 1) & ~unknown
        flat[k][fg] = FOREGROUND
        flat[k][unknown] = UNKNOWN
    return out


def _region_mask(trimap: Optional[np.ndarray], region: Optional[str], shape) -> np.ndarray:
    if region is None:
        return np.ones(shape, bool)
    if trimap is None:
        raise InputValidationError(f"region {region!r} needs a trimap")
    if region not in REGIONS:
        raise InputValidationError(f"unknown region {region!r}")
    return trimap == REGIONS[region]


def _pixelwise(
    pred: np.ndarray,
    gt: np.ndarray,
    err: Callable[[np.ndarray], np.ndarray],
    scale: float,
    trimap: Optional[np.ndarray],
    region: Optional[str],
) -> MetricEntry:
    _check(pred, gt)
    sel = _region_mask(trimap, region, gt.shape)
    e = err(pred.astype(np.float64) - gt.astype(np.float64))
    values = []
    empty = []
    for i in range(gt.shape[1]):
        m = sel[:, i]
        if not m.any():
            empty.append(i)
            values.append(0.0)
        else:
            values.append(e[:, i][m].mean() * scale)
    return _entry(values, empty)


def mad(pred, gt, trimap=None, region=None, scale: float = 1e3) -> MetricEntry:
    """Mean absolute difference; MAD_f / MAD_u with region='foreground' / 'unknown'"""
    return _pixelwise(pred, gt, np.abs, scale, trimap, region)


def mse(pred, gt, trimap=None, region=None, scale: float = 1e3) -> MetricEntry:
    return _pixelwise(pred, gt, np.square, scale, trimap, region)


def sad(pred, gt, trimap=None, region=None, scale: float = 1e-3) -> MetricEntry:
    """Per-frame sum of absolute differences, averaged over frames"""
    _check(pred, gt)
    sel = _region_mask(trimap, region, gt.shape)
    diff = np.abs(pred.astype(np.float64) - gt.astype(np.float64)) * sel
    per_frame = diff.sum(axis=(-2, -1))         # (T, N)
    empty = np.flatnonzero(~sel.any(axis=(0, 2, 3))) if region is not None else ()
    return _entry(per_frame.mean(axis=0) * scale, empty)


def gauss_gradient(img: np.ndarray, sigma: float = 1.4) -> np.ndarray:
    filter_x, filter_y = gauss_derivative_filters(sigma)
    img = img.astype(np.float64)
    gx = cv2.filter2D(img, -1, filter_x, borderType=cv2.BORDER_REPLICATE)
    gy = cv2.filter2D(img, -1, filter_y, borderType=cv2.BORDER_REPLICATE)
    return np.sqrt(gx ** 2 + gy ** 2)


def grad_metric(pred, gt, sigma: float = 1.4, scale: float = 1e-3) -> MetricEntry:
    """Sum of squared gradient-magnitude differences per frame, averaged over frames"""
    _check(pred, gt)
    values = []
    for i in range(gt.shape[1]):
        per_frame = [
            ((gauss_gradient(pred[t, i], sigma) - gauss_gradient(gt[t, i], sigma)) ** 2).sum()
            for t in range(gt.shape[0])
        ]
        values.append(np.mean(per_frame) * scale)
    return _entry(values)


def connectivity_error_map(pred: np.ndarray, gt: np.ndarray, step: float = 0.1) -> np.ndarray:
    """
    Per-pixel |phi(gt) - phi(pred)| for one (H, W) pair.

    The threshold sweep keeps the largest 4-connected component of the
    intersection; each pixel records the last level at which it was inside it.
    """
    gt = gt.astype(np.float32)
    pred = pred.astype(np.float32)
    thresh_steps = np.arange(0, 1 + step, step)
    round_down_map = -np.ones_like(gt)
    for k in range(1, len(thresh_steps)):
        intersection = ((gt >= thresh_steps[k]) & (pred >= thresh_steps[k])).astype(np.uint8)
        _, labels, stats, _ = cv2.connectedComponentsWithStats(intersection, connectivity=4)
        size = stats[1:, -1]
        omega = np.zeros_like(gt)
        if len(size) != 0:
            omega[labels == np.argmax(size) + 1] = 1
        mask = (round_down_map == -1) & (omega == 0)
        round_down_map[mask] = thresh_steps[k - 1]
    round_down_map[round_down_map == -1] = 1
    gt_diff = gt - round_down_map
    pred_diff = pred - round_down_map
    # differences below 0.15 count as connected
    gt_phi = 1 - gt_diff * (gt_diff >= 0.15)
    pred_phi = 1 - pred_diff * (pred_diff >= 0.15)
    return np.abs(gt_phi - pred_phi)


def conn_metric(pred, gt, step: float = 0.1, scale: float = 1e-3) -> MetricEntry:
    _check(pred, gt)
    values = []
    for i in range(gt.shape[1]):
        per_frame = [connectivity_error_map(pred[t, i], gt[t, i], step).sum() for t in range(gt.shape[0])]
        values.append(np.mean(per_frame) * scale)
    return _entry(values)


def _temporal(pred, gt) -> None:
    _check(pred, gt)
    if gt.shape[0] < 2:
        raise InputValidationError("temporal metrics need at least two frames")


def dtssd_metric(pred, gt, scale: float = 1e2) -> MetricEntry:
    """sqrt(sum((dpred/dt - dgt/dt)^2) / HW) per frame pair, averaged over pairs"""
    _temporal(pred, gt)
    p = pred.astype(np.float64)
    g = gt.astype(np.float64)
    d = np.diff(p, axis=0) - np.diff(g, axis=0)               # (T-1, N, H, W)
    per_pair = np.sqrt((d ** 2).sum(axis=(-2, -1)) / (d.shape[-2] * d.shape[-1]))
    return _entry(per_pair.mean(axis=0) * scale)


def messddt_metric(pred, gt, scale: float = 1e3) -> MetricEntry:
    """Mean squared temporal change of the squared error field (no motion compensation)"""
    _temporal(pred, gt)
    e = (pred.astype(np.float64) - gt.astype(np.float64)) ** 2
    change = np.diff(e, axis=0) ** 2
    return _entry(change.mean(axis=(0, 2, 3)) * scale)


METRIC_KEYS = ("mad", "mse", "sad", "grad", "conn", "mad_f", "mad_u", "dtssd", "messddt")


def evaluate_clip(pred: np.ndarray, gt: np.ndarray, config: Optional[MetricsConfig] = None) -> Dict[str, MetricEntry]:
    """
    Full metric suite for one clip. Temporal metrics on single frames are
    reported as 0 with the empty flag set.
    """
    cfg = config or MetricsConfig()
    _check(pred, gt)
    pred = np.clip(pred.astype(np.float64), 0.0, 1.0)
    gt = gt.astype(np.float64)
    trimap = estimate_trimap(gt, cfg.trimap_dilation)
    report = {
        "mad": mad(pred, gt, scale=cfg.scale_mad),
        "mse": mse(pred, gt, scale=cfg.scale_mse),
        "sad": sad(pred, gt, scale=cfg.scale_sad),
        "grad": grad_metric(pred, gt, cfg.grad_sigma, cfg.scale_grad),
        "conn": conn_metric(pred, gt, cfg.conn_step, cfg.scale_conn),
        "mad_f": mad(pred, gt, trimap, "foreground", cfg.scale_mad),
        "mad_u": mad(pred, gt, trimap, "unknown", cfg.scale_mad),
    }
    if gt.shape[0] >= 2:
        report["dtssd"] = dtssd_metric(pred, gt, cfg.scale_dtssd)
        report["messddt"] = messddt_metric(pred, gt, cfg.scale_messddt)
    else:
        n = gt.shape[1]
        for key in ("dtssd", "messddt"):
            report[key] = _entry([0.0] * n, range(n))
    return report
