"""
Temporal consistency.

Bidirectional Conv-GRU aggregation of coarse features over short overlapping
windows, a shallow network predicting where the matte changes between
consecutive frames (Delta), and forward/backward propagation of matte values
through regions where it does not.
"""

from typing import List, Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InputValidationError


class ConvGRUCell(nn.Module):
    """
    z = sigmoid(W_z [x; h]), r = sigmoid(W_r [x; h])
    h' = (1 - z) h + z tanh(W_h [x; r h])
    """

    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        pad = kernel // 2
        self.channels = channels
        self.gates = nn.Conv2d(2 * channels, 2 * channels, kernel, padding=pad)
        self.candidate = nn.Conv2d(2 * channels, channels, kernel, padding=pad)

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        z, r = torch.sigmoid(self.gates(torch.cat([x, h], dim=1))).chunk(2, dim=1)
        c = torch.tanh(self.candidate(torch.cat([x, r * h], dim=1)))
        return (1 - z) * h + z * c


class BiConvGRU(nn.Module):
    """Forward and backward Conv-GRU cells with separate weights"""

    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        self.forward_cell = ConvGRUCell(channels, kernel)
        self.backward_cell = ConvGRUCell(channels, kernel)

    def zero_state(self, f8_seq: torch.Tensor) -> torch.Tensor:
        return f8_seq.new_zeros(f8_seq.shape[1:])

    def forward(
        self,
        f8_seq: torch.Tensor,
        carry: Optional[torch.Tensor] = None,
        mode: str = "bidirectional",
        overlap: int = 0,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        return temporal_aggregate(f8_seq, carry, self, mode=mode, overlap=overlap)


def _run(cell: ConvGRUCell, frames: List[torch.Tensor], h: torch.Tensor) -> List[torch.Tensor]:
    states = []
    for x in frames:
        h = cell(x.unsqueeze(0), h.unsqueeze(0)).squeeze(0)
        states.append(h)
    return states


def temporal_aggregate(
    f8_seq: torch.Tensor,
    carry: Optional[torch.Tensor],
    gru: BiConvGRU,
    mode: str = "bidirectional",
    overlap: int = 0,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Aggregate one window of coarse features.

    Args:
        f8_seq: (T, C_8, h, w)
        carry: Forward hidden state (C_8, h, w) from the previous window, or None for zeros
        gru: Cells to run
        mode: "bidirectional" (mean of both directions), "forward" or "none"
        overlap: Frames shared with the next window; the returned carry is the
            forward state after the first T - overlap frames

    Returns:
        (aggregated (T, C_8, h, w), carry for the next window)
    """
    if f8_seq.dim() != 4 or f8_seq.shape[0] < 1:
        raise InputValidationError(f"feature sequence must be (T, C, h, w) with T >= 1, got {tuple(f8_seq.shape)}")
    t = f8_seq.shape[0]
    h0 = gru.zero_state(f8_seq) if carry is None else carry
    if mode == "none":
        return f8_seq, h0

    frames = list(f8_seq.unbind(0))
    fwd = _run(gru.forward_cell, frames, h0)
    carry_out = fwd[max(t - overlap, 1) - 1]
    out = torch.stack(fwd, dim=0)
    if mode == "bidirectional":
        bwd = _run(gru.backward_cell, frames[::-1], gru.zero_state(f8_seq))
        out = 0.5 * (out + torch.stack(bwd[::-1], dim=0))
    elif mode != "forward":
        raise InputValidationError(f"unknown temporal mode {mode!r}")
    return out, carry_out


def aggregate_sequence(
    f8_seq: torch.Tensor,
    gru: BiConvGRU,
    window: int = 3,
    overlap: int = 2,
    mode: str = "bidirectional",
) -> torch.Tensor:
    """
    Slide windows of `window` frames with `overlap` shared frames over a clip,
    carrying the forward state. Each frame is taken from the window in which
    it sits closest to the centre, the earlier window on ties.
    """
    t = f8_seq.shape[0]
    if mode == "none":
        return f8_seq
    if t <= window:
        return temporal_aggregate(f8_seq, None, gru, mode)[0]
    step = window - overlap
    starts = list(range(0, t - window + 1, step))
    if starts[-1] + window < t:
        starts.append(t - window)

    centre = window // 2
    out: List[Optional[torch.Tensor]] = [None] * t
    dist: List[Optional[int]] = [None] * t
    carry = None
    for n, s in enumerate(starts):
        # the appended tail window may not continue from the carried state
        if n > 0 and s != starts[n - 1] + step:
            carry = None
        agg, carry = temporal_aggregate(f8_seq[s:s + window], carry, gru, mode, overlap=overlap)
        for k in range(window):
            d = abs(k - centre)
            if dist[s + k] is None or d < dist[s + k]:
                out[s + k] = agg[k]
                dist[s + k] = d
    return torch.stack(out, dim=0)


class DeltaNet(nn.Module):
    """Two conv-BN-ReLU layers and a 1-channel sigmoid head over stacked consecutive features"""

    def __init__(self, channels: int, hidden: int = 32):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(2 * channels, hidden, 3, padding=1, bias=False),
            nn.BatchNorm2d(hidden),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, 3, padding=1, bias=False),
            nn.BatchNorm2d(hidden),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, 1, 3, padding=1),
        )

    def forward(self, enriched: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
        """
        Args:
            enriched: (T, C_8, h, w) features, T >= 2
            size: Full resolution (H, W)

        Returns:
            (T - 1, 1, H, W) change probabilities; entry t compares frames t and t + 1
        """
        if enriched.shape[0] < 2:
            raise InputValidationError("delta prediction needs at least two frames")
        pairs = torch.cat([enriched[:-1], enriched[1:]], dim=1)
        prob = torch.sigmoid(self.body(pairs))
        return F.interpolate(prob, size=size, mode="bilinear", align_corners=False)


def predict_delta(
    enriched_prev: torch.Tensor,
    enriched_cur: torch.Tensor,
    net: DeltaNet,
    size: Tuple[int, int],
    threshold: float = 0.5,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Change map between two frames.

    Returns:
        (probability (H, W), binary (H, W) as float)
    """
    if enriched_prev.shape != enriched_cur.shape:
        raise InputValidationError(
            f"feature shapes differ: {tuple(enriched_prev.shape)} vs {tuple(enriched_cur.shape)}"
        )
    prob = net(torch.stack([enriched_prev, enriched_cur], dim=0), size)[0, 0]
    return prob, binarize_delta(prob, threshold)


def binarize_delta(prob: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    return (prob > threshold).to(prob.dtype)


def _delta_planes(delta: torch.Tensor, shape: torch.Size) -> torch.Tensor:
    t, _, h, w = shape
    if delta.dim() == 4:
        delta = delta[:, 0]
    if delta.shape != (t - 1, h, w):
        raise InputValidationError(f"expected {t - 1} delta maps of {h}x{w}, got {tuple(delta.shape)}")
    return delta.bool().unsqueeze(1)  # (T-1, 1, H, W), shared across instances


def forward_fuse(a_seq: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    """A^f(0) = A(0); A^f(t) = A(t) where Delta(t) else A^f(t - 1)"""
    d = _delta_planes(delta, a_seq.shape)
    out = [a_seq[0]]
    for t in range(1, a_seq.shape[0]):
        out.append(torch.where(d[t - 1], a_seq[t], out[-1]))
    return torch.stack(out, dim=0)


def backward_fuse(a_seq: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    """A^b(T-1) = A(T-1); A^b(t) = A(t) where Delta(t + 1) else A^b(t + 1)"""
    d = _delta_planes(delta, a_seq.shape)
    t_len = a_seq.shape[0]
    out = [a_seq[-1]]
    for t in range(t_len - 2, -1, -1):
        out.append(torch.where(d[t], a_seq[t], out[-1]))
    return torch.stack(out[::-1], dim=0)


def fuse_mattes(a_seq: torch.Tensor, delta: torch.Tensor, mode: str = "bidirectional") -> torch.Tensor:
    """
    Forward/backward matte fusion.

    Args:
        a_seq: (T, N, H, W) per-frame mattes
        delta: (T - 1, [1,] H, W) binary change maps; entry t - 1 compares frames t - 1 and t
        mode: "bidirectional", "forward" or "none"

    Returns:
        (T, N, H, W). Where the two propagations disagree the per-frame value is kept.
    """
    if mode == "none" or a_seq.shape[0] == 1:
        return a_seq
    fwd = forward_fuse(a_seq, delta)
    if mode == "forward":
        return fwd
    if mode != "bidirectional":
        raise InputValidationError(f"unknown fusion mode {mode!r}")
    bwd = backward_fuse(a_seq, delta)
    return torch.where(fwd != bwd, a_seq, fwd)


def delta_ground_truth(gt: torch.Tensor, beta: float = 0.001) -> torch.Tensor:
    """
    Delta_gt(t) = max_i(|A_gt(t - 1, i) - A_gt(t, i)| > beta)

    Args:
        gt: (T, N, H, W), T >= 2

    Returns:
        (T - 1, 1, H, W) float in {0, 1}
    """
    if gt.dim() != 4 or gt.shape[0] < 2:
        raise InputValidationError("delta ground truth needs a (T, N, H, W) clip with T >= 2")
    changed = (gt[1:] - gt[:-1]).abs() > beta
    return changed.any(dim=1, keepdim=True).to(gt.dtype)
