"""
Latency and peak-memory scaling with the number of instances.

Every instance count runs one joint forward pass over all instances; the
contrast loop runs N sequential single-instance passes.
"""

import logging
import statistics
import time
from typing import Callable, List, Sequence

import torch
from rich.console import Console
from rich.table import Table
from torch.profiler import ProfilerActivity, profile

from .model import MaggieNet
from .schemas import BenchRow

logger = logging.getLogger(__name__)


def stripe_masks(n: int, resolution: int, device: str = "cpu") -> torch.Tensor:
    """(1, n, R, R) one-hot vertical stripes"""
    cols = torch.arange(resolution, device=device) * n // resolution
    masks = (cols[None, :] == torch.arange(n, device=device)[:, None]).float()
    return masks[:, None, :].expand(n, resolution, resolution).unsqueeze(0).contiguous()


def median_latency(fn: Callable[[], object], runs: int, warmup: int, device: str) -> float:
    """Median wall time in milliseconds"""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(runs):
        if device.startswith("cuda"):
            torch.cuda.synchronize()
        start = time.perf_counter()
        fn()
        if device.startswith("cuda"):
            torch.cuda.synchronize()
        times.append((time.perf_counter() - start) * 1e3)
    return statistics.median(times)


def peak_memory_mb(fn: Callable[[], object], device: str) -> float:
    """Peak allocator usage during one call (CUDA statistics, or profiler memory events on CPU)"""
    if device.startswith("cuda"):
        torch.cuda.synchronize()
        torch.cuda.reset_peak_memory_stats()
        base = torch.cuda.memory_allocated()
        fn()
        torch.cuda.synchronize()
        return (torch.cuda.max_memory_allocated() - base) / 2 ** 20
    with profile(activities=[ProfilerActivity.CPU], profile_memory=True) as prof:
        fn()
    events = sorted(prof.events(), key=lambda e: e.time_range.start)
    current = peak = 0
    for e in events:
        current += e.self_cpu_memory_usage
        peak = max(peak, current)
    return peak / 2 ** 20


def _ratio(value: float, base) -> float:
    return value / base if base else 1.0


@torch.no_grad()
def benchmark(
    model: MaggieNet,
    resolution: int = 256,
    instance_counts: Sequence[int] = (1, 2, 4, 8),
    runs: int = 20,
    warmup: int = 3,
    device: str = "cpu",
    sequential: bool = True,
) -> List[BenchRow]:
    """
    Returns:
        One BenchRow per instance count; ratios (sequential ones included) are relative to the
        joint latency and memory of the first count
    """
    model = model.to(device).eval()
    torch.manual_seed(0)
    frames = torch.rand(1, 3, resolution, resolution, device=device)
    rows: List[BenchRow] = []
    for n in instance_counts:
        masks = stripe_masks(n, resolution, device)

        def joint(masks=masks):
            model(frames, masks, video=False)

        def one_by_one(masks=masks, n=n):
            for i in range(n):
                model(frames, masks[:, i:i + 1], video=False)

        latency = median_latency(joint, runs, warmup, device)
        memory = peak_memory_mb(joint, device)
        seq = median_latency(one_by_one, runs, warmup, device) if sequential else None
        base = rows[0] if rows else None
        rows.append(BenchRow(
            instances=n,
            latency_ms=latency,
            peak_memory_mb=memory,
            latency_ratio=_ratio(latency, base.latency_ms if base else None),
            memory_ratio=_ratio(memory, base.peak_memory_mb if base else None),
            sequential_ms=seq,
            sequential_ratio=None if seq is None else _ratio(seq, base.latency_ms if base else None),
        ))
        logger.info("N=%d latency %.2f ms, peak %.1f MB", n, latency, memory)
    return rows


def scaling_failures(
    rows: Sequence[BenchRow],
    max_ratio: float = 1.6,
    min_sequential_ratio: float = 4.0,
) -> List[str]:
    """
    Compare the largest instance count against the first row.

    Returns:
        One message per violated bound; empty when the joint pass keeps
        latency and memory within max_ratio and the sequential loop exceeds
        min_sequential_ratio
    """
    if len(rows) < 2:
        return []
    last = rows[-1]
    failures = []
    if last.latency_ratio > max_ratio:
        failures.append(f"N={last.instances} latency ratio {last.latency_ratio:.2f} > {max_ratio}")
    if last.memory_ratio > max_ratio:
        failures.append(f"N={last.instances} memory ratio {last.memory_ratio:.2f} > {max_ratio}")
    if last.sequential_ratio is not None and last.sequential_ratio <= min_sequential_ratio:
        failures.append(
            f"N={last.instances} sequential ratio {last.sequential_ratio:.2f} <= {min_sequential_ratio}"
        )
    return failures


def print_bench(rows: Sequence[BenchRow], console: Console = None) -> None:
    console = console or Console()
    table = Table(title="Instance scaling")
    for col in ("N", "latency ms", "ratio", "peak MB", "ratio", "sequential ms", "ratio"):
        table.add_column(col, justify="right")
    for r in rows:
        table.add_row(
            str(r.instances),
            f"{r.latency_ms:.2f}",
            f"{r.latency_ratio:.2f}",
            f"{r.peak_memory_mb:.1f}",
            f"{r.memory_ratio:.2f}",
            "-" if r.sequential_ms is None else f"{r.sequential_ms:.2f}",
            "-" if r.sequential_ratio is None else f"{r.sequential_ratio:.2f}",
        )
    console.print(table)
