"""
Evaluation runner: full metric suite per clip plus the aggregate.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch
from rich.console import Console
from rich.table import Table

from .checkpoint import load_checkpoint
from .config import RunConfig
from .metrics import METRIC_KEYS, evaluate_clip
from .model import MaggieNet
from .schemas import ClipReport, EvalReport
from .synth import list_samples, read_sample

logger = logging.getLogger(__name__)


def load_model(
    checkpoint: Path,
    config: RunConfig,
    force: bool = False,
) -> MaggieNet:
    """Model in eval mode with the checkpoint's parameters"""
    model = MaggieNet(config.model)
    load_checkpoint(checkpoint, model, config, force=force)
    return model.to(config.device).eval()


@torch.no_grad()
def predict_clip(model: MaggieNet, frames: np.ndarray, masks: np.ndarray, device: str = "cpu") -> np.ndarray:
    out = model(
        torch.from_numpy(frames).to(device),
        torch.from_numpy(masks.astype(np.float32)).to(device),
        video=True,
    )
    return out.final.clamp(0.0, 1.0).cpu().numpy()


def aggregate_metrics(videos: List[ClipReport]) -> Dict[str, float]:
    """Mean over every (clip, instance) score whose region was non-empty"""
    aggregate: Dict[str, float] = {}
    for key in METRIC_KEYS:
        values = [
            value
            for v in videos
            for i, value in enumerate(v.metrics[key].per_instance)
            if i not in v.metrics[key].empty_instances
        ]
        aggregate[key] = float(np.mean(values)) if values else 0.0
    return aggregate


def evaluate(
    config: RunConfig,
    dataset_root: Path,
    checkpoint: Optional[Path] = None,
    identity: bool = False,
    force: bool = False,
) -> EvalReport:
    """
    Args:
        config: Run configuration (metrics section and architecture)
        dataset_root: Synthesized dataset
        checkpoint: Checkpoint directory; unused with identity
        identity: Score the ground truth against itself
        force: Accept a checkpoint whose config hash differs

    Returns:
        EvalReport with per-clip entries and instance-averaged aggregates
    """
    model = None if identity else load_model(checkpoint, config, force)
    videos: List[ClipReport] = []
    for path in list_samples(dataset_root):
        frames, alphas, masks, manifest = read_sample(path)
        pred = alphas if identity else predict_clip(model, frames, masks, config.device)
        videos.append(ClipReport(name=manifest.name, metrics=evaluate_clip(pred, alphas, config.metrics)))
        logger.debug("evaluated %s", manifest.name)

    aggregate = aggregate_metrics(videos)
    return EvalReport(
        config_hash=config.config_hash(),
        checkpoint=str(checkpoint) if checkpoint is not None else None,
        identity=identity,
        videos=videos,
        aggregate=aggregate,
    )


def print_report(report: EvalReport, console: Optional[Console] = None) -> None:
    console = console or Console()
    table = Table(title="Evaluation")
    table.add_column("metric")
    table.add_column("mean", justify="right")
    for key, value in report.aggregate.items():
        table.add_row(key, f"{value:.4f}")
    console.print(table)
