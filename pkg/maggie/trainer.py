"""
Training loop.

Steps [0, image_steps) train on single frames with the temporal modules
bypassed; later steps train on clips of `clip_len` frames. The batch for
step k is drawn from default_rng([seed, k]) so a resumed run sees exactly
the batches an uninterrupted one would.
"""

import json
import logging
import math
import random
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch
from tqdm import tqdm

from .checkpoint import latest_checkpoint, load_checkpoint, save_checkpoint
from .config import OptimConfig, RunConfig
from .data import ClipDataset, augment_clip
from .errors import TrainingError
from .losses import total_loss
from .model import MaggieNet

logger = logging.getLogger(__name__)


def seed_everything(seed: int, deterministic: bool = False) -> None:
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False
        torch.backends.cudnn.deterministic = True


def lr_factor(step: int, cfg: OptimConfig) -> float:
    """Multiplier on lr_image: linear warm-up, cosine decay, and the image -> video switch"""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        schedule = (step + 1) / cfg.warmup_steps
    else:
        span = max(cfg.steps - cfg.warmup_steps, 1)
        progress = min((step - cfg.warmup_steps) / span, 1.0)
        schedule = 0.5 * (1.0 + math.cos(math.pi * progress))
    phase = 1.0 if step < cfg.image_steps else cfg.lr_video / cfg.lr_image
    return phase * schedule


class Trainer:
    """
    Args:
        config: Run configuration
        dataset_root: Directory written by `maggie synth`
        out_dir: Checkpoints and metrics.jsonl go here
    """

    def __init__(self, config: RunConfig, dataset_root: Path, out_dir: Path):
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        seed_everything(config.seed, config.deterministic)
        self.device = torch.device(config.device)
        self.dataset = ClipDataset(dataset_root)
        self.model = MaggieNet(config.model).to(self.device)
        opt = config.optim
        self.optimizer = torch.optim.AdamW(self.model.parameters(), lr=opt.lr_image, weight_decay=opt.weight_decay)
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(self.optimizer, lambda s: lr_factor(s, opt))
        self.step = 0
        self.metrics_path = self.out_dir / "metrics.jsonl"

    def resume(self, path: Optional[Path] = None, force: bool = False) -> int:
        """Restore from `path` or the newest checkpoint in out_dir; returns the restored step"""
        path = path or latest_checkpoint(self.out_dir / "checkpoints")
        if path is None:
            return self.step
        _, state = load_checkpoint(path, self.model, self.config, self.optimizer, self.scheduler, force=force)
        self.step = int(state["step"])
        if state.get("torch_rng") is not None:
            torch.set_rng_state(state["torch_rng"])
        logger.info("resumed from %s at step %d", path, self.step)
        return self.step

    def train_step(self, step: int) -> Dict[str, float]:
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, step])
        image_mode = step < cfg.optim.image_steps
        indices = rng.integers(0, len(self.dataset), size=cfg.optim.batch_size)

        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        totals: Dict[str, float] = {}
        sparsity: Dict[int, float] = {}
        for idx in indices:
            clip = augment_clip(self.dataset[int(idx)], rng, cfg.optim, image_mode).to(self.device)
            out = self.model(clip.frames, clip.masks, video=not image_mode)
            loss, terms = total_loss(out, clip.alphas, cfg.loss, video=not image_mode)
            if not torch.isfinite(loss):
                dump = self._dump(step, clip, terms)
                raise TrainingError(f"non-finite loss at step {step}: {terms}", dump_path=dump)
            (loss / len(indices)).backward()
            for k, v in terms.items():
                totals[k] = totals.get(k, 0.0) + v / len(indices)
            for s, v in out.sparsity.items():
                sparsity[s] = sparsity.get(s, 0.0) + v / len(indices)

        if cfg.optim.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.optim.grad_clip)
        self.optimizer.step()
        self.scheduler.step()

        record = {
            "step": step,
            "mode": "image" if image_mode else "video",
            "lr": self.optimizer.param_groups[0]["lr"],
            **totals,
            **{f"active_{s}": v for s, v in sorted(sparsity.items())},
        }
        with self.metrics_path.open("a") as fh:
            fh.write(json.dumps(record) + "\n")
        return record

    def _dump(self, step: int, clip, terms: Dict[str, float]) -> Path:
        path = self.out_dir / f"nan_step_{step:06d}.pt"
        torch.save({"step": step, "name": clip.name, "frames": clip.frames.cpu(), "alphas": clip.alphas.cpu(),
                    "masks": clip.masks.cpu(), "terms": terms}, path)
        logger.error("non-finite loss at step %d; batch written to %s", step, path)
        return path

    def fit(self, steps: Optional[int] = None) -> List[Dict[str, float]]:
        """Train until `steps` (default optim.steps); checkpoints every optim.checkpoint_every and at the end"""
        cfg = self.config.optim
        end = cfg.steps if steps is None else steps
        history = []
        for step in tqdm(range(self.step, end), desc="train", initial=self.step, total=end):
            record = self.train_step(step)
            history.append(record)
            self.step = step + 1
            if self.step % cfg.checkpoint_every == 0 and self.step != end:
                self.save()
        if history:
            self.save()
            logger.info("finished at step %d, loss %.4f", self.step, history[-1]["total"])
        return history

    def save(self) -> Path:
        return save_checkpoint(
            self.out_dir / "checkpoints",
            self.step,
            self.model,
            self.config,
            self.optimizer,
            self.scheduler,
        )
