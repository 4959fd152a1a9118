"""
Checkpoint persistence.

    step_000500/
        model.safetensors   parameters and buffers
        state.pt            optimizer, scheduler, step, rng states
        manifest.json       config, config hash, step, package version
"""

import json
import logging
import shutil
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import torch
from safetensors.torch import load_file, save_file
from torch import nn

from . import __version__
from .config import RunConfig
from .errors import CompatibilityError, InputValidationError
from .schemas import CheckpointManifest

logger = logging.getLogger(__name__)

MODEL_FILE = "model.safetensors"
STATE_FILE = "state.pt"
MANIFEST_FILE = "manifest.json"


def checkpoint_dir(root: Path, step: int) -> Path:
    return Path(root) / f"step_{step:06d}"


def save_checkpoint(
    root: Path,
    step: int,
    model: nn.Module,
    config: RunConfig,
    optimizer: Optional[torch.optim.Optimizer] = None,
    scheduler: Optional[Any] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write a checkpoint directory; files land in a temporary directory first and are renamed into place"""
    final = checkpoint_dir(root, step)
    tmp = final.with_name(final.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)

    tensors = {k: v.detach().cpu().contiguous() for k, v in model.state_dict().items()}
    save_file(tensors, str(tmp / MODEL_FILE), metadata={"step": str(step), "config_hash": config.config_hash()})
    state = {
        "step": step,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "scheduler": scheduler.state_dict() if scheduler is not None else None,
        "torch_rng": torch.get_rng_state(),
        "extra": extra or {},
    }
    torch.save(state, tmp / STATE_FILE)
    manifest = CheckpointManifest(
        step=step,
        config_hash=config.config_hash(),
        config=config.model_dump(mode="json"),
        version=__version__,
    )
    (tmp / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2))

    if final.exists():
        shutil.rmtree(final)
    tmp.rename(final)
    logger.info("saved checkpoint %s", final)
    return final


def read_manifest(path: Path) -> CheckpointManifest:
    path = Path(path)
    if not (path / MANIFEST_FILE).is_file():
        raise InputValidationError(f"{path} is not a checkpoint directory")
    return CheckpointManifest.model_validate_json((path / MANIFEST_FILE).read_text())


def check_compatible(manifest: CheckpointManifest, config: RunConfig, force: bool = False) -> None:
    """
    Raises:
        CompatibilityError: architecture hashes differ and force is not set
    """
    expected = config.config_hash()
    if manifest.config_hash != expected:
        if not force:
            raise CompatibilityError(
                f"checkpoint config hash {manifest.config_hash[:12]} does not match {expected[:12]}"
            )
        logger.warning("loading checkpoint with mismatched config hash (forced)")


def load_checkpoint(
    path: Path,
    model: nn.Module,
    config: Optional[RunConfig] = None,
    optimizer: Optional[torch.optim.Optimizer] = None,
    scheduler: Optional[Any] = None,
    force: bool = False,
    map_location: str = "cpu",
) -> Tuple[CheckpointManifest, Dict[str, Any]]:
    """
    Restore parameters (and optimizer/scheduler when given).

    Returns:
        (manifest, training state dict)
    """
    path = Path(path)
    manifest = read_manifest(path)
    if config is not None:
        check_compatible(manifest, config, force)
    try:
        model.load_state_dict(load_file(str(path / MODEL_FILE), device=map_location))
    except RuntimeError as e:
        raise CompatibilityError(f"checkpoint parameters do not fit the model: {e}") from e
    state = torch.load(path / STATE_FILE, map_location=map_location, weights_only=False)
    if optimizer is not None and state.get("optimizer") is not None:
        optimizer.load_state_dict(state["optimizer"])
    if scheduler is not None and state.get("scheduler") is not None:
        scheduler.load_state_dict(state["scheduler"])
    return manifest, state


def latest_checkpoint(root: Path) -> Optional[Path]:
    found = sorted(p for p in Path(root).glob("step_*") if p.is_dir() and not p.name.endswith(".tmp"))
    return found[-1] if found else None


def write_json(path: Path, data: Dict[str, Any]) -> None:
    """Atomic JSON write"""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True))
    tmp.replace(path)
