# maggie/schemas.py
from typing import Any, Dict, List, Optional

from pydantic import BaseModel


class MetricEntry(BaseModel):
    per_instance: List[float]
    mean: float
    empty_region: bool = False
    empty_instances: List[int] = []


class ClipReport(BaseModel):
    name: str
    metrics: Dict[str, MetricEntry]


class EvalReport(BaseModel):
    config_hash: str
    checkpoint: Optional[str] = None
    identity: bool = False
    videos: List[ClipReport]
    aggregate: Dict[str, float]


class InstancePlacement(BaseModel):
    asset: str
    scale: float
    offset: List[float]
    drift: List[float]
    depth: int


class SampleManifest(BaseModel):
    name: str
    seed: List[int]
    tier: str
    mask_mode: str
    height: int
    width: int
    frames: int
    background: str
    instances: List[InstancePlacement]
    occlusion: List[float]
    attempts: int


class CheckpointManifest(BaseModel):
    step: int
    config_hash: str
    config: Dict[str, Any]
    version: str


class BenchRow(BaseModel):
    instances: int
    latency_ms: float
    peak_memory_mb: float
    latency_ratio: float
    memory_ratio: float
    sequential_ms: Optional[float] = None
    sequential_ratio: Optional[float] = None
