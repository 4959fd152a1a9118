"""
Multi-instance dataset synthesis.

Foregrounds are composited back-to-front over a background; every instance's
ground truth is its occlusion-adjusted alpha. Guidance masks are perturbed
binarized alphas (training) or the first-frame mask carried along the known
motion (evaluation). Video clips come in three occlusion tiers.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
from tqdm import tqdm

from .config import DataConfig
from .errors import GenerationError, InputValidationError
from .filters import dilate_np, erode_np
from .schemas import InstancePlacement, SampleManifest

logger = logging.getLogger(__name__)

# Occlusion range per tier (maximum pairwise IoU per frame)
TIERS: Dict[str, Tuple[float, float]] = {
    "easy": (0.0, 0.0),
    "medium": (0.05, 0.50),
    "hard": (0.50, 0.85),
}
# Centre distance (in units of the instance radius) tried for each tier
_SHIFT_RANGES = {"medium": (0.5, 1.6), "hard": (0.05, 0.6)}
IMAGE_MAX_IOU = 0.30
ASSET_SIZE = 96


@dataclass
class ForegroundAsset:
    rgb: np.ndarray    # (h, w, 3) float in [0, 1]
    alpha: np.ndarray  # (h, w) float in [0, 1]
    name: str = ""

    def __post_init__(self):
        if self.rgb.shape[:2] != self.alpha.shape:
            raise InputValidationError(f"asset {self.name!r}: rgb {self.rgb.shape} and alpha {self.alpha.shape} differ")


@dataclass
class Placement:
    asset: str
    scale: float
    offset: Tuple[float, float]         # top-left (y, x) at frame 0
    drift: Tuple[float, float] = (0.0, 0.0)  # pixels per frame
    depth: int = 0                      # 0 is the backmost layer

    def offset_at(self, t: int) -> Tuple[float, float]:
        return self.offset[0] + self.drift[0] * t, self.offset[1] + self.drift[1] * t


@dataclass
class SceneSpec:
    background: str
    placements: List[Placement]
    frames: int
    height: int
    width: int
    tier: str


@dataclass
class SynthesizedSample:
    frames: np.ndarray   # (T, 3, H, W) float32
    alphas: np.ndarray   # (T, N, H, W) float32, occlusion adjusted
    masks: np.ndarray    # (T, N, H, W) uint8 in {0, 1}
    manifest: SampleManifest
    occlusion: List[float] = field(default_factory=list)


# ---------------------------------------------------------------- assets


def procedural_foreground(rng: np.random.Generator, size: int = ASSET_SIZE, name: str = "blob") -> ForegroundAsset:
    """Soft-edged ellipse with a few semi-transparent strands and a textured colour"""
    mask = np.zeros((size, size), np.float32)
    centre = (size // 2, size // 2)
    major = int(size * rng.uniform(0.28, 0.38))
    minor = int(major * rng.uniform(0.7, 1.0))
    angle = float(rng.uniform(0, 180))
    cv2.ellipse(mask, centre, (major, minor), angle, 0, 360, 1.0, -1)

    strands = np.zeros_like(mask)
    for _ in range(int(rng.integers(3, 8))):
        theta = rng.uniform(0, 2 * np.pi)
        r0 = major * 0.8
        r1 = major * rng.uniform(1.05, 1.35)
        p0 = (int(centre[0] + r0 * np.cos(theta)), int(centre[1] + r0 * np.sin(theta)))
        p1 = (int(centre[0] + r1 * np.cos(theta)), int(centre[1] + r1 * np.sin(theta)))
        cv2.line(strands, p0, p1, float(rng.uniform(0.3, 0.7)), 1)

    feathered = cv2.GaussianBlur(mask, (0, 0), sigmaX=float(rng.uniform(1.0, 2.5)))
    # stretch so the interior is exactly 1 and the exterior exactly 0
    alpha = np.clip((np.maximum(feathered, strands) - 0.02) / 0.96, 0.0, 1.0)

    base = rng.uniform(0.1, 0.9, size=3)
    noise = cv2.resize(rng.normal(0, 0.15, size=(8, 8, 3)).astype(np.float32), (size, size))
    rgb = np.clip(base[None, None, :] + noise, 0.0, 1.0).astype(np.float32)
    return ForegroundAsset(rgb=rgb, alpha=alpha.astype(np.float32), name=name)


def procedural_background(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Linear colour gradient plus low-frequency noise, (H, W, 3) in [0, 1]"""
    c0, c1 = rng.uniform(0, 1, size=3), rng.uniform(0, 1, size=3)
    ramp = np.linspace(0.0, 1.0, width, dtype=np.float32)[None, :, None]
    grad = c0 * (1 - ramp) + c1 * ramp
    noise = cv2.resize(rng.normal(0, 0.1, size=(6, 6, 3)).astype(np.float32), (width, height))
    return np.clip(np.broadcast_to(grad, (height, width, 3)) + noise, 0.0, 1.0).astype(np.float32)


def load_asset_store(root: Path) -> Tuple[Dict[str, ForegroundAsset], Dict[str, np.ndarray]]:
    """
    Read `fg/<id>/rgb.png` + `fg/<id>/alpha.png` (16-bit) and `bg/<id>.png`.

    Raises:
        InputValidationError: missing directory or unreadable image
    """
    root = Path(root)
    if not (root / "fg").is_dir() or not (root / "bg").is_dir():
        raise InputValidationError(f"asset store {root} needs fg/ and bg/ directories")
    fgs = {}
    for d in sorted(p for p in (root / "fg").iterdir() if p.is_dir()):
        rgb = cv2.imread(str(d / "rgb.png"), cv2.IMREAD_COLOR)
        alpha = cv2.imread(str(d / "alpha.png"), cv2.IMREAD_UNCHANGED)
        if rgb is None or alpha is None:
            raise InputValidationError(f"unreadable foreground asset {d}")
        fgs[d.name] = ForegroundAsset(
            rgb=cv2.cvtColor(rgb, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0,
            alpha=alpha.astype(np.float32) / _max_value(alpha),
            name=d.name,
        )
    bgs = {}
    for p in sorted((root / "bg").glob("*.png")):
        img = cv2.imread(str(p), cv2.IMREAD_COLOR)
        if img is None:
            raise InputValidationError(f"unreadable background {p}")
        bgs[p.stem] = cv2.cvtColor(img, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
    if not fgs or not bgs:
        raise InputValidationError(f"asset store {root} is empty")
    return fgs, bgs


def _max_value(img: np.ndarray) -> float:
    return 65535.0 if img.dtype == np.uint16 else 255.0


# ---------------------------------------------------------------- compositing


def place_layer(asset: ForegroundAsset, scale: float, offset: Tuple[float, float], height: int, width: int):
    """
    Scale and translate an asset onto an (H, W) canvas.

    Returns:
        (rgb (H, W, 3), alpha (H, W))

    Raises:
        InputValidationError: the placed asset does not intersect the canvas
    """
    h, w = asset.alpha.shape
    y0, x0 = offset
    if y0 >= height or x0 >= width or y0 + h * scale <= 0 or x0 + w * scale <= 0:
        raise InputValidationError(f"placement {offset} at scale {scale:.3f} is outside the {height}x{width} canvas")
    m = np.array([[scale, 0.0, x0], [0.0, scale, y0]], np.float32)
    rgb = cv2.warpAffine(asset.rgb, m, (width, height), flags=cv2.INTER_LINEAR, borderValue=0)
    alpha = cv2.warpAffine(asset.alpha, m, (width, height), flags=cv2.INTER_LINEAR, borderValue=0)
    return rgb, np.clip(alpha, 0.0, 1.0)


def composite(layers: Sequence[Tuple[np.ndarray, np.ndarray]], background: np.ndarray):
    """
    Composite (rgb, alpha) layers ordered back-to-front.

    image <- a_i F_i + (1 - a_i) image, and the effective alpha of every layer
    behind i is scaled by (1 - a_i).

    Returns:
        (frame (H, W, 3), effective alphas (L, H, W) in layer order)
    """
    image = background.astype(np.float64).copy()
    effective: List[np.ndarray] = []
    for rgb, alpha in layers:
        if rgb.shape != background.shape or alpha.shape != background.shape[:2]:
            raise InputValidationError(f"layer {rgb.shape}/{alpha.shape} does not fit background {background.shape}")
        a = alpha.astype(np.float64)
        image = a[..., None] * rgb + (1 - a[..., None]) * image
        effective = [e * (1 - a) for e in effective]
        effective.append(a)
    h, w = background.shape[:2]
    return image, (np.stack(effective) if effective else np.zeros((0, h, w)))


# ---------------------------------------------------------------- masks


def perturb_mask(
    alpha: np.ndarray,
    rng: np.random.Generator,
    kernel_range: Tuple[int, int] = (3, 30),
    dropout: float = 0.1,
    ops: Sequence[str] = ("dilate", "erode"),
) -> np.ndarray:
    """
    Binarize at 0.5, then dilate or erode with an odd square kernel drawn from
    `kernel_range`; with probability `dropout` the mask is dropped entirely.

    Returns:
        bool (H, W)
    """
    mask = alpha >= 0.5
    if rng.random() < dropout:
        return np.zeros_like(mask)
    op = ops[int(rng.integers(len(ops)))]
    lo, hi = kernel_range
    sizes = [k for k in range(lo, hi + 1) if k % 2 == 1] or [lo]
    k = sizes[int(rng.integers(len(sizes)))]
    if op == "dilate":
        return dilate_np(mask, k)
    if op == "erode":
        return erode_np(mask, k)
    raise InputValidationError(f"unknown mask perturbation {op!r}")


def resolve_conflicts(masks: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """Give every pixel claimed by several masks to the claimant with the larger alpha"""
    masks = masks.astype(bool)
    if masks.shape[0] < 2:
        return masks
    claimed = np.where(masks, alphas, -1.0)
    winner = np.argmax(claimed, axis=0)
    one_hot = np.arange(masks.shape[0])[:, None, None] == winner[None]
    return masks & one_hot


def measure_occlusion(masks: np.ndarray) -> float:
    """Maximum pairwise IoU over instance supports (N, H, W); 0 for fewer than two"""
    masks = masks.astype(bool)
    n = masks.shape[0]
    best = 0.0
    for a in range(n):
        for b in range(a + 1, n):
            union = np.logical_or(masks[a], masks[b]).sum()
            if union:
                best = max(best, np.logical_and(masks[a], masks[b]).sum() / union)
    return float(best)


# ---------------------------------------------------------------- scenes


def _supports(spec: SceneSpec, assets: Dict[str, ForegroundAsset], t: int) -> np.ndarray:
    return np.stack([
        place_layer(assets[p.asset], p.scale, p.offset_at(t), spec.height, spec.width)[1] >= 0.5
        for p in spec.placements
    ])


def _inside(p: Placement, size: int, t_last: int, height: int, width: int) -> bool:
    extent = size * p.scale
    for t in (0, t_last):
        y, x = p.offset_at(t)
        if y < 0 or x < 0 or y + extent > height or x + extent > width:
            return False
    return True


def _sample_placements(
    tier: str,
    names: List[str],
    rng: np.random.Generator,
    cfg: DataConfig,
    frames: int,
) -> List[Placement]:
    h, w = cfg.height, cfg.width
    n = len(names)
    depth = rng.permutation(n)
    size = ASSET_SIZE
    if tier in ("easy", "image"):
        placements = []
        for k, name in enumerate(names):
            scale = rng.uniform(0.3, 0.45) * min(h, w) / size
            extent = size * scale
            drift = rng.uniform(-cfg.max_drift, cfg.max_drift, size=2) if frames > 1 else np.zeros(2)
            travel = drift * (frames - 1)
            lo = np.maximum(0.0, -travel)
            hi = np.array([h - extent, w - extent]) - np.maximum(0.0, travel)
            if np.any(hi < lo):
                drift, lo, hi = np.zeros(2), np.zeros(2), np.array([h - extent, w - extent])
            offset = rng.uniform(lo, hi)
            placements.append(Placement(name, float(scale), tuple(offset), tuple(drift), int(depth[k])))
        return placements

    # medium / hard: instances move as a group around instance 0
    lo, hi = _SHIFT_RANGES[tier]
    scale = rng.uniform(0.4, 0.55) * min(h, w) / size
    extent = size * scale
    radius = extent * 0.33
    drift = tuple(rng.uniform(-cfg.max_drift, cfg.max_drift, size=2)) if frames > 1 else (0.0, 0.0)
    anchor = rng.uniform(0, [h - extent, w - extent])
    placements = [Placement(names[0], float(scale), tuple(anchor), drift, int(depth[0]))]
    for k in range(1, n):
        theta = rng.uniform(0, 2 * np.pi)
        dist = rng.uniform(lo, hi) * radius
        offset = (anchor[0] + dist * np.sin(theta), anchor[1] + dist * np.cos(theta))
        placements.append(Placement(names[k], float(scale), offset, drift, int(depth[k])))
    return placements


def plan_scene(
    tier: str,
    assets: Dict[str, ForegroundAsset],
    backgrounds: Dict[str, np.ndarray],
    rng: np.random.Generator,
    cfg: DataConfig,
) -> Tuple[SceneSpec, List[float], int]:
    """
    Rejection-sample placements until every frame satisfies the tier.

    Returns:
        (scene, per-frame occlusion, attempts used)

    Raises:
        GenerationError: no valid scene within cfg.max_retries attempts
    """
    frames = 1 if tier == "image" else cfg.frames
    bg_names = sorted(backgrounds)
    fg_names = sorted(assets)
    if tier == "image":
        n_default = int(rng.integers(2, 6))
    elif tier == "easy":
        n_default = int(rng.integers(2, 4))
    else:
        n_default = 2
    n = cfg.num_instances or n_default
    lo, hi = TIERS.get(tier, (0.0, IMAGE_MAX_IOU))
    worst = []
    for attempt in range(1, cfg.max_retries + 1):
        names = [fg_names[int(k)] for k in rng.choice(len(fg_names), size=n, replace=len(fg_names) < n)]
        placements = _sample_placements(tier, names, rng, cfg, frames)
        if not all(_inside(p, ASSET_SIZE, frames - 1, cfg.height, cfg.width) for p in placements):
            continue
        spec = SceneSpec(
            background=bg_names[int(rng.integers(len(bg_names)))],
            placements=placements,
            frames=frames,
            height=cfg.height,
            width=cfg.width,
            tier=tier,
        )
        occlusion = []
        for t in range(frames):
            occlusion.append(measure_occlusion(_supports(spec, assets, t)))
            if not lo <= occlusion[-1] <= hi:
                break
        else:
            return spec, occlusion, attempt
        worst.append(occlusion[-1])
    raise GenerationError(
        f"could not place {n} instances for tier {tier!r} in {cfg.max_retries} attempts",
        diagnostics={"tier": tier, "range": [lo, hi], "rejected_occlusions": worst[-10:]},
    )


def render_scene(
    spec: SceneSpec,
    assets: Dict[str, ForegroundAsset],
    backgrounds: Dict[str, np.ndarray],
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns:
        (frames (T, H, W, 3) float64, occlusion-adjusted alphas (T, N, H, W) in instance order)
    """
    bg = backgrounds[spec.background]
    if bg.shape[:2] != (spec.height, spec.width):
        bg = cv2.resize(bg, (spec.width, spec.height), interpolation=cv2.INTER_CUBIC)
    order = sorted(range(len(spec.placements)), key=lambda k: spec.placements[k].depth)
    frames, alphas = [], []
    for t in range(spec.frames):
        layers = [
            place_layer(assets[spec.placements[k].asset], spec.placements[k].scale,
                        spec.placements[k].offset_at(t), spec.height, spec.width)
            for k in order
        ]
        image, effective = composite(layers, bg)
        inst = np.empty_like(effective)
        inst[order] = effective
        frames.append(image)
        alphas.append(inst)
    return np.stack(frames), np.stack(alphas)


def _shift(mask: np.ndarray, dy: float, dx: float) -> np.ndarray:
    m = np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]], np.float32)
    h, w = mask.shape
    return cv2.warpAffine(mask.astype(np.float32), m, (w, h), flags=cv2.INTER_NEAREST, borderValue=0) > 0.5


def guidance_masks(
    alphas: np.ndarray,
    spec: SceneSpec,
    rng: np.random.Generator,
    cfg: DataConfig,
    mode: str = "train",
) -> np.ndarray:
    """
    Training: perturb every frame's alpha independently.
    Evaluation: carry the frame-0 binarized alpha along the known drift, then
    perturb lightly without dropout.

    Returns:
        uint8 (T, N, H, W), at most one instance per pixel
    """
    t_len, n = alphas.shape[:2]
    out = np.zeros(alphas.shape, np.uint8)
    for t in range(t_len):
        planes = []
        for i in range(n):
            if mode == "eval":
                dy, dx = spec.placements[i].drift
                carried = _shift(alphas[0, i] >= 0.5, dy * t, dx * t)
                planes.append(perturb_mask(carried.astype(np.float32), rng, (1, 5), 0.0))
            else:
                planes.append(perturb_mask(alphas[t, i], rng, tuple(cfg.kernel_range), cfg.dropout))
        out[t] = resolve_conflicts(np.stack(planes), alphas[t])
    return out


def _manifest(name, seed, spec: SceneSpec, occlusion, attempts, mask_mode) -> SampleManifest:
    return SampleManifest(
        name=name,
        seed=list(seed),
        tier=spec.tier,
        mask_mode=mask_mode,
        height=spec.height,
        width=spec.width,
        frames=spec.frames,
        background=spec.background,
        instances=[
            InstancePlacement(asset=p.asset, scale=p.scale, offset=list(p.offset), drift=list(p.drift), depth=p.depth)
            for p in spec.placements
        ],
        occlusion=occlusion,
        attempts=attempts,
    )


def _procedural_pool(rng: np.random.Generator, cfg: DataConfig, count: int = 6):
    assets = {f"blob{k}": procedural_foreground(rng, name=f"blob{k}") for k in range(count)}
    backgrounds = {f"bg{k}": procedural_background(rng, cfg.height, cfg.width) for k in range(2)}
    return assets, backgrounds


def synthesize_video(
    cfg: DataConfig,
    rng: np.random.Generator,
    assets: Optional[Dict[str, ForegroundAsset]] = None,
    backgrounds: Optional[Dict[str, np.ndarray]] = None,
    name: str = "clip",
    seed: Sequence[int] = (),
) -> SynthesizedSample:
    """One clip of cfg.frames frames whose occlusion stays inside the tier range on every frame"""
    if cfg.tier not in TIERS:
        raise InputValidationError(f"{cfg.tier!r} is not a video tier")
    return _synthesize(cfg, cfg.tier, rng, assets, backgrounds, name, seed)


def synthesize_image(
    cfg: DataConfig,
    rng: np.random.Generator,
    assets: Optional[Dict[str, ForegroundAsset]] = None,
    backgrounds: Optional[Dict[str, np.ndarray]] = None,
    name: str = "image",
    seed: Sequence[int] = (),
) -> SynthesizedSample:
    """2-5 instances, single frame, pairwise IoU at most 0.30"""
    return _synthesize(cfg, "image", rng, assets, backgrounds, name, seed)


def _synthesize(cfg, tier, rng, assets, backgrounds, name, seed) -> SynthesizedSample:
    if assets is None or backgrounds is None:
        assets, backgrounds = _procedural_pool(rng, cfg)
    spec, occlusion, attempts = plan_scene(tier, assets, backgrounds, rng, cfg)
    frames, alphas = render_scene(spec, assets, backgrounds)
    masks = guidance_masks(alphas, spec, rng, cfg, cfg.mask_mode)
    return SynthesizedSample(
        frames=frames.transpose(0, 3, 1, 2).astype(np.float32),
        alphas=alphas.astype(np.float32),
        masks=masks,
        manifest=_manifest(name, seed, spec, occlusion, attempts, cfg.mask_mode),
        occlusion=occlusion,
    )


# ---------------------------------------------------------------- disk layout


def write_sample(sample: SynthesizedSample, out_dir: Path) -> Path:
    """frames/%04d.png, alpha/<inst>/%04d.png (16-bit), mask/<inst>/%04d.png, manifest.json"""
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    t_len, n = sample.alphas.shape[:2]
    for i in range(n):
        (out_dir / "alpha" / f"{i:02d}").mkdir(parents=True, exist_ok=True)
        (out_dir / "mask" / f"{i:02d}").mkdir(parents=True, exist_ok=True)
    for t in range(t_len):
        rgb = np.clip(sample.frames[t].transpose(1, 2, 0) * 255.0 + 0.5, 0, 255).astype(np.uint8)
        cv2.imwrite(str(out_dir / "frames" / f"{t:04d}.png"), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))
        for i in range(n):
            cv2.imwrite(str(out_dir / "alpha" / f"{i:02d}" / f"{t:04d}.png"), to_png16(sample.alphas[t, i]))
            cv2.imwrite(str(out_dir / "mask" / f"{i:02d}" / f"{t:04d}.png"), sample.masks[t, i] * 255)
    (out_dir / "manifest.json").write_text(sample.manifest.model_dump_json(indent=2))
    return out_dir


def to_png16(alpha: np.ndarray) -> np.ndarray:
    return np.round(np.clip(alpha, 0.0, 1.0) * 65535.0).astype(np.uint16)


def read_frames(directory: Path) -> np.ndarray:
    """(T, 3, H, W) float32 from a directory of PNG frames"""
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise InputValidationError(f"no frames in {directory}")
    frames = []
    for p in paths:
        img = cv2.imread(str(p), cv2.IMREAD_COLOR)
        if img is None:
            raise InputValidationError(f"unreadable frame {p}")
        frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB).transpose(2, 0, 1).astype(np.float32) / 255.0)
    return np.stack(frames)


def read_instance_planes(directory: Path) -> np.ndarray:
    """(T, N, H, W) float32 from <directory>/<inst>/%04d.png, normalised by bit depth"""
    inst_dirs = sorted(p for p in Path(directory).iterdir() if p.is_dir())
    if not inst_dirs:
        raise InputValidationError(f"no instance directories in {directory}")
    per_inst = []
    for d in inst_dirs:
        planes = []
        for p in sorted(d.glob("*.png")):
            img = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
            if img is None:
                raise InputValidationError(f"unreadable image {p}")
            planes.append(img.astype(np.float32) / _max_value(img))
        per_inst.append(np.stack(planes))
    lengths = {len(x) for x in per_inst}
    if len(lengths) != 1:
        raise InputValidationError(f"instances in {directory} have different frame counts {sorted(lengths)}")
    return np.stack(per_inst, axis=1)


def read_sample(sample_dir: Path) -> Tuple[np.ndarray, np.ndarray, np.ndarray, SampleManifest]:
    """(frames, alphas, masks, manifest) for a sample written by write_sample"""
    sample_dir = Path(sample_dir)
    manifest = SampleManifest.model_validate_json((sample_dir / "manifest.json").read_text())
    frames = read_frames(sample_dir / "frames")
    alphas = read_instance_planes(sample_dir / "alpha")
    masks = (read_instance_planes(sample_dir / "mask") > 0.5).astype(np.uint8)
    return frames, alphas, masks, manifest


def list_samples(root: Path) -> List[Path]:
    root = Path(root)
    if not root.is_dir():
        raise InputValidationError(f"dataset directory {root} does not exist")
    return sorted(p for p in root.iterdir() if (p / "manifest.json").is_file())


def generate_dataset(cfg: DataConfig, seed: int, out_root: Optional[Path] = None) -> List[Path]:
    """
    Write cfg.count samples under out_root (default cfg.root). Sample k uses its
    own rng stream spawned from `seed`, so output is identical across runs.
    """
    out_root = Path(out_root or cfg.root)
    out_root.mkdir(parents=True, exist_ok=True)
    assets = backgrounds = None
    if cfg.asset_root is not None:
        assets, backgrounds = load_asset_store(cfg.asset_root)
    children = np.random.SeedSequence(seed).spawn(cfg.count)
    written = []
    for k, child in enumerate(tqdm(children, desc=f"synth {cfg.tier}", disable=cfg.count == 0)):
        rng = np.random.default_rng(child)
        name = f"{cfg.tier}_{k:04d}"
        sample_seed = (seed, k)
        if cfg.tier == "image":
            sample = synthesize_image(cfg, rng, assets, backgrounds, name, sample_seed)
        else:
            sample = synthesize_video(cfg, rng, assets, backgrounds, name, sample_seed)
        written.append(write_sample(sample, out_root / name))
        logger.debug("wrote %s after %d placement attempts", name, sample.manifest.attempts)
    summary = {
        "tier": cfg.tier,
        "seed": seed,
        "count": cfg.count,
        "samples": [p.name for p in written],
        "config": cfg.model_dump(mode="json"),
    }
    (out_root / "dataset.json").write_text(json.dumps(summary, indent=2))
    logger.info("synthesized %d %s samples in %s", len(written), cfg.tier, out_root)
    return written
