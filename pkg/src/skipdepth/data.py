"""Synthetic scenes, dataset list files and 32-divisible padding."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError
from .fileio import read_depth, read_image

DROPOUT = 0.05
MIN_EXTENT = 192  # the 1/32 map must be 6 pixels wide for pyramid pooling
GROUND_ALBEDO = (0.45, 0.65, 0.35)


@dataclass
class DepthSample:
    image: np.ndarray  # [H, W, 3] in [0, 1]
    depth: np.ndarray  # [H, W] metres
    mask: np.ndarray  # [H, W] bool
    id: str
    original_size: tuple[int, int] | None = None

    @property
    def size(self) -> tuple[int, int]:
        return self.depth.shape


def shade(depth: np.ndarray, d_max: float) -> np.ndarray:
    """Brightness in [0, 1]: 1 at 0.1*d_max, 0 at d_max, linear in log depth."""
    return np.clip(np.log(d_max / depth) / np.log(10.0), 0.0, 1.0)


def _scene(rng: np.random.Generator, h: int, w: int, d_max: float):
    near = d_max * rng.uniform(0.1, 0.2)
    far = d_max * rng.uniform(0.8, 1.0)
    # ground plane: inverse depth linear in image row, far at the top
    t = (np.arange(h) + 0.5) / h
    row_depth = 1.0 / (1.0 / far + (1.0 / near - 1.0 / far) * t)
    depth = np.repeat(row_depth[:, None], w, axis=1)
    albedo = np.broadcast_to(np.array(GROUND_ALBEDO), (h, w, 3)).copy()

    boxes = []
    for _ in range(rng.integers(2, 6)):
        bh = int(rng.integers(h // 6, h // 2))
        bw = int(rng.integers(w // 8, w // 3))
        top = int(rng.integers(0, h - bh))
        left = int(rng.integers(0, w - bw))
        # standing on the ground: depth of the plane at the bottom edge
        z = float(np.clip(row_depth[top + bh - 1] * rng.uniform(0.9, 1.0), 0.1 * d_max, d_max))
        boxes.append((z, top, left, bh, bw, rng.uniform(0.3, 1.0, size=3)))
    for z, top, left, bh, bw, colour in sorted(boxes, key=lambda b: -b[0]):
        depth[top : top + bh, left : left + bw] = z
        albedo[top : top + bh, left : left + bw] = colour
    return depth, albedo


def render_image(depth: np.ndarray, albedo: np.ndarray, d_max: float) -> np.ndarray:
    """Channels 0-1 are albedo-modulated shading; channel 2 is pure shading."""
    s = shade(depth, d_max)
    image = np.empty(depth.shape + (3,))
    image[..., :2] = albedo[..., :2] * (0.25 + 0.75 * s[..., None])
    image[..., 2] = s
    return image


def synth_dataset(seed: int, count: int, size: tuple[int, int] = (224, 224), d_min: float = 1e-3, d_max: float = 10.0):
    """Deterministic ground-plane scenes with box occluders.

    Depth lies in [0.1*d_max, d_max]; 5% of pixels are masked out at random.
    """
    h, w = size
    if h % 32 or w % 32:
        raise ContractError(f"synthetic size must be divisible by 32, got {size}")
    if not 0 < d_min < 0.1 * d_max:
        raise ContractError(f"depth range [{d_min}, {d_max}] cannot hold the synthetic scenes")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        depth, albedo = _scene(rng, h, w, d_max)
        mask = rng.random((h, w)) >= DROPOUT
        image = render_image(depth, albedo, d_max)
        samples.append(
            DepthSample(image.astype(np.float32), depth.astype(np.float32), mask, f"synth_{seed}_{i:04d}", (h, w))
        )
    return samples


def pad_to_multiple(sample: DepthSample, multiple: int = 32, min_size: int = MIN_EXTENT) -> DepthSample:
    """Pad bottom/right so both extents divide ``multiple`` and reach ``min_size``; padding is masked out."""
    h, w = sample.depth.shape
    ph, pw = max(-h % multiple, min_size - h), max(-w % multiple, min_size - w)
    if not ph and not pw:
        return DepthSample(sample.image, sample.depth, sample.mask, sample.id, sample.original_size or (h, w))
    image = np.pad(sample.image, ((0, ph), (0, pw), (0, 0)), mode="edge")
    depth = np.pad(sample.depth, ((0, ph), (0, pw)))
    mask = np.pad(sample.mask, ((0, ph), (0, pw)))
    return DepthSample(image, depth, mask, sample.id, (h, w))


def pad_image(image: np.ndarray, multiple: int = 32, min_size: int = MIN_EXTENT) -> np.ndarray:
    """Edge-pad bottom/right to a multiple of ``multiple`` that is at least ``min_size``."""
    h, w = image.shape[:2]
    th, tw = max(h + -h % multiple, min_size), max(w + -w % multiple, min_size)
    return np.pad(image, ((0, th - h), (0, tw - w), (0, 0)), mode="edge")


def read_list_file(path) -> list[tuple[Path, Path]]:
    """Parse ``image_path depth_path`` lines; ``#`` starts a comment, paths are list-relative."""
    base = Path(path).parent
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'image_path depth_path', got {line!r}")
        pairs.append(tuple(p if Path(p).is_absolute() else base / p for p in map(Path, parts)))
    return pairs


def load_list(path, d_max: float | None = None) -> list[DepthSample]:
    samples = []
    for image_path, depth_path in read_list_file(path):
        image = read_image(image_path)
        depth = read_depth(depth_path)
        if image.shape[:2] != depth.shape:
            raise FormatError(f"{image_path} and {depth_path} differ in size")
        mask = np.isfinite(depth) & (depth > 0)
        if d_max is not None:
            mask &= depth <= d_max
        depth = np.where(mask, depth, 0).astype(np.float32)
        samples.append(pad_to_multiple(DepthSample(image, depth, mask, Path(depth_path).stem)))
    return samples
