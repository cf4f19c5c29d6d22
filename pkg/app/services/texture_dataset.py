"""
Procedural two-texture dataset with pixel-level foreground labels.
"""
import json
import logging
import math
from itertools import permutations
from pathlib import Path
from typing import Callable

import cv2
import numpy as np

from app.core.config import DataConfig
from app.core.exceptions import (
    DatasetException,
    EmptyDatasetException,
    InvalidTextureFamilyException,
    UnreadableImageException,
)
from app.models.texture import DatasetManifest, TextureDataset, TextureImage
from app.utils.image_processing import read_png, save_png, to_uint8


logger = logging.getLogger(__name__)

# Hue per family, in RGB; the pattern modulates between a dark and a light shade.
FAMILY_HUES = {
    "stripes": (0.85, 0.20, 0.20),
    "checker": (0.20, 0.75, 0.25),
    "blobs": (0.20, 0.35, 0.90),
    "noise": (0.90, 0.80, 0.15),
    "dots": (0.80, 0.25, 0.80),
    "rings": (0.15, 0.80, 0.80),
}

MAX_ELLIPSE_TRIES = 1000
BOUNDARY_SHARE = 0.25


def _stripes(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    angle = rng.uniform(0.0, math.pi)
    period = rng.uniform(4.0, 8.0)
    phase = rng.uniform(0.0, 2 * math.pi)
    return 0.5 + 0.5 * np.cos(2 * math.pi * (xx * math.cos(angle) + yy * math.sin(angle)) / period + phase)


def _checker(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    cell = int(rng.integers(2, 5))
    dy, dx = rng.integers(0, cell, size=2)
    return (((yy + dy) // cell + (xx + dx) // cell) % 2).astype(np.float64)


def _blobs(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    size = yy.shape[0]
    coarse = rng.uniform(0.0, 1.0, size=(5, 5)).astype(np.float32)
    field = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_CUBIC).astype(np.float64)
    low, high = field.min(), field.max()
    return (field - low) / max(high - low, 1e-9)


def _noise(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=yy.shape)


def _dots(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    spacing = int(rng.integers(4, 7))
    oy, ox = rng.uniform(0, spacing, size=2)
    fy = np.mod(yy + oy, spacing) - spacing / 2
    fx = np.mod(xx + ox, spacing) - spacing / 2
    return (np.sqrt(fy ** 2 + fx ** 2) < 0.3 * spacing).astype(np.float64)


def _rings(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    size = yy.shape[0]
    cy, cx = rng.uniform(0, size, size=2)
    period = rng.uniform(4.0, 8.0)
    return 0.5 + 0.5 * np.cos(2 * math.pi * np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) / period)


FAMILIES: dict[str, Callable[[np.random.Generator, np.ndarray, np.ndarray], np.ndarray]] = {
    "stripes": _stripes,
    "checker": _checker,
    "blobs": _blobs,
    "noise": _noise,
    "dots": _dots,
    "rings": _rings,
}


def validate_families(families: list[str]) -> list[str]:
    """
    Raises:
        InvalidTextureFamilyException: On fewer than 2 families, unknown names or duplicates
    """
    unknown = [name for name in families if name not in FAMILIES]
    if unknown:
        raise InvalidTextureFamilyException(
            f"data.families: unknown texture families {unknown}; choose from {sorted(FAMILIES)}"
        )
    if len(set(families)) != len(families):
        raise InvalidTextureFamilyException(f"data.families: duplicate families in {families}")
    if len(families) < 2:
        raise InvalidTextureFamilyException(f"data.families: need at least 2 families, got {families}")
    return list(families)


def class_table(families: list[str]) -> list[tuple[str, str]]:
    """Ordered (foreground, background) family pairs with distinct members."""
    return list(permutations(families, 2))


def render_texture(family: str, rng: np.random.Generator, size: int) -> np.ndarray:
    """One family's texture as RGB values in [0, 1], shape (size, size, 3)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    pattern = FAMILIES[family](rng, yy, xx)
    hue = np.asarray(FAMILY_HUES[family])
    dark, light = 0.35 * hue, 0.4 + 0.6 * hue
    return dark + pattern[:, :, None] * (light - dark)


def ellipse_region(
    rng: np.random.Generator,
    size: int,
    minimum: float,
    maximum: float
) -> np.ndarray:
    """
    Random rotated ellipse covering a fraction of the image within [minimum, maximum].

    Raises:
        DatasetException: If no valid ellipse is found
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    for _ in range(MAX_ELLIPSE_TRIES):
        cy, cx = rng.uniform(0.3 * size, 0.7 * size, size=2)
        a, b = rng.uniform(0.15 * size, 0.48 * size, size=2)
        theta = rng.uniform(0.0, math.pi)
        u = (xx - cx) * math.cos(theta) + (yy - cy) * math.sin(theta)
        v = -(xx - cx) * math.sin(theta) + (yy - cy) * math.cos(theta)
        region = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        if minimum <= region.mean() <= maximum:
            return region
    raise DatasetException(f"No ellipse within [{minimum}, {maximum}] after {MAX_ELLIPSE_TRIES} draws")


def generate_texture_image(
    index: int,
    class_label: int,
    classes: list[tuple[str, str]],
    config: DataConfig,
    image_size: int
) -> TextureImage:
    """Deterministic image for (dataset seed, index); pixels are quantized to 8 bits."""
    seed = [config.seed, index]
    rng = np.random.default_rng(seed)
    foreground, background = classes[class_label]
    region = ellipse_region(rng, image_size, config.foreground_min, config.foreground_max)
    fg = render_texture(foreground, rng, image_size)
    bg = render_texture(background, rng, image_size)
    pixels = np.where(region[:, :, None], fg, bg)
    pixels = to_uint8(pixels).astype(np.float32) / 255.0
    return TextureImage(pixels, region, class_label, seed, foreground, background)


def gen_texture_dataset(config: DataConfig, image_size: int) -> tuple[DatasetManifest, list[TextureImage]]:
    """
    Generate the train and validation texture images.

    Class labels are stratified: label i mod C for item i, then shuffled with the dataset seed.

    Returns:
        (manifest, images in index order)

    Raises:
        InvalidTextureFamilyException: If the family set is invalid
    """
    families = validate_families(config.families)
    classes = class_table(families)
    total = config.train_size + config.val_size
    labels = np.arange(total) % len(classes)
    np.random.default_rng([config.seed, total]).shuffle(labels)

    images = [
        generate_texture_image(i, int(labels[i]), classes, config, image_size)
        for i in range(total)
    ]
    manifest = DatasetManifest(
        item_count=total,
        class_count=len(classes),
        classes=[list(pair) for pair in classes],
        splits={
            "train": list(range(config.train_size)),
            "val": list(range(config.train_size, total)),
        },
        seed=config.seed,
        params={
            "image_size": image_size,
            "families": families,
            "foreground_min": config.foreground_min,
            "foreground_max": config.foreground_max,
        },
    )
    logger.info(f"Generated {total} texture images over {len(classes)} classes")
    return manifest, images


def rle_encode(region: np.ndarray) -> list[int]:
    """Run lengths of the row-major flattened mask, starting with a background run."""
    flat = np.asarray(region, dtype=bool).reshape(-1)
    changes = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    return runs if not flat[0] else [0] + runs


def rle_decode(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    values = np.zeros(len(runs), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, runs)
    if flat.size != shape[0] * shape[1]:
        raise DatasetException(f"Run lengths cover {flat.size} pixels, expected {shape[0] * shape[1]}")
    return flat.reshape(shape)


def save_texture_dataset(root: str | Path, manifest: DatasetManifest, images: list[TextureImage]) -> Path:
    """
    Write one PNG plus JSON sidecar per image and the root manifest.

    Returns:
        Path of manifest.json
    """
    root = Path(root)
    image_dir = root / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    for index, image in enumerate(images):
        save_png(image_dir / f"{index:05d}.png", image.pixels)
        sidecar = {
            "class_label": image.class_label,
            "foreground": image.foreground,
            "background": image.background,
            "seed": image.seed,
            "region_shape": list(image.region.shape),
            "region_rle": rle_encode(image.region),
        }
        (image_dir / f"{index:05d}.json").write_text(json.dumps(sidecar), encoding="utf-8")
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest.to_dict(), indent=2), encoding="utf-8")
    return path


def load_texture_dataset(root: str | Path) -> TextureDataset:
    """
    Read a dataset written by `save_texture_dataset`.

    Raises:
        EmptyDatasetException: If the manifest is missing or lists no item
        DatasetException: If an image or sidecar is missing or unreadable
    """
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise EmptyDatasetException(f"No dataset manifest at {manifest_path}")
    try:
        manifest = DatasetManifest.from_dict(json.loads(manifest_path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, TypeError) as e:
        raise DatasetException(f"Invalid manifest {manifest_path}: {str(e)}") from e
    if manifest.item_count == 0:
        raise EmptyDatasetException(f"Dataset at {root} is empty")

    images, regions, labels = [], [], []
    for index in range(manifest.item_count):
        stem = root / "images" / f"{index:05d}"
        try:
            sidecar = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
            images.append(read_png(stem.with_suffix(".png")))
        except (OSError, json.JSONDecodeError, UnreadableImageException) as e:
            raise DatasetException(f"Cannot read dataset item {index}: {str(e)}") from e
        regions.append(rle_decode(sidecar["region_rle"], tuple(sidecar["region_shape"])))
        labels.append(int(sidecar["class_label"]))
    return TextureDataset(
        manifest=manifest,
        images=np.stack(images),
        regions=np.stack(regions),
        labels=np.asarray(labels, dtype=np.int64),
    )


def patch_coverage(region: np.ndarray, patch_size: int) -> np.ndarray:
    """
    Foreground pixel share of every patch, row-major over the patch grid.

    Args:
        region: Boolean pixel mask (S, S), or a TextureImage's region
        patch_size: Patch side P

    Raises:
        DatasetException: If the region does not tile into P-pixel patches
    """
    mask = np.asarray(region.region if isinstance(region, TextureImage) else region, dtype=np.int64)
    size = mask.shape[0]
    if mask.shape != (size, size) or size % patch_size:
        raise DatasetException(f"Region of shape {mask.shape} does not tile into {patch_size}-pixel patches")
    grid = size // patch_size
    counts = mask.reshape(grid, patch_size, grid, patch_size).sum(axis=(1, 3)).reshape(-1)
    return counts / (patch_size * patch_size)


def patch_labels(region: np.ndarray, patch_size: int) -> np.ndarray:
    """
    Per-token foreground flags: a patch is foreground iff more than half its pixels are.

    An exactly half-covered patch is background.
    """
    return patch_coverage(region, patch_size) * 2 > 1


def boundary_fraction(region: np.ndarray, patch_size: int) -> float:
    """Share of patches whose minority label covers at least a quarter of their pixels."""
    coverage = patch_coverage(region, patch_size)
    return float(np.mean((coverage >= BOUNDARY_SHARE) & (coverage <= 1 - BOUNDARY_SHARE)))
