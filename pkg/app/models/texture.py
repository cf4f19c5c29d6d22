"""
Synthetic texture images and dataset manifests.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from app.core.exceptions import DatasetException


@dataclass(frozen=True)
class TextureImage:
    """
    One two-region texture image.

    `region` is True on foreground pixels; `class_label` indexes the
    ordered (foreground family, background family) pair.
    """
    pixels: np.ndarray
    region: np.ndarray
    class_label: int
    seed: list[int]
    foreground: str
    background: str

    def __post_init__(self) -> None:
        if self.pixels.shape[:2] != self.region.shape:
            raise DatasetException(f"Region {self.region.shape} does not match pixels {self.pixels.shape}")
        if self.region.all() or not self.region.any():
            raise DatasetException("Both regions must be nonempty")

    @property
    def foreground_fraction(self) -> float:
        return float(self.region.mean())


@dataclass
class DatasetManifest:
    """Item count, class table, split assignment and generator parameters of a dataset."""
    item_count: int
    class_count: int
    classes: list[list[str]]
    splits: dict[str, list[int]]
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        train = set(self.splits.get("train", []))
        val = set(self.splits.get("val", []))
        if train & val:
            raise DatasetException("Train and validation splits overlap")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        return cls(**data)


@dataclass
class TextureDataset:
    """Loaded dataset: stacked pixels, regions and labels with the manifest."""
    manifest: DatasetManifest
    images: np.ndarray
    regions: np.ndarray
    labels: np.ndarray

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(images, regions, labels) of the named split."""
        if name not in self.manifest.splits:
            raise DatasetException(f"Unknown split: {name}")
        index = np.asarray(self.manifest.splits[name], dtype=np.int64)
        return self.images[index], self.regions[index], self.labels[index]
