"""
Image file utilities: decoding, resizing, PNG/PGM writing.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

from app.core.exceptions import (
    EmptyDatasetException,
    ImageProcessingException,
    UnreadableImageException,
    UnsupportedFileTypeException,
)


logger = logging.getLogger(__name__)

SUPPORTED_FORMATS = {".png", ".ppm"}


def validate_file_format(filename: str) -> None:
    """
    Validate that a file has a supported image format.

    Args:
        filename: Name of the image file

    Raises:
        UnsupportedFileTypeException: If file format is not supported
    """
    file_extension = Path(filename).suffix.lower()
    if file_extension not in SUPPORTED_FORMATS:
        raise UnsupportedFileTypeException(
            f"Unsupported file format: {file_extension}. "
            f"Supported formats: {', '.join(sorted(SUPPORTED_FORMATS))}"
        )


def load_image_file(path: str | Path) -> np.ndarray:
    """
    Decode an image file to an RGB uint8 array.

    Args:
        path: PNG or PPM file

    Returns:
        Array of shape (height, width, 3)

    Raises:
        UnreadableImageException: If the file cannot be decoded
    """
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise UnreadableImageException(f"Error reading image {path}: {str(e)}") from e


def resize_and_crop(image: np.ndarray, size: int) -> np.ndarray:
    """
    Bilinearly resize so the shorter side equals `size`, then center-crop to a square.

    Args:
        image: Image as numpy array (height, width, channels)
        size: Output side length

    Returns:
        Image of shape (size, size, channels)

    Raises:
        ImageProcessingException: If the image is empty
    """
    height, width = image.shape[:2]
    if height == 0 or width == 0:
        raise ImageProcessingException("Cannot resize an empty image")

    scale = size / min(height, width)
    new_width = max(size, int(round(width * scale)))
    new_height = max(size, int(round(height * scale)))
    resized = cv2.resize(image, (new_width, new_height), interpolation=cv2.INTER_LINEAR)
    if resized.ndim == 2:
        resized = resized[:, :, None]

    top = (new_height - size) // 2
    left = (new_width - size) // 2
    return resized[top:top + size, left:left + size]


@dataclass
class ImageFolder:
    """Images loaded from a directory, in lexicographic file order."""
    images: np.ndarray
    names: List[str] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)

    @property
    def skipped_count(self) -> int:
        return len(self.skipped)


def load_images(directory: str | Path, image_size: int) -> ImageFolder:
    """
    Load every PNG/PPM file of a directory as normalized square images.

    Unreadable files are skipped with a warning and counted.

    Args:
        directory: Folder holding the images
        image_size: Output side length

    Returns:
        ImageFolder with images of shape (N, image_size, image_size, 3) in [0, 1]

    Raises:
        EmptyDatasetException: If the folder is missing or holds no readable image
    """
    folder = Path(directory)
    if not folder.is_dir():
        raise EmptyDatasetException(f"Image directory not found: {folder}")

    images, names, skipped = [], [], []
    for path in sorted(folder.iterdir(), key=lambda p: p.name):
        if not path.is_file():
            continue
        try:
            validate_file_format(path.name)
        except UnsupportedFileTypeException:
            continue
        try:
            pixels = resize_and_crop(load_image_file(path), image_size)
        except ImageProcessingException as e:
            logger.warning(f"Skipping {path.name}: {e}")
            skipped.append(path.name)
            continue
        images.append(pixels.astype(np.float32) / 255.0)
        names.append(path.name)

    if not images:
        raise EmptyDatasetException(f"No readable PNG/PPM image in {folder} ({len(skipped)} skipped)")
    if skipped:
        logger.warning(f"Skipped {len(skipped)} unreadable file(s) in {folder}")
    return ImageFolder(images=np.stack(images), names=names, skipped=skipped)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] pixel values to uint8."""
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def save_png(path: str | Path, image: np.ndarray) -> None:
    """
    Write an RGB image with values in [0, 1] as PNG.

    Raises:
        ImageProcessingException: If encoding fails
    """
    ok = cv2.imwrite(str(path), cv2.cvtColor(to_uint8(image), cv2.COLOR_RGB2BGR))
    if not ok:
        raise ImageProcessingException(f"Error writing PNG {path}")


def read_png(path: str | Path) -> np.ndarray:
    """
    Read an RGB PNG to float32 values in [0, 1].

    Raises:
        UnreadableImageException: If the file cannot be decoded
    """
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise UnreadableImageException(f"Failed to decode {path}")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0


def upsample_grid(grid: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour upsampling of a 2-D token grid by an integer factor."""
    return np.kron(np.asarray(grid), np.ones((factor, factor), dtype=np.asarray(grid).dtype))


def write_pgm(path: str | Path, values: np.ndarray) -> None:
    """
    Write a 2-D uint8 array as a binary PGM image.

    Raises:
        ImageProcessingException: If the array is not 2-D or writing fails
    """
    array = np.asarray(values)
    if array.ndim != 2:
        raise ImageProcessingException(f"PGM needs a 2-D array, got shape {array.shape}")
    try:
        Image.fromarray(array.astype(np.uint8)).save(path, format="PPM")
    except (OSError, ValueError) as e:
        raise ImageProcessingException(f"Error writing PGM {path}: {str(e)}") from e

