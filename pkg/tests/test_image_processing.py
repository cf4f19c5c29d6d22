"""
Tests for image file loading and writing.
"""
import numpy as np
import pytest
from PIL import Image

from app.core.exceptions import EmptyDatasetException, ImageProcessingException, UnsupportedFileTypeException
from app.utils.image_processing import (
    load_images,
    read_png,
    resize_and_crop,
    save_png,
    upsample_grid,
    validate_file_format,
    write_pgm,
)


def write_ppm(path, width: int, height: int, seed: int = 0) -> None:
    pixels = np.random.default_rng(seed).integers(0, 256, (height, width, 3), dtype=np.uint8)
    Image.fromarray(pixels).save(path, format="PPM")


def test_validate_file_format():
    validate_file_format("a.PNG")
    validate_file_format("b.ppm")
    with pytest.raises(UnsupportedFileTypeException):
        validate_file_format("c.jpg")


def test_empty_directory(tmp_path):
    with pytest.raises(EmptyDatasetException):
        load_images(tmp_path, 32)
    with pytest.raises(EmptyDatasetException):
        load_images(tmp_path / "missing", 32)


def test_one_ppm_is_resized(tmp_path):
    write_ppm(tmp_path / "one.ppm", 64, 64)
    folder = load_images(tmp_path, 32)
    assert folder.images.shape == (1, 32, 32, 3)
    assert folder.images.dtype == np.float32
    assert 0.0 <= folder.images.min() and folder.images.max() <= 1.0
    assert folder.names == ["one.ppm"]


def test_corrupt_files_are_skipped_and_counted(tmp_path):
    write_ppm(tmp_path / "b.ppm", 40, 30, seed=1)
    write_ppm(tmp_path / "a.ppm", 20, 50, seed=2)
    (tmp_path / "c.png").write_bytes(b"not really a png")
    (tmp_path / "notes.txt").write_text("ignored")
    folder = load_images(tmp_path, 16)
    assert folder.names == ["a.ppm", "b.ppm"]
    assert folder.skipped == ["c.png"]
    assert folder.skipped_count == 1
    assert folder.images.shape == (2, 16, 16, 3)


def test_resize_and_crop_keeps_the_centre():
    image = np.zeros((20, 40, 3), dtype=np.uint8)
    image[:, 10:30] = 200
    out = resize_and_crop(image, 10)
    assert out.shape == (10, 10, 3)
    assert out.min() == 200
    with pytest.raises(ImageProcessingException):
        resize_and_crop(np.zeros((0, 4, 3), dtype=np.uint8), 4)


def test_png_round_trip(tmp_path):
    pixels = np.random.default_rng(0).integers(0, 256, (8, 8, 3)).astype(np.float32) / 255.0
    save_png(tmp_path / "x.png", pixels)
    np.testing.assert_array_equal(read_png(tmp_path / "x.png"), pixels)


def test_pgm_writing(tmp_path):
    values = np.array([[0, 255], [128, 0]], dtype=np.uint8)
    write_pgm(tmp_path / "mask.pgm", upsample_grid(values, 2))
    with Image.open(tmp_path / "mask.pgm") as image:
        assert image.mode == "L"
        np.testing.assert_array_equal(np.asarray(image), np.kron(values, np.ones((2, 2), dtype=np.uint8)))
    with pytest.raises(ImageProcessingException):
        write_pgm(tmp_path / "bad.pgm", np.zeros((2, 2, 2)))
