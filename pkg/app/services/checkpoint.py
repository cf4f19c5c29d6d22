"""
Checkpoint persistence.

File layout: magic bytes, little-endian uint32 header length, a JSON header
(version, configs, run record, tensor table), then the raw little-endian
tensor blobs in table order.
"""
import json
import logging
import os
import struct
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.core.config import ModelConfig
from app.core.exceptions import (
    CheckpointConfigMismatchException,
    CheckpointCorruptedException,
    CheckpointException,
    CheckpointVersionException,
)
from app.models.run import Checkpoint, RunRecord


logger = logging.getLogger(__name__)

MAGIC = b"SGMAECKP"
CHECKPOINT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}
HEADER_KEYS = ("model_config", "epoch", "step_count", "record", "tensors")


def _tensor_table(groups: dict[str, dict[str, np.ndarray]]) -> tuple[list[dict], list[bytes]]:
    table, blobs = [], []
    offset = 0
    for group, arrays in groups.items():
        for name, array in arrays.items():
            array = np.asarray(array)
            dtype_name = array.dtype.name
            if dtype_name not in _DTYPES:
                raise CheckpointException(f"Unsupported dtype {dtype_name} for {name}")
            blob = np.ascontiguousarray(array, dtype=_DTYPES[dtype_name]).tobytes()
            table.append({
                "group": group,
                "name": name,
                "dtype": dtype_name,
                "shape": list(array.shape),
                "offset": offset,
                "nbytes": len(blob),
            })
            blobs.append(blob)
            offset += len(blob)
    return table, blobs


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    """
    Write a checkpoint atomically (temporary file, then rename).

    Returns:
        The checkpoint path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table, blobs = _tensor_table({
        "parameters": checkpoint.parameters,
        "optimizer": checkpoint.optimizer_state,
    })
    header = {
        "version": CHECKPOINT_VERSION,
        "model_config": checkpoint.model_config.model_dump(),
        "train_config": checkpoint.train_config,
        "epoch": checkpoint.epoch,
        "step_count": checkpoint.step_count,
        "record": checkpoint.record.to_dict(),
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    try:
        with tmp.open("wb") as handle:
            handle.write(MAGIC)
            handle.write(struct.pack("<I", len(header_bytes)))
            handle.write(header_bytes)
            for blob in blobs:
                handle.write(blob)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointException(f"Could not write checkpoint {path}: {str(e)}") from e
    logger.info(f"Checkpoint written: {path} (epoch {checkpoint.epoch})")
    return path


def _read_tensors(table: list[dict], body: bytes, path: Path) -> dict[str, dict[str, np.ndarray]]:
    expected_bytes = sum(int(entry["nbytes"]) for entry in table)
    if len(body) != expected_bytes:
        raise CheckpointCorruptedException(
            f"{path} holds {len(body)} tensor bytes, expected {expected_bytes}"
        )
    groups: dict[str, dict[str, np.ndarray]] = {"parameters": {}, "optimizer": {}}
    for entry in table:
        start, nbytes = int(entry["offset"]), int(entry["nbytes"])
        if start < 0 or start + nbytes > len(body):
            raise CheckpointCorruptedException(f"{path}: tensor {entry['name']} lies outside the file")
        array = np.frombuffer(body[start:start + nbytes], dtype=_DTYPES[entry["dtype"]]).astype(entry["dtype"])
        groups[entry["group"]][entry["name"]] = array.reshape(entry["shape"])
    return groups


def _config_differences(saved: ModelConfig, expected: ModelConfig) -> list[str]:
    a, b = saved.model_dump(), expected.model_dump()
    return [f"{key}: {a[key]} != {b[key]}" for key in a if a[key] != b[key]]


def load_checkpoint(path: str | Path, expected_config: ModelConfig | None = None) -> Checkpoint:
    """
    Read a checkpoint written by `save_checkpoint`.

    Args:
        path: Checkpoint file
        expected_config: If given, the stored model config must equal it

    Raises:
        CheckpointCorruptedException: On a missing, truncated or malformed file
        CheckpointVersionException: On a format version mismatch
        CheckpointConfigMismatchException: If the model config differs from the expected one
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointCorruptedException(f"Cannot read checkpoint {path}: {str(e)}") from e

    prefix = len(MAGIC) + 4
    if len(raw) < prefix or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointCorruptedException(f"{path} is not a checkpoint file")
    (header_len,) = struct.unpack("<I", raw[len(MAGIC):prefix])
    if len(raw) < prefix + header_len:
        raise CheckpointCorruptedException(f"{path} is truncated inside its header")
    try:
        header = json.loads(raw[prefix:prefix + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointCorruptedException(f"{path} has an unreadable header: {str(e)}") from e
    if not isinstance(header, dict):
        raise CheckpointCorruptedException(f"{path} has a header that is not an object")

    version = header.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionException(
            f"Checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )
    missing = [key for key in HEADER_KEYS if key not in header]
    if missing:
        raise CheckpointCorruptedException(f"{path} header lacks {', '.join(missing)}")

    body = raw[prefix + header_len:]
    try:
        groups = _read_tensors(header["tensors"], body, path)
        model_config = ModelConfig.model_validate(header["model_config"])
        record = RunRecord.from_dict(header["record"])
        step_count = int(header["step_count"])
        epoch = int(header["epoch"])
    except (ValidationError, KeyError, TypeError, ValueError) as e:
        raise CheckpointCorruptedException(f"{path} has an invalid header: {str(e)}") from e

    if expected_config is not None:
        differences = _config_differences(model_config, expected_config)
        if differences:
            raise CheckpointConfigMismatchException(
                f"Checkpoint model config differs: {'; '.join(differences)}"
            )

    return Checkpoint(
        model_config=model_config,
        parameters=groups["parameters"],
        optimizer_state=groups["optimizer"],
        step_count=step_count,
        epoch=epoch,
        record=record,
        train_config=header.get("train_config"),
    )
