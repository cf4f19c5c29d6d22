"""
Tests for checkpoint persistence.
"""
import json
import struct

import numpy as np
import pytest

from app.core.exceptions import (
    CheckpointConfigMismatchException,
    CheckpointCorruptedException,
    CheckpointVersionException,
)
from app.models.run import Checkpoint, EpochLog, RunRecord
from app.services.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from app.services.exploitation import trigger_check
from app.services.mae import MaskedAutoencoder, patchify
from app.services.optimizer import AdamW


def make_checkpoint(config, epoch: int = 3) -> Checkpoint:
    model = MaskedAutoencoder(config)
    optimizer = AdamW(model.params)
    rng = np.random.default_rng(0)
    optimizer.step({name: rng.standard_normal(t.shape).astype(t.dtype) for name, t in model.params.items()}, lr=1e-3)

    record = RunRecord()
    for e, mask_rate in [(1, 0.45), (2, 0.55)]:
        trigger_check(record.trigger, e, (1 - mask_rate, mask_rate))
    record.trigger_source = "detected"
    for e in range(epoch):
        record.epochs.append(EpochLog(
            epoch=e,
            loss=1.0 / (e + 1),
            phase="informed" if e >= 2 else "random",
            learning_rate=1e-3,
            mask_rate=None if e == 0 else 0.45 + 0.1 * (e - 1),
            visible_rate=None if e == 0 else 0.55 - 0.1 * (e - 1),
        ))
    record.step_losses = [0.9, 0.8, 0.7]

    return Checkpoint(
        model_config=config,
        parameters={name: array.copy() for name, array in model.state_arrays().items()},
        optimizer_state={name: array.copy() for name, array in optimizer.state_arrays().items()},
        step_count=optimizer.step_count,
        epoch=epoch,
        record=record,
        train_config={"epochs": 5},
    )


def rewrite_header(path, update) -> None:
    raw = path.read_bytes()
    prefix = len(MAGIC) + 4
    (length,) = struct.unpack("<I", raw[len(MAGIC):prefix])
    header = json.loads(raw[prefix:prefix + length])
    update(header)
    encoded = json.dumps(header).encode("utf-8")
    path.write_bytes(MAGIC + struct.pack("<I", len(encoded)) + encoded + raw[prefix + length:])


def test_round_trip_is_bit_exact(tmp_path, tiny_model_config):
    original = make_checkpoint(tiny_model_config)
    path = save_checkpoint(original, tmp_path / "run" / "epoch_0003.ckpt")
    loaded = load_checkpoint(path, tiny_model_config)

    assert loaded.model_config == tiny_model_config
    assert set(loaded.parameters) == set(original.parameters)
    for name, array in original.parameters.items():
        assert loaded.parameters[name].dtype == array.dtype
        np.testing.assert_array_equal(loaded.parameters[name], array)
    for name, array in original.optimizer_state.items():
        np.testing.assert_array_equal(loaded.optimizer_state[name], array)
    assert loaded.step_count == 1
    assert loaded.epoch == 3
    assert loaded.record.trigger_epoch == 2
    assert loaded.record.trigger_source == "detected"
    assert loaded.record.epochs == original.record.epochs
    assert loaded.record.step_losses == original.record.step_losses
    assert loaded.phase == "informed"
    assert loaded.train_config == {"epochs": 5}
    assert not (tmp_path / "run" / "epoch_0003.ckpt.tmp").exists()


def test_loaded_weights_reproduce_the_model(tmp_path, tiny_model_config, tiny_images):
    original = make_checkpoint(tiny_model_config)
    path = save_checkpoint(original, tmp_path / "last.ckpt")
    model = MaskedAutoencoder(tiny_model_config)
    model.load_state_arrays(original.parameters)
    restored = MaskedAutoencoder(tiny_model_config.model_copy(update={"seed": 99}))
    restored.load_state_arrays(load_checkpoint(path).parameters)
    patches = patchify(tiny_images[:2], tiny_model_config.patch_size)
    np.testing.assert_array_equal(model.features(patches), restored.features(patches))


def test_truncated_file_is_corrupted(tmp_path, tiny_model_config):
    path = save_checkpoint(make_checkpoint(tiny_model_config), tmp_path / "a.ckpt")
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(CheckpointCorruptedException):
        load_checkpoint(path)
    path.write_bytes(raw[:20])
    with pytest.raises(CheckpointCorruptedException):
        load_checkpoint(path)


def test_foreign_and_missing_files_are_corrupted(tmp_path):
    path = tmp_path / "notes.ckpt"
    path.write_bytes(b"hello world, not a checkpoint")
    with pytest.raises(CheckpointCorruptedException):
        load_checkpoint(path)
    with pytest.raises(CheckpointCorruptedException):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_version_mismatch(tmp_path, tiny_model_config):
    path = save_checkpoint(make_checkpoint(tiny_model_config), tmp_path / "a.ckpt")
    rewrite_header(path, lambda header: header.update(version=99))
    with pytest.raises(CheckpointVersionException):
        load_checkpoint(path)


def test_config_mismatch_names_the_key(tmp_path, tiny_model_config):
    path = save_checkpoint(make_checkpoint(tiny_model_config), tmp_path / "a.ckpt")
    other = tiny_model_config.model_copy(update={"decoder_layers": 3})
    with pytest.raises(CheckpointConfigMismatchException, match="decoder_layers"):
        load_checkpoint(path, other)


def test_phase_follows_trigger(tiny_model_config):
    checkpoint = make_checkpoint(tiny_model_config, epoch=2)
    assert checkpoint.phase == "informed"
    checkpoint.record.trigger.trigger_epoch = None
    assert checkpoint.phase == "random"


@pytest.mark.parametrize("update", [
    lambda header: header.pop("tensors"),
    lambda header: header.pop("record"),
    lambda header: header["tensors"][0].pop("dtype"),
    lambda header: header["tensors"][0].update(offset=10**9),
    lambda header: header.update(epoch="three"),
])
def test_malformed_header_is_corrupted(tmp_path, tiny_model_config, update):
    path = save_checkpoint(make_checkpoint(tiny_model_config), tmp_path / "a.ckpt")
    rewrite_header(path, update)
    with pytest.raises(CheckpointCorruptedException):
        load_checkpoint(path)


def test_header_that_is_not_an_object_is_corrupted(tmp_path):
    encoded = json.dumps([1, 2]).encode("utf-8")
    path = tmp_path / "list.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", len(encoded)) + encoded)
    with pytest.raises(CheckpointCorruptedException):
        load_checkpoint(path)
