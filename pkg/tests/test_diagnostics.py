"""
Tests for the relation analyzer.
"""
import csv
import json

import numpy as np
import pytest

from app.core.config import AnalysisConfig
from app.models.relations import DiagnosticsRecord
from app.services.diagnostics import RelationAnalyzer
from app.services.mae import MaskedAutoencoder, patchify


@pytest.fixture
def tiny_patches(tiny_model_config, tiny_images) -> np.ndarray:
    return patchify(tiny_images[:4], tiny_model_config.patch_size)


def test_self_reference_gives_zero_divergence(tiny_model_config, tiny_patches):
    model = MaskedAutoencoder(tiny_model_config)
    record = RelationAnalyzer(model, reference=model).analyze(tiny_patches, batch_size=3)
    assert record.kld_attention == pytest.approx([0.0, 0.0], abs=1e-12)
    assert record.kld_cosine == pytest.approx([0.0, 0.0], abs=1e-12)


def test_record_shapes_and_ranges(tiny_model_config, tiny_patches):
    model = MaskedAutoencoder(tiny_model_config)
    record = RelationAnalyzer(model, seed=4).analyze(tiny_patches)

    encoder_layers, decoder_layers = tiny_model_config.encoder_layers, tiny_model_config.decoder_layers
    for name in ("sigma_f", "sigma_s", "nmi", "attention_distance"):
        assert len(getattr(record, name)) == encoder_layers
    for name in ("kld_decoder", "mask_token_variance", "exploitation_visible", "exploitation_mask"):
        assert len(getattr(record, name)) == decoder_layers
    assert record.kld_attention == [] and record.kld_cosine == []

    assert all(0.0 <= v <= 1.0 + 1e-9 for v in record.nmi)
    assert all(v >= 0.0 for v in record.kld_decoder)
    for visible, mask in zip(record.exploitation_visible, record.exploitation_mask):
        assert visible + mask == pytest.approx(1.0, abs=1e-6)
    assert len(record.fourier_delta) == encoder_layers
    assert all(len(curve) == len(record.fourier_frequencies) for curve in record.fourier_delta)
    record.validate()


def test_analysis_is_seeded(tiny_model_config, tiny_patches):
    model = MaskedAutoencoder(tiny_model_config)
    a = RelationAnalyzer(model, seed=1).analyze(tiny_patches)
    b = RelationAnalyzer(model, seed=1).analyze(tiny_patches)
    assert a == b


def test_per_head_mode_runs(tiny_model_config, tiny_patches):
    model = MaskedAutoencoder(tiny_model_config)
    other = MaskedAutoencoder(tiny_model_config.model_copy(update={"seed": 8}))
    record = RelationAnalyzer(model, AnalysisConfig(head_mode="per_head"), reference=other).analyze(tiny_patches)
    assert len(record.kld_attention) == tiny_model_config.encoder_layers
    assert all(v > 0.0 for v in record.kld_attention)
    record.validate()


def test_record_tables(tmp_path, tiny_model_config, tiny_patches):
    record = RelationAnalyzer(MaskedAutoencoder(tiny_model_config)).analyze(tiny_patches)
    with record.to_csv(tmp_path / "diagnostics.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert {row["metric"] for row in rows} >= {"sigma_f", "nmi", "fourier_delta_log_amplitude"}
    loaded = json.loads(record.to_json(tmp_path / "diagnostics.json").read_text())
    assert DiagnosticsRecord(**loaded) == record
