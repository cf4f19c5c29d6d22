"""
Tests for report files: hashes, tables and plots.
"""
import hashlib

from app.models.relations import DiagnosticsRecord
from app.utils.reporting import (
    artifact_hashes,
    plot_epoch_curves,
    plot_layer_metrics,
    read_csv,
    write_csv,
    write_json,
)


def test_artifact_hashes(tmp_path):
    path = write_json(tmp_path / "a" / "summary.json", {"b": 1, "a": 2})
    hashes = artifact_hashes([path, tmp_path / "missing.csv"], root=tmp_path)
    assert list(hashes) == ["a/summary.json"]
    assert hashes["a/summary.json"] == hashlib.sha256(path.read_bytes()).hexdigest()


def test_csv_round_trip(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["layer", "value"], [{"layer": 0, "value": 0.5}, {"layer": 1, "value": ""}])
    assert read_csv(path) == [{"layer": "0", "value": "0.5"}, {"layer": "1", "value": ""}]


def test_plots_are_svg(tmp_path):
    record = DiagnosticsRecord(
        sigma_f=[0.1, 0.2],
        nmi=[0.3, 0.4],
        fourier_frequencies=[0.0, 0.5],
        fourier_delta=[[0.0, -1.0], [0.0, -0.5]],
    )
    written = plot_layer_metrics(record, tmp_path / "plots")
    assert sorted(p.name for p in written) == ["fourier_delta_log_amplitude.svg", "nmi.svg", "sigma_f.svg"]
    assert all(p.read_text().lstrip().startswith("<?xml") for p in written)

    rows = [
        {"epoch": "0", "loss": "1.0", "R_V_to_O": "", "R_M_to_O": ""},
        {"epoch": "1", "loss": "0.8", "R_V_to_O": "0.6", "R_M_to_O": "0.4"},
    ]
    curves = plot_epoch_curves(rows, tmp_path / "curves")
    assert [p.name for p in curves] == ["loss.svg", "exploitation_rate.svg"]
