"""
Token-relation matrices and the diagnostics computed from them.
"""
import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from app.core.exceptions import RelationException


RELATION_KINDS = ("attention", "cosine")
ROW_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class RelationMatrix:
    """An n x n token relation (attention or cosine) with its provenance."""
    values: np.ndarray
    kind: str
    layer: int | None = None
    setting: str = "intact-encoder"

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if self.kind not in RELATION_KINDS:
            raise RelationException(f"Unknown relation kind: {self.kind}")
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise RelationException(f"Relation must be square, got {values.shape}")
        if self.kind == "attention":
            if np.any(values < -ROW_SUM_TOLERANCE):
                raise RelationException("Attention entries must be nonnegative")
            worst = float(np.max(np.abs(values.sum(axis=1) - 1.0)))
            if worst > ROW_SUM_TOLERANCE:
                raise RelationException(f"Attention rows must sum to 1 (off by {worst:.2e})")
        else:
            if np.max(np.abs(values - values.T)) > ROW_SUM_TOLERANCE:
                raise RelationException("Cosine relation must be symmetric")
            if np.max(np.abs(np.diag(values) - 1.0)) > ROW_SUM_TOLERANCE:
                raise RelationException("Cosine relation must have a unit diagonal")

    @property
    def size(self) -> int:
        return int(self.values.shape[0])


@dataclass
class DiagnosticsRecord:
    """
    Layer-indexed relation diagnostics, averaged over the analysed images.

    Encoder metrics hold one value per encoder layer; `mask_token_variance`
    and the exploitation rates hold one value per decoder layer.
    """
    sigma_f: list[float] = field(default_factory=list)
    sigma_s: list[float] = field(default_factory=list)
    kld_attention: list[float] = field(default_factory=list)
    kld_cosine: list[float] = field(default_factory=list)
    kld_decoder: list[float] = field(default_factory=list)
    nmi: list[float] = field(default_factory=list)
    attention_distance: list[float] = field(default_factory=list)
    mu_intra: list[float] = field(default_factory=list)
    mu_inter: list[float] = field(default_factory=list)
    mask_token_variance: list[float] = field(default_factory=list)
    exploitation_visible: list[float] = field(default_factory=list)
    exploitation_mask: list[float] = field(default_factory=list)
    fourier_frequencies: list[float] = field(default_factory=list)
    fourier_delta: list[list[float]] = field(default_factory=list)

    LAYER_METRICS = (
        "sigma_f", "sigma_s", "kld_attention", "kld_cosine", "kld_decoder", "nmi",
        "attention_distance", "mu_intra", "mu_inter", "mask_token_variance",
        "exploitation_visible", "exploitation_mask",
    )

    def validate(self) -> None:
        """
        Raises:
            RelationException: If any value is non-finite or a nonnegative metric is negative
        """
        for name in self.LAYER_METRICS:
            values = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(values)):
                raise RelationException(f"Non-finite diagnostic: {name}")
        for name in ("sigma_f", "sigma_s", "kld_attention", "kld_cosine", "kld_decoder", "mask_token_variance"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise RelationException(f"Negative diagnostic: {name}")

    def rows(self) -> list[dict]:
        """One row per metric per layer (Fourier curves add one row per frequency bin)."""
        rows = []
        for name in self.LAYER_METRICS:
            for layer, value in enumerate(getattr(self, name)):
                rows.append({"metric": name, "layer": layer, "bin": "", "value": float(value)})
        for layer, curve in enumerate(self.fourier_delta):
            for index, value in enumerate(curve):
                rows.append({"metric": "fourier_delta_log_amplitude", "layer": layer, "bin": index, "value": float(value)})
        return rows

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=["metric", "layer", "bin", "value"])
            writer.writeheader()
            writer.writerows(self.rows())
        return path

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path
