"""
Run configuration: typed sections and the flat `section.key = value` file format.
"""
import os
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.exceptions import ConfigException


DEFAULT_FAMILIES = ["stripes", "checker", "blobs", "noise", "dots", "rings"]
THREADS_ENV_VAR = "SGMAE_THREADS"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelConfig(_Section):
    """Miniature ViT-MAE geometry."""
    image_size: int = Field(32, gt=0)
    patch_size: int = Field(4, gt=0)
    channels: int = Field(3, gt=0)
    embed_dim: int = Field(64, gt=0)
    decoder_dim: int = Field(48, gt=0)
    encoder_layers: int = Field(4, gt=0)
    decoder_layers: int = Field(2, gt=0)
    heads: int = Field(4, gt=0)
    mlp_ratio: float = Field(2.0, gt=0)
    norm_pix_loss: bool = True
    seed: int = 0

    @model_validator(mode="after")
    def _check_geometry(self) -> "ModelConfig":
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        if self.decoder_dim % self.heads != 0:
            raise ValueError(f"decoder_dim {self.decoder_dim} is not divisible by heads {self.heads}")
        if self.embed_dim % 4 or self.decoder_dim % 4:
            raise ValueError("embed_dim and decoder_dim must be multiples of 4 for 2-D sin-cos positions")
        return self

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid_size ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** 2 * self.channels


class TrainConfig(_Section):
    """Pre-training schedule, masking policy and trigger settings."""
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    min_learning_rate: float = Field(1e-5, ge=0)
    warmup_epochs: int = Field(2, ge=0)
    weight_decay: float = Field(0.05, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.95, ge=0, lt=1)
    masking_ratio: float = Field(0.75, gt=0, lt=1)
    mask_mode: Literal["random", "self-guided"] = "self-guided"
    hint_strategy: Literal["none", "random", "score"] = "random"
    hint_schedule: Literal["constant", "linear"] = "constant"
    hint_ratio: float = Field(0.05, ge=0, lt=1)
    hint_start: float = Field(0.10, ge=0, lt=1)
    hint_end: float = Field(0.02, ge=0, lt=1)
    mask_layer_source: Literal["encoder", "decoder"] = "encoder"
    mask_layer_index: int = -2
    target_cluster: Literal["object", "background", "alternate"] = "object"
    negative_similarity: Literal["clip", "rescale"] = "clip"
    trigger_epoch: Optional[int] = Field(None, ge=0)
    trigger_statistic: Literal["share", "per_token"] = "per_token"
    probe_size: int = Field(256, ge=1)
    checkpoint_every: int = Field(10, ge=0)
    diagnostics_every: int = Field(5, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_hints(self) -> "TrainConfig":
        if self.hint_strategy == "none":
            return self
        largest = self.hint_ratio if self.hint_schedule == "constant" else max(self.hint_start, self.hint_end)
        if largest >= self.masking_ratio:
            raise ValueError(
                f"hint ratio {largest} must stay below masking_ratio {self.masking_ratio}"
            )
        return self


class DataConfig(_Section):
    """Synthetic texture set and optional real-image folder."""
    dataset_dir: str = "data/textures"
    image_dir: Optional[str] = None
    train_size: int = Field(5000, ge=1)
    val_size: int = Field(500, ge=0)
    families: list[str] = Field(default_factory=lambda: list(DEFAULT_FAMILIES))
    foreground_min: float = Field(0.15, gt=0, lt=1)
    foreground_max: float = Field(0.60, gt=0, lt=1)
    seed: int = 0

    @field_validator("families", mode="before")
    @classmethod
    def _split_families(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @model_validator(mode="after")
    def _check_bounds(self) -> "DataConfig":
        if self.foreground_min >= self.foreground_max:
            raise ValueError("foreground_min must be below foreground_max")
        return self


class AnalysisConfig(_Section):
    """Relation diagnostics settings."""
    subset_size: int = Field(64, ge=1)
    reference_checkpoint: Optional[str] = None
    head_mode: Literal["mean", "per_head"] = "mean"
    fourier_eps: float = Field(1e-8, gt=0)
    plots: bool = False
    mask_ratio: float = Field(0.75, gt=0, lt=1)
    hint_ratio: float = Field(0.05, ge=0, lt=1)
    mask_hint_strategy: Literal["none", "random", "score"] = "random"


class ProbeConfig(_Section):
    """Linear-probe classifier settings."""
    max_iter: int = Field(2000, ge=1)
    regularization: float = Field(1.0, gt=0)


class OutputConfig(_Section):
    output_dir: str = "runs/default"


class RunConfig(_Section):
    """Every configurable value of a run, grouped by section."""
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @property
    def output_path(self) -> Path:
        return Path(self.output.output_dir)


SECTIONS: dict[str, type[_Section]] = {
    name: field.annotation for name, field in RunConfig.model_fields.items()
}


def config_keys() -> list[tuple[str, str]]:
    """List every `(section, key)` pair in declaration order."""
    return [(section, key) for section, cls in SECTIONS.items() for key in cls.model_fields]


def flag_name(section: str, key: str) -> str:
    """
    Command-line flag for a configuration key.

    The bare key name in kebab-case is used when it is unique across
    sections, otherwise the section name is prefixed.
    """
    owners = [s for s, k in config_keys() if k == key]
    name = key if len(owners) == 1 else f"{section}_{key}"
    return "--" + name.replace("_", "-")


def _coerce(raw: str) -> Any:
    value = raw.strip()
    if value.lower() in {"none", "null", ""}:
        return None
    return value


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict[str, Any]]:
    """
    Parse flat `section.key = value` text into nested raw values.

    Args:
        text: Configuration file contents
        source: Name used in error messages

    Returns:
        Mapping of section name to raw key/value pairs

    Raises:
        ConfigException: On malformed lines, unknown sections or unknown keys
    """
    values: dict[str, dict[str, Any]] = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigException(f"{source}:{line_no}: expected 'section.key = value'")
        dotted, raw = stripped.split("=", 1)
        dotted = dotted.strip()
        if "." not in dotted:
            raise ConfigException(f"{source}:{line_no}: key '{dotted}' has no section")
        section, key = dotted.split(".", 1)
        _check_key(section, key)
        values.setdefault(section, {})[key] = _coerce(raw)
    return values


def _check_key(section: str, key: str) -> None:
    if section not in SECTIONS:
        raise ConfigException(f"Unknown config section: {section}.{key}")
    if key not in SECTIONS[section].model_fields:
        raise ConfigException(f"Unknown config key: {section}.{key}")


def build_run_config(
    values: dict[str, dict[str, Any]] | None = None,
    base: RunConfig | None = None
) -> RunConfig:
    """
    Build a validated RunConfig from raw section values layered over a base.

    Raises:
        ConfigException: If a key is unknown or a value fails validation
    """
    merged = (base or RunConfig()).model_dump()
    for section, pairs in (values or {}).items():
        for key, value in pairs.items():
            _check_key(section, key)
            merged[section][key] = value
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigException(f"Invalid configuration: {e}") from e


def load_run_config(path: str | Path | None, overrides: dict[str, dict[str, Any]] | None = None) -> RunConfig:
    """
    Load a configuration file and apply flag overrides on top of it.

    Args:
        path: Config file path, or None for defaults
        overrides: Raw values from command-line flags, keyed by section

    Returns:
        Validated RunConfig

    Raises:
        ConfigException: If the file is missing or invalid
    """
    file_values: dict[str, dict[str, Any]] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigException(f"Config file not found: {config_path}")
        file_values = parse_config_text(config_path.read_text(encoding="utf-8"), str(config_path))
    config = build_run_config(file_values)
    if overrides:
        config = build_run_config(overrides, base=config)
    return config


def thread_count() -> int:
    """Worker threads for per-image work, from the SGMAE_THREADS environment variable."""
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError as e:
        raise ConfigException(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from e
