"""
Visible/mask provenance state and the per-epoch trigger history.
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from app.core.exceptions import ProvenanceException, TriggerOrderException


CONSERVATION_TOLERANCE = 1e-6


def _check_rate(name: str, value: float) -> None:
    if not -CONSERVATION_TOLERANCE <= value <= 1.0 + CONSERVATION_TOLERANCE:
        raise ProvenanceException(f"Rate {name} = {value} is outside [0, 1]")


@dataclass(frozen=True)
class LayerRates:
    """
    Per-layer exploitation rates r_{A->B} between the visible set V and the mask set M.

    `visible_to_mask` is the attention share mask-set queries place on visible keys.
    """
    visible_to_visible: float
    visible_to_mask: float
    mask_to_visible: float
    mask_to_mask: float

    def __post_init__(self) -> None:
        for name in ("visible_to_visible", "visible_to_mask", "mask_to_visible", "mask_to_mask"):
            _check_rate(name, getattr(self, name))


@dataclass(frozen=True)
class ProvenanceState:
    """Accumulated rates R^{(l)}_{A->B} after `layer` decoder layers."""
    layer: int
    visible_to_visible: float
    visible_to_mask: float
    mask_to_visible: float
    mask_to_mask: float
    masking_ratio: float

    def __post_init__(self) -> None:
        for name in ("visible_to_visible", "visible_to_mask", "mask_to_visible", "mask_to_mask"):
            _check_rate(name, getattr(self, name))
        for target, total in (
            ("visible", self.visible_to_visible + self.mask_to_visible),
            ("mask", self.visible_to_mask + self.mask_to_mask),
        ):
            if abs(total - 1.0) > CONSERVATION_TOLERANCE:
                raise ProvenanceException(f"Rates into the {target} set sum to {total}, not 1")

    @classmethod
    def base(cls, masking_ratio: float) -> "ProvenanceState":
        """Layer-0 state: each set is fully its own source."""
        return cls(0, 1.0, 0.0, 0.0, 1.0, masking_ratio)


@dataclass(frozen=True)
class TriggerEntry:
    epoch: int
    visible_rate: float
    mask_rate: float


@dataclass
class TriggerHistory:
    """
    Per-epoch rate pairs the trigger compared and the detected trigger epoch.

    `statistic` names the pair: "share" for (R_{V->O}, R_{M->O}) as is,
    "per_token" for the same rates normalized by set size.
    """
    entries: list[TriggerEntry] = field(default_factory=list)
    trigger_epoch: Optional[int] = None
    statistic: str = "share"

    @property
    def last_epoch(self) -> Optional[int]:
        return self.entries[-1].epoch if self.entries else None

    def append(self, epoch: int, visible_rate: float, mask_rate: float) -> None:
        if self.last_epoch is not None and epoch <= self.last_epoch:
            raise TriggerOrderException(
                f"Epoch {epoch} recorded after epoch {self.last_epoch}"
            )
        self.entries.append(TriggerEntry(epoch, float(visible_rate), float(mask_rate)))

    def to_rows(self) -> list[dict]:
        return [
            {
                "epoch": entry.epoch,
                "R_V_to_O": entry.visible_rate,
                "R_M_to_O": entry.mask_rate,
                "statistic": self.statistic,
                "triggered": int(self.trigger_epoch is not None and entry.epoch == self.trigger_epoch),
            }
            for entry in self.entries
        ]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=["epoch", "R_V_to_O", "R_M_to_O", "statistic", "triggered"])
            writer.writeheader()
            writer.writerows(self.to_rows())
        return path

    def to_dict(self) -> dict:
        return {
            "trigger_epoch": self.trigger_epoch,
            "statistic": self.statistic,
            "entries": [vars(entry) for entry in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TriggerHistory":
        return cls(
            entries=[TriggerEntry(**entry) for entry in data.get("entries", [])],
            trigger_epoch=data.get("trigger_epoch"),
            statistic=data.get("statistic", "share"),
        )
