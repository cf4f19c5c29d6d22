"""
Pre-training run records and checkpoint state.
"""
import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from app.core.config import ModelConfig
from app.core.exceptions import TrainingException
from app.models.provenance import TriggerHistory
from app.models.relations import DiagnosticsRecord


PHASES = ("random", "informed")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    phase: str
    learning_rate: float
    visible_rate: Optional[float] = None
    mask_rate: Optional[float] = None
    hint_ratio: float = 0.0
    target: Optional[str] = None


@dataclass
class RunRecord:
    """
    Everything a pre-training run reports.

    `step_losses` holds every optimizer step's batch loss; `epochs` one
    summary per finished epoch.
    """
    epochs: list[EpochLog] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    trigger: TriggerHistory = field(default_factory=TriggerHistory)
    trigger_source: Optional[str] = None
    snapshots: dict[int, DiagnosticsRecord] = field(default_factory=dict)

    @property
    def trigger_epoch(self) -> Optional[int]:
        return self.trigger.trigger_epoch

    @property
    def losses(self) -> list[float]:
        return [log.loss for log in self.epochs]

    @property
    def phases(self) -> list[str]:
        return [log.phase for log in self.epochs]

    def validate(self) -> None:
        """
        Raises:
            TrainingException: If a phase contradicts the trigger epoch
        """
        for log in self.epochs:
            expected = "informed" if self.trigger_epoch is not None and log.epoch >= self.trigger_epoch else "random"
            if log.phase != expected:
                raise TrainingException(
                    f"Epoch {log.epoch} ran in phase {log.phase}, expected {expected} (T = {self.trigger_epoch})"
                )

    def to_csv(self, path: str | Path) -> Path:
        """Epoch log: epoch, loss, R_V_to_O, R_M_to_O, phase."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epoch", "loss", "R_V_to_O", "R_M_to_O", "phase", "learning_rate", "hint_ratio", "target"])
            for log in self.epochs:
                writer.writerow([
                    log.epoch,
                    repr(log.loss),
                    "" if log.visible_rate is None else repr(log.visible_rate),
                    "" if log.mask_rate is None else repr(log.mask_rate),
                    log.phase,
                    repr(log.learning_rate),
                    repr(log.hint_ratio),
                    log.target or "",
                ])
        return path

    def to_dict(self) -> dict:
        return {
            "epochs": [asdict(log) for log in self.epochs],
            "step_losses": list(self.step_losses),
            "trigger": self.trigger.to_dict(),
            "trigger_source": self.trigger_source,
            "snapshots": {str(epoch): record.to_dict() for epoch, record in self.snapshots.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(
            epochs=[EpochLog(**log) for log in data.get("epochs", [])],
            step_losses=[float(v) for v in data.get("step_losses", [])],
            trigger=TriggerHistory.from_dict(data.get("trigger", {})),
            trigger_source=data.get("trigger_source"),
            snapshots={int(k): DiagnosticsRecord(**v) for k, v in data.get("snapshots", {}).items()},
        )


@dataclass
class Checkpoint:
    """
    Resumable training state.

    `epoch` counts completed epochs, so a resumed run starts at that epoch.
    """
    model_config: ModelConfig
    parameters: dict[str, np.ndarray]
    optimizer_state: dict[str, np.ndarray]
    step_count: int
    epoch: int
    record: RunRecord
    train_config: Optional[dict] = None

    @property
    def phase(self) -> str:
        t = self.record.trigger_epoch
        return "informed" if t is not None and self.epoch >= t else "random"
