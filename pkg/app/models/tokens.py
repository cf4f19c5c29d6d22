"""
Token-level data models: patch sequences and visible/masked partitions.
"""
from dataclasses import dataclass, field

import numpy as np

from app.core.exceptions import MaskSpecException


@dataclass(frozen=True)
class TokenSequence:
    """Per-image token vectors with their (row, col) grid positions."""
    values: np.ndarray
    positions: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape[0] != self.positions.shape[0]:
            raise MaskSpecException(
                f"{self.values.shape[0]} tokens but {self.positions.shape[0]} positions"
            )

    def __len__(self) -> int:
        return int(self.values.shape[0])


def _index_array(values) -> np.ndarray:
    return np.sort(np.asarray(values, dtype=np.int64).reshape(-1))


@dataclass(frozen=True)
class MaskSpec:
    """
    Partition of token indices into visible and masked sets.

    Hints are originally-masked tokens re-exposed as visible; they are
    always a subset of `visible`.
    """
    num_tokens: int
    visible: np.ndarray
    masked: np.ndarray
    hints: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self) -> None:
        object.__setattr__(self, "visible", _index_array(self.visible))
        object.__setattr__(self, "masked", _index_array(self.masked))
        object.__setattr__(self, "hints", _index_array(self.hints))
        n = self.num_tokens
        everything = np.concatenate([self.visible, self.masked])
        if everything.size and (everything.min() < 0 or everything.max() >= n):
            raise MaskSpecException(f"Token index out of range for {n} tokens")
        if np.intersect1d(self.visible, self.masked).size:
            overlap = int(np.intersect1d(self.visible, self.masked)[0])
            raise MaskSpecException(f"Token {overlap} is both visible and masked")
        if everything.size != n or np.unique(everything).size != n:
            missing = np.setdiff1d(np.arange(n), everything)
            detail = f"token {int(missing[0])} is neither visible nor masked" if missing.size else "duplicate indices"
            raise MaskSpecException(f"Mask does not cover {n} tokens: {detail}")
        if np.setdiff1d(self.hints, self.visible).size:
            raise MaskSpecException("Hint tokens must be visible")

    @classmethod
    def from_masked(cls, num_tokens: int, masked, hints=()) -> "MaskSpec":
        """Build a mask from the originally-masked set and the hints re-exposed from it."""
        masked = _index_array(masked)
        hints = _index_array(hints)
        if np.setdiff1d(hints, masked).size:
            raise MaskSpecException("Hint tokens must come from the masked set")
        still_masked = np.setdiff1d(masked, hints)
        visible = np.setdiff1d(np.arange(num_tokens), still_masked)
        return cls(num_tokens, visible, still_masked, hints)

    @classmethod
    def unmasked(cls, num_tokens: int) -> "MaskSpec":
        return cls(num_tokens, np.arange(num_tokens), np.zeros(0, dtype=np.int64))

    @property
    def masking_ratio(self) -> float:
        return self.masked.size / self.num_tokens

    def flags(self) -> np.ndarray:
        """Per-token state: 0 masked, 1 visible, 2 hint."""
        state = np.ones(self.num_tokens, dtype=np.int64)
        state[self.masked] = 0
        state[self.hints] = 2
        return state

    def to_dict(self) -> dict:
        return {
            "num_tokens": self.num_tokens,
            "visible": self.visible.tolist(),
            "masked": self.masked.tolist(),
            "hints": self.hints.tolist(),
        }
