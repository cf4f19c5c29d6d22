"""
AdamW with a warmup-then-cosine learning-rate schedule.
"""
import math

import numpy as np

from app.core.exceptions import TrainingException
from app.utils.autograd import Tensor


def cosine_lr(step: int, total_steps: int, warmup_steps: int, base_lr: float, min_lr: float) -> float:
    """Linear warmup to `base_lr`, then half-cosine decay to `min_lr` at `total_steps`."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * progress))


def decays(name: str, tensor: Tensor) -> bool:
    """Weight decay applies to matrices only, never to norms, biases or the mask token."""
    return tensor.ndim >= 2 and not name.endswith("mask_token")


class AdamW:
    """Adam with decoupled weight decay over a named parameter registry."""

    def __init__(
        self,
        params: dict[str, Tensor],
        weight_decay: float = 0.05,
        betas: tuple[float, float] = (0.9, 0.95),
        eps: float = 1e-8
    ) -> None:
        self.params = params
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.first_moment = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.second_moment = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        """
        Apply one update in place.

        Raises:
            TrainingException: If a gradient is missing for a registered parameter
        """
        missing = set(self.params) - set(grads)
        if missing:
            raise TrainingException(f"Missing gradients for {sorted(missing)[:3]}")
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for name, tensor in self.params.items():
            grad = grads[name].astype(tensor.dtype, copy=False)
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            if self.weight_decay and decays(name, tensor):
                update = update + self.weight_decay * tensor.data
            tensor.data = (tensor.data - lr * update).astype(tensor.dtype, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for name in self.params:
            arrays[f"m/{name}"] = self.first_moment[name]
            arrays[f"v/{name}"] = self.second_moment[name]
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name, tensor in self.params.items():
            self.first_moment[name] = np.asarray(arrays[f"m/{name}"], dtype=tensor.dtype).copy()
            self.second_moment[name] = np.asarray(arrays[f"v/{name}"], dtype=tensor.dtype).copy()
        self.step_count = step_count
