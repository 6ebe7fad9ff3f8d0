"""Exponential-moving-average tracking of a teacher parameter vector.

The module is agnostic to what the vector means: a detector exposes its
parameters, the built-in simulator its skill statistics.  Updates are
functional; states are immutable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class EmaState:
    teacher: np.ndarray
    alpha: float
    step: int = 0

    def __post_init__(self):
        teacher = np.asarray(self.teacher, dtype=np.float64)
        if teacher.ndim != 1 or teacher.size < 1:
            raise ValidationError("teacher vector must be 1-d and non-empty")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.step < 0:
            raise ValidationError("step counter cannot be negative")
        teacher = np.ascontiguousarray(teacher)
        teacher.setflags(write=False)
        object.__setattr__(self, "teacher", teacher)

    def snapshot(self) -> dict:
        return {"teacher": self.teacher.tolist(), "alpha": self.alpha, "step": self.step}

    @classmethod
    def from_snapshot(cls, payload: Mapping) -> "EmaState":
        return cls(
            teacher=np.asarray(payload["teacher"], dtype=np.float64),
            alpha=float(payload["alpha"]),
            step=int(payload["step"]),
        )


def ema_update(state: EmaState, student: Sequence[float]) -> EmaState:
    """teacher' = alpha * teacher + (1 - alpha) * student, elementwise."""
    student_vec = np.asarray(student, dtype=np.float64)
    if student_vec.shape != state.teacher.shape:
        raise ValidationError(
            f"student vector has shape {student_vec.shape}, "
            f"teacher has {state.teacher.shape}"
        )
    updated = state.alpha * state.teacher + (1.0 - state.alpha) * student_vec
    return EmaState(teacher=updated, alpha=state.alpha, step=state.step + 1)
