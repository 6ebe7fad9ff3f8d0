"""Class-probability vectors and divergence between them.

A ``ClassDistribution`` is the engine's universal representation for class
frequencies: the labeled-set prior, per-domain estimates, and accumulated
pseudo-label proportions all use it.  A distribution is either a proper
probability vector (non-negative, sums to 1) or an explicitly flagged
"empty" placeholder (all zeros) used before any mass has been observed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ValidationError

SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ClassDistribution:
    probs: tuple[float, ...]
    empty: bool = False

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) < 1:
            raise ValidationError("distribution must cover at least one class")
        if self.empty:
            if any(p != 0.0 for p in probs):
                raise ValidationError("empty distribution must be all zeros")
            return
        if any(not math.isfinite(p) or p < 0.0 for p in probs):
            raise ValidationError(f"probabilities must be finite and non-negative, got {probs}")
        total = math.fsum(probs)
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ValidationError(f"probabilities must sum to 1, got {total!r}")

    @classmethod
    def from_counts(cls, counts: Sequence[float]) -> "ClassDistribution":
        arr = np.asarray(counts, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValidationError("counts must be a non-empty 1-d sequence")
        if np.any(arr < 0):
            raise ValidationError("counts must be non-negative")
        total = float(arr.sum())
        if total <= 0.0:
            raise ValidationError("cannot normalize all-zero counts")
        return cls(tuple((arr / total).tolist()))

    @classmethod
    def empty_of(cls, class_count: int) -> "ClassDistribution":
        return cls((0.0,) * class_count, empty=True)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, index: int) -> float:
        return self.probs[index]

    def __iter__(self) -> Iterator[float]:
        return iter(self.probs)


def kl_divergence(p: ClassDistribution, q: ClassDistribution) -> float:
    """KL(p || q) in nats, with 0*ln(0) = 0 and +inf where q lacks support of p."""
    if p.empty or q.empty:
        raise ValidationError("KL divergence is undefined for empty distributions")
    if len(p) != len(q):
        raise ValidationError(f"distribution lengths differ: {len(p)} vs {len(q)}")
    total = 0.0
    for pc, qc in zip(p.probs, q.probs):
        if pc == 0.0:
            continue
        if qc == 0.0:
            return math.inf
        total += pc * math.log(pc / qc)
    return total
