"""Easy-to-hard scheduling of unlabeled data by detector confidence.

A domain in which the pre-trained detector is confident is, empirically, a
domain on which its pseudo-labels are precise.  The similarity score for a
domain is the mean over its images of the per-image average maximum class
score; sorting units (domains, or single images in the domain-free mode)
by that score descending and cutting the order into contiguous phases
yields the training curriculum.  Activation is cumulative: phase p trains
on the union of phases 1..p, so the cleanest data is never dropped.

An image with no detections scores 0.0: missed detections are the
signature of a hard domain, and excluding such images would inflate the
similarity of exactly the domains it should flag.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import ValidationError
from .records import DomainCatalog, PredictionRecord

ScheduleMode = Literal["domain", "image"]


@dataclass(frozen=True)
class DomainStats:
    """Per-domain aggregates: image count, similarity, per-class box counts."""

    domain_id: str
    image_count: int
    similarity: float
    box_counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "box_counts", tuple(int(c) for c in self.box_counts))
        if self.image_count < 0 or any(c < 0 for c in self.box_counts):
            raise ValidationError("counts must be non-negative")
        if not 0.0 <= self.similarity <= 1.0:
            raise ValidationError(f"similarity must lie in [0, 1], got {self.similarity}")


@dataclass(frozen=True)
class CurriculumSchedule:
    """Ordered phases of unit ids; earlier phases hold higher-similarity units."""

    phases: tuple[tuple[str, ...], ...]
    mode: ScheduleMode

    def __post_init__(self):
        object.__setattr__(
            self, "phases", tuple(tuple(str(u) for u in phase) for phase in self.phases)
        )
        if self.mode not in ("domain", "image"):
            raise ValidationError(f"unknown schedule mode {self.mode!r}")
        if not self.phases:
            raise ValidationError("schedule must have at least one phase")
        all_units = [u for phase in self.phases for u in phase]
        if len(set(all_units)) != len(all_units):
            raise ValidationError("schedule phases must be disjoint")

    @property
    def phase_count(self) -> int:
        return len(self.phases)


def image_score(record: PredictionRecord) -> float:
    """Mean over boxes of the maximum class score; 0.0 for a boxless image."""
    if record.box_count == 0:
        return 0.0
    return float(np.mean(record.max_scores))


def domain_similarity(
    records: Sequence[PredictionRecord], domains: DomainCatalog
) -> list[DomainStats]:
    """Per-domain similarity and box-count statistics, in catalog order.

    Records from an external labeled domain are ignored; every unlabeled
    domain in the catalog must contribute at least one record.
    """
    if not records:
        raise ValidationError("no prediction records supplied")
    class_count = records[0].class_count
    scores_by_domain: dict[str, list[float]] = {d: [] for d in domains.ids}
    counts_by_domain: dict[str, np.ndarray] = {
        d: np.zeros(class_count, dtype=np.int64) for d in domains.ids
    }
    for record in records:
        bucket = scores_by_domain.get(record.domain_id)
        if bucket is None:
            if record.domain_id == domains.labeled_domain:
                continue
            raise ValidationError(f"record references unknown domain {record.domain_id!r}")
        bucket.append(image_score(record))
        if record.box_count:
            counts_by_domain[record.domain_id] += np.bincount(
                record.argmax_classes, minlength=class_count
            )
    stats = []
    for domain_id in domains.ids:
        image_scores = scores_by_domain[domain_id]
        if not image_scores:
            raise ValidationError(f"domain {domain_id!r} has no prediction records")
        stats.append(
            DomainStats(
                domain_id=domain_id,
                image_count=len(image_scores),
                similarity=float(np.mean(np.asarray(image_scores, dtype=np.float64))),
                box_counts=tuple(counts_by_domain[domain_id].tolist()),
            )
        )
    return stats


def _partition(units: Sequence[str], phase_count: int) -> tuple[tuple[str, ...], ...]:
    # Contiguous split, as even as possible; earlier phases absorb the remainder.
    base, remainder = divmod(len(units), phase_count)
    phases = []
    start = 0
    for p in range(phase_count):
        size = base + (1 if p < remainder else 0)
        phases.append(tuple(units[start : start + size]))
        start += size
    return tuple(phases)


def build_schedule(stats: Sequence[DomainStats], phase_count: int) -> CurriculumSchedule:
    """Domain-mode schedule: domains sorted by similarity descending, then split."""
    if phase_count < 1 or phase_count > len(stats):
        raise ValidationError(
            f"phase_count must lie in [1, {len(stats)}], got {phase_count}"
        )
    ordered = sorted(stats, key=lambda s: (-s.similarity, s.domain_id))
    return CurriculumSchedule(
        phases=_partition([s.domain_id for s in ordered], phase_count), mode="domain"
    )


def build_schedule_imagewise(
    records: Sequence[PredictionRecord], phase_count: int
) -> CurriculumSchedule:
    """Image-mode schedule for corpora without meaningful domain labels."""
    if phase_count < 1 or phase_count > len(records):
        raise ValidationError(
            f"phase_count must lie in [1, {len(records)}], got {phase_count}"
        )
    ordered = sorted(records, key=lambda r: (-image_score(r), r.image_id))
    return CurriculumSchedule(
        phases=_partition([r.image_id for r in ordered], phase_count), mode="image"
    )


def active_set(
    schedule: CurriculumSchedule, phase_index: int, cumulative: bool = True
) -> frozenset[str]:
    """Unit ids trained at ``phase_index`` (1-based).

    Cumulative by default: the active set at phase p is the union of
    phases 1..p.  ``cumulative=False`` restricts to phase p alone.
    """
    if phase_index < 1 or phase_index > schedule.phase_count:
        raise ValidationError(
            f"phase_index must lie in [1, {schedule.phase_count}], got {phase_index}"
        )
    if cumulative:
        return frozenset(u for phase in schedule.phases[:phase_index] for u in phase)
    return frozenset(schedule.phases[phase_index - 1])


# ---------------------------------------------------------------------------
# File interfaces
# ---------------------------------------------------------------------------


def write_stats_csv(
    stats: Sequence[DomainStats], class_names: Sequence[str], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["domain_id", "image_count", "similarity"]
            + [f"boxes_{name}" for name in class_names]
        )
        for s in stats:
            writer.writerow(
                [s.domain_id, s.image_count, repr(s.similarity)] + list(s.box_counts)
            )


def read_stats_csv(path: str | Path) -> list[DomainStats]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[:3] != ["domain_id", "image_count", "similarity"]:
            raise ValidationError(f"unrecognized stats CSV header in {path}")
        stats = []
        for row in reader:
            stats.append(
                DomainStats(
                    domain_id=row[0],
                    image_count=int(row[1]),
                    similarity=float(row[2]),
                    box_counts=tuple(int(v) for v in row[3:]),
                )
            )
    return stats


def write_schedule(schedule: CurriculumSchedule, path: str | Path) -> None:
    payload = {"mode": schedule.mode, "phases": [list(p) for p in schedule.phases]}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=False, indent=2)
        handle.write("\n")


def read_schedule(path: str | Path) -> CurriculumSchedule:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    return CurriculumSchedule(
        phases=tuple(tuple(p) for p in payload["phases"]), mode=payload["mode"]
    )
