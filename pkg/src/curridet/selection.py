"""Pseudo-label selection: applying thresholds to curriculum-gated records.

A box becomes a pseudo-label iff its maximum class score strictly exceeds
the current threshold for (its argmax class, its domain).  Rejected boxes
are simply skipped, never treated as negatives.  The round loop refreshes
the threshold table once per batch of processed records, from the
accumulator state at that boundary, so filtering within a batch sees an
immutable snapshot.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .curriculum import CurriculumSchedule, active_set
from .distributions import ClassDistribution
from .errors import ValidationError
from .records import PredictionRecord
from .thresholds import PseudoLabelAccumulator, ThresholdTable, compute_thresholds


@dataclass(frozen=True)
class PseudoLabel:
    image_id: str
    domain_id: str
    bbox: tuple[float, float, float, float]
    class_index: int
    score: float
    threshold_used: float


@dataclass(frozen=True)
class RoundReport:
    """Accounting for one round of the selection loop."""

    phase: int
    records_processed: int
    boxes_seen: int
    accepted_total: int
    accepted: dict[tuple[str, int], int]
    boxes_per_image_mean: float
    threshold_snapshot_id: int

    def __post_init__(self):
        if self.accepted_total > self.boxes_seen:
            raise ValidationError("accepted count cannot exceed boxes seen")
        if min(self.records_processed, self.boxes_seen, self.accepted_total, 0) < 0:
            raise ValidationError("report counts must be non-negative")


def select_pseudo_labels(
    record: PredictionRecord, table: ThresholdTable
) -> list[PseudoLabel]:
    """Boxes of one record whose max score beats its class-domain threshold."""
    row = table.row(record.domain_id)
    if record.box_count == 0:
        return []
    max_scores = record.max_scores
    classes = record.argmax_classes
    accepted = np.nonzero(max_scores > row[classes])[0]
    labels = []
    for i in accepted.tolist():
        c = int(classes[i])
        labels.append(
            PseudoLabel(
                image_id=record.image_id,
                domain_id=record.domain_id,
                bbox=tuple(record.bboxes[i].tolist()),
                class_index=c,
                score=float(max_scores[i]),
                threshold_used=float(row[c]),
            )
        )
    return labels


def run_round(
    records: Sequence[PredictionRecord],
    schedule: CurriculumSchedule,
    phase: int,
    accumulator: PseudoLabelAccumulator,
    estimates: Mapping[str, ClassDistribution],
    tau: float,
    mu: float,
    *,
    batch_size: int = 16,
    cumulative: bool = True,
    snapshot_start: int = 0,
) -> tuple[list[PseudoLabel], PseudoLabelAccumulator, RoundReport]:
    """Filter the phase's active records once, feeding accepts back into the accumulator.

    Only records whose unit (domain id in domain mode, image id in image
    mode) belongs to ``active_set(schedule, phase)`` are processed; input
    order is preserved.  The threshold table is recomputed from the
    accumulator at the start of each batch of ``batch_size`` records.
    """
    if batch_size < 1:
        raise ValidationError(f"batch_size must be positive, got {batch_size}")
    active = active_set(schedule, phase, cumulative=cumulative)
    if schedule.mode == "domain":
        selected = [r for r in records if r.domain_id in active]
    else:
        selected = [r for r in records if r.image_id in active]

    labels: list[PseudoLabel] = []
    accepted_by_key: dict[tuple[str, int], int] = {}
    boxes_seen = 0
    snapshot_id = snapshot_start
    for start in range(0, len(selected), batch_size):
        batch = selected[start : start + batch_size]
        snapshot_id += 1
        table = compute_thresholds(accumulator, estimates, tau, mu, snapshot_id=snapshot_id)
        batch_accepts: dict[str, list[int]] = {}
        for record in batch:
            boxes_seen += record.box_count
            for label in select_pseudo_labels(record, table):
                labels.append(label)
                batch_accepts.setdefault(label.domain_id, []).append(label.class_index)
                key = (label.domain_id, label.class_index)
                accepted_by_key[key] = accepted_by_key.get(key, 0) + 1
        for domain_id, class_indices in batch_accepts.items():
            accumulator.record(domain_id, class_indices)

    processed = len(selected)
    report = RoundReport(
        phase=phase,
        records_processed=processed,
        boxes_seen=boxes_seen,
        accepted_total=len(labels),
        accepted=accepted_by_key,
        boxes_per_image_mean=(len(labels) / processed) if processed else 0.0,
        threshold_snapshot_id=snapshot_id,
    )
    return labels, accumulator, report


# ---------------------------------------------------------------------------
# File interfaces
# ---------------------------------------------------------------------------


def serialize_pseudo_label(label: PseudoLabel) -> str:
    return json.dumps(
        {
            "image_id": label.image_id,
            "domain_id": label.domain_id,
            "bbox": list(label.bbox),
            "class": label.class_index,
            "score": label.score,
            "threshold_used": label.threshold_used,
        },
        ensure_ascii=False,
    )


def write_pseudo_labels(labels: Iterable[PseudoLabel], destination: str | Path) -> None:
    with open(destination, "w", encoding="utf-8") as handle:
        for label in labels:
            handle.write(serialize_pseudo_label(label))
            handle.write("\n")


def load_pseudo_labels(source: str | Path) -> list[PseudoLabel]:
    labels = []
    with open(source, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            labels.append(
                PseudoLabel(
                    image_id=payload["image_id"],
                    domain_id=payload["domain_id"],
                    bbox=tuple(payload["bbox"]),
                    class_index=int(payload["class"]),
                    score=float(payload["score"]),
                    threshold_used=float(payload["threshold_used"]),
                )
            )
    return labels


ROUND_CSV_COLUMNS = [
    "phase",
    "records_processed",
    "boxes_seen",
    "accepted_total",
    "boxes_per_image_mean",
    "threshold_snapshot_id",
]


def append_round_reports(reports: Sequence[RoundReport], path: str | Path) -> None:
    path = Path(path)
    new_file = not path.exists()
    with open(path, "a", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        if new_file:
            writer.writerow(ROUND_CSV_COLUMNS)
        for r in reports:
            writer.writerow(
                [
                    r.phase,
                    r.records_processed,
                    r.boxes_seen,
                    r.accepted_total,
                    repr(r.boxes_per_image_mean),
                    r.threshold_snapshot_id,
                ]
            )


def read_round_reports(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            rows.append(
                {
                    "phase": int(row["phase"]),
                    "records_processed": int(row["records_processed"]),
                    "boxes_seen": int(row["boxes_seen"]),
                    "accepted_total": int(row["accepted_total"]),
                    "boxes_per_image_mean": float(row["boxes_per_image_mean"]),
                    "threshold_snapshot_id": int(row["threshold_snapshot_id"]),
                }
            )
    return rows
