"""Synthetic multi-domain detection world and a parametric detector.

The generator produces ground truth with two controllable kinds of shift
per domain: a data-shift level ``shift`` in [0, 1] (0 means the domain
looks exactly like the labeled one) and a per-domain class distribution.
The simulated detector degrades with shift in two ways at once: each true
object is detected with probability ``base_recall * (1 - sensitivity *
shift)``, and true-positive confidence scores are drawn from a Beta law
and shifted down proportionally to ``shift``.  Hard domains therefore
show both more missed detections and less confident boxes.  Class
confusion and score laws are domain-independent, which is exactly the
regime in which box-count ratios between domains cancel the detector's
bias, making distribution estimation testable against the generator's
known per-domain truth.

Every sampled quantity comes from a counter-based stream seeded by
(global seed, stream tag, domain index, image index), so generation is
bit-stable and safe to parallelize per image.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .distributions import ClassDistribution, kl_divergence
from .errors import ValidationError
from .records import (
    ClassCatalog,
    DomainCatalog,
    GroundTruthRecord,
    PredictionRecord,
    class_box_counts,
    labeled_class_distribution,
)
from .thresholds import estimate_class_distribution

_GT_STREAM = 0
_DETECTOR_STREAM = 1

# TP scores can reach exactly 0 after the shift; a tiny floor keeps the
# argmax class well-defined against the sub-maximal score noise.
_SCORE_FLOOR = 1e-6


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str
    shift: float
    class_probs: tuple[float, ...]
    images: int
    objects_per_image: tuple[float, float] = (4.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "class_probs", tuple(float(p) for p in self.class_probs))
        object.__setattr__(
            self, "objects_per_image", tuple(float(v) for v in self.objects_per_image)
        )
        if not self.domain_id:
            raise ValidationError("domain_id must be non-empty")
        if not 0.0 <= self.shift <= 1.0:
            raise ValidationError(f"shift must lie in [0, 1], got {self.shift}")
        ClassDistribution(self.class_probs)
        if self.images < 1:
            raise ValidationError(f"images must be positive, got {self.images}")
        mean, dispersion = self.objects_per_image
        if mean <= 0 or dispersion < 0:
            raise ValidationError(
                f"objects_per_image must be (mean > 0, dispersion >= 0), got "
                f"{self.objects_per_image}"
            )

    @property
    def class_count(self) -> int:
        return len(self.class_probs)


@dataclass(frozen=True)
class DetectorSkill:
    """Parametric detector behaviour.

    ``tp_score`` / ``fp_score`` are Beta(a, b) parameters, either one
    (a, b) pair shared by every class or one pair per class.
    ``confusion`` is a row-stochastic C x C matrix mapping true class to
    predicted class (None means identity).  ``score_shift`` scales how far
    the domain shift drags true-positive scores down.
    """

    base_recall: float = 0.95
    shift_sensitivity: float = 0.8
    tp_score: tuple = (8.0, 2.0)
    fp_score: tuple = (2.0, 5.0)
    confusion: tuple[tuple[float, ...], ...] | None = None
    false_positive_rate: float = 0.3
    score_shift: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.base_recall <= 1.0:
            raise ValidationError(f"base_recall must lie in (0, 1], got {self.base_recall}")
        if self.shift_sensitivity < 0:
            raise ValidationError("shift_sensitivity must be non-negative")
        if self.false_positive_rate < 0:
            raise ValidationError("false_positive_rate must be non-negative")
        if self.score_shift < 0:
            raise ValidationError("score_shift must be non-negative")
        if self.confusion is not None:
            matrix = np.asarray(self.confusion, dtype=np.float64)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ValidationError("confusion matrix must be square")
            if np.any(matrix < 0) or not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9):
                raise ValidationError("confusion matrix rows must be non-negative and sum to 1")
            object.__setattr__(
                self, "confusion", tuple(tuple(row) for row in matrix.tolist())
            )

    def recall(self, shift: float) -> float:
        return min(max(self.base_recall * (1.0 - self.shift_sensitivity * shift), 0.0), 1.0)

    def confusion_matrix(self, class_count: int) -> np.ndarray:
        if self.confusion is None:
            return np.eye(class_count)
        matrix = np.asarray(self.confusion, dtype=np.float64)
        if matrix.shape[0] != class_count:
            raise ValidationError(
                f"confusion matrix covers {matrix.shape[0]} classes, world has {class_count}"
            )
        return matrix

    def to_dict(self) -> dict:
        return {
            "base_recall": self.base_recall,
            "shift_sensitivity": self.shift_sensitivity,
            "tp_score": _beta_to_jsonable(self.tp_score),
            "fp_score": _beta_to_jsonable(self.fp_score),
            "confusion": None
            if self.confusion is None
            else [list(row) for row in self.confusion],
            "false_positive_rate": self.false_positive_rate,
            "score_shift": self.score_shift,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "DetectorSkill":
        defaults = cls()
        confusion = payload.get("confusion")
        return cls(
            base_recall=float(payload.get("base_recall", defaults.base_recall)),
            shift_sensitivity=float(
                payload.get("shift_sensitivity", defaults.shift_sensitivity)
            ),
            tp_score=_beta_from_jsonable(payload.get("tp_score", defaults.tp_score)),
            fp_score=_beta_from_jsonable(payload.get("fp_score", defaults.fp_score)),
            confusion=None if confusion is None else tuple(tuple(r) for r in confusion),
            false_positive_rate=float(
                payload.get("false_positive_rate", defaults.false_positive_rate)
            ),
            score_shift=float(payload.get("score_shift", defaults.score_shift)),
        )


def _beta_to_jsonable(params: tuple) -> list:
    arr = np.asarray(params, dtype=np.float64)
    return arr.tolist()


def _beta_from_jsonable(params) -> tuple:
    arr = np.asarray(params, dtype=np.float64)
    if arr.ndim == 1:
        return tuple(arr.tolist())
    return tuple(tuple(row) for row in arr.tolist())


def _beta_params(params: tuple, class_count: int) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(params, dtype=np.float64)
    if arr.ndim == 1 and arr.shape == (2,):
        a = np.full(class_count, arr[0])
        b = np.full(class_count, arr[1])
    elif arr.ndim == 2 and arr.shape == (class_count, 2):
        a, b = arr[:, 0].copy(), arr[:, 1].copy()
    else:
        raise ValidationError(
            f"Beta parameters must be one (a, b) pair or {class_count} pairs, got shape "
            f"{arr.shape}"
        )
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValidationError("Beta parameters must be positive")
    return a, b


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    specs: tuple[DomainSpec, ...]
    class_names: tuple[str, ...]
    labeled_domain: str | None
    seed: int
    canvas: tuple[float, float]
    ground_truth: tuple[GroundTruthRecord, ...] = field(repr=False)

    @property
    def domain_ids(self) -> tuple[str, ...]:
        return tuple(s.domain_id for s in self.specs)

    def spec_for(self, domain_id: str) -> DomainSpec:
        for spec in self.specs:
            if spec.domain_id == domain_id:
                return spec
        raise ValidationError(f"unknown domain {domain_id!r}")

    def ground_truth_for(self, domain_id: str) -> list[GroundTruthRecord]:
        self.spec_for(domain_id)
        return [g for g in self.ground_truth if g.domain_id == domain_id]

    def catalogs(self) -> tuple[ClassCatalog, DomainCatalog]:
        if self.labeled_domain is None:
            raise ValidationError("world has no designated labeled domain")
        unlabeled = tuple(d for d in self.domain_ids if d != self.labeled_domain)
        return (
            ClassCatalog(self.class_names),
            DomainCatalog(
                ids=unlabeled, labeled_domain=self.labeled_domain, labeled_is_external=True
            ),
        )


def _image_rng(seed: int, stream: int, domain_index: int, image_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, domain_index, image_index])


def _sample_boxes(rng: np.random.Generator, n: int, canvas: tuple[float, float]) -> np.ndarray:
    boxes = np.empty((n, 4), dtype=np.float64)
    boxes[:, 2:4] = rng.uniform(16.0, 160.0, (n, 2))
    boxes[:, 0:2] = rng.random((n, 2)) * (np.asarray(canvas) - boxes[:, 2:4])
    return boxes


def generate_world(
    specs: Sequence[DomainSpec],
    seed: int,
    *,
    class_names: Sequence[str] | None = None,
    labeled_domain: str | None = None,
    canvas: tuple[float, float] = (1000.0, 1000.0),
) -> SyntheticWorld:
    """Draw a fully reproducible multi-domain ground-truth world."""
    specs = tuple(specs)
    if not specs:
        raise ValidationError("at least one domain spec is required")
    if seed < 0:
        raise ValidationError("seed must be non-negative")
    ids = [s.domain_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValidationError("domain ids must be unique")
    class_count = specs[0].class_count
    if any(s.class_count != class_count for s in specs):
        raise ValidationError("all domain specs must agree on the class count")
    if class_names is None:
        class_names = tuple(f"class_{c}" for c in range(class_count))
    else:
        class_names = tuple(class_names)
        if len(class_names) != class_count:
            raise ValidationError("class_names length must match the spec class count")
    if labeled_domain is not None and labeled_domain not in ids:
        raise ValidationError(f"labeled domain {labeled_domain!r} is not among the specs")

    records = []
    for domain_index, spec in enumerate(specs):
        probs = np.asarray(spec.class_probs, dtype=np.float64)
        class_cdf = np.cumsum(probs / probs.sum())
        mean, dispersion = spec.objects_per_image
        for image_index in range(spec.images):
            rng = _image_rng(seed, _GT_STREAM, domain_index, image_index)
            if dispersion > 0:
                rate = rng.gamma(shape=1.0 / dispersion, scale=mean * dispersion)
            else:
                rate = mean
            n = int(rng.poisson(rate))
            if n:
                classes = np.minimum(
                    np.searchsorted(class_cdf, rng.random(n), side="right"),
                    class_count - 1,
                ).astype(np.int64)
            else:
                classes = np.empty(0, np.int64)
            records.append(
                GroundTruthRecord(
                    image_id=f"{spec.domain_id}-{image_index:06d}",
                    domain_id=spec.domain_id,
                    class_indices=classes,
                    bboxes=_sample_boxes(rng, n, canvas),
                )
            )
    return SyntheticWorld(
        specs=specs,
        class_names=class_names,
        labeled_domain=labeled_domain,
        seed=int(seed),
        canvas=(float(canvas[0]), float(canvas[1])),
        ground_truth=tuple(records),
    )


def simulate_detector(
    world: SyntheticWorld, skill: DetectorSkill, seed: int
) -> list[PredictionRecord]:
    """Run the parametric detector over every image of the world.

    Each true object is detected with probability ``skill.recall(shift)``;
    a detected object's predicted class is drawn from its confusion row
    and its max score from the class's TP Beta law, shifted down by
    ``score_shift * shift``.  On top of that, ``false_positive_rate``
    spurious boxes per image (on average) appear with FP Beta scores.
    Detected boxes reuse the true geometry with mild jitter, so oracle
    matching at IoU >= 0.5 is non-trivial but reliable.
    """
    if seed < 0:
        raise ValidationError("seed must be non-negative")
    class_count = len(world.class_names)
    confusion = skill.confusion_matrix(class_count)
    confusion_cdf = np.cumsum(confusion, axis=1)
    tp_a, tp_b = _beta_params(skill.tp_score, class_count)
    fp_a, fp_b = _beta_params(skill.fp_score, class_count)

    domain_index = {d: i for i, d in enumerate(world.domain_ids)}
    shifts = {s.domain_id: s.shift for s in world.specs}
    recalls = {s.domain_id: skill.recall(s.shift) for s in world.specs}
    image_counter: dict[str, int] = {d: 0 for d in world.domain_ids}

    records = []
    for gt in world.ground_truth:
        d = domain_index[gt.domain_id]
        i = image_counter[gt.domain_id]
        image_counter[gt.domain_id] += 1
        rng = _image_rng(seed, _DETECTOR_STREAM, d, i)
        shift = shifts[gt.domain_id]
        recall = recalls[gt.domain_id]

        detected = np.nonzero(rng.random(gt.object_count) < recall)[0]
        n_tp = detected.size
        if n_tp:
            true_classes = gt.class_indices[detected]
            u = rng.random(n_tp)
            predicted = np.minimum(
                (u[:, None] > confusion_cdf[true_classes]).sum(axis=1), class_count - 1
            )
            tp_scores = rng.beta(tp_a[predicted], tp_b[predicted])
            tp_scores = np.clip(
                tp_scores - skill.score_shift * shift, _SCORE_FLOOR, 1.0
            )
            base = gt.bboxes[detected]
            noise = rng.normal(0.0, 0.05, (n_tp, 4))
            size_noise = np.clip(1.0 + noise[:, 2:4], 0.7, 1.3)
            offset = noise[:, 0:2] * base[:, 2:4]
            tp_boxes = np.empty((n_tp, 4), dtype=np.float64)
            tp_boxes[:, 2:4] = base[:, 2:4] * size_noise
            tp_boxes[:, 0] = np.clip(base[:, 0] + offset[:, 0], 0.0, world.canvas[0] - tp_boxes[:, 2])
            tp_boxes[:, 1] = np.clip(base[:, 1] + offset[:, 1], 0.0, world.canvas[1] - tp_boxes[:, 3])
        else:
            predicted = np.empty(0, dtype=np.int64)
            tp_scores = np.empty(0, dtype=np.float64)
            tp_boxes = np.empty((0, 4), dtype=np.float64)

        n_fp = int(rng.poisson(skill.false_positive_rate))
        if n_fp:
            fp_classes = rng.integers(0, class_count, n_fp)
            fp_scores = np.clip(rng.beta(fp_a[fp_classes], fp_b[fp_classes]), _SCORE_FLOOR, 1.0)
            fp_boxes = _sample_boxes(rng, n_fp, world.canvas)
        else:
            fp_classes = np.empty(0, dtype=np.int64)
            fp_scores = np.empty(0, dtype=np.float64)
            fp_boxes = np.empty((0, 4), dtype=np.float64)

        n = n_tp + n_fp
        classes = np.concatenate([predicted, fp_classes]).astype(np.int64)
        max_scores = np.concatenate([tp_scores, fp_scores])
        bboxes = np.vstack([tp_boxes, fp_boxes])
        # Score vector peaked at the sampled class: sub-maximal entries stay
        # strictly below the max so the argmax is exactly the sampled class.
        scores = rng.uniform(0.0, 0.5, (n, class_count)) * max_scores[:, None]
        scores[np.arange(n), classes] = max_scores
        records.append(
            PredictionRecord(
                image_id=gt.image_id, domain_id=gt.domain_id, scores=scores, bboxes=bboxes
            )
        )
    return records


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def oracle_class_distribution(world: SyntheticWorld, domain_id: str) -> ClassDistribution:
    """Exact class frequencies of the generated objects in one domain."""
    counts = np.zeros(len(world.class_names), dtype=np.int64)
    for gt in world.ground_truth_for(domain_id):
        if gt.object_count:
            counts += np.bincount(gt.class_indices, minlength=counts.size)
    total = int(counts.sum())
    if total == 0:
        raise ValidationError(f"domain {domain_id!r} contains no objects")
    return ClassDistribution(tuple((counts / total).tolist()))


def iou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class PrecisionStats:
    domain_id: str
    matched: int
    total: int

    @property
    def precision(self) -> float:
        return self.matched / self.total if self.total else 0.0


def measure_precision(
    ground_truth: Sequence[GroundTruthRecord],
    predictions: Sequence[PredictionRecord],
    *,
    min_score: float | None = None,
    iou_threshold: float = 0.5,
) -> dict[str, PrecisionStats]:
    """Per-domain precision of predicted boxes against ground truth.

    A predicted box counts as correct when it matches a not-yet-matched
    true object of the same class in the same image with IoU at or above
    the threshold; matching is greedy in descending score order.
    ``min_score`` restricts the evaluation to boxes at or above a score.
    """
    gt_by_key = {(g.image_id, g.domain_id): g for g in ground_truth}
    matched: dict[str, int] = {}
    total: dict[str, int] = {}
    for record in predictions:
        domain = record.domain_id
        matched.setdefault(domain, 0)
        total.setdefault(domain, 0)
        if record.box_count == 0:
            continue
        scores = record.max_scores
        classes = record.argmax_classes
        keep = np.arange(record.box_count)
        if min_score is not None:
            keep = keep[scores[keep] >= min_score]
        if keep.size == 0:
            continue
        total[domain] += int(keep.size)
        gt = gt_by_key.get((record.image_id, record.domain_id))
        if gt is None or gt.object_count == 0:
            continue
        order = keep[np.argsort(-scores[keep], kind="stable")]
        taken = np.zeros(gt.object_count, dtype=bool)
        for b in order.tolist():
            box_class = int(classes[b])
            candidates = np.nonzero((gt.class_indices == box_class) & ~taken)[0]
            for g_idx in candidates.tolist():
                if iou(record.bboxes[b], gt.bboxes[g_idx]) >= iou_threshold:
                    taken[g_idx] = True
                    matched[domain] += 1
                    break
    return {
        d: PrecisionStats(domain_id=d, matched=matched[d], total=total[d]) for d in total
    }


@dataclass(frozen=True)
class EstimationReport:
    domain_id: str
    kl_estimated: float
    kl_labeled_prior: float


def evaluate_estimation(
    world: SyntheticWorld,
    predictions: Sequence[PredictionRecord],
    labeled_gt: Sequence[GroundTruthRecord],
) -> list[EstimationReport]:
    """Compare estimated class distributions against the generator's truth.

    For each unlabeled domain, reports the divergence of the true class
    distribution from (a) the box-count-ratio estimate and (b) the
    labeled-set prior used as-is.
    """
    if not labeled_gt:
        raise ValidationError("labeled ground truth is empty")
    labeled_domain = labeled_gt[0].domain_id
    if any(g.domain_id != labeled_domain for g in labeled_gt):
        raise ValidationError("labeled ground truth spans multiple domains")
    class_count = len(world.class_names)
    labeled_prior = labeled_class_distribution(labeled_gt, class_count)
    labeled_predictions = [r for r in predictions if r.domain_id == labeled_domain]
    if not labeled_predictions:
        raise ValidationError(f"no predictions for labeled domain {labeled_domain!r}")
    labeled_counts = class_box_counts(labeled_predictions, class_count)

    reports = []
    for domain_id in world.domain_ids:
        if domain_id == labeled_domain:
            continue
        domain_predictions = [r for r in predictions if r.domain_id == domain_id]
        if not domain_predictions:
            raise ValidationError(f"no predictions for domain {domain_id!r}")
        unlabeled_counts = class_box_counts(domain_predictions, class_count)
        estimated = estimate_class_distribution(labeled_prior, labeled_counts, unlabeled_counts)
        truth = oracle_class_distribution(world, domain_id)
        reports.append(
            EstimationReport(
                domain_id=domain_id,
                kl_estimated=kl_divergence(truth, estimated),
                kl_labeled_prior=kl_divergence(truth, labeled_prior),
            )
        )
    return reports


def write_estimation_csv(reports: Sequence[EstimationReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["domain_id", "kl_estimated", "kl_labeled_prior"])
        for r in reports:
            writer.writerow([r.domain_id, repr(r.kl_estimated), repr(r.kl_labeled_prior)])


# ---------------------------------------------------------------------------
# World config file
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorldConfig:
    """Declarative description of a world plus the detector to run on it."""

    specs: tuple[DomainSpec, ...]
    skill: DetectorSkill
    class_names: tuple[str, ...]
    labeled_domain: str
    seed: int = 0
    canvas: tuple[float, float] = (1000.0, 1000.0)

    def build(self, seed: int | None = None) -> tuple[SyntheticWorld, list[PredictionRecord]]:
        """Generate the world and its detector predictions (one shared seed)."""
        effective = self.seed if seed is None else seed
        world = generate_world(
            self.specs,
            effective,
            class_names=self.class_names,
            labeled_domain=self.labeled_domain,
            canvas=self.canvas,
        )
        return world, simulate_detector(world, self.skill, effective)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.class_names),
            "labeled_domain": self.labeled_domain,
            "seed": self.seed,
            "canvas": list(self.canvas),
            "domains": [
                {
                    "id": s.domain_id,
                    "shift": s.shift,
                    "class_probs": list(s.class_probs),
                    "images": s.images,
                    "objects_per_image": list(s.objects_per_image),
                }
                for s in self.specs
            ],
            "skill": self.skill.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "WorldConfig":
        try:
            specs = tuple(
                DomainSpec(
                    domain_id=str(d["id"]),
                    shift=float(d["shift"]),
                    class_probs=tuple(d["class_probs"]),
                    images=int(d["images"]),
                    objects_per_image=tuple(d.get("objects_per_image", (4.0, 0.0))),
                )
                for d in payload["domains"]
            )
            return cls(
                specs=specs,
                skill=DetectorSkill.from_dict(payload.get("skill", {})),
                class_names=tuple(payload["classes"]),
                labeled_domain=str(payload["labeled_domain"]),
                seed=int(payload.get("seed", 0)),
                canvas=tuple(payload.get("canvas", (1000.0, 1000.0))),
            )
        except KeyError as exc:
            raise ValidationError(f"world config is missing field {exc.args[0]!r}") from exc


def load_world_config(path: str | Path) -> WorldConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return WorldConfig.from_dict(json.load(handle))


def save_world_config(config: WorldConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(config.to_dict(), handle, ensure_ascii=False, indent=2)
        handle.write("\n")
