"""Canonical data model for detector outputs and ground-truth annotations.

The engine never looks at pixels.  Its universal input is the
``PredictionRecord``: one image's worth of detector output, i.e. a set of
boxes each carrying a per-class score vector, tagged with the domain the
image came from.  Scores are stored exactly as the detector emitted them
(per-class sigmoid heads need not sum to 1); renormalizing would change
the semantics of every downstream statistic.

Wire formats:

* predictions: UTF-8 line-delimited JSON, one image per line, with fields
  ``image_id``, ``domain_id``, ``boxes`` (each box ``{"bbox": [x, y, w, h],
  "scores": [...]}``).  Floats are serialized with full round-trip
  precision, so ``serialize(ingest(x))`` is byte-stable on the canonical
  form.
* ground truth: a COCO-style annotation document (``images``,
  ``annotations`` with ``category_id`` and ``bbox``, ``categories``) plus
  a sidecar JSON object mapping image_id -> domain_id.
* catalogs: one JSON config naming classes, domains and the labeled
  domain.  Catalogs are explicit configuration, never inferred from data,
  so class indices cannot silently drift between corpora.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import IO, Iterable, Sequence, Union

import numpy as np

from .distributions import ClassDistribution
from .errors import ParseError, ValidationError

Source = Union[str, Path, IO[str], IO[bytes]]


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered, unique class names; the index in ``names`` is the class index."""

    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 1:
            raise ValidationError("class catalog must name at least one class")
        if any(not isinstance(n, str) or not n for n in self.names):
            raise ValidationError("class names must be non-empty strings")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("class names must be unique")

    @property
    def count(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown class name {name!r}") from None


@dataclass(frozen=True)
class DomainCatalog:
    """The k unlabeled domain ids plus the designated labeled domain.

    The labeled domain either appears in ``ids`` (it also contributes
    unlabeled data) or is marked external via ``labeled_is_external``.
    Requiring the flag keeps a typo in ``labeled_domain`` from silently
    becoming a phantom external domain.
    """

    ids: tuple[str, ...]
    labeled_domain: str
    labeled_is_external: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        if len(self.ids) < 1:
            raise ValidationError("domain catalog must list at least one unlabeled domain")
        if any(not isinstance(d, str) or not d for d in self.ids):
            raise ValidationError("domain ids must be non-empty strings")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("domain ids must be unique")
        if not self.labeled_domain:
            raise ValidationError("labeled_domain must be set")
        present = self.labeled_domain in self.ids
        if present and self.labeled_is_external:
            raise ValidationError(
                f"labeled domain {self.labeled_domain!r} is listed as unlabeled "
                "but marked external"
            )
        if not present and not self.labeled_is_external:
            raise ValidationError(
                f"labeled domain {self.labeled_domain!r} is not among the domain ids; "
                "set labeled_is_external if that is intended"
            )

    @property
    def unlabeled_count(self) -> int:
        return len(self.ids)

    def known(self, domain_id: str) -> bool:
        return domain_id in self.ids or domain_id == self.labeled_domain


@dataclass(frozen=True)
class ScoredBox:
    """One detected box: pixel bbox (x, y, w, h) and a per-class score vector."""

    bbox: tuple[float, float, float, float]
    scores: tuple[float, ...]

    def __post_init__(self):
        bbox = tuple(float(v) for v in self.bbox)
        scores = tuple(float(s) for s in self.scores)
        object.__setattr__(self, "bbox", bbox)
        object.__setattr__(self, "scores", scores)
        if len(bbox) != 4:
            raise ValidationError(f"bbox must have 4 components, got {len(bbox)}")
        if any(not math.isfinite(v) for v in bbox):
            raise ValidationError("bbox components must be finite")
        if bbox[2] <= 0 or bbox[3] <= 0:
            raise ValidationError(f"bbox width and height must be positive, got {bbox}")
        if len(scores) < 1:
            raise ValidationError("score vector must cover at least one class")
        if any(not math.isfinite(s) or s < 0.0 or s > 1.0 for s in scores):
            raise ValidationError(f"scores must lie in [0, 1], got {scores}")


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    """One image's detector output.

    Box data is stored column-major-friendly as two arrays (``scores`` of
    shape (n, C), ``bboxes`` of shape (n, 4)) so the streaming data plane
    can stay vectorized; ``boxes`` materializes ``ScoredBox`` values on
    demand.  Records are immutable: the arrays are read-only views.
    """

    image_id: str
    domain_id: str
    scores: np.ndarray
    bboxes: np.ndarray

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id must be non-empty")
        if not self.domain_id:
            raise ValidationError("domain_id must be non-empty")
        scores = np.asarray(self.scores, dtype=np.float64)
        bboxes = np.asarray(self.bboxes, dtype=np.float64)
        if scores.ndim != 2:
            raise ValidationError("scores must be a (n_boxes, n_classes) array")
        if bboxes.ndim != 2 or bboxes.shape[1] != 4:
            raise ValidationError("bboxes must be a (n_boxes, 4) array")
        if scores.shape[0] != bboxes.shape[0]:
            raise ValidationError("scores and bboxes disagree on box count")
        object.__setattr__(self, "scores", _as_readonly(scores))
        object.__setattr__(self, "bboxes", _as_readonly(bboxes))

    @classmethod
    def from_boxes(
        cls,
        image_id: str,
        domain_id: str,
        boxes: Sequence[ScoredBox],
        class_count: int | None = None,
    ) -> "PredictionRecord":
        if boxes:
            class_count = len(boxes[0].scores)
            scores = np.array([b.scores for b in boxes], dtype=np.float64)
            bboxes = np.array([b.bbox for b in boxes], dtype=np.float64)
        else:
            if class_count is None:
                raise ValidationError("class_count is required for a record with no boxes")
            scores = np.empty((0, class_count), dtype=np.float64)
            bboxes = np.empty((0, 4), dtype=np.float64)
        return cls(image_id=image_id, domain_id=domain_id, scores=scores, bboxes=bboxes)

    @property
    def box_count(self) -> int:
        return self.scores.shape[0]

    @property
    def class_count(self) -> int:
        return self.scores.shape[1]

    @property
    def boxes(self) -> tuple[ScoredBox, ...]:
        return tuple(
            ScoredBox(bbox=tuple(self.bboxes[i].tolist()), scores=tuple(self.scores[i].tolist()))
            for i in range(self.box_count)
        )

    @cached_property
    def max_scores(self) -> np.ndarray:
        """Per-box maximum class score, shape (n_boxes,)."""
        if self.box_count == 0:
            return np.empty(0, dtype=np.float64)
        out = self.scores.max(axis=1)
        out.setflags(write=False)
        return out

    @cached_property
    def argmax_classes(self) -> np.ndarray:
        """Per-box argmax class index; ties resolve to the lowest index."""
        if self.box_count == 0:
            return np.empty(0, dtype=np.int64)
        out = self.scores.argmax(axis=1).astype(np.int64)
        out.setflags(write=False)
        return out


@dataclass(frozen=True, eq=False)
class GroundTruthRecord:
    """One image's annotated objects: class indices and pixel bboxes."""

    image_id: str
    domain_id: str
    class_indices: np.ndarray
    bboxes: np.ndarray

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id must be non-empty")
        if not self.domain_id:
            raise ValidationError("domain_id must be non-empty")
        idx = np.asarray(self.class_indices, dtype=np.int64)
        bboxes = np.asarray(self.bboxes, dtype=np.float64)
        if idx.ndim != 1:
            raise ValidationError("class_indices must be 1-d")
        if bboxes.ndim != 2 or bboxes.shape[1] != 4:
            raise ValidationError("bboxes must be a (n_objects, 4) array")
        if idx.shape[0] != bboxes.shape[0]:
            raise ValidationError("class_indices and bboxes disagree on object count")
        if idx.size and idx.min() < 0:
            raise ValidationError("class indices must be non-negative")
        idx = np.ascontiguousarray(idx)
        idx.setflags(write=False)
        object.__setattr__(self, "class_indices", idx)
        object.__setattr__(self, "bboxes", _as_readonly(bboxes))

    @classmethod
    def from_objects(
        cls,
        image_id: str,
        domain_id: str,
        objects: Sequence[tuple[int, Sequence[float]]],
    ) -> "GroundTruthRecord":
        if objects:
            idx = np.array([o[0] for o in objects], dtype=np.int64)
            bboxes = np.array([o[1] for o in objects], dtype=np.float64)
        else:
            idx = np.empty(0, dtype=np.int64)
            bboxes = np.empty((0, 4), dtype=np.float64)
        return cls(image_id=image_id, domain_id=domain_id, class_indices=idx, bboxes=bboxes)

    @property
    def object_count(self) -> int:
        return int(self.class_indices.shape[0])

    @property
    def objects(self) -> tuple[tuple[int, tuple[float, float, float, float]], ...]:
        return tuple(
            (int(self.class_indices[i]), tuple(self.bboxes[i].tolist()))
            for i in range(self.object_count)
        )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_record(
    record: PredictionRecord, classes: ClassCatalog, domains: DomainCatalog
) -> None:
    if not domains.known(record.domain_id):
        raise ValidationError(
            f"record {record.image_id!r} references unknown domain {record.domain_id!r}"
        )
    if record.class_count != classes.count:
        raise ValidationError(
            f"record {record.image_id!r} carries {record.class_count} class scores, "
            f"catalog defines {classes.count}"
        )
    if record.box_count:
        if not np.all(np.isfinite(record.scores)):
            raise ValidationError(f"record {record.image_id!r} has non-finite scores")
        if record.scores.min() < 0.0 or record.scores.max() > 1.0:
            raise ValidationError(f"record {record.image_id!r} has scores outside [0, 1]")
        if np.any(record.bboxes[:, 2] <= 0) or np.any(record.bboxes[:, 3] <= 0):
            raise ValidationError(
                f"record {record.image_id!r} has a box with non-positive width or height"
            )


def validate_corpus(
    records: Sequence[PredictionRecord], classes: ClassCatalog, domains: DomainCatalog
) -> None:
    """Validate every record and reject duplicate (image_id, domain_id) keys."""
    seen: set[tuple[str, str]] = set()
    for record in records:
        validate_record(record, classes, domains)
        key = (record.image_id, record.domain_id)
        if key in seen:
            raise ValidationError(f"duplicate record for image {key[0]!r} in domain {key[1]!r}")
        seen.add(key)


# ---------------------------------------------------------------------------
# Prediction stream ingest / serialize
# ---------------------------------------------------------------------------


def _iter_lines(source: Source):
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            yield from handle
        return
    for line in source:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        yield line


def ingest_predictions(
    source: Source, classes: ClassCatalog, domains: DomainCatalog
) -> list[PredictionRecord]:
    """Parse and validate a prediction stream, preserving input order.

    Malformed lines raise ``ParseError`` with the 1-based line number;
    records that contradict the catalogs raise ``ValidationError`` naming
    the offending identifier.
    """
    records: list[PredictionRecord] = []
    seen: set[tuple[str, str]] = set()
    for line_number, line in enumerate(_iter_lines(source), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            payload = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line_number) from exc
        if not isinstance(payload, dict):
            raise ParseError("each line must be a JSON object", line_number)
        try:
            image_id = payload["image_id"]
            domain_id = payload["domain_id"]
            boxes = payload["boxes"]
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", line_number) from exc
        if not isinstance(boxes, list):
            raise ParseError("'boxes' must be a list", line_number)
        try:
            n = len(boxes)
            scores = np.empty((n, classes.count), dtype=np.float64)
            bboxes = np.empty((n, 4), dtype=np.float64)
            for i, box in enumerate(boxes):
                vec = box["scores"]
                if len(vec) != classes.count:
                    raise ValidationError(
                        f"box {i} of image {image_id!r} carries {len(vec)} scores, "
                        f"catalog defines {classes.count} classes"
                    )
                scores[i] = vec
                bboxes[i] = box["bbox"]
            record = PredictionRecord(
                image_id=str(image_id), domain_id=str(domain_id), scores=scores, bboxes=bboxes
            )
            validate_record(record, classes, domains)
        except ValidationError as exc:
            raise ParseError(str(exc), line_number) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed box data: {exc}", line_number) from exc
        key = (record.image_id, record.domain_id)
        if key in seen:
            raise ParseError(
                f"duplicate record for image {key[0]!r} in domain {key[1]!r}", line_number
            )
        seen.add(key)
        records.append(record)
    return records


def serialize_prediction(record: PredictionRecord) -> str:
    boxes = [
        {"bbox": record.bboxes[i].tolist(), "scores": record.scores[i].tolist()}
        for i in range(record.box_count)
    ]
    return json.dumps(
        {"image_id": record.image_id, "domain_id": record.domain_id, "boxes": boxes},
        ensure_ascii=False,
    )


def write_predictions(records: Iterable[PredictionRecord], destination: str | Path) -> None:
    with open(destination, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(serialize_prediction(record))
            handle.write("\n")


# ---------------------------------------------------------------------------
# Labeled-set class distribution
# ---------------------------------------------------------------------------


def labeled_class_distribution(
    ground_truth: Sequence[GroundTruthRecord], class_count: int
) -> ClassDistribution:
    """Empirical class frequencies over all annotated objects."""
    counts = np.zeros(class_count, dtype=np.int64)
    for record in ground_truth:
        if record.class_indices.size:
            if int(record.class_indices.max()) >= class_count:
                raise ValidationError(
                    f"record {record.image_id!r} references class index "
                    f">= {class_count}"
                )
            counts += np.bincount(record.class_indices, minlength=class_count)
    total = int(counts.sum())
    if total == 0:
        raise ValidationError("class distribution is undefined: no annotated objects")
    return ClassDistribution(tuple((counts / total).tolist()))


def class_box_counts(records: Sequence[PredictionRecord], class_count: int) -> np.ndarray:
    """Predicted-box counts per argmax class, pooled over the given records."""
    counts = np.zeros(class_count, dtype=np.int64)
    for record in records:
        if record.box_count:
            counts += np.bincount(record.argmax_classes, minlength=class_count)
    return counts


# ---------------------------------------------------------------------------
# COCO-style ground truth
# ---------------------------------------------------------------------------


def write_ground_truth(
    records: Sequence[GroundTruthRecord],
    classes: ClassCatalog,
    annotation_path: str | Path,
    domain_map_path: str | Path,
) -> None:
    """Export annotations as a COCO-style document plus the domain sidecar."""
    images = []
    annotations = []
    domain_map = {}
    ann_id = 1
    for image_number, record in enumerate(records, start=1):
        images.append({"id": image_number, "file_name": record.image_id})
        domain_map[record.image_id] = record.domain_id
        for i in range(record.object_count):
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": image_number,
                    "category_id": int(record.class_indices[i]) + 1,
                    "bbox": record.bboxes[i].tolist(),
                }
            )
            ann_id += 1
    document = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": i + 1, "name": name} for i, name in enumerate(classes.names)],
    }
    with open(annotation_path, "w", encoding="utf-8") as handle:
        json.dump(document, handle, ensure_ascii=False)
    with open(domain_map_path, "w", encoding="utf-8") as handle:
        json.dump(domain_map, handle, ensure_ascii=False, sort_keys=True)


def load_ground_truth(
    annotation_path: str | Path,
    domain_map_path: str | Path,
    classes: ClassCatalog,
    domains: DomainCatalog,
) -> list[GroundTruthRecord]:
    """Load a COCO-style annotation document plus its domain sidecar."""
    with open(annotation_path, "r", encoding="utf-8") as handle:
        try:
            document = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid annotation JSON: {exc.msg}") from exc
    with open(domain_map_path, "r", encoding="utf-8") as handle:
        try:
            domain_map = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid domain map JSON: {exc.msg}") from exc

    category_to_index: dict[int, int] = {}
    for category in document.get("categories", []):
        name = category.get("name")
        if name not in classes.names:
            raise ValidationError(f"annotation document names unknown class {name!r}")
        category_to_index[int(category["id"])] = classes.index_of(name)

    image_names: dict[int, str] = {}
    for image in document.get("images", []):
        image_names[int(image["id"])] = str(image["file_name"])

    objects_by_image: dict[int, list[tuple[int, list[float]]]] = {
        image_id: [] for image_id in image_names
    }
    for annotation in document.get("annotations", []):
        image_ref = int(annotation["image_id"])
        if image_ref not in image_names:
            raise ValidationError(f"annotation references unknown image id {image_ref}")
        category_id = int(annotation["category_id"])
        if category_id not in category_to_index:
            raise ValidationError(f"annotation references unknown category id {category_id}")
        bbox = [float(v) for v in annotation["bbox"]]
        if len(bbox) != 4:
            raise ValidationError(f"annotation bbox must have 4 components, got {bbox}")
        objects_by_image[image_ref].append((category_to_index[category_id], bbox))

    records = []
    seen: set[tuple[str, str]] = set()
    for image_ref, image_name in image_names.items():
        if image_name not in domain_map:
            raise ValidationError(f"domain sidecar has no entry for image {image_name!r}")
        domain_id = str(domain_map[image_name])
        if not domains.known(domain_id):
            raise ValidationError(
                f"image {image_name!r} maps to unknown domain {domain_id!r}"
            )
        key = (image_name, domain_id)
        if key in seen:
            raise ValidationError(
                f"duplicate ground truth for image {image_name!r} in domain {domain_id!r}"
            )
        seen.add(key)
        records.append(
            GroundTruthRecord.from_objects(image_name, domain_id, objects_by_image[image_ref])
        )
    return records


# ---------------------------------------------------------------------------
# Catalog config
# ---------------------------------------------------------------------------


def load_catalogs(path: str | Path) -> tuple[ClassCatalog, DomainCatalog]:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid catalog JSON: {exc.msg}") from exc
    try:
        classes = ClassCatalog(tuple(payload["classes"]))
        domains = DomainCatalog(
            ids=tuple(payload["domains"]),
            labeled_domain=str(payload["labeled_domain"]),
            labeled_is_external=bool(payload.get("labeled_is_external", False)),
        )
    except KeyError as exc:
        raise ValidationError(f"catalog config is missing field {exc.args[0]!r}") from exc
    return classes, domains


def write_catalogs(
    classes: ClassCatalog, domains: DomainCatalog, path: str | Path
) -> None:
    payload = {
        "classes": list(classes.names),
        "domains": list(domains.ids),
        "labeled_domain": domains.labeled_domain,
        "labeled_is_external": domains.labeled_is_external,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=False, indent=2)
        handle.write("\n")
