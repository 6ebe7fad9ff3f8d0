import io
import json
from collections import Counter

import numpy as np
import pytest

from curridet.errors import ParseError, ValidationError
from curridet.records import (
    ClassCatalog,
    DomainCatalog,
    GroundTruthRecord,
    PredictionRecord,
    ScoredBox,
    class_box_counts,
    ingest_predictions,
    labeled_class_distribution,
    load_catalogs,
    load_ground_truth,
    serialize_prediction,
    validate_corpus,
    write_catalogs,
    write_ground_truth,
    write_predictions,
)

CLASSES = ClassCatalog(("car", "pedestrian"))
DOMAINS = DomainCatalog(("day_clear", "night_rain"), labeled_domain="day_clear")


def make_line(image_id="img-1", domain_id="day_clear", boxes=None):
    if boxes is None:
        boxes = [
            {"bbox": [10.0, 20.0, 30.0, 40.0], "scores": [0.9, 0.1]},
            {"bbox": [5.0, 5.0, 12.0, 8.0], "scores": [0.2, 0.7]},
        ]
    return json.dumps({"image_id": image_id, "domain_id": domain_id, "boxes": boxes})


class TestCatalogs:
    def test_class_catalog_rejects_duplicates(self):
        with pytest.raises(ValidationError):
            ClassCatalog(("car", "car"))

    def test_class_catalog_rejects_empty_names(self):
        with pytest.raises(ValidationError):
            ClassCatalog(("car", ""))

    def test_domain_catalog_labeled_must_be_listed_or_external(self):
        with pytest.raises(ValidationError, match="not among"):
            DomainCatalog(("a", "b"), labeled_domain="c")
        external = DomainCatalog(("a", "b"), labeled_domain="c", labeled_is_external=True)
        assert external.known("c") and external.known("a")
        assert not external.known("z")

    def test_domain_catalog_shared_labeled_domain(self):
        shared = DomainCatalog(("a", "b"), labeled_domain="a")
        assert shared.unlabeled_count == 2
        with pytest.raises(ValidationError, match="marked external"):
            DomainCatalog(("a", "b"), labeled_domain="a", labeled_is_external=True)

    def test_catalog_config_round_trip(self, tmp_path):
        path = tmp_path / "catalogs.json"
        write_catalogs(CLASSES, DOMAINS, path)
        classes, domains = load_catalogs(path)
        assert classes == CLASSES
        assert domains == DOMAINS


class TestScoredBox:
    def test_rejects_out_of_range_scores(self):
        with pytest.raises(ValidationError):
            ScoredBox((0, 0, 1, 1), (1.2, 0.0))

    def test_rejects_non_positive_extent(self):
        with pytest.raises(ValidationError):
            ScoredBox((0, 0, 0.0, 1), (0.5, 0.5))

    def test_scores_need_not_sum_to_one(self):
        box = ScoredBox((0, 0, 1, 1), (0.9, 0.8))
        assert box.scores == (0.9, 0.8)


class TestPredictionRecord:
    def test_from_boxes_round_trips(self):
        boxes = (ScoredBox((1, 2, 3, 4), (0.5, 0.25)),)
        record = PredictionRecord.from_boxes("i", "day_clear", boxes)
        assert record.boxes == boxes
        assert record.box_count == 1

    def test_empty_record_needs_class_count(self):
        with pytest.raises(ValidationError):
            PredictionRecord.from_boxes("i", "d", [])
        record = PredictionRecord.from_boxes("i", "d", [], class_count=2)
        assert record.box_count == 0 and record.class_count == 2

    def test_argmax_tie_breaks_to_lowest_index(self):
        record = PredictionRecord.from_boxes(
            "i", "d", [ScoredBox((0, 0, 1, 1), (0.7, 0.7))]
        )
        assert record.argmax_classes.tolist() == [0]

    def test_arrays_are_read_only(self):
        record = PredictionRecord.from_boxes(
            "i", "d", [ScoredBox((0, 0, 1, 1), (0.7, 0.2))]
        )
        with pytest.raises(ValueError):
            record.scores[0, 0] = 0.0


class TestIngest:
    def test_single_line_round_trip(self):
        records = ingest_predictions(io.StringIO(make_line()), CLASSES, DOMAINS)
        assert len(records) == 1
        assert records[0].box_count == 2
        assert records[0].image_id == "img-1"

    def test_empty_stream(self):
        assert ingest_predictions(io.StringIO(""), CLASSES, DOMAINS) == []

    def test_unknown_domain_names_offender(self):
        stream = io.StringIO(make_line(domain_id="fog"))
        with pytest.raises(ParseError, match="fog"):
            ingest_predictions(stream, CLASSES, DOMAINS)

    def test_malformed_line_reports_line_number(self):
        stream = io.StringIO(make_line() + "\n{not json\n")
        with pytest.raises(ParseError, match="line 2"):
            ingest_predictions(stream, CLASSES, DOMAINS)

    def test_wrong_score_width_rejected(self):
        line = make_line(boxes=[{"bbox": [0, 0, 1, 1], "scores": [0.5]}])
        with pytest.raises(ParseError, match="1 scores"):
            ingest_predictions(io.StringIO(line), CLASSES, DOMAINS)

    def test_duplicate_image_domain_rejected(self):
        stream = io.StringIO(make_line() + "\n" + make_line())
        with pytest.raises(ParseError, match="duplicate"):
            ingest_predictions(stream, CLASSES, DOMAINS)

    def test_order_preserved(self):
        lines = "\n".join(make_line(image_id=f"img-{i}") for i in range(5))
        records = ingest_predictions(io.StringIO(lines), CLASSES, DOMAINS)
        assert [r.image_id for r in records] == [f"img-{i}" for i in range(5)]

    def test_labeled_external_domain_accepted(self):
        domains = DomainCatalog(("night_rain",), "day_clear", labeled_is_external=True)
        records = ingest_predictions(io.StringIO(make_line()), CLASSES, domains)
        assert records[0].domain_id == "day_clear"


class TestSerializeRoundTrip:
    def test_canonical_form_is_byte_stable(self, tmp_path):
        rng = np.random.default_rng(42)
        lines = []
        for i in range(50):
            n = int(rng.integers(0, 5))
            boxes = [
                {
                    "bbox": [float(v) for v in rng.uniform(0, 100, 3)] + [float(rng.uniform(1, 50))],
                    "scores": [float(v) for v in rng.uniform(0, 1, 2)],
                }
                for _ in range(n)
            ]
            domain = "day_clear" if i % 2 else "night_rain"
            lines.append(make_line(image_id=f"img-{i}", domain_id=domain, boxes=boxes))
        raw = "\n".join(lines)

        first = ingest_predictions(io.StringIO(raw), CLASSES, DOMAINS)
        canonical = "\n".join(serialize_prediction(r) for r in first)
        second = ingest_predictions(io.StringIO(canonical), CLASSES, DOMAINS)
        assert "\n".join(serialize_prediction(r) for r in second) == canonical
        for a, b in zip(first, second):
            assert a.image_id == b.image_id and a.domain_id == b.domain_id
            np.testing.assert_array_equal(a.scores, b.scores)
            np.testing.assert_array_equal(a.bboxes, b.bboxes)

        path = tmp_path / "preds.jsonl"
        write_predictions(first, path)
        third = ingest_predictions(path, CLASSES, DOMAINS)
        assert "\n".join(serialize_prediction(r) for r in third) == canonical

    def test_full_float_precision_survives(self):
        score = 0.12345678901234567
        record = PredictionRecord.from_boxes(
            "i", "day_clear", [ScoredBox((0.1, 0.2, 0.3, 0.4), (score, 1.0 / 3.0))]
        )
        back = ingest_predictions(io.StringIO(serialize_prediction(record)), CLASSES, DOMAINS)
        assert back[0].scores[0, 0] == score
        assert back[0].scores[0, 1] == 1.0 / 3.0


class TestValidateCorpus:
    def test_duplicate_rejected_deterministically(self):
        record = PredictionRecord.from_boxes("i", "day_clear", [], class_count=2)
        for _ in range(3):
            with pytest.raises(ValidationError, match="duplicate"):
                validate_corpus([record, record], CLASSES, DOMAINS)


class TestLabeledClassDistribution:
    def test_direct_count(self):
        gt = [
            GroundTruthRecord.from_objects(
                "a", "day_clear", [(0, (0, 0, 1, 1)), (0, (1, 1, 2, 2)), (1, (2, 2, 1, 1))]
            )
        ]
        dist = labeled_class_distribution(gt, 2)
        np.testing.assert_allclose(dist.probs, (2 / 3, 1 / 3), atol=1e-15)

    def test_degenerate_single_class(self):
        gt = [
            GroundTruthRecord.from_objects("a", "d", [(0, (0, 0, 1, 1))]),
            GroundTruthRecord.from_objects("b", "d", [(0, (0, 0, 1, 1))]),
        ]
        assert labeled_class_distribution(gt, 3).probs == (1.0, 0.0, 0.0)

    def test_no_objects_is_an_error(self):
        gt = [GroundTruthRecord.from_objects("a", "d", [])]
        with pytest.raises(ValidationError):
            labeled_class_distribution(gt, 2)

    def test_permutation_invariant_and_normalized(self):
        rng = np.random.default_rng(7)
        gt = [
            GroundTruthRecord.from_objects(
                f"img-{i}",
                "d",
                [(int(c), (0, 0, 1, 1)) for c in rng.integers(0, 4, rng.integers(0, 6))],
            )
            for i in range(200)
        ]
        if sum(g.object_count for g in gt) == 0:
            pytest.skip("degenerate draw")
        forward = labeled_class_distribution(gt, 4)
        shuffled = list(gt)
        rng.shuffle(shuffled)
        backward = labeled_class_distribution(shuffled, 4)
        assert forward.probs == backward.probs
        assert abs(sum(forward.probs) - 1.0) < 1e-12

    def test_large_corpus_matches_independent_recount(self, tmp_path):
        # Oracle: a raw recount over the exported annotation document, using
        # nothing from the implementation under test.
        from curridet import synth

        specs = [
            synth.DomainSpec("labeled", 0.0, (0.55, 0.25, 0.12, 0.08), 5000, (8.0, 0.3)),
        ]
        world = synth.generate_world(specs, 13)
        classes = ClassCatalog(("car", "truck", "pedestrian", "cyclist"))
        domains = DomainCatalog(("labeled",), "labeled")
        ann, sidecar = tmp_path / "gt.json", tmp_path / "map.json"
        write_ground_truth(world.ground_truth, classes, ann, sidecar)

        with open(ann) as handle:
            document = json.load(handle)
        counter = Counter(a["category_id"] for a in document["annotations"])
        total = sum(counter.values())
        assert total > 30000
        expected = tuple(counter.get(c + 1, 0) / total for c in range(4))

        loaded = load_ground_truth(ann, sidecar, classes, domains)
        dist = labeled_class_distribution(loaded, 4)
        np.testing.assert_allclose(dist.probs, expected, atol=1e-12)


class TestGroundTruthIO:
    def test_round_trip(self, tmp_path):
        gt = [
            GroundTruthRecord.from_objects("a", "day_clear", [(0, (1, 2, 3, 4))]),
            GroundTruthRecord.from_objects("b", "night_rain", [(1, (5, 6, 7, 8)), (0, (0, 0, 2, 2))]),
            GroundTruthRecord.from_objects("c", "night_rain", []),
        ]
        ann, sidecar = tmp_path / "gt.json", tmp_path / "map.json"
        write_ground_truth(gt, CLASSES, ann, sidecar)
        loaded = load_ground_truth(ann, sidecar, CLASSES, DOMAINS)
        assert [(g.image_id, g.domain_id) for g in loaded] == [
            ("a", "day_clear"),
            ("b", "night_rain"),
            ("c", "night_rain"),
        ]
        np.testing.assert_array_equal(loaded[1].class_indices, [1, 0])
        np.testing.assert_array_equal(loaded[1].bboxes[0], [5, 6, 7, 8])

    def test_unknown_category_rejected(self, tmp_path):
        ann, sidecar = tmp_path / "gt.json", tmp_path / "map.json"
        document = {
            "images": [{"id": 1, "file_name": "a"}],
            "annotations": [{"id": 1, "image_id": 1, "category_id": 9, "bbox": [0, 0, 1, 1]}],
            "categories": [{"id": 9, "name": "boat"}],
        }
        ann.write_text(json.dumps(document))
        sidecar.write_text(json.dumps({"a": "day_clear"}))
        with pytest.raises(ValidationError, match="boat"):
            load_ground_truth(ann, sidecar, CLASSES, DOMAINS)

    def test_missing_sidecar_entry_rejected(self, tmp_path):
        ann, sidecar = tmp_path / "gt.json", tmp_path / "map.json"
        document = {
            "images": [{"id": 1, "file_name": "a"}],
            "annotations": [],
            "categories": [{"id": 1, "name": "car"}],
        }
        ann.write_text(json.dumps(document))
        sidecar.write_text(json.dumps({}))
        with pytest.raises(ValidationError, match="sidecar"):
            load_ground_truth(ann, sidecar, CLASSES, DOMAINS)


class TestClassBoxCounts:
    def test_counts_argmax_classes(self):
        records = [
            PredictionRecord.from_boxes(
                "a",
                "d",
                [
                    ScoredBox((0, 0, 1, 1), (0.9, 0.1)),
                    ScoredBox((0, 0, 1, 1), (0.2, 0.8)),
                    ScoredBox((0, 0, 1, 1), (0.6, 0.6)),
                ],
            )
        ]
        np.testing.assert_array_equal(class_box_counts(records, 2), [2, 1])
