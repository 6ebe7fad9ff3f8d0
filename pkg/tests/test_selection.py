import numpy as np
import pytest

from curridet import synth
from curridet.curriculum import CurriculumSchedule, build_schedule, domain_similarity
from curridet.distributions import ClassDistribution
from curridet.errors import ValidationError
from curridet.records import DomainCatalog, PredictionRecord, ScoredBox
from curridet.selection import (
    PseudoLabel,
    load_pseudo_labels,
    run_round,
    select_pseudo_labels,
    serialize_pseudo_label,
    write_pseudo_labels,
)
from curridet.thresholds import PseudoLabelAccumulator, ThresholdTable


def dist(*probs):
    return ClassDistribution(tuple(probs))


def table_for(domain_id, values, tau=0.7, mu=0.1):
    return ThresholdTable(
        values=np.array([values], dtype=np.float64),
        tau=tau,
        mu=mu,
        domain_ids=(domain_id,),
        snapshot_id=1,
    )


class TestSelectPseudoLabels:
    def test_accepts_above_threshold(self):
        record = PredictionRecord.from_boxes(
            "i", "d", [ScoredBox((0, 0, 1, 1), (0.85, 0.10))]
        )
        labels = select_pseudo_labels(record, table_for("d", [0.80, 0.80]))
        assert len(labels) == 1
        label = labels[0]
        assert label.class_index == 0
        assert label.score == 0.85
        assert label.threshold_used == 0.80

    def test_rejects_at_or_below_threshold(self):
        record = PredictionRecord.from_boxes(
            "i", "d", [ScoredBox((0, 0, 1, 1), (0.75, 0.10))]
        )
        assert select_pseudo_labels(record, table_for("d", [0.80, 0.80])) == []
        exact = PredictionRecord.from_boxes(
            "i", "d", [ScoredBox((0, 0, 1, 1), (0.80, 0.10))]
        )
        assert select_pseudo_labels(exact, table_for("d", [0.80, 0.80])) == []

    def test_tie_compares_against_lowest_class_threshold(self):
        record = PredictionRecord.from_boxes(
            "i", "d", [ScoredBox((0, 0, 1, 1), (0.70, 0.70))]
        )
        labels = select_pseudo_labels(record, table_for("d", [0.65, 0.95]))
        assert len(labels) == 1 and labels[0].class_index == 0

    def test_unknown_domain_is_an_error(self):
        record = PredictionRecord.from_boxes(
            "i", "other", [ScoredBox((0, 0, 1, 1), (0.9, 0.1))]
        )
        with pytest.raises(ValidationError):
            select_pseudo_labels(record, table_for("d", [0.7, 0.7]))

    def test_output_follows_input_order(self):
        record = PredictionRecord.from_boxes(
            "i",
            "d",
            [
                ScoredBox((0, 0, 1, 1), (0.95, 0.1)),
                ScoredBox((1, 1, 1, 1), (0.2, 0.9)),
                ScoredBox((2, 2, 1, 1), (0.99, 0.1)),
            ],
        )
        labels = select_pseudo_labels(record, table_for("d", [0.7, 0.7]))
        assert [l.bbox[0] for l in labels] == [0.0, 1.0, 2.0]

    def test_suppressed_class_never_accepted(self):
        record = PredictionRecord.from_boxes(
            "i", "d", [ScoredBox((0, 0, 1, 1), (1.0, 0.0))]
        )
        assert select_pseudo_labels(record, table_for("d", [1.0, 0.7])) == []


def tiny_corpus():
    # Two domains, deterministic scores around the 0.7 boundary.
    records = []
    values = [0.95, 0.71, 0.69, 0.8, 0.75, 0.9]
    for i, v in enumerate(values):
        domain = "easy" if i % 2 == 0 else "hard"
        records.append(
            PredictionRecord.from_boxes(
                f"img{i}", domain, [ScoredBox((0, 0, 1, 1), (v, v / 2))]
            )
        )
    return records


class TestRunRound:
    SCHEDULE = CurriculumSchedule(phases=(("easy",), ("hard",)), mode="domain")
    ESTIMATES = {"easy": dist(0.5, 0.5), "hard": dist(0.5, 0.5)}

    def test_gating_excludes_later_phases(self):
        records = tiny_corpus()
        acc = PseudoLabelAccumulator(("easy", "hard"), 2)
        labels, _, report = run_round(
            records, self.SCHEDULE, 1, acc, self.ESTIMATES, 0.7, 0.1
        )
        assert all(l.domain_id == "easy" for l in labels)
        assert report.records_processed == 3
        assert report.phase == 1

    def test_zero_records(self):
        acc = PseudoLabelAccumulator(("easy", "hard"), 2)
        labels, _, report = run_round([], self.SCHEDULE, 1, acc, self.ESTIMATES, 0.7, 0.1)
        assert labels == []
        assert report.records_processed == 0
        assert report.boxes_per_image_mean == 0.0
        assert acc.counts.sum() == 0

    def test_accounting_matches_accumulator_delta(self):
        records = tiny_corpus()
        acc = PseudoLabelAccumulator(("easy", "hard"), 2)
        before = acc.counts.copy()
        labels, acc, report = run_round(
            records, self.SCHEDULE, 2, acc, self.ESTIMATES, 0.7, 0.1
        )
        delta = acc.counts - before
        assert report.accepted_total == len(labels) == int(delta.sum())
        for (domain_id, class_index), count in report.accepted.items():
            j = acc.domain_index(domain_id)
            assert delta[j, class_index] == count

    def test_image_mode_gates_by_image_id(self):
        records = tiny_corpus()
        schedule = CurriculumSchedule(phases=(("img0", "img1"), ("img2", "img3", "img4", "img5")), mode="image")
        acc = PseudoLabelAccumulator(("easy", "hard"), 2)
        labels, _, report = run_round(records, schedule, 1, acc, self.ESTIMATES, 0.7, 0.1)
        assert report.records_processed == 2
        assert {l.image_id for l in labels} <= {"img0", "img1"}

    def test_determinism(self):
        records = tiny_corpus()
        outputs = []
        for _ in range(2):
            acc = PseudoLabelAccumulator(("easy", "hard"), 2)
            labels, _, report = run_round(
                records, self.SCHEDULE, 2, acc, self.ESTIMATES, 0.7, 0.1, batch_size=2
            )
            outputs.append(([serialize_pseudo_label(l) for l in labels], report))
        assert outputs[0][0] == outputs[1][0]
        assert outputs[0][1] == outputs[1][1]

    def test_gated_out_records_leave_no_trace(self):
        lonely = PredictionRecord.from_boxes(
            "ghost", "hard", [ScoredBox((0, 0, 1, 1), (0.99, 0.1))]
        )
        acc = PseudoLabelAccumulator(("easy", "hard"), 2)
        labels, _, report = run_round(
            [lonely], self.SCHEDULE, 1, acc, self.ESTIMATES, 0.7, 0.1
        )
        assert labels == [] and report.boxes_seen == 0
        assert acc.counts.sum() == 0


class TestReplayOracle:
    def test_simulator_run_matches_pure_python_replay(self):
        # Oracle: replay the loop from the raw records in plain python,
        # recomputing thresholds at every batch boundary from scratch.
        specs = [
            synth.DomainSpec(f"u{i}", 0.08 * i, (0.5, 0.3, 0.2), 120, (3.0, 0.2))
            for i in range(8)
        ]
        world = synth.generate_world(specs, 5)
        records = synth.simulate_detector(
            world,
            synth.DetectorSkill(
                tp_score=((9.0, 2.0), (7.0, 2.6), (6.0, 3.0)),
                confusion=((0.9, 0.05, 0.05), (0.2, 0.78, 0.02), (0.2, 0.02, 0.78)),
            ),
            5,
        )
        domains = DomainCatalog(tuple(f"u{i}" for i in range(8)), "u0")
        stats = domain_similarity(records, domains)
        schedule = build_schedule(stats, 3)
        estimates = {
            d: dist(0.5, 0.3, 0.2) for d in domains.ids
        }
        tau, mu, batch_size = 0.7, 0.1, 16

        acc = PseudoLabelAccumulator(domains.ids, 3)
        produced = []
        snapshot = 0
        for phase in (1, 2, 3):
            labels, acc, report = run_round(
                records, schedule, phase, acc, estimates, tau, mu,
                batch_size=batch_size, snapshot_start=snapshot,
            )
            snapshot = report.threshold_snapshot_id
            produced.extend(labels)

        # -- independent replay ------------------------------------------------
        replay_counts = {d: [0, 0, 0] for d in domains.ids}
        replayed = []

        def replay_threshold(domain, class_index):
            total = sum(replay_counts[domain])
            if total == 0:
                return tau
            share = replay_counts[domain][class_index] / total
            if share == 0.0:
                return tau
            estimate = estimates[domain].probs[class_index]
            if estimate == 0.0:
                return float("inf")
            return tau + mu * (share / estimate)

        active_units = []
        for phase in (1, 2, 3):
            active_units = [u for p in schedule.phases[:phase] for u in p]
            selected = [r for r in records if r.domain_id in set(active_units)]
            for start in range(0, len(selected), batch_size):
                batch = selected[start : start + batch_size]
                frozen = {
                    d: [replay_threshold(d, c) for c in range(3)] for d in domains.ids
                }
                pending = []
                for record in batch:
                    for row, bbox in zip(record.scores.tolist(), record.bboxes.tolist()):
                        best = max(row)
                        c = row.index(best)
                        threshold = frozen[record.domain_id][c]
                        if best > threshold:
                            replayed.append(
                                (record.image_id, record.domain_id, tuple(bbox), c, best, threshold)
                            )
                            pending.append((record.domain_id, c))
                for domain, c in pending:
                    replay_counts[domain][c] += 1

        assert len(produced) == len(replayed)
        assert len(produced) > 500
        for label, expected in zip(produced, replayed):
            assert (
                label.image_id,
                label.domain_id,
                label.bbox,
                label.class_index,
                label.score,
                label.threshold_used,
            ) == expected
        for j, domain in enumerate(domains.ids):
            assert acc.counts[j].tolist() == replay_counts[domain]


class TestPseudoLabelIO:
    def test_stream_round_trip(self, tmp_path):
        labels = [
            PseudoLabel("img1", "d", (1.0, 2.0, 3.0, 4.0), 0, 0.91, 0.7),
            PseudoLabel("img2", "d", (0.5, 0.25, 8.0, 9.0), 2, 0.80001, 0.75),
        ]
        path = tmp_path / "labels.jsonl"
        write_pseudo_labels(labels, path)
        assert load_pseudo_labels(path) == labels
