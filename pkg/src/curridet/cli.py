"""Command-line front end: simulate, similarity, schedule, estimate, run, report, ablate.

Every command is a pure function of (input files, config, seed) to output
files; rerunning with identical arguments reproduces identical bytes.
Exit codes: 0 success, 1 validation (bad inputs, bad config, missing
files), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import curriculum, records, selection, synth, thresholds
from .distributions import ClassDistribution
from .ema import EmaState, ema_update
from .errors import ParseError, ValidationError
from .records import ClassCatalog, DomainCatalog, GroundTruthRecord, PredictionRecord

DEFAULT_TAU = 0.7
DEFAULT_MU = 0.1
DEFAULT_ALPHA = 0.9996
DEFAULT_PHASES = 4
DEFAULT_BATCH_SIZE = 16

_CONFIG_KEYS = {
    "tau",
    "mu",
    "alpha",
    "phase_count",
    "batch_size",
    "mode",
    "seed",
    "cumulative",
    "window",
    "reestimate",
    "estimates_mode",
}


@dataclass(frozen=True)
class RunConfig:
    tau: float = DEFAULT_TAU
    mu: float = DEFAULT_MU
    alpha: float = DEFAULT_ALPHA
    phase_count: int = DEFAULT_PHASES
    batch_size: int = DEFAULT_BATCH_SIZE
    mode: str = "domain"
    seed: int = 0
    cumulative: bool = True
    window: int | None = None
    reestimate: bool = False
    estimates_mode: str = "estimated"

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValidationError(f"tau must lie in (0, 1), got {self.tau}")
        if self.mu < 0.0:
            raise ValidationError(f"mu must be non-negative, got {self.mu}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.phase_count < 1:
            raise ValidationError(f"phase_count must be positive, got {self.phase_count}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be positive, got {self.batch_size}")
        if self.mode not in ("domain", "image"):
            raise ValidationError(f"mode must be 'domain' or 'image', got {self.mode!r}")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if self.window is not None and self.window < 1:
            raise ValidationError(f"window must be positive, got {self.window}")
        if self.estimates_mode not in ("estimated", "labeled", "true"):
            raise ValidationError(
                f"estimates_mode must be 'estimated', 'labeled' or 'true', "
                f"got {self.estimates_mode!r}"
            )

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "mu": self.mu,
            "alpha": self.alpha,
            "phase_count": self.phase_count,
            "batch_size": self.batch_size,
            "mode": self.mode,
            "seed": self.seed,
            "cumulative": self.cumulative,
            "window": self.window,
            "reestimate": self.reestimate,
            "estimates_mode": self.estimates_mode,
        }

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as handle:
            try:
                payload = json.load(handle)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid config JSON: {exc.msg}") from exc
        unknown = set(payload) - _CONFIG_KEYS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    """Static config file first, explicit flags win."""
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for name, attr in [
        ("tau", "tau"),
        ("mu", "mu"),
        ("alpha", "alpha"),
        ("phase_count", "phases"),
        ("batch_size", "batch_size"),
        ("mode", "mode"),
        ("seed", "seed"),
        ("cumulative", "cumulative"),
        ("window", "window"),
        ("reestimate", "reestimate"),
        ("estimates_mode", "estimates_mode"),
    ]:
        value = getattr(args, attr, None)
        if value is not None:
            overrides[name] = value
    return replace(config, **overrides) if overrides else config


# ---------------------------------------------------------------------------
# Shared input loading
# ---------------------------------------------------------------------------


@dataclass
class RunInputs:
    classes: ClassCatalog
    domains: DomainCatalog
    records: list[PredictionRecord]
    labeled_gt: list[GroundTruthRecord]
    labeled_predictions: list[PredictionRecord]
    world: synth.SyntheticWorld | None = None

    @property
    def unlabeled_records(self) -> list[PredictionRecord]:
        ids = set(self.domains.ids)
        return [r for r in self.records if r.domain_id in ids]


_SIMULATION_FILES = {
    "world": "world.json",
    "catalogs": "catalogs.json",
    "predictions": "predictions.jsonl",
    "labeled_gt": "gt_coco.json",
    "domain_map": "domain_map.json",
}


def _resolve_input_path(explicit: str | None, simulation: str | None, name: str) -> Path:
    if explicit:
        return Path(explicit)
    if simulation:
        return Path(simulation) / _SIMULATION_FILES[name]
    raise ValidationError(f"missing input: provide --{name.replace('_', '-')} or --simulation")


def _load_run_inputs(args: argparse.Namespace, need_world: bool = False) -> RunInputs:
    catalogs_path = _resolve_input_path(args.catalogs, args.simulation, "catalogs")
    predictions_path = _resolve_input_path(args.predictions, args.simulation, "predictions")
    gt_path = _resolve_input_path(args.labeled_gt, args.simulation, "labeled_gt")
    map_path = _resolve_input_path(args.domain_map, args.simulation, "domain_map")

    classes, domains = records.load_catalogs(catalogs_path)
    prediction_records = records.ingest_predictions(predictions_path, classes, domains)
    ground_truth = records.load_ground_truth(gt_path, map_path, classes, domains)
    labeled_gt = [g for g in ground_truth if g.domain_id == domains.labeled_domain]
    if not labeled_gt:
        raise ValidationError(
            f"ground truth contains no records for labeled domain "
            f"{domains.labeled_domain!r}"
        )

    if getattr(args, "labeled_predictions", None):
        labeled_predictions = records.ingest_predictions(
            args.labeled_predictions, classes, domains
        )
        labeled_predictions = [
            r for r in labeled_predictions if r.domain_id == domains.labeled_domain
        ]
    else:
        labeled_predictions = [
            r for r in prediction_records if r.domain_id == domains.labeled_domain
        ]

    world = None
    if need_world:
        world_path = _resolve_input_path(getattr(args, "world", None), args.simulation, "world")
        world, _ = synth.load_world_config(world_path).build()
    return RunInputs(
        classes=classes,
        domains=domains,
        records=prediction_records,
        labeled_gt=labeled_gt,
        labeled_predictions=labeled_predictions,
        world=world,
    )


def build_estimates(
    inputs: RunInputs, mode: str, restrict_to: Sequence[PredictionRecord] | None = None
) -> dict[str, ClassDistribution]:
    """Per-domain class-distribution references for threshold adjustment.

    ``estimated`` rescales the labeled prior by box-count ratios (the
    default); ``labeled`` uses the labeled prior verbatim for every
    domain; ``true`` reads the generator's oracle (simulation runs only).
    ``restrict_to`` recomputes the box-count ratios over a subset of the
    prediction records instead of the whole corpus.
    """
    class_count = inputs.classes.count
    if mode == "true":
        if inputs.world is None:
            raise ValidationError("estimates_mode 'true' requires a world config")
        return {
            d: synth.oracle_class_distribution(inputs.world, d) for d in inputs.domains.ids
        }
    labeled_prior = records.labeled_class_distribution(inputs.labeled_gt, class_count)
    if mode == "labeled":
        return {d: labeled_prior for d in inputs.domains.ids}
    if not inputs.labeled_predictions:
        raise ValidationError(
            "estimates_mode 'estimated' requires predictions on the labeled domain"
        )
    labeled_counts = records.class_box_counts(inputs.labeled_predictions, class_count)
    source = inputs.unlabeled_records if restrict_to is None else restrict_to
    by_domain: dict[str, list[PredictionRecord]] = {d: [] for d in inputs.domains.ids}
    for record in source:
        if record.domain_id in by_domain:
            by_domain[record.domain_id].append(record)
    estimates = {}
    for domain_id in inputs.domains.ids:
        domain_records = by_domain[domain_id]
        if not domain_records:
            continue
        estimates[domain_id] = thresholds.estimate_class_distribution(
            labeled_prior,
            labeled_counts,
            records.class_box_counts(domain_records, class_count),
        )
    return estimates


# ---------------------------------------------------------------------------
# The run driver
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    labels: list[selection.PseudoLabel]
    reports: list[selection.RoundReport]
    accumulator: thresholds.PseudoLabelAccumulator
    estimates: dict[str, ClassDistribution]
    pooled_ratios: np.ndarray
    ema: EmaState
    schedule: curriculum.CurriculumSchedule
    stats: list[curriculum.DomainStats] = field(default_factory=list)


def execute_run(inputs: RunInputs, config: RunConfig, out_dir: str | Path) -> RunResult:
    """Run the full curriculum loop and write every artifact into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    unlabeled = inputs.unlabeled_records
    class_names = inputs.classes.names

    stats = curriculum.domain_similarity(unlabeled, inputs.domains)
    curriculum.write_stats_csv(stats, class_names, out_dir / "stats.csv")
    if config.mode == "domain":
        schedule = curriculum.build_schedule(stats, config.phase_count)
    else:
        schedule = curriculum.build_schedule_imagewise(unlabeled, config.phase_count)
    curriculum.write_schedule(schedule, out_dir / "schedule.json")

    estimates = build_estimates(inputs, config.estimates_mode)
    thresholds.write_distribution_csv(
        estimates, class_names, out_dir / "estimates.csv", value_column="estimate"
    )

    accumulator = thresholds.PseudoLabelAccumulator(
        inputs.domains.ids, inputs.classes.count, window=config.window
    )
    ema_state = EmaState(np.zeros(len(inputs.domains.ids)), alpha=config.alpha)
    all_labels: list[selection.PseudoLabel] = []
    reports: list[selection.RoundReport] = []
    snapshot = 0
    for phase in range(1, config.phase_count + 1):
        if config.reestimate and config.estimates_mode == "estimated" and phase > 1:
            active = curriculum.active_set(schedule, phase, cumulative=config.cumulative)
            if config.mode == "domain":
                active_records = [r for r in unlabeled if r.domain_id in active]
            else:
                active_records = [r for r in unlabeled if r.image_id in active]
            refreshed = build_estimates(inputs, "estimated", restrict_to=active_records)
            estimates = {**estimates, **refreshed}
        labels, accumulator, report = selection.run_round(
            unlabeled,
            schedule,
            phase,
            accumulator,
            estimates,
            config.tau,
            config.mu,
            batch_size=config.batch_size,
            cumulative=config.cumulative,
            snapshot_start=snapshot,
        )
        snapshot = report.threshold_snapshot_id
        all_labels.extend(labels)
        reports.append(report)
        accepted_by_domain = np.zeros(len(inputs.domains.ids), dtype=np.float64)
        for (domain_id, _), count in report.accepted.items():
            accepted_by_domain[accumulator.domain_index(domain_id)] += count
        if report.accepted_total:
            accepted_by_domain /= report.accepted_total
        ema_state = ema_update(ema_state, accepted_by_domain)
        print(
            f"round {phase}: processed {report.records_processed} records, "
            f"accepted {report.accepted_total} pseudo-labels "
            f"({report.boxes_per_image_mean:.3f}/image)"
        )

    selection.write_pseudo_labels(all_labels, out_dir / "pseudo_labels.jsonl")
    selection.append_round_reports(reports, out_dir / "rounds.csv")
    final_table = thresholds.compute_thresholds(
        accumulator, estimates, config.tau, config.mu, snapshot_id=snapshot + 1
    )
    thresholds.write_threshold_csv(final_table, class_names, out_dir / "thresholds.csv")
    accepted_dists = {d: accumulator.distribution(d) for d in inputs.domains.ids}
    thresholds.write_distribution_csv(
        accepted_dists, class_names, out_dir / "pseudo_distribution.csv",
        value_column="accepted_share",
    )
    ratios = thresholds.pooled_class_ratios(accumulator, estimates)

    state = {
        "class_names": list(class_names),
        "accumulator": accumulator.snapshot(),
        "thresholds": {
            "tau": final_table.tau,
            "mu": final_table.mu,
            "snapshot_id": final_table.snapshot_id,
            "domain_ids": list(final_table.domain_ids),
            "values": final_table.values.tolist(),
        },
        "ema": ema_state.snapshot(),
        "rounds": len(reports),
        "accepted_total": len(all_labels),
        "pooled_ratios": [float(r) for r in ratios],
    }
    with open(out_dir / "state.json", "w", encoding="utf-8") as handle:
        json.dump(state, handle, ensure_ascii=False, indent=2)
        handle.write("\n")
    with open(out_dir / "config.json", "w", encoding="utf-8") as handle:
        json.dump(config.to_dict(), handle, ensure_ascii=False, indent=2, sort_keys=True)
        handle.write("\n")
    return RunResult(
        labels=all_labels,
        reports=reports,
        accumulator=accumulator,
        estimates=estimates,
        pooled_ratios=ratios,
        ema=ema_state,
        schedule=schedule,
        stats=stats,
    )


def run_metrics(result: RunResult, config: RunConfig, class_names: Sequence[str]) -> dict:
    """Flat metric row shared by ``run`` summaries and the ablation grid."""
    ratios = result.pooled_ratios
    finite = ratios[np.isfinite(ratios)]
    metrics: dict[str, object] = {
        "tau": config.tau,
        "mu": config.mu,
        "records_processed": sum(r.records_processed for r in result.reports),
        "boxes_seen": sum(r.boxes_seen for r in result.reports),
        "accepted_total": len(result.labels),
        "boxes_per_image_round1": result.reports[0].boxes_per_image_mean
        if result.reports
        else 0.0,
        "max_ratio_deviation": float(np.max(np.abs(finite - 1.0))) if finite.size else "",
    }
    class_totals = result.accumulator.counts.sum(axis=0)
    for c, name in enumerate(class_names):
        metrics[f"ratio_{name}"] = float(ratios[c]) if np.isfinite(ratios[c]) else ""
        metrics[f"accepted_{name}"] = int(class_totals[c])
    return metrics


def write_metrics_csv(metrics: Sequence[Mapping[str, object]], path: str | Path) -> None:
    columns = list(metrics[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in metrics:
            writer.writerow(
                [repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns]
            )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    config = synth.load_world_config(args.spec)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    world, predictions = config.build()
    synth.save_world_config(config, out_dir / "world.json")
    classes, domains = world.catalogs()
    records.write_catalogs(classes, domains, out_dir / "catalogs.json")
    records.write_ground_truth(
        world.ground_truth, classes, out_dir / "gt_coco.json", out_dir / "domain_map.json"
    )
    records.write_predictions(predictions, out_dir / "predictions.jsonl")
    total_boxes = sum(r.box_count for r in predictions)
    print(
        f"simulated {len(world.specs)} domains, {len(world.ground_truth)} images, "
        f"{total_boxes} predicted boxes -> {out_dir}"
    )
    return 0


def cmd_similarity(args: argparse.Namespace) -> int:
    classes, domains = records.load_catalogs(args.catalogs)
    prediction_records = records.ingest_predictions(args.predictions, classes, domains)
    stats = curriculum.domain_similarity(prediction_records, domains)
    curriculum.write_stats_csv(stats, classes.names, args.out)
    for s in stats:
        print(f"{s.domain_id}: images={s.image_count} similarity={s.similarity:.4f}")
    return 0


def cmd_schedule(args: argparse.Namespace) -> int:
    phases = args.phases if args.phases is not None else DEFAULT_PHASES
    mode = args.mode or "domain"
    if mode == "domain":
        if args.stats:
            stats = curriculum.read_stats_csv(args.stats)
        elif args.predictions and args.catalogs:
            classes, domains = records.load_catalogs(args.catalogs)
            prediction_records = records.ingest_predictions(args.predictions, classes, domains)
            stats = curriculum.domain_similarity(prediction_records, domains)
        else:
            raise ValidationError(
                "domain mode needs --stats, or --predictions with --catalogs"
            )
        schedule = curriculum.build_schedule(stats, phases)
    else:
        if not (args.predictions and args.catalogs):
            raise ValidationError("image mode needs --predictions and --catalogs")
        classes, domains = records.load_catalogs(args.catalogs)
        prediction_records = records.ingest_predictions(args.predictions, classes, domains)
        unlabeled = [r for r in prediction_records if r.domain_id in set(domains.ids)]
        schedule = curriculum.build_schedule_imagewise(unlabeled, phases)
    curriculum.write_schedule(schedule, args.out)
    for p, phase in enumerate(schedule.phases, start=1):
        preview = ", ".join(phase[:4]) + (", ..." if len(phase) > 4 else "")
        print(f"phase {p}: {len(phase)} units ({preview})")
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    inputs = _load_run_inputs(args)
    estimates = build_estimates(inputs, "estimated")
    thresholds.write_distribution_csv(
        estimates, inputs.classes.names, args.out, value_column="estimate"
    )
    for domain_id, dist in estimates.items():
        rendered = ", ".join(f"{v:.4f}" for v in dist.probs)
        print(f"{domain_id}: ({rendered})")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    inputs = _load_run_inputs(args, need_world=(config.estimates_mode == "true"))
    result = execute_run(inputs, config, args.out)
    metrics = run_metrics(result, config, inputs.classes.names)
    write_metrics_csv([metrics], Path(args.out) / "metrics.csv")
    print(f"run complete: {len(result.labels)} pseudo-labels -> {args.out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from . import report  # matplotlib import deferred to the one command that needs it

    if not args.run and not args.simulation:
        raise ValidationError("report needs --run and/or --simulation")
    out_dir = Path(args.out) if args.out else Path(args.run or args.simulation) / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    produced: list[Path] = []

    if args.run:
        run_dir = Path(args.run)
        rounds = selection.read_round_reports(run_dir / "rounds.csv")
        produced.append(report.plot_round_activity(rounds, out_dir / "accepted_per_round.png"))
        with open(run_dir / "state.json", "r", encoding="utf-8") as handle:
            state = json.load(handle)
        class_names = state["class_names"]
        accumulator = thresholds.PseudoLabelAccumulator.from_snapshot(state["accumulator"])
        estimates = thresholds.read_distribution_csv(run_dir / "estimates.csv")
        ratios = thresholds.pooled_class_ratios(accumulator, estimates)
        with open(out_dir / "class_ratios.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["class", "ratio"])
            for name, ratio in zip(class_names, ratios):
                writer.writerow([name, repr(float(ratio))])
        produced.append(
            report.plot_class_ratios(
                class_names, {"run": ratios.tolist()}, out_dir / "class_ratios.png"
            )
        )

    if args.simulation:
        sim_dir = Path(args.simulation)
        world_config = synth.load_world_config(sim_dir / "world.json")
        world, predictions = world_config.build()
        classes, domains = world.catalogs()
        unlabeled = [r for r in predictions if r.domain_id in set(domains.ids)]
        stats = curriculum.domain_similarity(unlabeled, domains)
        precision = synth.measure_precision(world.ground_truth, unlabeled)
        with open(out_dir / "precision.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["domain_id", "similarity", "precision", "matched", "total"])
            for s in stats:
                p = precision[s.domain_id]
                writer.writerow(
                    [s.domain_id, repr(s.similarity), repr(p.precision), p.matched, p.total]
                )
        produced.append(
            report.plot_similarity_vs_precision(
                stats, precision, out_dir / "similarity_vs_precision.png"
            )
        )
        labeled_gt = world.ground_truth_for(world_config.labeled_domain)
        estimation = synth.evaluate_estimation(world, predictions, labeled_gt)
        synth.write_estimation_csv(estimation, out_dir / "estimation_kl.csv")
        produced.append(report.plot_estimation_kl(estimation, out_dir / "estimation_kl.png"))

    for path in produced:
        print(f"wrote {path}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    base = _config_from_args(args)
    taus = [float(v) for v in args.taus.split(",")] if args.taus else [0.6, 0.7, 0.8]
    mus = [float(v) for v in args.mus.split(",")] if args.mus else [0.05, 0.10, 0.15]
    inputs = _load_run_inputs(args, need_world=(base.estimates_mode == "true"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for tau in taus:
        for mu in mus:
            cell_config = replace(base, tau=tau, mu=mu)
            cell_dir = out_dir / f"tau_{tau:g}_mu_{mu:g}"
            result = execute_run(inputs, cell_config, cell_dir)
            metrics = run_metrics(result, cell_config, inputs.classes.names)
            write_metrics_csv([metrics], cell_dir / "metrics.csv")
            rows.append(metrics)
            print(f"cell tau={tau:g} mu={mu:g}: accepted {metrics['accepted_total']}")
    write_metrics_csv(rows, out_dir / "ablation.csv")
    print(f"ablation grid complete: {len(rows)} cells -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # Usage mistakes (unknown flags, missing arguments) are validation errors.
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_run_input_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--simulation", help="directory produced by 'simulate'; fills in any input not given explicitly")
    parser.add_argument("--predictions", help="prediction stream (JSONL)")
    parser.add_argument("--catalogs", help="class/domain catalog config (JSON)")
    parser.add_argument("--labeled-gt", dest="labeled_gt", help="COCO-style annotations for the labeled domain")
    parser.add_argument("--domain-map", dest="domain_map", help="sidecar mapping image_id -> domain_id (JSON)")
    parser.add_argument("--labeled-predictions", dest="labeled_predictions", help="predictions on the labeled domain (defaults to labeled-domain rows of --predictions)")
    parser.add_argument("--world", help="world config (JSON), required for --estimates-mode true")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="run config file (JSON); flags override it")
    parser.add_argument("--tau", type=float, help=f"base confidence threshold (default {DEFAULT_TAU})")
    parser.add_argument("--mu", type=float, help=f"threshold scale factor; 0 gives fixed thresholds (default {DEFAULT_MU})")
    parser.add_argument("--alpha", type=float, help=f"EMA rate for the teacher-state tracker (default {DEFAULT_ALPHA})")
    parser.add_argument("--phases", type=int, help=f"number of curriculum phases (default {DEFAULT_PHASES})")
    parser.add_argument("--batch-size", dest="batch_size", type=int, help=f"records per threshold refresh (default {DEFAULT_BATCH_SIZE})")
    parser.add_argument("--mode", choices=["domain", "image"], help="curriculum granularity (default domain)")
    parser.add_argument("--seed", type=int, help="seed recorded in the run config (default 0)")
    parser.add_argument("--cumulative", action=argparse.BooleanOptionalAction, default=None, help="keep earlier phases active (default on)")
    parser.add_argument("--window", type=int, help="sliding window size for the accumulator (default: accumulate over the whole run)")
    parser.add_argument("--reestimate", action=argparse.BooleanOptionalAction, default=None, help="recompute estimates from the active set at each phase (default off)")
    parser.add_argument("--estimates-mode", dest="estimates_mode", choices=["estimated", "labeled", "true"], help="class-distribution reference (default estimated)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="curridet", description=__doc__.splitlines()[0])
    subparsers = parser.add_subparsers(dest="command", metavar="command")

    p = subparsers.add_parser("simulate", help="generate a synthetic world and detector predictions")
    p.add_argument("--spec", required=True, help="world config (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = subparsers.add_parser("similarity", help="per-domain similarity statistics")
    p.add_argument("--predictions", required=True)
    p.add_argument("--catalogs", required=True)
    p.add_argument("--out", required=True, help="stats CSV path")
    p.set_defaults(func=cmd_similarity)

    p = subparsers.add_parser("schedule", help="build the phased curriculum")
    p.add_argument("--stats", help="stats CSV from 'similarity' (domain mode)")
    p.add_argument("--predictions")
    p.add_argument("--catalogs")
    p.add_argument("--mode", choices=["domain", "image"], default=None)
    p.add_argument("--phases", type=int, default=None)
    p.add_argument("--out", required=True, help="schedule JSON path")
    p.set_defaults(func=cmd_schedule)

    p = subparsers.add_parser("estimate", help="estimate per-domain class distributions")
    _add_run_input_flags(p)
    p.add_argument("--out", required=True, help="estimates CSV path")
    p.set_defaults(func=cmd_estimate)

    p = subparsers.add_parser("run", help="full curriculum-gated pseudo-label run")
    _add_run_input_flags(p)
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = subparsers.add_parser("report", help="render figures for a run and/or simulation")
    p.add_argument("--run", help="directory produced by 'run'")
    p.add_argument("--simulation", help="directory produced by 'simulate'")
    p.add_argument("--out", help="output directory (default <run>/report)")
    p.set_defaults(func=cmd_report)

    p = subparsers.add_parser("ablate", help="run the tau x mu ablation grid")
    _add_run_input_flags(p)
    _add_config_flags(p)
    p.add_argument("--taus", help="comma-separated tau grid (default 0.6,0.7,0.8)")
    p.add_argument("--mus", help="comma-separated mu grid (default 0.05,0.10,0.15)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
