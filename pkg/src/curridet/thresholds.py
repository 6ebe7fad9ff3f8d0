"""Per-domain class-distribution estimation and dynamic score thresholds.

The acceptance threshold for class c in domain j is

    T[j][c] = tau + mu * accepted_share[j][c] / estimated_share[j][c]

where ``accepted_share`` is the running proportion of pseudo-labels of
class c among all pseudo-labels accepted in domain j, and
``estimated_share`` approximates the domain's true class distribution.
A class that is being over-produced relative to its estimated share sees
its threshold rise, which throttles it; an under-produced class stays at
the floor ``tau``.  There is deliberately no upper clamp: T >= 1 shuts a
class off entirely until its accepted share falls back, and the table
stores +inf when a class appears despite an estimated share of zero.

The estimate itself rescales the labeled-set prior by the ratio of
per-class predicted-box counts between the unlabeled and labeled domains.
Both counts must come from the same detector so that any bias it carries
cancels in the division.  The raw rescaled vector need not sum to one; it
is renormalized here, which leaves the per-class ratios above scaled by a
common constant absorbed into the tuned scale factor ``mu``.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .distributions import ClassDistribution
from .errors import ValidationError


def estimate_class_distribution(
    labeled_prior: ClassDistribution,
    labeled_box_counts: Sequence[int],
    unlabeled_box_counts: Sequence[int],
) -> ClassDistribution:
    """Estimate an unlabeled domain's class distribution from box-count ratios."""
    labeled_counts = np.asarray(labeled_box_counts, dtype=np.float64)
    unlabeled_counts = np.asarray(unlabeled_box_counts, dtype=np.float64)
    class_count = len(labeled_prior)
    if labeled_counts.shape != (class_count,) or unlabeled_counts.shape != (class_count,):
        raise ValidationError("box count vectors must match the prior's class count")
    if np.any(labeled_counts < 0) or np.any(unlabeled_counts < 0):
        raise ValidationError("box counts must be non-negative")
    raw = np.zeros(class_count, dtype=np.float64)
    for c in range(class_count):
        prior_c = labeled_prior[c]
        if labeled_counts[c] == 0:
            if prior_c > 0:
                raise ValidationError(
                    f"estimation undefined for class {c}: labeled prior is positive "
                    "but the detector produced no labeled-domain boxes for it"
                )
            continue
        raw[c] = prior_c * unlabeled_counts[c] / labeled_counts[c]
    total = float(raw.sum())
    if total <= 0.0:
        raise ValidationError("estimation produced an all-zero distribution")
    return ClassDistribution(tuple((raw / total).tolist()))


class PseudoLabelAccumulator:
    """Running per-(domain, class) counts of accepted pseudo-labels.

    Single-writer.  The default accumulates over the whole run; passing
    ``window`` keeps only the most recent ``window`` acceptances per
    domain (an experimentation knob, off by default).
    """

    def __init__(
        self,
        domain_ids: Sequence[str],
        class_count: int,
        window: int | None = None,
    ):
        domain_ids = tuple(str(d) for d in domain_ids)
        if len(domain_ids) < 1 or class_count < 1:
            raise ValidationError("accumulator needs at least one domain and one class")
        if len(set(domain_ids)) != len(domain_ids):
            raise ValidationError("accumulator domain ids must be unique")
        if window is not None and window < 1:
            raise ValidationError(f"window must be positive, got {window}")
        self.domain_ids = domain_ids
        self.class_count = int(class_count)
        self.window = window
        self._index = {d: i for i, d in enumerate(domain_ids)}
        self._counts = np.zeros((len(domain_ids), class_count), dtype=np.int64)
        self._recent: list[deque[int]] | None = None
        if window is not None:
            self._recent = [deque(maxlen=window) for _ in domain_ids]

    @property
    def domain_count(self) -> int:
        return len(self.domain_ids)

    @property
    def counts(self) -> np.ndarray:
        view = self._counts.view()
        view.setflags(write=False)
        return view

    @property
    def totals(self) -> np.ndarray:
        return self._counts.sum(axis=1)

    def domain_index(self, domain_id: str) -> int:
        try:
            return self._index[domain_id]
        except KeyError:
            raise ValidationError(f"unknown domain {domain_id!r}") from None

    def record(self, domain_id: str, class_indices: Sequence[int]) -> "PseudoLabelAccumulator":
        """Count the accepted classes for one domain; returns self."""
        j = self.domain_index(domain_id)
        idx = np.asarray(class_indices, dtype=np.int64)
        if idx.size == 0:
            return self
        if idx.min() < 0 or idx.max() >= self.class_count:
            raise ValidationError(
                f"class indices must lie in [0, {self.class_count}), got "
                f"[{idx.min()}, {idx.max()}]"
            )
        if self._recent is None:
            self._counts[j] += np.bincount(idx, minlength=self.class_count)
        else:
            recent = self._recent[j]
            for c in idx.tolist():
                if len(recent) == recent.maxlen:
                    self._counts[j][recent[0]] -= 1
                recent.append(c)
                self._counts[j][c] += 1
        return self

    def distribution(self, domain_id: str) -> ClassDistribution:
        """Accepted-label class proportions; the empty placeholder before any accept."""
        j = self.domain_index(domain_id)
        total = int(self._counts[j].sum())
        if total == 0:
            return ClassDistribution.empty_of(self.class_count)
        return ClassDistribution(tuple((self._counts[j] / total).tolist()))

    def copy(self) -> "PseudoLabelAccumulator":
        clone = PseudoLabelAccumulator(self.domain_ids, self.class_count, self.window)
        clone._counts = self._counts.copy()
        if self._recent is not None:
            clone._recent = [deque(d, maxlen=d.maxlen) for d in self._recent]
        return clone

    def snapshot(self) -> dict:
        payload = {
            "domain_ids": list(self.domain_ids),
            "class_count": self.class_count,
            "window": self.window,
            "counts": self._counts.tolist(),
        }
        if self._recent is not None:
            payload["recent"] = [list(d) for d in self._recent]
        return payload

    @classmethod
    def from_snapshot(cls, payload: Mapping) -> "PseudoLabelAccumulator":
        acc = cls(
            tuple(payload["domain_ids"]),
            int(payload["class_count"]),
            payload.get("window"),
        )
        counts = np.asarray(payload["counts"], dtype=np.int64)
        if counts.shape != acc._counts.shape:
            raise ValidationError("snapshot counts have the wrong shape")
        if counts.min(initial=0) < 0:
            raise ValidationError("snapshot counts must be non-negative")
        acc._counts = counts
        if acc._recent is not None:
            for j, items in enumerate(payload.get("recent", [])):
                acc._recent[j].extend(int(c) for c in items)
        return acc


@dataclass(frozen=True, eq=False)
class ThresholdTable:
    """Immutable per-(domain, class) acceptance thresholds.

    ``values`` may contain +inf (class fully suppressed in that domain).
    ``snapshot_id`` identifies the refresh that produced the table.
    """

    values: np.ndarray
    tau: float
    mu: float
    domain_ids: tuple[str, ...]
    snapshot_id: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != len(self.domain_ids):
            raise ValidationError("threshold matrix shape must be (domains, classes)")
        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "domain_ids", tuple(self.domain_ids))
        object.__setattr__(self, "_index", {d: i for i, d in enumerate(self.domain_ids)})

    def row(self, domain_id: str) -> np.ndarray:
        try:
            return self.values[self._index[domain_id]]
        except KeyError:
            raise ValidationError(f"unknown domain {domain_id!r}") from None


def compute_thresholds(
    accumulator: PseudoLabelAccumulator,
    estimates: Mapping[str, ClassDistribution],
    tau: float,
    mu: float,
    snapshot_id: int = 0,
) -> ThresholdTable:
    """Build the threshold table for the accumulator's current state.

    Cold start (no acceptances in a domain) yields a row of ``tau``.
    With ``mu == 0`` the table is the fixed-threshold baseline.
    """
    if not 0.0 < tau < 1.0:
        raise ValidationError(f"tau must lie in (0, 1), got {tau}")
    if not mu >= 0.0:
        raise ValidationError(f"mu must be non-negative, got {mu}")
    k, class_count = accumulator.domain_count, accumulator.class_count
    values = np.full((k, class_count), tau, dtype=np.float64)
    if mu > 0.0:
        for j, domain_id in enumerate(accumulator.domain_ids):
            total = int(accumulator._counts[j].sum())
            if total == 0:
                continue
            estimate = estimates.get(domain_id)
            if estimate is None:
                raise ValidationError(f"no class-distribution estimate for domain {domain_id!r}")
            if len(estimate) != class_count:
                raise ValidationError(
                    f"estimate for domain {domain_id!r} covers {len(estimate)} classes, "
                    f"expected {class_count}"
                )
            accepted_share = accumulator._counts[j] / total
            estimated_share = estimate.as_array()
            row = values[j]
            for c in range(class_count):
                if accepted_share[c] == 0.0:
                    continue
                if estimated_share[c] == 0.0:
                    row[c] = math.inf
                else:
                    row[c] = tau + mu * (accepted_share[c] / estimated_share[c])
    return ThresholdTable(
        values=values,
        tau=float(tau),
        mu=float(mu),
        domain_ids=accumulator.domain_ids,
        snapshot_id=snapshot_id,
    )


def pooled_class_ratios(
    accumulator: PseudoLabelAccumulator, estimates: Mapping[str, ClassDistribution]
) -> np.ndarray:
    """Per-class ratio of pooled accepted share to pooled estimated share.

    Pooling weights each domain's estimate by its share of accepted
    labels, so a ratio of 1 everywhere means the accepted pseudo-label
    mix matches the estimated class mix of the data it was drawn from.
    """
    totals = accumulator.totals.astype(np.float64)
    grand = float(totals.sum())
    if grand <= 0:
        return np.full(accumulator.class_count, np.nan)
    accepted_share = accumulator.counts.sum(axis=0) / grand
    estimated_mix = np.zeros(accumulator.class_count, dtype=np.float64)
    for j, domain_id in enumerate(accumulator.domain_ids):
        if totals[j] == 0:
            continue
        estimate = estimates.get(domain_id)
        if estimate is None:
            raise ValidationError(f"no class-distribution estimate for domain {domain_id!r}")
        estimated_mix += (totals[j] / grand) * estimate.as_array()
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(
            estimated_mix > 0,
            accepted_share / estimated_mix,
            np.where(accepted_share > 0, np.inf, np.nan),
        )


# ---------------------------------------------------------------------------
# File interfaces
# ---------------------------------------------------------------------------


def write_distribution_csv(
    distributions: Mapping[str, ClassDistribution],
    class_names: Sequence[str],
    path: str | Path,
    value_column: str = "value",
) -> None:
    """Long-format (domain, class, value) CSV."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["domain_id", "class", value_column])
        for domain_id in distributions:
            dist = distributions[domain_id]
            for name, value in zip(class_names, dist.probs):
                writer.writerow([domain_id, name, repr(value)])


def read_distribution_csv(path: str | Path) -> dict[str, ClassDistribution]:
    by_domain: dict[str, list[float]] = {}
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        next(reader, None)
        for row in reader:
            by_domain.setdefault(row[0], []).append(float(row[2]))
    return {d: ClassDistribution(tuple(v)) for d, v in by_domain.items()}


def write_threshold_csv(
    table: ThresholdTable, class_names: Sequence[str], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["domain_id", "class", "threshold"])
        for j, domain_id in enumerate(table.domain_ids):
            for c, name in enumerate(class_names):
                writer.writerow([domain_id, name, repr(float(table.values[j, c]))])
