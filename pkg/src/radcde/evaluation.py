"""Scoring and statistics for extraction runs.

Instances are (report, CDE) pairs.  Each truth value is binned into one of
three outcome classes -- absent, unspecified, or positive -- and a prediction
scores a true positive for that class only on exact match; a wrong prediction
counts one false negative for the truth's class and one false positive for the
predicted value's class.  Significance helpers (Fisher, McNemar) are exact
big-integer computations, as is nominal Krippendorff alpha.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

from .errors import GridMismatchError, UndefinedStatisticError
from .registry import CdeKind, CdeRegistry, UNSPECIFIED

OUTCOME_CLASSES = ("absent", "unspecified", "positive")

Record = dict[str, "str | float"]


# ---------------------------------------------------------------------------
# Outcome binning
# ---------------------------------------------------------------------------


def _resolve(registry: CdeRegistry, key: str):
    try:
        return registry.get(key)
    except Exception:
        return registry.lookup_feature(key)


def outcome_class(registry: CdeRegistry, key: str, value: str | float) -> str:
    """Bin one value: absent / unspecified / positive."""
    cde = _resolve(registry, key)
    if cde.kind is CdeKind.NUMERIC:
        return "unspecified" if _numbers_match(float(value), float(cde.default)) else "positive"
    label = str(value)
    coded = cde.value_by_code(label)
    if coded is not None:
        label = coded.label
    elif cde.value_by_label(label) is None:
        raise GridMismatchError(f"value {value!r} not legal for {key}")
    if label == "absent":
        return "absent"
    if label == UNSPECIFIED:
        return "unspecified"
    return "positive"


def _numbers_match(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-9)


def values_match(registry: CdeRegistry, key: str, predicted, truth) -> bool:
    cde = _resolve(registry, key)
    if cde.kind is CdeKind.NUMERIC:
        return _numbers_match(float(predicted), float(truth))
    def canon(value):
        coded = cde.value_by_code(str(value))
        return coded.label if coded is not None else str(value)
    return canon(predicted) == canon(truth)


# ---------------------------------------------------------------------------
# Phase scoring
# ---------------------------------------------------------------------------


@dataclass
class ClassScore:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class PhaseScores:
    per_class: dict[str, ClassScore]
    n_instances: int
    n_correct: int
    per_feature: dict[str, dict] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_instances if self.n_instances else 1.0

    @property
    def macro_f1(self) -> float:
        return sum(self.per_class[c].f1 for c in OUTCOME_CLASSES) / len(OUTCOME_CLASSES)

    @property
    def micro_f1(self) -> float:
        tp = sum(s.tp for s in self.per_class.values())
        fp = sum(s.fp for s in self.per_class.values())
        fn = sum(s.fn for s in self.per_class.values())
        p = tp / (tp + fp) if tp + fp else 1.0
        r = tp / (tp + fn) if tp + fn else 1.0
        return 2 * p * r / (p + r) if p + r else 0.0


def _check_aligned(predictions: list[Record], truths: list[Record]) -> None:
    if len(predictions) != len(truths):
        raise GridMismatchError(
            f"{len(predictions)} prediction records vs {len(truths)} truth records"
        )
    for i, (pred, truth) in enumerate(zip(predictions, truths)):
        if set(pred) != set(truth):
            missing = set(truth) ^ set(pred)
            raise GridMismatchError(f"record {i} key mismatch: {sorted(missing)[:5]}")


def score_phase(
    predictions: list[Record], truths: list[Record], registry: CdeRegistry
) -> PhaseScores:
    """Exact-match scoring over aligned prediction/truth records.

    Record keys may be cde_ids or feature names; categorical values may be
    value codes or labels, mixed freely between the two sides.
    """
    _check_aligned(predictions, truths)
    per_class = {c: ClassScore() for c in OUTCOME_CLASSES}
    feature_classes: dict[str, dict[str, ClassScore]] = defaultdict(
        lambda: {c: ClassScore() for c in OUTCOME_CLASSES}
    )
    feature_counts: dict[str, list[int]] = defaultdict(lambda: [0, 0])  # [correct, total]
    n_correct = n_instances = 0

    for pred, truth in zip(predictions, truths):
        for key in truth:
            truth_class = outcome_class(registry, key, truth[key])
            n_instances += 1
            feature_counts[key][1] += 1
            if values_match(registry, key, pred[key], truth[key]):
                per_class[truth_class].tp += 1
                feature_classes[key][truth_class].tp += 1
                feature_counts[key][0] += 1
                n_correct += 1
            else:
                pred_class = outcome_class(registry, key, pred[key])
                per_class[truth_class].fn += 1
                per_class[pred_class].fp += 1
                feature_classes[key][truth_class].fn += 1
                feature_classes[key][pred_class].fp += 1

    per_feature = {}
    for key, classes in feature_classes.items():
        correct, total = feature_counts[key]
        per_feature[key] = {
            "accuracy": correct / total if total else 1.0,
            "macro_f1": sum(classes[c].f1 for c in OUTCOME_CLASSES) / len(OUTCOME_CLASSES),
            "support": total,
            **{f"f1_{c}": classes[c].f1 for c in OUTCOME_CLASSES},
        }
    return PhaseScores(
        per_class=per_class,
        n_instances=n_instances,
        n_correct=n_correct,
        per_feature=per_feature,
    )


# ---------------------------------------------------------------------------
# System comparison
# ---------------------------------------------------------------------------


@dataclass
class CrossComparison:
    both_correct: int
    only_first: int
    only_second: int
    neither: int

    @property
    def table(self) -> tuple[tuple[int, int], tuple[int, int]]:
        return ((self.both_correct, self.only_first), (self.only_second, self.neither))

    @property
    def fisher_p(self) -> float:
        return fisher_exact(self.table)

    @property
    def mcnemar_p(self) -> float:
        return mcnemar_exact(self.only_first, self.only_second)


def cross_compare(
    first: list[Record],
    second: list[Record],
    truths: list[Record],
    registry: CdeRegistry,
) -> CrossComparison:
    """Per-instance correctness agreement between two systems on shared truth."""
    _check_aligned(first, truths)
    _check_aligned(second, truths)
    cells = [0, 0, 0, 0]
    for a, b, truth in zip(first, second, truths):
        for key in truth:
            a_ok = values_match(registry, key, a[key], truth[key])
            b_ok = values_match(registry, key, b[key], truth[key])
            index = 0 if a_ok and b_ok else 1 if a_ok else 2 if b_ok else 3
            cells[index] += 1
    return CrossComparison(*cells)


def fisher_exact(table: tuple[tuple[int, int], tuple[int, int]]) -> float:
    """Two-sided Fisher exact test, computed with exact rational arithmetic."""
    (a, b), (c, d) = table
    if min(a, b, c, d) < 0:
        raise UndefinedStatisticError("contingency counts must be non-negative")
    r1, r2, c1 = a + b, c + d, a + c
    n = r1 + r2
    if n == 0 or r1 == 0 or r2 == 0 or c1 == 0 or c1 == n:
        return 1.0
    denominator = comb(n, c1)

    def weight(k: int) -> Fraction:
        return Fraction(comb(r1, k) * comb(r2, c1 - k), denominator)

    observed = weight(a)
    low, high = max(0, c1 - r2), min(r1, c1)
    p = sum(
        (w for k in range(low, high + 1) if (w := weight(k)) <= observed),
        start=Fraction(0),
    )
    return float(min(p, Fraction(1)))


def mcnemar_exact(only_first: int, only_second: int) -> float:
    """Two-sided exact binomial McNemar test on the discordant counts."""
    if only_first < 0 or only_second < 0:
        raise UndefinedStatisticError("discordant counts must be non-negative")
    n = only_first + only_second
    if n == 0:
        return 1.0
    k = min(only_first, only_second)
    tail = sum(Fraction(comb(n, i), 2**n) for i in range(k + 1))
    return float(min(2 * tail, Fraction(1)))


# ---------------------------------------------------------------------------
# Inter-rater agreement
# ---------------------------------------------------------------------------


def krippendorff_alpha(
    units: list[list], level: str = "nominal", exact: bool = False
) -> float | Fraction:
    """Nominal-level Krippendorff alpha over rating units (None = missing)."""
    if level != "nominal":
        raise UndefinedStatisticError(f"unsupported measurement level {level!r}")
    coincidence: dict[tuple, Fraction] = defaultdict(lambda: Fraction(0))
    for unit in units:
        ratings = [r for r in unit if r is not None]
        m = len(ratings)
        if m < 2:
            continue
        share = Fraction(1, m - 1)
        for i, vi in enumerate(ratings):
            for j, vj in enumerate(ratings):
                if i != j:
                    coincidence[(vi, vj)] += share
    if not coincidence:
        raise UndefinedStatisticError("no unit carries two or more ratings")
    values = sorted({v for pair in coincidence for v in pair}, key=repr)
    totals = {
        v: sum(coincidence[(v, w)] for w in values if (v, w) in coincidence)
        for v in values
    }
    n = sum(totals.values())
    observed = sum(c for (v, w), c in coincidence.items() if v != w) / n
    expected_pairs = sum(
        totals[v] * totals[w] for v in values for w in values if v != w
    )
    if expected_pairs == 0:
        raise UndefinedStatisticError("all ratings share a single value")
    expected = Fraction(expected_pairs, 1) / (n * (n - 1))
    alpha = 1 - observed / expected
    return alpha if exact else float(alpha)
