"""Unlearning metrics: UES in instance and subgraph modes, Recall, Loc, gamma checks and epoch selection."""

from __future__ import annotations

import csv
import io
import json
import math
import random
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping, Sequence

from .extract import ConfidenceEdge, SupportingSubgraph
from .graph import ReferenceGraph, Triple
from .judge import DEFAULT_RUBRIC, RubricConfig, rule_judge
from .probe import ProbeResult, admit

LABELS = ("Yes", "No", "Unknown", "Other")
Label = Literal["Yes", "No", "Unknown", "Other"]


class DenominatorError(ValueError):
    pass


class MetricWarning(UserWarning):
    pass


def instance_score(
    target: Triple, result: ProbeResult, u_star: float = 1.0, rubric: RubricConfig = DEFAULT_RUBRIC
) -> int:
    """Judge score of the target edge on its own, or 0 when the target is not believed."""
    if not admit(result, u_star):
        return 0
    return rule_judge([ConfidenceEdge.from_probe(target, result)], target, rubric).score


@dataclass
class TargetEvaluation:
    target: Triple
    pre_score: int
    post_score: int
    pre_instance_score: int = 0
    post_instance_score: int = 0
    pre_subgraph: SupportingSubgraph | None = None
    post_subgraph: SupportingSubgraph | None = None
    pre_instance: ProbeResult | None = None
    post_instance: ProbeResult | None = None

    def recall(self) -> float | None:
        if self.pre_subgraph is None or not len(self.pre_subgraph):
            return None
        pre = self.pre_subgraph.triples()
        post = self.post_subgraph.triples() if self.post_subgraph is not None else frozenset()
        return len(pre & post) / len(pre)


def ues(evals: Sequence[TargetEvaluation], mode: Literal["subgraph", "instance"] = "subgraph") -> float:
    """Mean over targets of (pre - post) / pre."""
    if not evals:
        raise ValueError("no evaluations")
    if mode not in ("subgraph", "instance"):
        raise ValueError(f"unknown mode {mode!r}")
    terms = []
    for ev in evals:
        pre, post = (ev.pre_score, ev.post_score) if mode == "subgraph" else (ev.pre_instance_score, ev.post_instance_score)
        if pre <= 0:
            raise DenominatorError(f"pre-unlearning {mode} score is 0 for target {ev.target}")
        terms.append((pre - post) / pre)
    return math.fsum(terms) / len(terms)


def recall(evals: Sequence[TargetEvaluation]) -> float:
    """Mean share of pre-unlearning subgraph edges still present afterwards.

    Targets with an empty pre-unlearning subgraph are skipped with a warning;
    if none remain the result is NaN.
    """
    values = []
    for ev in evals:
        r = ev.recall()
        if r is None:
            warnings.warn(f"empty pre-unlearning subgraph for {ev.target}; excluded from recall", MetricWarning, stacklevel=2)
        else:
            values.append(r)
    return math.fsum(values) / len(values) if values else math.nan


@dataclass(frozen=True)
class LocRecord:
    triple: Triple
    pre_label: Label
    post_label: Label

    def __post_init__(self) -> None:
        if self.pre_label not in LABELS or self.post_label not in LABELS:
            raise ValueError(f"labels must be one of {LABELS}")


def loc(records: Sequence[LocRecord], *, other_consistent: bool = False) -> tuple[float, list[list[int]]]:
    """Share of neighbour triples whose label survived unlearning, plus the 4x4 confusion matrix.

    Rows index the pre-unlearning label and columns the post-unlearning label,
    both in Yes/No/Unknown/Other order. Other-to-Other counts as a change
    unless ``other_consistent`` is set.
    """
    if not records:
        raise ValueError("no loc records")
    matrix = [[0] * 4 for _ in LABELS]
    for rec in records:
        matrix[LABELS.index(rec.pre_label)][LABELS.index(rec.post_label)] += 1
    diag = sum(matrix[i][i] for i in range(3)) + (matrix[3][3] if other_consistent else 0)
    return diag / len(records), matrix


def sample_loc_neighbors(
    ref: ReferenceGraph,
    targets: Sequence[Triple],
    multiplier: int = 10,
    exclusion: Iterable[Triple] = (),
    seed: int = 42,
    *,
    hops: int = 3,
) -> list[Triple]:
    """Reference triples near the targets but outside every supporting subgraph."""
    if multiplier < 1:
        raise ValueError("multiplier must be >= 1")
    endpoints = {e for t in targets for e in (t.subject, t.object)}
    near = ref.distances(endpoints, hops)
    excluded = set(exclusion) | set(targets)
    pool = [t for t in ref.iter_triples() if t.subject in near and t.object in near and t not in excluded]
    want = multiplier * len(targets)
    if len(pool) < want:
        warnings.warn(f"only {len(pool)} neighbour triples available, {want} requested", MetricWarning, stacklevel=2)
        return pool
    return sorted(random.Random(seed).sample(pool, want))


def select_epoch(loc_series: Sequence[float], threshold: float = 0.8) -> int:
    """1-based epoch: the last one with loc above ``threshold``, else the earliest maximum."""
    if not loc_series:
        raise ValueError("empty loc series")
    above = [i for i, v in enumerate(loc_series) if v > threshold]
    if above:
        return above[-1] + 1
    best = max(loc_series)
    return loc_series.index(best) + 1


@dataclass(frozen=True)
class GammaResult:
    gamma: float
    passed: int
    failed: int


def gamma_check(evals: Sequence[TargetEvaluation], gamma: float) -> GammaResult:
    if not 0.0 <= gamma <= 5.0:
        raise ValueError("gamma must lie in [0, 5]")
    passed = sum(1 for ev in evals if ev.post_score <= gamma)
    return GammaResult(gamma, passed, len(evals) - passed)


# --------------------------------------------------------------------------
# report


def _num(x: float) -> float | None:
    return None if math.isnan(x) else x


@dataclass
class EvalReport:
    ues_subgraph: float
    ues_instance: float
    recall: float
    loc: float
    confusion: list[list[int]]
    gamma: GammaResult
    rows: list[dict] = field(default_factory=list)
    other_consistent: bool = False
    calibration: dict | None = None

    @property
    def gap(self) -> float:
        return self.ues_instance - self.ues_subgraph

    @classmethod
    def build(
        cls,
        evals: Sequence[TargetEvaluation],
        loc_records: Sequence[LocRecord],
        *,
        gamma: float = 2.0,
        other_consistent: bool = False,
        calibration: Mapping | None = None,
    ) -> "EvalReport":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MetricWarning)
            rec = recall(evals)
        loc_value, matrix = loc(loc_records, other_consistent=other_consistent) if loc_records else (math.nan, [[0] * 4 for _ in LABELS])
        rows = []
        for ev in sorted(evals, key=lambda e: e.target):
            r = ev.recall()
            rows.append(
                {
                    "s": ev.target.subject,
                    "r": ev.target.relation,
                    "o": ev.target.object,
                    "pre_score": ev.pre_score,
                    "post_score": ev.post_score,
                    "pre_instance_score": ev.pre_instance_score,
                    "post_instance_score": ev.post_instance_score,
                    "pre_edges": len(ev.pre_subgraph) if ev.pre_subgraph is not None else 0,
                    "post_edges": len(ev.post_subgraph) if ev.post_subgraph is not None else 0,
                    "recall": r,
                }
            )
        return cls(
            ues_subgraph=ues(evals, "subgraph"),
            ues_instance=ues(evals, "instance"),
            recall=rec,
            loc=loc_value,
            confusion=matrix,
            gamma=gamma_check(evals, gamma),
            rows=rows,
            other_consistent=other_consistent,
            calibration=dict(calibration) if calibration else None,
        )

    def to_dict(self) -> dict:
        out = {
            "ues_subgraph": self.ues_subgraph,
            "ues_instance": self.ues_instance,
            "gap": self.gap,
            "recall": _num(self.recall),
            "loc": _num(self.loc),
            "loc_other_consistent": self.other_consistent,
            "confusion": {"labels": list(LABELS), "counts": self.confusion},
            "gamma": {"gamma": self.gamma.gamma, "passed": self.gamma.passed, "failed": self.gamma.failed},
            "n_targets": len(self.rows),
            "targets": self.rows,
        }
        if self.calibration is not None:
            out["calibration"] = self.calibration
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"

    def summary_line(self) -> str:
        return f"UES(inst)={self.ues_instance:.4f}, UES(ours)={self.ues_subgraph:.4f}, gap={self.gap:.4f}"

    def per_target_csv(self) -> str:
        buf = io.StringIO()
        fields = ["s", "r", "o", "pre_score", "post_score", "pre_instance_score", "post_instance_score", "pre_edges", "post_edges", "recall"]
        fields += sorted({k for row in self.rows for k in row} - set(fields))
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({**row, "recall": "" if row["recall"] is None else row["recall"]})
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["pre\\post", *LABELS])
        for label, counts in zip(LABELS, self.confusion):
            writer.writerow([label, *counts])
        return buf.getvalue()

    def score_shift_csv(self) -> str:
        """Histogram of scores before and after unlearning in both modes."""
        hist = {key: [0] * 6 for key in ("pre_subgraph", "post_subgraph", "pre_instance", "post_instance")}
        for row in self.rows:
            hist["pre_subgraph"][row["pre_score"]] += 1
            hist["post_subgraph"][row["post_score"]] += 1
            hist["pre_instance"][row["pre_instance_score"]] += 1
            hist["post_instance"][row["post_instance_score"]] += 1
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["score", *hist])
        for score in range(6):
            writer.writerow([score, *(hist[k][score] for k in hist)])
        return buf.getvalue()
