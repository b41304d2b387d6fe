"""Inferability judging: a deterministic rubric judge, a remote LLM judge client, and agreement statistics."""

from __future__ import annotations

import csv
import json
import math
import os
import re
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from pydantic import ValidationError
from scipy import stats

from .extract import ConfidenceEdge, SupportingSubgraph, directed_paths
from .graph import Triple
from .transport import JsonEndpoint, ProtocolError
from .wire import JudgeRequest, JudgeResponse

TIER_NAMES = ("low", "moderately-low", "relatively-high", "high")
LOW, MOD_LOW, REL_HIGH, HIGH = range(4)


class ParseError(ValueError):
    pass


# --------------------------------------------------------------------------
# rubric configuration


@dataclass(frozen=True)
class Composition:
    path: tuple[str, ...]
    implies: str

    def __post_init__(self) -> None:
        if not 2 <= len(self.path) <= 3:
            raise ValueError(f"composition path must have 2 or 3 relations, got {self.path}")


def _pairs_to_similarity(pairs: Iterable[tuple[str, str]]) -> dict[str, frozenset[str]]:
    sim: dict[str, set[str]] = defaultdict(set)
    for a, b in pairs:
        sim[a].add(b)
        sim[b].add(a)
    return {k: frozenset(v) for k, v in sim.items()}


@dataclass(frozen=True)
class RubricConfig:
    """Relation similarity, path compositions and entropy tier cut points.

    Similarity is treated as reflexive and symmetric but not transitive.
    Tier bounds are inclusive upper bounds: an entropy equal to a cut point
    falls in the lower tier.
    """

    similarity: Mapping[str, frozenset[str]] = field(default_factory=dict)
    compositions: tuple[Composition, ...] = ()
    tier_bounds: tuple[float, float, float] = (0.25, 0.35, 0.55)

    def __post_init__(self) -> None:
        if len(self.tier_bounds) != 3:
            raise ValueError("tier_bounds needs exactly three cut points")
        if any(a >= b for a, b in zip(self.tier_bounds, self.tier_bounds[1:])):
            raise ValueError(f"tier_bounds must be strictly increasing: {self.tier_bounds}")
        sym: dict[str, set[str]] = defaultdict(set)
        for rel, others in self.similarity.items():
            for other in others:
                sym[rel].add(other)
                sym[other].add(rel)
        object.__setattr__(self, "similarity", {k: frozenset(v) for k, v in sym.items()})

    def similar(self, a: str, b: str) -> bool:
        return a == b or b in self.similarity.get(a, ())

    def tier(self, entropy: float) -> int:
        return sum(1 for bound in self.tier_bounds if entropy > bound)

    def matching_composition(self, relations: Sequence[str], target_relation: str) -> Composition | None:
        for comp in self.compositions:
            if (
                len(comp.path) == len(relations)
                and all(self.similar(a, b) for a, b in zip(relations, comp.path))
                and self.similar(comp.implies, target_relation)
            ):
                return comp
        return None

    def to_dict(self) -> dict:
        return {
            "similarity": {k: sorted(v) for k, v in sorted(self.similarity.items())},
            "compositions": [{"path": list(c.path), "implies": c.implies} for c in self.compositions],
            "tier_bounds": list(self.tier_bounds),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RubricConfig":
        return cls(
            similarity={k: frozenset(v) for k, v in data.get("similarity", {}).items()},
            compositions=tuple(Composition(tuple(c["path"]), c["implies"]) for c in data.get("compositions", [])),
            tier_bounds=tuple(data.get("tier_bounds", (0.25, 0.35, 0.55))),  # type: ignore[arg-type]
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RubricConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")


DEFAULT_SIMILAR_PAIRS = (
    ("manufactures", "produces"),
    ("isLocatedIn", "hasCapital"),
    ("wasBornIn", "hasPlaceOfBirth"),
    ("hasDeathPlace", "hasPlaceOfDeath"),
    ("hasNationality", "hasCitizenship"),
    ("isMarriedTo", "hasSpouse"),
    ("worksAt", "hasEmployer"),
    ("playsFor", "worksAt"),
    ("livesIn", "hasLegalResidence"),
    ("playsFor", "workat"),
    ("workat", "worksAt"),
    ("workat", "edited"),
)

DEFAULT_COMPOSITIONS = (
    Composition(("capital_of", "located_in"), "located_in"),
    Composition(("worked_at", "located_in", "part_of"), "lived_in"),
    Composition(("isLocatedIn", "isLocatedIn"), "isLocatedIn"),
    Composition(("isLocatedIn", "isLocatedIn", "isLocatedIn"), "isLocatedIn"),
    Composition(("worksAt", "isLocatedIn"), "livesIn"),
    Composition(("worksAt", "isLocatedIn", "isLocatedIn"), "livesIn"),
    Composition(("playsFor", "isLocatedIn"), "livesIn"),
    Composition(("studiedAt", "isLocatedIn"), "livesIn"),
    Composition(("worksAt", "isLocatedIn", "hasOfficialLanguage"), "hasLanguage"),
    Composition(("wasBornIn", "isLocatedIn"), "wasBornIn"),
    Composition(("hasDeathPlace", "isLocatedIn"), "hasDeathPlace"),
    Composition(("isPoliticianOf", "isLocatedIn"), "isLocatedIn"),
    Composition(("livesIn", "isLocatedIn"), "livesIn"),
    Composition(("hasChild", "hasNationality"), "hasNationality"),
    Composition(("isMarriedTo", "livesIn"), "livesIn"),
    Composition(("isKnownFor", "owns"), "created"),
    Composition(("owns", "owns"), "owns"),
    Composition(("hasNeighbor", "isLocatedIn"), "isLocatedIn"),
)

DEFAULT_RUBRIC = RubricConfig(
    similarity=_pairs_to_similarity(DEFAULT_SIMILAR_PAIRS),
    compositions=DEFAULT_COMPOSITIONS,
)


# --------------------------------------------------------------------------
# rule judge


@dataclass(frozen=True)
class PathFinding:
    edges: tuple[Triple, ...]
    tier: str
    max_entropy: float
    rule: str | None = None

    def to_dict(self) -> dict:
        return {
            "edges": [t.as_dict() for t in self.edges],
            "tier": self.tier,
            "max_entropy": self.max_entropy,
            "rule": self.rule,
        }


@dataclass
class JudgeVerdict:
    score: int
    direct_paths: list[PathFinding] = field(default_factory=list)
    support_paths: list[PathFinding] = field(default_factory=list)
    partial_paths: list[PathFinding] = field(default_factory=list)
    rationale: str = ""

    def __post_init__(self) -> None:
        if self.score not in range(6):
            raise ValueError(f"score must be in 0..5, got {self.score}")

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "direct_paths": [p.to_dict() for p in self.direct_paths],
            "support_paths": [p.to_dict() for p in self.support_paths],
            "partial_paths": [p.to_dict() for p in self.partial_paths],
            "rationale": self.rationale,
        }


def _dedup(edges: Iterable[ConfidenceEdge]) -> dict[Triple, float]:
    best: dict[Triple, float] = {}
    for e in edges:
        if e.triple not in best or e.entropy_bits < best[e.triple]:
            best[e.triple] = e.entropy_bits
    return best


def _undirected_paths(entropy: Mapping[Triple, float], head: str, tail: str, max_len: int) -> list[tuple[Triple, ...]]:
    """Simple head-to-tail paths of length <= max_len ignoring edge direction."""
    incident: dict[str, list[tuple[Triple, str]]] = defaultdict(list)
    for t in sorted(entropy):
        incident[t.subject].append((t, t.object))
        incident[t.object].append((t, t.subject))
    found: list[tuple[Triple, ...]] = []

    def walk(node: str, path: tuple[Triple, ...], visited: frozenset[str]) -> None:
        for t, nxt in incident.get(node, ()):
            if nxt == tail:
                found.append(path + (t,))
            elif len(path) + 1 < max_len and nxt not in visited:
                walk(nxt, path + (t,), visited | {nxt})

    walk(head, (), frozenset({head}))
    return found


def _connected(entropy: Mapping[Triple, float], head: str, tail: str) -> bool:
    adj: dict[str, set[str]] = defaultdict(set)
    for t in entropy:
        adj[t.subject].add(t.object)
        adj[t.object].add(t.subject)
    seen, stack = {head}, [head]
    while stack:
        node = stack.pop()
        if node == tail:
            return True
        for nxt in adj[node] - seen:
            seen.add(nxt)
            stack.append(nxt)
    return False


def _is_forward(path: tuple[Triple, ...], head: str) -> bool:
    node = head
    for t in path:
        if t.subject != node:
            return False
        node = t.object
    return True


def rule_judge(
    subgraph: SupportingSubgraph | Iterable[ConfidenceEdge],
    target: Triple,
    rubric: RubricConfig = DEFAULT_RUBRIC,
) -> JudgeVerdict:
    """Score how strongly the subgraph lets one infer ``target``, on a 0..5 scale.

    Each score level is a disjunction of evidence conditions, and the verdict
    is the highest level whose condition holds. Every condition only asks for
    the presence of paths, so removing edges can never raise the score.
    """
    if isinstance(subgraph, SupportingSubgraph):
        if subgraph.target != target:
            raise ValueError(f"subgraph targets {subgraph.target}, not {target}")
        edges: Iterable[ConfidenceEdge] = subgraph.edges
    else:
        edges = subgraph
    entropy = _dedup(edges)
    head, tail = target.subject, target.object
    tier_of = rubric.tier

    direct = [
        PathFinding((t,), TIER_NAMES[tier_of(h)], h)
        for t, h in sorted(entropy.items())
        if t.subject == head and t.object == tail and rubric.similar(t.relation, target.relation)
    ]
    support: list[PathFinding] = []
    partial: list[PathFinding] = []
    conf_edges = [ConfidenceEdge.with_entropy(t, 0.0) for t in entropy]
    for path in directed_paths(conf_edges, head, tail, max_len=3):
        if len(path) < 2:
            continue
        triples = tuple(e.triple for e in path)
        worst = max(entropy[t] for t in triples)
        comp = rubric.matching_composition([t.relation for t in triples], target.relation)
        finding = PathFinding(
            triples, TIER_NAMES[tier_of(worst)], worst, " o ".join(comp.path) + f" -> {comp.implies}" if comp else None
        )
        (support if comp else partial).append(finding)

    mixed = [p for p in _undirected_paths(entropy, head, tail, 3) if not _is_forward(p, head)]
    connected = _connected(entropy, head, tail) if entropy else False

    best_direct = min((TIER_NAMES.index(p.tier) for p in direct), default=None)
    valid_tiers = sorted(TIER_NAMES.index(p.tier) for p in support)
    n_valid = len(valid_tiers)
    best_valid = valid_tiers[0] if valid_tiers else None

    reasons: list[tuple[int, str]] = []
    if best_direct is not None:
        if best_direct == LOW:
            reasons.append((5, "direct path in the low tier"))
        if best_direct <= MOD_LOW and n_valid >= 1:
            reasons.append((5, "moderately-low direct path with a valid support path"))
        if n_valid >= 2:
            reasons.append((5, "direct path with two or more valid support paths"))
        if best_direct <= MOD_LOW:
            reasons.append((4, "direct path at or below moderately-low"))
        if best_direct <= REL_HIGH and n_valid >= 1:
            reasons.append((4, "relatively-high direct path with a valid support path"))
        reasons.append((3, "direct path present"))
    if best_valid is not None:
        if best_valid == LOW:
            reasons.append((5, "valid support path in the low tier"))
        if best_valid <= MOD_LOW:
            reasons.append((4, "valid support path at or below moderately-low"))
        reasons.append((3, "valid support path present"))
    if mixed:
        reasons.append((2, "head and tail linked through shared neighbours"))
    if len(partial) >= 2:
        reasons.append((2, "two or more partial directed paths"))
    if partial:
        reasons.append((1, "partial directed path"))
    if connected:
        reasons.append((1, "head and tail weakly connected"))

    score, why = max(reasons, key=lambda r: r[0], default=(0, "head and tail not connected"))
    rationale = (
        f"direct={len(direct)} valid_support={n_valid} partial={len(partial)} "
        f"mixed={len(mixed)} connected={'yes' if connected else 'no'}; score {score}: {why}"
    )
    return JudgeVerdict(score, direct, support, partial, rationale)


# --------------------------------------------------------------------------
# remote judge


def judge_template() -> str:
    return resources.files("kgunlearn").joinpath("prompts/judge.txt").read_text(encoding="utf-8")


def format_entropy(value: float) -> str:
    return str(Decimal(repr(float(value))).quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN))


def render_judge_prompt(subgraph: SupportingSubgraph | Iterable[ConfidenceEdge], target: Triple) -> str:
    edges = subgraph.edges if isinstance(subgraph, SupportingSubgraph) else tuple(sorted(subgraph))
    facts = "\n".join(
        f"({e.triple.subject}, {e.triple.relation}, {e.triple.object}) with entropy {format_entropy(e.entropy_bits)}"
        for e in edges
    )
    text = judge_template()
    text = text.replace("{facts_str}", facts)
    return text.replace("(A, relation, B)", f"({target.subject}, {target.relation}, {target.object})")


_SCORE_MARKER = re.compile(r"final\s+confidence\s+score", re.IGNORECASE)
_SCORE_VALUE = re.compile(r"^[\s*_:]*(-?\d+)")


def parse_judge_response(text: str) -> int:
    """Integer after the last "Final Confidence Score" marker."""
    markers = list(_SCORE_MARKER.finditer(text))
    if not markers:
        raise ParseError("no 'Final Confidence Score' marker in response")
    m = _SCORE_VALUE.match(text[markers[-1].end() :])
    if m is None:
        raise ParseError("no integer after the final score marker")
    score = int(m.group(1))
    if not 0 <= score <= 5:
        raise ParseError(f"score {score} outside 0..5")
    return score


class RemoteJudge:
    """Scores a subgraph by sampling an LLM judge ``samples`` times and taking the median.

    Unparseable completions are re-requested up to ``parse_retries`` times
    per sample before :class:`ParseError` propagates.
    """

    def __init__(self, endpoint: JsonEndpoint | str, *, samples: int = 3, parse_retries: int = 2):
        if samples < 1:
            raise ValueError("samples must be >= 1")
        self.endpoint = JsonEndpoint(endpoint) if isinstance(endpoint, str) else endpoint
        self.samples = samples
        self.parse_retries = parse_retries

    def _sample(self, prompt: str) -> int:
        error: ParseError | None = None
        for _ in range(self.parse_retries + 1):
            body = self.endpoint.post(JudgeRequest(prompt=prompt).model_dump())
            try:
                completion = JudgeResponse.model_validate(body).completion
            except ValidationError as exc:
                raise ProtocolError(f"malformed judge response: {exc}") from None
            try:
                return parse_judge_response(completion)
            except ParseError as exc:
                error = exc
        assert error is not None
        raise error

    def score_samples(self, subgraph: SupportingSubgraph, target: Triple) -> list[int]:
        prompt = render_judge_prompt(subgraph, target)
        return [self._sample(prompt) for _ in range(self.samples)]

    def judge(self, subgraph: SupportingSubgraph, target: Triple) -> int:
        return statistics.median_low(self.score_samples(subgraph, target))


# --------------------------------------------------------------------------
# agreement


@dataclass
class AgreementReport:
    means_a: list[float]
    means_b: list[float]
    pearson: float
    spearman: float
    gaps: list[float]
    undefined_reason: str | None = None

    def to_dict(self) -> dict:
        def num(x: float) -> float | None:
            return None if math.isnan(x) else x

        return {
            "pearson": num(self.pearson),
            "spearman": num(self.spearman),
            "undefined_reason": self.undefined_reason,
            "items": [
                {"mean_a": a, "mean_b": b, "gap": g} for a, b, g in zip(self.means_a, self.means_b, self.gaps)
            ],
        }

    def scatter_csv(self) -> str:
        lines = ["item,mean_a,mean_b"]
        lines += [f"{i},{a!r},{b!r}" for i, (a, b) in enumerate(zip(self.means_a, self.means_b))]
        return "\n".join(lines) + "\n"


def agreement(scores_a: Sequence[Sequence[float]], scores_b: Sequence[Sequence[float]]) -> AgreementReport:
    """Correlate two judges' per-item mean scores."""
    if len(scores_a) != len(scores_b):
        raise ValueError(f"item counts differ: {len(scores_a)} vs {len(scores_b)}")
    if any(not s for s in scores_a) or any(not s for s in scores_b):
        raise ValueError("every item needs at least one rating per judge")
    a = np.array([np.mean(s) for s in scores_a], dtype=float)
    b = np.array([np.mean(s) for s in scores_b], dtype=float)
    gaps = np.abs(a - b)
    reason = None
    if len(a) < 2:
        reason = "fewer than two items"
    elif np.ptp(a) == 0:
        reason = "zero variance in judge A"
    elif np.ptp(b) == 0:
        reason = "zero variance in judge B"
    if reason:
        pearson = spearman = math.nan
    else:
        pearson = float(np.clip(stats.pearsonr(a, b)[0], -1.0, 1.0))
        spearman = float(np.clip(stats.spearmanr(a, b)[0], -1.0, 1.0))
    return AgreementReport(a.tolist(), b.tolist(), pearson, spearman, gaps.tolist(), reason)


def load_ratings_csv(path: str | os.PathLike) -> dict[str, list[float]]:
    """Read ``item_id,rater_id,score`` rows into per-item score lists."""
    ratings: dict[str, list[float]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"item_id", "rater_id", "score"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
        for row in reader:
            ratings[row["item_id"]].append(float(row["score"]))
    return dict(ratings)


def agreement_from_ratings(
    ratings_a: Mapping[str, Sequence[float]], ratings_b: Mapping[str, Sequence[float]]
) -> tuple[list[str], AgreementReport]:
    if set(ratings_a) != set(ratings_b):
        diff = sorted(set(ratings_a) ^ set(ratings_b))
        raise ValueError(f"item sets differ, e.g. {diff[:5]}")
    items = sorted(ratings_a)
    return items, agreement([ratings_a[i] for i in items], [ratings_b[i] for i in items])
