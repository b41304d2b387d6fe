"""Supporting-subgraph extraction: probe outward from the subject, inward to the object, keep s-to-o paths."""

from __future__ import annotations

import json
import os
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .calibration import LOG2_3, yes_prob_range
from .graph import ReferenceGraph, Triple, k_hop_neighbors, relation_catalogue
from .probe import AnswerDistribution, BeliefOracle, ProbeResult, admit, probe_many

PHASES = ("phase1", "phase2", "phase3")


class DegenerateTargetError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class ConfidenceEdge:
    triple: Triple
    entropy_bits: float = field(compare=False)
    distribution: AnswerDistribution = field(compare=False)

    @classmethod
    def from_probe(cls, triple: Triple, result: ProbeResult) -> "ConfidenceEdge":
        return cls(triple, result.entropy_bits, result.distribution)

    @classmethod
    def with_entropy(cls, triple: Triple, entropy: float = 0.0, p_yes: float | None = None) -> "ConfidenceEdge":
        """Edge with a stated entropy; the distribution is a Yes-leaning stand-in for fixtures."""
        if p_yes is None:
            p_yes = yes_prob_range(entropy)[1] if entropy > 0 else 1.0
        rest = (1.0 - p_yes) / 2
        return cls(triple, entropy, AnswerDistribution(p_yes, rest, 1.0 - p_yes - rest))

    def to_dict(self) -> dict:
        d = self.distribution
        return {
            **self.triple.as_dict(),
            "entropy": self.entropy_bits,
            "p_yes": d.p_yes,
            "p_no": d.p_no,
            "p_unknown": d.p_unknown,
            "p_other": d.p_other,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ConfidenceEdge":
        entropy = float(data["entropy"])
        if not 0.0 <= entropy <= LOG2_3 + 1e-9:
            raise ValueError(f"entropy {entropy} out of range")
        return cls(Triple.from_dict(data), entropy, AnswerDistribution.from_dict(data))


@dataclass(frozen=True)
class ExtractionConfig:
    k: int = 3
    max_path_len: int = 3
    u_star: float = 1.0
    candidate_cap: int = 0
    directed: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_path_len != 3:
            raise ValueError("only max_path_len = 3 is supported")
        if not self.u_star > 0:
            raise ValueError("u_star must be positive")
        if self.candidate_cap < 0:
            raise ValueError("candidate_cap must be >= 0")


@dataclass
class SupportingSubgraph:
    target: Triple
    edges: tuple[ConfidenceEdge, ...] = ()
    frontier: dict[str, list[str]] = field(default_factory=dict)
    phases: dict[str, dict[str, int]] = field(default_factory=dict)
    working: tuple[ConfidenceEdge, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self) -> None:
        self.edges = tuple(sorted(set(self.edges)))

    def triples(self) -> frozenset[Triple]:
        return frozenset(e.triple for e in self.edges)

    def __len__(self) -> int:
        return len(self.edges)

    def to_dict(self) -> dict:
        return {
            "target": self.target.as_dict(),
            "edges": [e.to_dict() for e in self.edges],
            "phases": {**{k: dict(v) for k, v in self.phases.items()}, "frontier": self.frontier},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SupportingSubgraph":
        phases = dict(data.get("phases", {}))
        frontier = phases.pop("frontier", {})
        return cls(
            target=Triple.from_dict(data["target"]),
            edges=tuple(ConfidenceEdge.from_dict(e) for e in data.get("edges", [])),
            frontier={k: list(v) for k, v in frontier.items()},
            phases=phases,
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "SupportingSubgraph":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SupportingSubgraph":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _check_target(ref: ReferenceGraph, target: Triple) -> None:
    if target.subject == target.object:
        raise DegenerateTargetError(f"subject and object coincide in {target}")
    ref.entity_index(target.subject)
    ref.entity_index(target.object)


def _cap(items: list, cap: int) -> list:
    return items[:cap] if cap else items


def _phase1_candidates(ref: ReferenceGraph, target: Triple, cfg: ExtractionConfig) -> list[str]:
    s, o = target.subject, target.object
    near = k_hop_neighbors(ref, s, cfg.k, directed=cfg.directed) - {s, o}
    return _cap(sorted(near), cfg.candidate_cap)


def _phase2_pairs(
    ref: ReferenceGraph, target: Triple, cfg: ExtractionConfig, n_s: set[str], *, exclude_n_s: bool = True
) -> list[tuple[str, str]]:
    s, o = target.subject, target.object
    pairs = []
    for v in sorted(n_s):
        excluded = {s, o, v} | (n_s if exclude_n_s else set())
        for w in sorted(k_hop_neighbors(ref, v, cfg.k, directed=cfg.directed) - excluded):
            pairs.append((v, w))
    return _cap(pairs, cfg.candidate_cap)


def _phase3_heads(target: Triple, cfg: ExtractionConfig, n_s: set[str], n_e: set[str]) -> list[str]:
    return _cap(sorted((n_s | n_e | {target.subject}) - {target.object}), cfg.candidate_cap)


def _admitted(
    oracle: BeliefOracle, queries: list[Triple], cfg: ExtractionConfig, workers: int
) -> list[ConfidenceEdge]:
    results = probe_many(oracle, queries, workers)
    return [ConfidenceEdge.from_probe(q, res) for q, res in zip(queries, results) if admit(res, cfg.u_star)]


def extract(
    oracle: BeliefOracle,
    ref: ReferenceGraph,
    target: Triple,
    cfg: ExtractionConfig = ExtractionConfig(),
    *,
    workers: int = 1,
) -> SupportingSubgraph:
    """Probe the neighbourhood of ``target`` in three phases and prune to s-to-o paths.

    Every relation in the reference catalogue is tried for each candidate
    pair. Phase boundaries are barriers and candidates are visited in label
    order, so the result does not depend on ``workers``.
    """
    _check_target(ref, target)
    s, o = target.subject, target.object
    relations = relation_catalogue(ref)
    working: list[ConfidenceEdge] = []
    stats: dict[str, dict[str, int]] = {}

    heads1 = _phase1_candidates(ref, target, cfg)
    found = _admitted(oracle, [Triple(s, r, v) for v in heads1 for r in relations], cfg, workers)
    n_s = {e.triple.object for e in found}
    working += found
    stats["phase1"] = {"probes": len(heads1) * len(relations), "admitted": len(found)}

    pairs = _phase2_pairs(ref, target, cfg, n_s)
    found = _admitted(oracle, [Triple(v, r, w) for v, w in pairs for r in relations], cfg, workers)
    n_e = {e.triple.subject for e in found}
    working += found
    stats["phase2"] = {"probes": len(pairs) * len(relations), "admitted": len(found)}

    heads3 = _phase3_heads(target, cfg, n_s, n_e)
    found = _admitted(oracle, [Triple(v, r, o) for v in heads3 for r in relations], cfg, workers)
    n_o = {e.triple.subject for e in found}
    working += found
    stats["phase3"] = {"probes": len(heads3) * len(relations), "admitted": len(found)}

    kept: set[ConfidenceEdge] = set()
    changed = True
    while changed:
        changed = False
        for edge in working:
            if edge not in kept and (edge.triple.object in n_o or edge.triple.object == o):
                kept.add(edge)
                n_o.add(edge.triple.subject)
                changed = True

    return SupportingSubgraph(
        target=target,
        edges=tuple(kept),
        frontier={"N_s": sorted(n_s), "N_e": sorted(n_e), "N_o": sorted(n_o)},
        phases=stats,
        working=tuple(sorted(working)),
    )


def declarative_reference_extract(
    oracle: BeliefOracle,
    ref: ReferenceGraph,
    target: Triple,
    cfg: ExtractionConfig = ExtractionConfig(),
) -> SupportingSubgraph:
    """Set-comprehension restatement of :func:`extract`, kept as a test oracle.

    Pruning is done by reverse reachability from the object over the full
    admitted set instead of incremental frontier growth.
    """
    _check_target(ref, target)
    s, o = target.subject, target.object
    rels = relation_catalogue(ref)

    def ok(t: Triple) -> ProbeResult | None:
        res = oracle.probe(t)
        return res if admit(res, cfg.u_star) else None

    def admitted_set(queries: Iterable[Triple]) -> dict[Triple, ProbeResult]:
        return {q: res for q in queries if (res := ok(q)) is not None}

    a1 = admitted_set(Triple(s, r, v) for v in _phase1_candidates(ref, target, cfg) for r in rels)
    n_s = {t.object for t in a1}
    a2 = admitted_set(Triple(v, r, w) for v, w in _phase2_pairs(ref, target, cfg, n_s) for r in rels)
    n_e = {t.subject for t in a2}
    a3 = admitted_set(Triple(v, r, o) for v in _phase3_heads(target, cfg, n_s, n_e) for r in rels)
    working = {**a1, **a2, **a3}

    into: dict[str, set[str]] = defaultdict(set)
    for t in working:
        into[t.object].add(t.subject)
    reaches_o = {o}
    queue = deque([o])
    while queue:
        node = queue.popleft()
        for prev in into[node]:
            if prev not in reaches_o:
                reaches_o.add(prev)
                queue.append(prev)

    edges = tuple(ConfidenceEdge.from_probe(t, res) for t, res in working.items() if t.object in reaches_o)
    return SupportingSubgraph(
        target=target,
        edges=edges,
        frontier={
            "N_s": sorted(n_s),
            "N_e": sorted(n_e),
            "N_o": sorted({e.triple.subject for e in edges}),
        },
        working=tuple(sorted(ConfidenceEdge.from_probe(t, r) for t, r in working.items())),
    )


def probe_budget(ref: ReferenceGraph, target: Triple, cfg: ExtractionConfig = ExtractionConfig()) -> dict[str, int]:
    """Probe counts per phase: exact for Phase 1, upper bounds for Phases 2 and 3.

    The bounds assume every Phase 1 candidate is admitted. Phase 2 pairs are
    counted without excluding N_s, because a larger N_s only removes
    candidates. The ``total`` key sums the three.
    """
    n_rel = len(relation_catalogue(ref))
    if not ref.has_entity(target.subject) or target.subject == target.object:
        return {"phase1": 0, "phase2": 0, "phase3": 0, "total": 0}
    heads1 = _phase1_candidates(ref, target, cfg)
    n_s = set(heads1)
    pairs = _phase2_pairs(ref, target, cfg, n_s, exclude_n_s=False)
    # Phase 2 subjects are drawn from N_s, so N_e adds no Phase 3 heads
    heads3 = _phase3_heads(target, cfg, n_s, set())
    counts = {
        "phase1": len(heads1) * n_rel,
        "phase2": len(pairs) * n_rel,
        "phase3": len(heads3) * n_rel,
    }
    counts["total"] = sum(counts.values())
    return counts


def directed_paths(
    edges: Sequence[ConfidenceEdge] | Iterable[ConfidenceEdge], head: str, tail: str, max_len: int = 3
) -> list[tuple[ConfidenceEdge, ...]]:
    """All simple directed head-to-tail edge sequences of length 1..max_len."""
    out_edges: dict[str, list[ConfidenceEdge]] = defaultdict(list)
    for e in sorted(set(edges)):
        out_edges[e.triple.subject].append(e)
    found: list[tuple[ConfidenceEdge, ...]] = []

    def walk(node: str, path: tuple[ConfidenceEdge, ...], visited: frozenset[str]) -> None:
        for e in out_edges.get(node, ()):
            nxt = e.triple.object
            if nxt == tail:
                found.append(path + (e,))
            elif len(path) + 1 < max_len and nxt not in visited:
                walk(nxt, path + (e,), visited | {nxt})

    walk(head, (), frozenset({head}))
    return found
