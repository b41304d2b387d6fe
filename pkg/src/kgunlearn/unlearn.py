"""Belief-perturbation operators that stand in for an unlearned model, plus forget-set sampling."""

from __future__ import annotations

import json
import math
import os
import random
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Collection, Iterable, Literal, Mapping, Sequence

import numpy as np

from .graph import ReferenceGraph, Triple
from .probe import AnswerDistribution, BeliefModelSpec, BeliefOracle, admit, probe_many, triple_uniform

OperatorKind = Literal["instance_erase", "correlated_damage", "utility_noise"]
Destination = Literal["unknown", "no"]
KINDS: tuple[str, ...] = ("instance_erase", "correlated_damage", "utility_noise")


class ForgetSetError(ValueError):
    pass


@dataclass(frozen=True)
class UnlearnOperatorSpec:
    kind: OperatorKind
    strength: float = 1.0
    radius: int = 1
    fraction: float = 1.0
    seed: int = 0
    destination: Destination = "unknown"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength must lie in [0, 1], got {self.strength}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in [0, 1], got {self.fraction}")
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.destination not in ("unknown", "no"):
            raise ValueError(f"destination must be 'unknown' or 'no', got {self.destination!r}")

    @classmethod
    def parse(cls, text: str) -> "UnlearnOperatorSpec":
        """Parse ``kind key=value ...``, e.g. ``correlated_damage strength=1 radius=1 fraction=0.8``."""
        kind, *pairs = text.split()
        kwargs: dict[str, object] = {}
        casts = {"strength": float, "fraction": float, "radius": int, "seed": int, "destination": str}
        for pair in pairs:
            key, sep, value = pair.partition("=")
            if not sep or key not in casts:
                raise ValueError(f"bad operator parameter {pair!r} in {text!r}")
            kwargs[key] = casts[key](value)
        return cls(kind, **kwargs)  # type: ignore[arg-type]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "strength": self.strength,
            "radius": self.radius,
            "fraction": self.fraction,
            "seed": self.seed,
            "destination": self.destination,
        }


@dataclass(frozen=True)
class ForgetSet:
    targets: tuple[Triple, ...]
    bound: float

    def __len__(self) -> int:
        return len(self.targets)

    def to_dict(self) -> dict:
        return {"bound": self.bound, "targets": [t.as_dict() for t in self.targets]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ForgetSet":
        return cls(tuple(Triple.from_dict(t) for t in data["targets"]), float(data["bound"]))

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ForgetSet":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def sample_forget_set(
    oracle: BeliefOracle,
    ref: ReferenceGraph,
    n: int,
    bound: float = 1.0,
    seed: int = 42,
    *,
    relations: Collection[str] | None = None,
    workers: int = 1,
) -> ForgetSet:
    """Draw ``n`` reference triples the oracle currently believes at entropy ``bound``.

    ``relations`` optionally restricts candidates to the given relation labels.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    triples = [t for t in ref.iter_triples() if not relations or t.relation in relations]
    results = probe_many(oracle, triples, workers)
    qualifying = [t for t, res in zip(triples, results) if admit(res, bound)]
    if len(qualifying) < n:
        raise ForgetSetError(f"requested {n} targets but only {len(qualifying)} qualify")
    chosen = random.Random(seed).sample(qualifying, n)
    return ForgetSet(tuple(sorted(chosen)), bound)


# --------------------------------------------------------------------------
# mass shifting

_UNIFORM = np.full(3, 1.0 / 3.0)
_DEST_INDEX = {"no": 1, "unknown": 2}


@lru_cache(maxsize=1)
def _directions(count: int = 720) -> np.ndarray:
    """Unit vectors spanning the plane of zero-sum perturbations."""
    e1 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    e2 = np.array([1.0, 1.0, -2.0]) / math.sqrt(6.0)
    theta = np.arange(count) * (2.0 * math.pi / count)
    return np.outer(np.cos(theta), e1) + np.outer(np.sin(theta), e2)


def _nats(q: np.ndarray) -> float:
    q = q[q > 1e-12]
    return float(-(q * np.log(q)).sum())


@lru_cache(maxsize=65536)
def _erase_target(named: tuple[float, float, float], destination: str) -> tuple[float, float, float]:
    """Endpoint Q of the erase path for a three-choice distribution P.

    Q is a near-uniform point that does not lean towards Yes (preferably
    leaning towards ``destination``), chosen so that cross-entropy(P, Q) does
    not exceed H(Q). Entropy is concave along the segment from P to Q and its
    slope at Q is H(Q) - cross-entropy(P, Q), so the condition makes entropy
    non-decreasing over the whole segment.
    """
    p = np.array(named)
    if np.allclose(p, _UNIFORM, atol=1e-12):
        return named
    d = _DEST_INDEX[destination]
    dirs = _directions()
    toward_p = dirs @ (p - _UNIFORM)
    eps = 0.2
    for _ in range(40):
        q = _UNIFORM + eps * dirs
        margin = 0.25 * eps
        dest_top = q[:, d] >= np.delete(q, d, axis=1).max(axis=1) + margin
        not_yes = q[:, 0] <= q.max(axis=1) - margin
        order = np.lexsort((toward_p, not_yes, dest_top, toward_p > 1e-12))[::-1]
        for i in order[:50]:
            if not not_yes[i]:
                continue
            cand = q[i]
            cross = float(-(p * np.log(cand)).sum())
            h = _nats(cand)
            if cross <= h and h / math.log(2.0) > 1.0:
                return float(cand[0]), float(cand[1]), float(cand[2])
        eps /= 2.0
    return named


def erase_shift(dist: AnswerDistribution, strength: float, destination: Destination = "unknown") -> AnswerDistribution:
    """Move a distribution's named mass along the erase path; ``p_other`` is kept as is.

    At strength 1 the result has entropy above one bit and does not favour
    Yes; entropy never decreases as strength grows.
    """
    if strength == 0.0:
        return dist
    named = dist.named()
    q = _erase_target(named, destination)
    mass = 1.0 - dist.p_other
    mixed = [((1.0 - strength) * a + strength * b) * mass for a, b in zip(named, q)]
    return AnswerDistribution.normalized(*mixed, dist.p_other)


def _noise_shift(dist: AnswerDistribution, strength: float) -> AnswerDistribution:
    keep = 1.0 - strength
    moved = (dist.p_yes + dist.p_no + dist.p_unknown) * strength
    return AnswerDistribution.normalized(dist.p_yes * keep, dist.p_no * keep, dist.p_unknown * keep, dist.p_other + moved)


def _near_targets(ref: ReferenceGraph, targets: Iterable[Triple], radius: int) -> set[str]:
    endpoints = {e for t in targets for e in (t.subject, t.object)}
    return set(ref.distances(endpoints, radius - 1))


def apply_operator(
    base: BeliefModelSpec,
    op: UnlearnOperatorSpec,
    targets: ForgetSet | Sequence[Triple],
    ref: ReferenceGraph,
) -> BeliefModelSpec:
    """Return a perturbed copy of ``base``; triples the operator does not touch are left identical."""
    target_list = targets.targets if isinstance(targets, ForgetSet) else tuple(targets)
    if op.strength == 0.0:
        return base
    target_set = set(target_list)
    beliefs = dict(base.beliefs)

    if op.kind == "instance_erase":
        for t in target_list:
            beliefs[t] = erase_shift(base.lookup(t), op.strength, op.destination)
    elif op.kind == "correlated_damage":
        near = _near_targets(ref, target_list, op.radius)
        for t in sorted(base.beliefs):
            if t in target_set or (t.subject not in near and t.object not in near):
                continue
            if triple_uniform(op.seed, t, "damage") < op.fraction:
                beliefs[t] = erase_shift(base.beliefs[t], op.strength, op.destination)
    else:
        for t in sorted(base.beliefs):
            if t not in target_set and triple_uniform(op.seed, t, "utility") < op.fraction:
                beliefs[t] = _noise_shift(base.beliefs[t], op.strength)
    return replace(base, beliefs=beliefs)


def apply_pipeline(
    base: BeliefModelSpec,
    ops: Sequence[UnlearnOperatorSpec],
    targets: ForgetSet | Sequence[Triple],
    ref: ReferenceGraph,
) -> BeliefModelSpec:
    """Apply operators left to right."""
    spec = base
    for op in ops:
        spec = apply_operator(spec, op, targets, ref)
    return spec
