"""Shared fixtures, frozen vectors and independent oracles for the test suite."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from kgunlearn.calibration import LogitRecord
from kgunlearn.extract import ConfidenceEdge
from kgunlearn.graph import ReferenceGraph, Triple
from kgunlearn.probe import AnswerDistribution, BeliefModelSpec

# entropy threshold -> published Yes-probability interval, three decimals
YES_RANGE_TABLE: dict[float, tuple[float, float]] = {
    0.10: (0.987, 0.989),
    0.15: (0.978, 0.982),
    0.20: (0.969, 0.974),
    0.25: (0.958, 0.966),
    0.30: (0.947, 0.957),
    0.35: (0.934, 0.947),
    0.40: (0.921, 0.937),
    0.45: (0.906, 0.927),
    0.50: (0.890, 0.916),
    0.55: (0.873, 0.905),
    0.60: (0.854, 0.892),
    0.65: (0.833, 0.880),
    0.70: (0.811, 0.867),
    0.75: (0.785, 0.853),
    0.80: (0.757, 0.838),
    0.85: (0.724, 0.823),
    0.90: (0.684, 0.807),
    0.95: (0.631, 0.791),
    1.00: (0.500, 0.773),
}


def entropy_oracle(ps) -> float:
    """Plain -sum p log2 p over positive components, written independently of the package."""
    return -sum(p * math.log2(p) for p in ps if p > 0)


# --------------------------------------------------------------------------
# calibration data


def calibrated_logit_records(n: int, seed: int, t0: float = 1.0) -> list[LogitRecord]:
    """Records whose labels are drawn from softmax(z); stored logits are z / t0.

    Unknown sits far below No so the rejection likelihood is effectively the
    No probability, which keeps the generating model inside the fitted family.
    Fitting should therefore recover temperature 1 / t0.
    """
    rng = np.random.default_rng(seed)
    d = rng.normal(0.0, 2.5, size=n)
    gap = rng.uniform(8.0, 10.0, size=n)
    u = rng.uniform(size=n)
    out = []
    for di, gi, ui in zip(d, gap, u):
        p_yes = 1.0 / (1.0 + math.exp(-di))
        label = "positive" if ui < p_yes else "negative"
        out.append(LogitRecord(di / t0, 0.0, -gi / t0, label))
    return out


def nll_oracle(records: list[LogitRecord], temperature: float) -> float:
    total = 0.0
    for r in records:
        z = [r.logit_yes / temperature, r.logit_no / temperature, r.logit_unknown / temperature]
        m = max(z)
        lse = m + math.log(sum(math.exp(x - m) for x in z))
        correct = z[0] if r.gold_label == "positive" else max(z[1], z[2])
        total += lse - correct
    return total / len(records)


def perfectly_calibrated_predictions(n: int, seed: int) -> list[tuple[float, bool]]:
    rng = random.Random(seed)
    preds = []
    for _ in range(n):
        c = rng.random()
        preds.append((c, rng.random() < c))
    return preds


# --------------------------------------------------------------------------
# synthetic worlds


def dist_with_entropy(entropy: float) -> AnswerDistribution:
    return ConfidenceEdge.with_entropy(Triple("x", "y", "z"), entropy).distribution


@dataclass
class RandomWorld:
    ref: ReferenceGraph
    spec: BeliefModelSpec
    target: Triple


def random_world(seed: int, *, n_entities: int = 12, n_relations: int = 3, n_edges: int = 24) -> RandomWorld:
    """A seeded reference graph plus a belief model admitting a random subset of probes.

    Beliefs cover both reference triples and unseen (v, r, w) combinations so
    that extraction has to rely on the oracle rather than the reference edges.
    """
    rng = random.Random(seed)
    ents = [f"n{i:02d}" for i in range(n_entities)]
    rels = [f"r{j}" for j in range(n_relations)]
    edges = set()
    while len(edges) < n_edges:
        s, o = rng.sample(ents, 2)
        edges.add(Triple(s, rng.choice(rels), o))
    ref = ReferenceGraph.from_triples(edges)
    present = list(ref.entities)
    beliefs: dict[Triple, AnswerDistribution] = {}
    for s in present:
        for o in present:
            if s == o:
                continue
            for r in ref.relations:
                roll = rng.random()
                if roll < 0.12:
                    beliefs[Triple(s, r, o)] = dist_with_entropy(rng.uniform(0.0, 1.3))
                elif roll < 0.16:
                    beliefs[Triple(s, r, o)] = AnswerDistribution(0.2, 0.7, 0.1)
    target = rng.choice(sorted(edges))
    spec = BeliefModelSpec(beliefs=beliefs, default_absent=AnswerDistribution(0.05, 0.9, 0.05))
    return RandomWorld(ref, spec, target)


# --------------------------------------------------------------------------
# worked judge examples: (edges as (s, r, o, entropy), target, expected score)

JUDGE_EXAMPLES: dict[str, tuple[list[tuple[str, str, str, float]], Triple, int]] = {
    "rome": (
        [("Rome", "capital_of", "Italy", 0.08), ("Italy", "located_in", "Europe", 0.12)],
        Triple("Rome", "located_in", "Europe"),
        5,
    ),
    "apple": (
        [("Apple", "produces", "iPhone", 0.35), ("iPhone", "runs_on", "iOS", 0.15), ("Apple", "develops", "iOS", 0.20)],
        Triple("Apple", "manufactures", "iPhone"),
        4,
    ),
    "einstein": (
        [
            ("Einstein", "worked_at", "Princeton_University", 0.55),
            ("Princeton_University", "located_in", "New_Jersey", 0.30),
            ("New_Jersey", "part_of", "USA", 0.25),
        ],
        Triple("Einstein", "lived_in", "USA"),
        3,
    ),
    "tiger": (
        [("Tiger", "belongs_to", "Felidae", 0.45), ("Lion", "belongs_to", "Felidae", 0.40), ("Felidae", "is_carnivorous", "True", 0.25)],
        Triple("Tiger", "hunts", "Lion"),
        2,
    ),
    "sun": (
        [("Sun", "larger_than", "Earth", 0.60), ("Earth", "has_satellite", "Moon", 0.30)],
        Triple("Sun", "orbited_by", "Moon"),
        1,
    ),
    "water": (
        [("Water", "contains", "Hydrogen", 0.25), ("Tree", "produces", "Oxygen", 0.40), ("Fire", "consumes", "Oxygen", 0.35)],
        Triple("Water", "extinguishes", "Fire"),
        0,
    ),
}


def edges_of(rows: list[tuple[str, str, str, float]]) -> list[ConfidenceEdge]:
    return [ConfidenceEdge.with_entropy(Triple(s, r, o), h) for s, r, o, h in rows]


# --------------------------------------------------------------------------
# architecture-firm case study: target and two support edges before and after unlearning

BH_TARGET = Triple("B+H_Architects", "created", "Brookfield_Place_(Toronto)")
BH_SUPPORT = (
    Triple("B+H_Architects", "isKnownFor", "Brookfield_Office_Properties"),
    Triple("Brookfield_Office_Properties", "owns", "Brookfield_Place_(Toronto)"),
)
BH_ENTROPY_PRE = {BH_TARGET: 0.252, BH_SUPPORT[0]: 0.134, BH_SUPPORT[1]: 0.110}
BH_ENTROPY_POST = {BH_TARGET: 1.127, BH_SUPPORT[0]: 0.512, BH_SUPPORT[1]: 0.441}
