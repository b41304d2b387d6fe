"""A small synthetic world where forgotten facts stay inferable through workplace locations."""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .calibration import yes_prob_range
from .graph import ReferenceGraph, Triple
from .probe import AnswerDistribution, BeliefModelSpec

# entropy of the two support edges per target, cycling; None means no support path
_SUPPORT_PLAN = (None, 0.10, 0.30, 0.45, None, 0.15, 0.32, 0.50, 0.12, None)
_TARGET_ENTROPY = (0.12, 0.20, 0.30, 0.18)
_CITIES = ("Avalon", "Brightwater", "Cedarfall", "Dunmore", "Eastport", "Fairhaven")
_COUNTRIES = ("Norland", "Sudria")


def believed(entropy: float) -> AnswerDistribution:
    """Yes-leaning distribution with exactly the given entropy (No and Unknown split evenly)."""
    p_yes = yes_prob_range(entropy)[1] if entropy > 0 else 1.0
    rest = (1.0 - p_yes) / 2
    return AnswerDistribution(p_yes, rest, 1.0 - p_yes - rest)


@dataclass(frozen=True)
class ToyWorld:
    ref: ReferenceGraph
    beliefs: BeliefModelSpec
    targets: tuple[Triple, ...]

    def write(self, out_dir: str | Path, *, n_targets: int | None = None) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"reference": out / "reference.tsv", "beliefs": out / "beliefs.json", "config": out / "config.ini"}
        self.ref.write(paths["reference"])
        self.beliefs.save(paths["beliefs"])
        paths["config"].write_text(toy_config(n_targets or len(self.targets)), encoding="utf-8")
        return paths


def toy_world(n_targets: int = 20, n_bystanders: int = 20, seed: int = 42) -> ToyWorld:
    rng = random.Random(seed)
    facts: dict[Triple, float] = {}
    for i, city in enumerate(_CITIES):
        facts[Triple(city, "isLocatedIn", _COUNTRIES[i % 2])] = 0.05 + 0.02 * i

    targets = []
    for i in range(n_targets):
        person, city = f"Person_{i:02d}", _CITIES[i % len(_CITIES)]
        target = Triple(person, "livesIn", city)
        targets.append(target)
        facts[target] = _TARGET_ENTROPY[i % len(_TARGET_ENTROPY)]
        support = _SUPPORT_PLAN[i % len(_SUPPORT_PLAN)]
        if support is not None:
            firm = f"Firm_{i:02d}"
            facts[Triple(person, "worksAt", firm)] = support
            facts[Triple(firm, "isLocatedIn", city)] = round(support * 0.8, 3)
        facts[Triple(person, "hasGender", "female" if i % 2 else "male")] = 0.05
        facts[Triple(person, "hasCitizenship", _COUNTRIES[i % 2])] = round(rng.uniform(0.05, 0.4), 3)

    for j in range(n_bystanders):
        person = f"Bystander_{j:02d}"
        facts[Triple(person, "hasGender", "female" if j % 2 else "male")] = 0.08
        facts[Triple(person, "hasCitizenship", rng.choice(_COUNTRIES))] = round(rng.uniform(0.05, 0.6), 3)
        facts[Triple(person, "isMarriedTo", f"Person_{rng.randrange(n_targets):02d}")] = round(rng.uniform(0.1, 0.7), 3)

    ref = ReferenceGraph.from_triples(facts)
    beliefs = BeliefModelSpec(beliefs={t: believed(h) for t, h in sorted(facts.items())}, noise_seed=seed)
    return ToyWorld(ref, beliefs, tuple(sorted(targets)))


def toy_config(n_targets: int = 20, *, correlated: bool = False) -> str:
    operators = ["instance_erase strength=1"]
    if correlated:
        operators.append("correlated_damage strength=1 radius=1 fraction=0.8 seed=7")
    ops = "\n    ".join(operators)
    return f"""\
[paths]
reference = reference.tsv
beliefs = beliefs.json

[extraction]
k = 3
u_star = 1.0

[forget]
n = {n_targets}
bound = 1.0
relations = livesIn

[unlearn]
operators =
    {ops}

[metrics]
loc_multiplier = 10
gamma = 2

[judge]
backend = rule

[run]
seed = 42
"""
