"""Belief probing: ask a model whether (s, r, o) holds and read back a calibrated answer distribution."""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import re
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Literal, Mapping, Protocol, Sequence

from pydantic import ValidationError

from .calibration import LOG2_3, entropy_bits
from .graph import Triple
from .transport import JsonEndpoint, ProtocolError, TransportError  # noqa: F401
from .wire import CHOICES, ProbeRequest, ProbeResponse

Choice = Literal["Yes", "No", "Unknown", "Other"]
_SUM_TOL = 1e-9


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class AnswerDistribution:
    p_yes: float
    p_no: float
    p_unknown: float
    p_other: float = 0.0

    def __post_init__(self) -> None:
        comps = self.as_tuple()
        if any(not (0.0 <= p <= 1.0) or math.isnan(p) for p in comps):
            raise ValueError(f"probabilities must lie in [0, 1]: {comps}")
        if abs(math.fsum(comps) - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities must sum to 1: {comps}")

    @classmethod
    def normalized(cls, p_yes: float, p_no: float, p_unknown: float, p_other: float = 0.0) -> "AnswerDistribution":
        total = p_yes + p_no + p_unknown + p_other
        if total <= 0:
            raise ValueError("all-zero distribution")
        return cls(p_yes / total, p_no / total, p_unknown / total, p_other / total)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.p_yes, self.p_no, self.p_unknown, self.p_other)

    def named(self) -> tuple[float, float, float]:
        """The Yes/No/Unknown components renormalised to sum to one.

        With no mass on the three choices the result is uniform.
        """
        mass = self.p_yes + self.p_no + self.p_unknown
        if mass <= 0.0:
            return (1 / 3, 1 / 3, 1 / 3)
        return (self.p_yes / mass, self.p_no / mass, self.p_unknown / mass)

    def entropy(self) -> float:
        if self.p_yes + self.p_no + self.p_unknown <= 0.0:
            return LOG2_3
        return min(entropy_bits(self.named()), LOG2_3)

    def argmax(self) -> Choice:
        # ties resolve Yes > No > Unknown > Other
        best: Choice = "Yes"
        best_p = self.p_yes
        for name, p in (("No", self.p_no), ("Unknown", self.p_unknown), ("Other", self.p_other)):
            if p > best_p:
                best, best_p = name, p  # type: ignore[assignment]
        return best

    def to_dict(self) -> dict[str, float]:
        return {"p_yes": self.p_yes, "p_no": self.p_no, "p_unknown": self.p_unknown, "p_other": self.p_other}

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "AnswerDistribution":
        p_yes, p_no, p_unknown = float(data["p_yes"]), float(data["p_no"]), float(data["p_unknown"])
        p_other = data.get("p_other")
        if p_other is None:
            p_other = max(0.0, 1.0 - (p_yes + p_no + p_unknown))
        return cls(p_yes, p_no, p_unknown, float(p_other))


@dataclass(frozen=True)
class ProbeResult:
    distribution: AnswerDistribution
    argmax_choice: Choice
    entropy_bits: float
    yes_in_top5: bool

    @classmethod
    def from_distribution(cls, dist: AnswerDistribution, yes_in_top5: bool | None = None) -> "ProbeResult":
        if yes_in_top5 is None:
            yes_in_top5 = dist.p_yes > 0.0
        return cls(dist, dist.argmax(), dist.entropy(), bool(yes_in_top5))

    def to_dict(self) -> dict:
        return {
            **self.distribution.to_dict(),
            "argmax": self.argmax_choice,
            "entropy": self.entropy_bits,
            "yes_in_top5": self.yes_in_top5,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ProbeResult":
        dist = AnswerDistribution.from_dict(data)
        return cls(dist, data["argmax"], float(data["entropy"]), bool(data["yes_in_top5"]))


def admit(result: ProbeResult, u_star: float) -> bool:
    """Whether a probed triple counts as a believed edge at entropy threshold ``u_star``."""
    if not u_star > 0:
        raise ValueError(f"u_star must be positive, got {u_star}")
    return result.argmax_choice == "Yes" and result.yes_in_top5 and result.entropy_bits <= u_star


class BeliefOracle(Protocol):
    def probe(self, query: Triple) -> ProbeResult: ...


def probe_many(oracle: BeliefOracle, queries: Sequence[Triple], workers: int = 1) -> list[ProbeResult]:
    """Probe in parallel; results come back in query order."""
    if workers <= 1 or len(queries) <= 1:
        return [oracle.probe(q) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(oracle.probe, queries))


# --------------------------------------------------------------------------
# synthetic belief model


@dataclass
class BeliefModelSpec:
    beliefs: dict[Triple, AnswerDistribution] = field(default_factory=dict)
    default_absent: AnswerDistribution = field(default_factory=lambda: AnswerDistribution(0.05, 0.9, 0.05))
    noise_seed: int = 0
    noise_scale: float = 0.0

    def __post_init__(self) -> None:
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")

    def lookup(self, triple: Triple) -> AnswerDistribution:
        return self.beliefs.get(triple, self.default_absent)

    def to_dict(self) -> dict:
        return {
            "beliefs": [
                {**t.as_dict(), **self.beliefs[t].to_dict()} for t in sorted(self.beliefs)
            ],
            "default_absent": self.default_absent.to_dict(),
            "noise_seed": self.noise_seed,
            "noise_scale": self.noise_scale,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "BeliefModelSpec":
        beliefs = {Triple.from_dict(row): AnswerDistribution.from_dict(row) for row in data.get("beliefs", [])}
        default = data.get("default_absent")
        return cls(
            beliefs=beliefs,
            default_absent=AnswerDistribution.from_dict(default) if default else AnswerDistribution(0.05, 0.9, 0.05),
            noise_seed=int(data.get("noise_seed", 0)),
            noise_scale=float(data.get("noise_scale", 0.0)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "BeliefModelSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def triple_seed(seed: int, triple: Triple, salt: str = "") -> int:
    """Stable 64-bit seed derived from a global seed and a triple."""
    material = "\x1f".join((str(seed), salt, *triple)).encode("utf-8")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


def triple_uniform(seed: int, triple: Triple, salt: str = "") -> float:
    return triple_seed(seed, triple, salt) / 2.0**64


class SyntheticOracle:
    """Answers probes from a stored belief model.

    Optional Gaussian jitter is applied in log space and seeded per triple, so
    results never depend on probe order or thread scheduling.
    """

    def __init__(self, spec: BeliefModelSpec):
        self.spec = spec

    def distribution(self, query: Triple) -> AnswerDistribution:
        base = self.spec.lookup(query)
        if self.spec.noise_scale == 0.0:
            return base
        rng = random.Random(triple_seed(self.spec.noise_seed, query, "noise"))
        named = (base.p_yes, base.p_no, base.p_unknown)
        logs = [math.log(p) + rng.gauss(0.0, self.spec.noise_scale) if p > 0 else -math.inf for p in named]
        top = max(logs)
        if top == -math.inf:
            return base
        exps = [math.exp(x - top) if x > -math.inf else 0.0 for x in logs]
        scale = (1.0 - base.p_other) / sum(exps)
        p_yes, p_no, p_unknown = (e * scale for e in exps)
        return AnswerDistribution.normalized(p_yes, p_no, p_unknown, base.p_other)

    def probe(self, query: Triple) -> ProbeResult:
        dist = self.distribution(query)
        return ProbeResult.from_distribution(dist, yes_in_top5=dist.p_yes > 0.0)

    def with_template(self, template: "PromptTemplate") -> "SyntheticOracle":
        return self


# --------------------------------------------------------------------------
# prompt templates

PROBE_SYSTEM_MESSAGE = """\
You are an expert in knowledge graphs. Your task is to determine whether a given relation between two entities is correct, incorrect, or unknown.

First analyze the semantic properties of both entities, and then reason about whether the relation mentioned in the task is appropriate for these two entities.

Here is an example of a correct relation:

Example 1: For head entity 'Shakespeare', tail entity 'Hamlet', relation 'wrote', reasoning process: Shakespeare is a person, specifically an author, while Hamlet is a literary work. 'wrote' is one of the most specific relations between an author and their work, so the relation 'wrote' is correct.

Here is an example of an incorrect relation:

Example 2: For head entity 'Shakespeare', tail entity 'Hamlet', relation 'locatedIn', reasoning process: Shakespeare is a person and Hamlet is a literary work. The relation 'locatedIn' typically describes spatial or geographic relationships, which does not apply to an author and their work. Therefore, the relation 'locatedIn' is incorrect.

Here is an example of an unknown relation:

Example 3: For head entity 'Hamlet', tail entity 'Existentialism', relation 'influencedBy', reasoning process: Hamlet is a literary work, while Existentialism is a philosophical movement. Although some scholars interpret Hamlet's introspective nature as proto-existentialist, there is no widely agreed-upon or factual relationship confirming that Hamlet was directly influenced by Existentialism. Therefore, the relation 'influencedBy' is unknown.

Be deliberate and analytical in your reasoning before providing your final answer. Your answer (which is provided) should be taken as-is; the goal is to compute its log probability given the context.
According to the user's task, you should provide your final answer in the format 'Answer: Yes' or 'Answer: No' or 'Answer: Unknown'."""

_PLACEHOLDERS = ("{entity1}", "{entity2}", "{relation}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    user: str
    system: str = PROBE_SYSTEM_MESSAGE

    def check(self) -> None:
        missing = [p for p in _PLACEHOLDERS if p not in self.user]
        if missing:
            raise TemplateError(f"template {self.name!r} lacks placeholder(s) {', '.join(missing)}")

    def user_pattern(self) -> re.Pattern[str]:
        pattern = re.escape(self.user)
        for name in ("entity1", "entity2", "relation"):
            pattern = pattern.replace(re.escape("{" + name + "}"), f"(?P<{name}>.+?)", 1)
        return re.compile(pattern, re.DOTALL)

    def parse(self, prompt: str) -> Triple:
        """Recover the probed triple from a prompt rendered with this template."""
        body = prompt[len(self.system) :].lstrip("\n") if prompt.startswith(self.system) else prompt
        m = self.user_pattern().fullmatch(body)
        if m is None:
            raise TemplateError(f"prompt does not match template {self.name!r}")
        return Triple(m["entity1"], m["relation"], m["entity2"])


QWEN_TEMPLATE = PromptTemplate(
    "qwen",
    "Task: In the triple ({entity1}, ?, {entity2}), does the relation '{relation}' correctly complete it? "
    "Answer: Yes/No/Unknown",
)
LLAMA_TEMPLATE = PromptTemplate(
    "llama",
    "Task: Given that the head entity is '{entity1}' and the tail entity is '{entity2}', "
    "is the relationship '{relation}'? Answer: Yes/No/Unknown",
)
TEMPLATES = {t.name: t for t in (QWEN_TEMPLATE, LLAMA_TEMPLATE)}


def render_probe_prompt(template: PromptTemplate, query: Triple) -> str:
    template.check()
    user = (
        template.user.replace("{entity1}", query.subject)
        .replace("{entity2}", query.object)
        .replace("{relation}", query.relation)
    )
    return f"{template.system}\n\n{user}"


# --------------------------------------------------------------------------
# remote endpoint client


def distribution_from_logprobs(
    logprobs: Mapping[str, float], temperature: float = 1.0
) -> AnswerDistribution:
    """Temperature-scaled softmax over the three choices.

    Whatever probability the raw logprobs leave outside the choices is kept as
    ``p_other``; the three choices share the rest in softmax proportion.
    """
    try:
        lp = [float(logprobs[c]) for c in CHOICES]
    except KeyError as exc:
        raise ProtocolError(f"logprobs missing choice {exc.args[0]!r}") from None
    if any(math.isnan(x) or x == math.inf for x in lp):
        raise ProtocolError(f"invalid logprobs {lp}")
    mass = math.fsum(math.exp(x) for x in lp)
    p_other = max(0.0, 1.0 - mass) if mass <= 1.0 else 0.0
    finite = [x for x in lp if x > -math.inf]
    if not finite:
        return AnswerDistribution(0.0, 0.0, 0.0, 1.0)
    top = max(finite) / temperature
    exps = [math.exp(x / temperature - top) if x > -math.inf else 0.0 for x in lp]
    z = sum(exps)
    named = [(1.0 - p_other) * e / z for e in exps]
    return AnswerDistribution.normalized(*named, p_other)


class RemoteOracle:
    """Client for a probe endpoint speaking the ProbeRequest/ProbeResponse protocol."""

    def __init__(
        self,
        endpoint: JsonEndpoint | str,
        template: PromptTemplate = QWEN_TEMPLATE,
        *,
        temperature: float = 1.0,
    ):
        template.check()
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.endpoint = JsonEndpoint(endpoint) if isinstance(endpoint, str) else endpoint
        self.template = template
        self.temperature = temperature

    def with_template(self, template: PromptTemplate) -> "RemoteOracle":
        return RemoteOracle(self.endpoint, template, temperature=self.temperature)

    def probe(self, query: Triple) -> ProbeResult:
        prompt = render_probe_prompt(self.template, query)
        body = self.endpoint.post(ProbeRequest(prompt=prompt, choices=list(CHOICES)).model_dump())
        try:
            parsed = ProbeResponse.model_validate(body)
        except ValidationError as exc:
            raise ProtocolError(f"malformed probe response: {exc}") from None
        dist = distribution_from_logprobs(parsed.logprobs, self.temperature)
        top = [t.strip() for t in parsed.top_tokens]
        return ProbeResult.from_distribution(dist, yes_in_top5=bool(top) and top[0] == "Yes")


# --------------------------------------------------------------------------
# template validation


@dataclass(frozen=True)
class LabeledTriple:
    triple: Triple
    positive: bool


@dataclass
class TemplateValidation:
    template: str
    accuracy: float
    n_items: int
    n_correct: int
    per_relation: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "template": self.template,
            "accuracy": self.accuracy,
            "n_items": self.n_items,
            "n_correct": self.n_correct,
            "per_relation": dict(sorted(self.per_relation.items())),
        }


def load_labeled_triples(path: str | os.PathLike) -> list[LabeledTriple]:
    """Read ``s<TAB>r<TAB>o<TAB>label`` rows; label is positive/negative (or 1/0)."""
    items = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
        label = fields[3].strip().lower()
        if label not in ("positive", "negative", "1", "0"):
            raise ValueError(f"{path}:{lineno}: unknown label {fields[3]!r}")
        items.append(LabeledTriple(Triple(*fields[:3]), label in ("positive", "1")))
    return items


def validate_template(
    oracle: BeliefOracle,
    template: PromptTemplate,
    validation_set: Sequence[LabeledTriple],
    *,
    workers: int = 1,
) -> TemplateValidation:
    """Score a probe template by argmax accuracy on labelled triples.

    A positive is answered correctly by Yes; a negative by No or Unknown.
    """
    if not validation_set:
        raise ValueError("validation set is empty")
    template.check()
    if hasattr(oracle, "with_template"):
        oracle = oracle.with_template(template)
    results = probe_many(oracle, [item.triple for item in validation_set], workers)
    hits: dict[str, list[bool]] = defaultdict(list)
    for item, res in zip(validation_set, results):
        if item.positive:
            ok = res.argmax_choice == "Yes"
        else:
            ok = res.argmax_choice in ("No", "Unknown")
        hits[item.triple.relation].append(ok)
    n_correct = sum(sum(v) for v in hits.values())
    return TemplateValidation(
        template=template.name,
        accuracy=n_correct / len(validation_set),
        n_items=len(validation_set),
        n_correct=n_correct,
        per_relation={rel: sum(v) / len(v) for rel, v in hits.items()},
    )


def select_template(
    oracle: BeliefOracle,
    templates: Iterable[PromptTemplate],
    validation_set: Sequence[LabeledTriple],
    *,
    workers: int = 1,
) -> tuple[PromptTemplate, list[TemplateValidation]]:
    """Pick the most accurate template; ties go to the earlier one."""
    scored = [(t, validate_template(oracle, t, validation_set, workers=workers)) for t in templates]
    if not scored:
        raise ValueError("no templates given")
    best = max(scored, key=lambda pair: pair[1].accuracy)
    return best[0], [v for _, v in scored]


def with_distribution(spec: BeliefModelSpec, updates: Mapping[Triple, AnswerDistribution]) -> BeliefModelSpec:
    beliefs = dict(spec.beliefs)
    beliefs.update(updates)
    return replace(spec, beliefs=beliefs)
