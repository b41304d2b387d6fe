"""HTTP service exposing a synthetic belief model and the rule judge over the remote wire protocols.

It lets the remote clients run end to end without a GPU endpoint, and gives
a reference implementation for anyone wrapping a real model.
"""

from __future__ import annotations

import math
import re

from fastapi import FastAPI, HTTPException

from . import __version__
from .extract import ConfidenceEdge, SupportingSubgraph
from .graph import Triple
from .judge import DEFAULT_RUBRIC, RubricConfig, rule_judge
from .probe import QWEN_TEMPLATE, BeliefModelSpec, PromptTemplate, SyntheticOracle, TemplateError
from .wire import CHOICES, JudgeRequest, JudgeResponse, ProbeRequest, ProbeResponse

LOGPROB_FLOOR = -1000.0
_FACT = re.compile(r"^\((.+?), (.+?), (.+?)\) with entropy ([0-9]*\.?[0-9]+)\s*$")
_TRIPLE = re.compile(r"^\((.+?), (.+?), (.+?)\)\s*$")
_FACTS_HEADER = "Given Subgraph Triples:"
_TARGET_HEADER = "Target Triple:"


def _logprob(p: float) -> float:
    return math.log(p) if p > 0 else LOGPROB_FLOOR


def parse_judge_prompt(prompt: str) -> tuple[Triple, list[ConfidenceEdge]]:
    """Recover the target and the listed facts from a rendered judge prompt."""
    start = prompt.rfind(_FACTS_HEADER)
    if start < 0:
        raise ValueError("prompt has no facts block")
    block, sep, rest = prompt[start + len(_FACTS_HEADER) :].partition(_TARGET_HEADER)
    if not sep:
        raise ValueError("prompt has no target triple")
    edges = []
    for line in block.strip().splitlines():
        m = _FACT.match(line.strip())
        if m is None:
            raise ValueError(f"unparseable fact line {line!r}")
        edges.append(ConfidenceEdge.with_entropy(Triple(m[1], m[2], m[3]), float(m[4])))
    target_line = rest.strip().splitlines()[0] if rest.strip() else ""
    m = _TRIPLE.match(target_line)
    if m is None:
        raise ValueError(f"unparseable target line {target_line!r}")
    return Triple(m[1], m[2], m[3]), edges


def create_app(
    beliefs: BeliefModelSpec,
    *,
    rubric: RubricConfig = DEFAULT_RUBRIC,
    template: PromptTemplate = QWEN_TEMPLATE,
) -> FastAPI:
    app = FastAPI(title="kgunlearn synthetic endpoint", version=__version__)
    oracle = SyntheticOracle(beliefs)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "beliefs": len(beliefs.beliefs), "template": template.name}

    @app.post("/probe", response_model=ProbeResponse)
    def probe(req: ProbeRequest) -> ProbeResponse:
        if list(req.choices) != list(CHOICES):
            raise HTTPException(422, f"choices must be {list(CHOICES)}")
        try:
            triple = template.parse(req.prompt)
        except TemplateError as exc:
            raise HTTPException(422, str(exc)) from None
        dist = oracle.distribution(triple)
        named = {"Yes": dist.p_yes, "No": dist.p_no, "Unknown": dist.p_unknown}
        # residual mass is reported as filler tokens so the top-5 list stays honest
        ranked = sorted(
            [*named.items(), *((f"<other{i}>", dist.p_other / 2) for i in range(2))],
            key=lambda kv: -kv[1],
        )
        return ProbeResponse(
            logprobs={k: _logprob(v) for k, v in named.items()},
            top_tokens=[tok for tok, _ in ranked[:5]],
        )

    @app.post("/judge", response_model=JudgeResponse)
    def judge(req: JudgeRequest) -> JudgeResponse:
        try:
            target, edges = parse_judge_prompt(req.prompt)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from None
        verdict = rule_judge(SupportingSubgraph(target, tuple(edges)), target, rubric)
        return JudgeResponse(completion=f"{verdict.rationale}\nFinal Confidence Score: {verdict.score}")

    return app
