"""Evaluate knowledge unlearning by tracing what a model can still infer about a forgotten fact."""

from __future__ import annotations

__version__ = "0.1.0"

from .calibration import entropy_bits, expected_calibration_error, fit_temperature, yes_prob_range
from .extract import ConfidenceEdge, ExtractionConfig, SupportingSubgraph, extract
from .graph import ReferenceGraph, Triple, k_hop_neighbors, parse_triples, relation_catalogue
from .judge import DEFAULT_RUBRIC, RubricConfig, parse_judge_response, render_judge_prompt, rule_judge
from .metrics import EvalReport, LocRecord, TargetEvaluation, loc, recall, select_epoch, ues
from .probe import AnswerDistribution, BeliefModelSpec, ProbeResult, RemoteOracle, SyntheticOracle, admit
from .unlearn import ForgetSet, UnlearnOperatorSpec, apply_operator, apply_pipeline, sample_forget_set

__all__ = [
    "AnswerDistribution",
    "BeliefModelSpec",
    "ConfidenceEdge",
    "DEFAULT_RUBRIC",
    "EvalReport",
    "ExtractionConfig",
    "ForgetSet",
    "LocRecord",
    "ProbeResult",
    "ReferenceGraph",
    "RemoteOracle",
    "RubricConfig",
    "SupportingSubgraph",
    "SyntheticOracle",
    "TargetEvaluation",
    "Triple",
    "UnlearnOperatorSpec",
    "admit",
    "apply_operator",
    "apply_pipeline",
    "entropy_bits",
    "expected_calibration_error",
    "extract",
    "fit_temperature",
    "k_hop_neighbors",
    "loc",
    "parse_judge_response",
    "parse_triples",
    "recall",
    "relation_catalogue",
    "render_judge_prompt",
    "rule_judge",
    "sample_forget_set",
    "select_epoch",
    "ues",
    "yes_prob_range",
]
