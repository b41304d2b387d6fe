from __future__ import annotations

import math
import threading

import httpx
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from kgunlearn.calibration import LOG2_3
from kgunlearn.graph import Triple
from kgunlearn.probe import (
    LLAMA_TEMPLATE,
    PROBE_SYSTEM_MESSAGE,
    QWEN_TEMPLATE,
    AnswerDistribution,
    BeliefModelSpec,
    LabeledTriple,
    PromptTemplate,
    ProbeResult,
    RemoteOracle,
    SyntheticOracle,
    TemplateError,
    admit,
    distribution_from_logprobs,
    load_labeled_triples,
    probe_many,
    render_probe_prompt,
    select_template,
    validate_template,
    with_distribution,
)
from kgunlearn.transport import JsonEndpoint, ProtocolError, TransportError

from support import entropy_oracle

PARIS = Triple("Paris", "CapitalOf", "France")

dists = st.tuples(*(st.floats(0, 1) for _ in range(4))).filter(lambda t: sum(t) > 1e-6).map(
    lambda t: AnswerDistribution.normalized(*t)
)


def result(*ps: float) -> ProbeResult:
    return ProbeResult.from_distribution(AnswerDistribution(*ps))


# -- distributions and admission


def test_synthetic_paris_entropy():
    oracle = SyntheticOracle(BeliefModelSpec({PARIS: AnswerDistribution(0.97, 0.02, 0.01)}))
    res = oracle.probe(PARIS)
    assert res.argmax_choice == "Yes"
    assert res.entropy_bits == pytest.approx(entropy_oracle((0.97, 0.02, 0.01)), abs=1e-12)
    assert res.entropy_bits == pytest.approx(0.22, abs=0.005)


def test_unlisted_triple_uses_default():
    oracle = SyntheticOracle(BeliefModelSpec({}))
    assert oracle.probe(Triple("a", "r", "b")).argmax_choice == "No"


def test_all_other_mass():
    res = result(0.0, 0.0, 0.0, 1.0)
    assert res.argmax_choice == "Other"
    assert not res.yes_in_top5
    assert res.entropy_bits == pytest.approx(LOG2_3)


def test_admit_examples():
    assert admit(result(0.5, 0.5, 0.0), 1.0)
    assert not admit(result(0.6, 0.3, 0.1), 1.0)
    assert result(0.6, 0.3, 0.1).entropy_bits == pytest.approx(1.295, abs=1e-3)
    assert not admit(result(0.2, 0.7, 0.1), 1.0)
    with pytest.raises(ValueError):
        admit(result(1.0, 0.0, 0.0), 0.0)


def test_argmax_tie_order():
    assert AnswerDistribution(0.4, 0.4, 0.2).argmax() == "Yes"
    assert AnswerDistribution(0.2, 0.4, 0.4).argmax() == "No"
    assert AnswerDistribution(0.0, 0.3, 0.35, 0.35).argmax() == "Unknown"


def test_distribution_validation():
    with pytest.raises(ValueError):
        AnswerDistribution(0.5, 0.6, 0.0)
    with pytest.raises(ValueError):
        AnswerDistribution(-0.1, 0.6, 0.5)
    with pytest.raises(ValueError):
        AnswerDistribution.normalized(0, 0, 0, 0)


@given(dists)
def test_entropy_uses_renormalised_named_mass(d):
    res = ProbeResult.from_distribution(d)
    named = [d.p_yes, d.p_no, d.p_unknown]
    mass = sum(named)
    want = entropy_oracle([p / mass for p in named if p / mass >= 1e-12]) if mass > 0 else LOG2_3
    assert res.entropy_bits == pytest.approx(want, abs=1e-9)
    assert 0.0 <= res.entropy_bits <= LOG2_3


@given(dists, st.floats(0.05, LOG2_3))
def test_admit_matches_definition(d, u):
    res = ProbeResult.from_distribution(d)
    expected = d.argmax() == "Yes" and d.p_yes > 0 and res.entropy_bits <= u
    assert admit(res, u) == expected


@given(dists, st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_admit_monotone_in_threshold(d, a, b):
    lo, hi = sorted((a, b))
    res = ProbeResult.from_distribution(d)
    if admit(res, lo):
        assert admit(res, hi)


@given(dists)
def test_probe_result_round_trip(d):
    res = ProbeResult.from_distribution(d)
    assert ProbeResult.from_dict(res.to_dict()) == res


# -- synthetic oracle


def test_noise_is_seeded_per_triple_and_keeps_other_mass():
    spec = BeliefModelSpec({PARIS: AnswerDistribution(0.7, 0.1, 0.1, 0.1)}, noise_seed=3, noise_scale=0.5)
    a = SyntheticOracle(spec).distribution(PARIS)
    b = SyntheticOracle(spec).distribution(PARIS)
    assert a == b
    assert a.p_other == pytest.approx(0.1)
    assert a != spec.beliefs[PARIS]


def test_probe_many_is_schedule_independent():
    spec = BeliefModelSpec(
        {Triple(f"e{i}", "r", "x"): AnswerDistribution(0.8, 0.1, 0.1) for i in range(40)}, noise_seed=1, noise_scale=0.3
    )
    oracle = SyntheticOracle(spec)
    queries = [Triple(f"e{i}", "r", "x") for i in range(40)]
    assert probe_many(oracle, queries, 1) == probe_many(oracle, queries, 8)


def test_belief_spec_round_trip(tmp_path):
    spec = BeliefModelSpec({PARIS: AnswerDistribution(0.97, 0.02, 0.01)}, noise_seed=4, noise_scale=0.1)
    spec.save(tmp_path / "b.json")
    assert BeliefModelSpec.load(tmp_path / "b.json") == spec
    assert with_distribution(spec, {PARIS: AnswerDistribution(0, 1, 0)}).lookup(PARIS).p_no == 1
    assert spec.lookup(PARIS).p_yes == 0.97


# -- templates


def test_render_templates():
    qwen = render_probe_prompt(QWEN_TEMPLATE, PARIS)
    assert "In the triple (Paris, ?, France)" in qwen
    assert qwen.startswith(PROBE_SYSTEM_MESSAGE)
    assert "is the relationship 'CapitalOf'?" in render_probe_prompt(LLAMA_TEMPLATE, PARIS)


def test_missing_placeholder_is_template_error():
    with pytest.raises(TemplateError):
        render_probe_prompt(PromptTemplate("bad", "Is ({entity1}, {entity2}) right?"), PARIS)


@given(st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=20).filter(lambda s: s.strip() == s))
def test_template_parse_inverts_render(label):
    t = Triple(label, "isLocatedIn", "Somewhere")
    for template in (QWEN_TEMPLATE, LLAMA_TEMPLATE):
        assert template.parse(render_probe_prompt(template, t)) == t


# -- template validation


class ConstantOracle:
    def __init__(self, dist: AnswerDistribution):
        self.dist = dist

    def probe(self, query: Triple) -> ProbeResult:
        return ProbeResult.from_distribution(self.dist)


def balanced_items(n: int = 10) -> list[LabeledTriple]:
    return [LabeledTriple(Triple(f"s{i}", "r" if i % 3 else "q", f"o{i}"), i % 2 == 0) for i in range(2 * n)]


def test_always_yes_scores_half():
    report = validate_template(ConstantOracle(AnswerDistribution(0.9, 0.05, 0.05)), QWEN_TEMPLATE, balanced_items())
    assert report.accuracy == 0.5
    assert report.n_items == 20


def test_perfect_oracle_scores_one():
    items = balanced_items()
    spec = BeliefModelSpec({it.triple: AnswerDistribution(0.9, 0.05, 0.05) for it in items if it.positive})
    report = validate_template(SyntheticOracle(spec), QWEN_TEMPLATE, items)
    assert report.accuracy == 1.0
    assert set(report.per_relation) == {"q", "r"}


def test_full_scale_validation_set_size():
    items = [LabeledTriple(Triple(f"s{i}", f"rel{r}", f"o{i}"), i < 10) for r in range(37) for i in range(20)]
    report = validate_template(ConstantOracle(AnswerDistribution(0.9, 0.05, 0.05)), QWEN_TEMPLATE, items)
    assert report.n_items == 740
    assert len(report.per_relation) == 37


def test_validation_requires_items():
    with pytest.raises(ValueError):
        validate_template(ConstantOracle(AnswerDistribution(1, 0, 0)), QWEN_TEMPLATE, [])


def test_select_template_prefers_higher_accuracy():
    class LlamaOnly:
        template = QWEN_TEMPLATE

        def with_template(self, template):
            clone = LlamaOnly()
            clone.template = template
            return clone

        def probe(self, query):
            good = self.template is LLAMA_TEMPLATE
            positive = query.subject in {"s0", "s2", "s4", "s6", "s8", "s10", "s12", "s14", "s16", "s18"}
            yes = positive if good else True
            return ProbeResult.from_distribution(AnswerDistribution(0.9, 0.05, 0.05) if yes else AnswerDistribution(0.05, 0.9, 0.05))

    best, results = select_template(LlamaOnly(), [QWEN_TEMPLATE, LLAMA_TEMPLATE], balanced_items())
    assert best is LLAMA_TEMPLATE
    assert [r.template for r in results] == ["qwen", "llama"]


def test_load_labeled_triples(tmp_path):
    path = tmp_path / "labels.tsv"
    path.write_text("a\tr\tb\tpositive\nc\tr\td\tnegative\n", encoding="utf-8")
    items = load_labeled_triples(path)
    assert [it.positive for it in items] == [True, False]
    path.write_text("a\tr\tb\tmaybe\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_labeled_triples(path)


# -- remote oracle


def test_distribution_from_logprobs_keeps_other_mass():
    d = distribution_from_logprobs({"Yes": math.log(0.6), "No": math.log(0.2), "Unknown": math.log(0.1)})
    assert d.as_tuple() == pytest.approx((0.6, 0.2, 0.1, 0.1))
    hot = distribution_from_logprobs({"Yes": math.log(0.6), "No": math.log(0.2), "Unknown": math.log(0.1)}, 2.0)
    assert hot.p_other == pytest.approx(0.1)
    assert hot.p_yes / hot.p_no == pytest.approx(math.sqrt(3.0))


def test_distribution_from_logprobs_errors():
    with pytest.raises(ProtocolError):
        distribution_from_logprobs({"Yes": 0.0, "No": -1.0})
    with pytest.raises(ProtocolError):
        distribution_from_logprobs({"Yes": float("nan"), "No": -1.0, "Unknown": -1.0})


def mock_endpoint(handler, **kwargs) -> JsonEndpoint:
    return JsonEndpoint("http://probe.test/probe", client=httpx.Client(transport=httpx.MockTransport(handler)), backoff=0, **kwargs)


def test_remote_oracle_parses_wire_payload():
    seen = []

    def handler(request: httpx.Request) -> httpx.Response:
        seen.append(request.read())
        return httpx.Response(
            200,
            json={"logprobs": {"Yes": math.log(0.9), "No": math.log(0.05), "Unknown": math.log(0.05)}, "top_tokens": ["Yes", "No"]},
        )

    res = RemoteOracle(mock_endpoint(handler)).probe(PARIS)
    assert res.argmax_choice == "Yes" and res.yes_in_top5
    assert res.distribution.p_yes == pytest.approx(0.9)
    assert b"In the triple (Paris, ?, France)" in seen[0]


def test_remote_oracle_requires_yes_as_top_token():
    def handler(request):
        return httpx.Response(
            200, json={"logprobs": {"Yes": math.log(0.5), "No": math.log(0.2), "Unknown": math.log(0.1)}, "top_tokens": ["Sure", "Yes"]}
        )

    res = RemoteOracle(mock_endpoint(handler)).probe(PARIS)
    assert not res.yes_in_top5
    assert not admit(res, 1.58)


def test_remote_oracle_malformed_payload_is_protocol_error():
    oracle = RemoteOracle(mock_endpoint(lambda r: httpx.Response(200, json={"logprobs": "nope"})))
    with pytest.raises(ProtocolError):
        oracle.probe(PARIS)
    oracle = RemoteOracle(mock_endpoint(lambda r: httpx.Response(200, text="not json")))
    with pytest.raises(ProtocolError):
        oracle.probe(PARIS)
    oracle = RemoteOracle(mock_endpoint(lambda r: httpx.Response(404, text="missing")))
    with pytest.raises(ProtocolError):
        oracle.probe(PARIS)


def test_transport_retries_then_fails():
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ConnectError("down")

    with pytest.raises(TransportError):
        RemoteOracle(mock_endpoint(handler, retries=2)).probe(PARIS)
    assert len(calls) == 3


def test_transport_recovers_after_server_error():
    responses = iter([httpx.Response(503), httpx.Response(200, json={"ok": 1})])
    endpoint = mock_endpoint(lambda r: next(responses), retries=1)
    assert endpoint.post({}) == {"ok": 1}


def test_transport_bounds_in_flight_requests():
    active, peak, lock = [0], [0], threading.Lock()
    gate = threading.Event()

    def handler(request):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        gate.wait(0.05)
        with lock:
            active[0] -= 1
        return httpx.Response(200, json={})

    endpoint = mock_endpoint(handler, max_in_flight=2)
    threads = [threading.Thread(target=endpoint.post, args=({},)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] <= 2


@settings(max_examples=30, deadline=None)
@given(dists)
def test_remote_round_trip_through_service(d):
    from fastapi.testclient import TestClient

    from kgunlearn.service import create_app

    spec = BeliefModelSpec({PARIS: d})
    client = TestClient(create_app(spec))
    remote = RemoteOracle(JsonEndpoint("http://testserver/probe", client=client))
    got = remote.probe(PARIS)
    want = SyntheticOracle(spec).probe(PARIS)
    assert got.distribution.as_tuple() == pytest.approx(want.distribution.as_tuple(), abs=1e-9)
    # the wire carries logprobs, so exact ties and threshold hits may move by an ulp
    ranked = sorted(d.as_tuple(), reverse=True)
    assume(ranked[0] - ranked[1] > 1e-9 and abs(want.entropy_bits - 1.0) > 1e-9)
    assert got.argmax_choice == want.argmax_choice
    assert admit(got, 1.0) == admit(want, 1.0)
