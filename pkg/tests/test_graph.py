from __future__ import annotations

import io
import os
from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgunlearn.graph import (
    YAGO3_10_RELATIONS,
    ReferenceGraph,
    Triple,
    TripleParseError,
    UnknownEntityError,
    k_hop_neighbors,
    parse_triples,
    relation_catalogue,
)

labels = st.sampled_from([f"e{i}" for i in range(8)])
rels = st.sampled_from(["p", "q", "r"])
triple_lists = st.lists(st.tuples(labels, rels, labels), min_size=1, max_size=30)


def bfs_oracle(edges: list[tuple[str, str, str]], center: str, k: int) -> set[str]:
    adj: dict[str, set[str]] = {}
    for s, _, o in edges:
        adj.setdefault(s, set()).add(o)
        adj.setdefault(o, set()).add(s)
    seen = {center: 0}
    queue = deque([center])
    while queue:
        u = queue.popleft()
        if seen[u] == k:
            continue
        for v in adj.get(u, ()):
            if v not in seen:
                seen[v] = seen[u] + 1
                queue.append(v)
    return set(seen) - {center}


def test_three_line_file_counts():
    g = parse_triples(b"a\tr\tb\nb\tr\tc\na\tq\tc\n")
    assert (len(g.entities), len(g.relations), len(g)) == (3, 2, 3)


def test_duplicate_lines_stored_once():
    g = parse_triples(b"a\tr\tb\na\tr\tb\n")
    assert len(g) == 1


def test_crlf_comments_and_blank_lines():
    g = parse_triples(b"# header\r\na\tr\tb\r\n\r\nb\tr\tc\r\n")
    assert set(g.iter_triples()) == {Triple("a", "r", "b"), Triple("b", "r", "c")}


def test_malformed_line_reports_line_number():
    with pytest.raises(TripleParseError) as err:
        parse_triples(b"a\tr\tb\nbroken line\n")
    assert err.value.line == 2
    assert "line 2" in str(err.value)


def test_empty_input_rejected():
    with pytest.raises(TripleParseError):
        parse_triples(b"")


def test_invalid_utf8_rejected():
    with pytest.raises(TripleParseError):
        parse_triples(b"a\tr\t\xff\xfe\n")


def test_parse_from_path_and_stream(tmp_path):
    path = tmp_path / "g.tsv"
    path.write_bytes(b"a\tr\tb\n")
    assert len(parse_triples(path)) == 1
    assert len(parse_triples(str(path))) == 1
    assert len(parse_triples(io.BytesIO(b"a\tr\tb\n"))) == 1


def test_chain_hops():
    g = ReferenceGraph.from_triples([("a", "r", "b"), ("b", "r", "c")])
    assert k_hop_neighbors(g, "a", 1) == {"b"}
    assert k_hop_neighbors(g, "a", 2) == {"b", "c"}


def test_star_two_hops():
    g = ReferenceGraph.from_triples([("a", "r", leaf) for leaf in "bcdef"])
    assert k_hop_neighbors(g, "b", 2) == {"a", "c", "d", "e", "f"}


def test_directed_hops_follow_outgoing_edges_only():
    g = ReferenceGraph.from_triples([("a", "r", "b"), ("c", "r", "a")])
    assert k_hop_neighbors(g, "a", 1, directed=True) == {"b"}
    assert k_hop_neighbors(g, "a", 1) == {"b", "c"}


def test_unknown_center_and_bad_k():
    g = ReferenceGraph.from_triples([("a", "r", "b")])
    with pytest.raises(UnknownEntityError):
        k_hop_neighbors(g, "zzz", 1)
    with pytest.raises(ValueError):
        k_hop_neighbors(g, "a", 0)


def test_relation_catalogue_sorted():
    g = ReferenceGraph.from_triples([("a", "r", "b"), ("a", "q", "b")])
    assert relation_catalogue(g) == ["q", "r"]


def test_yago_relation_list_has_37_entries():
    assert len(YAGO3_10_RELATIONS) == 37
    assert len(set(YAGO3_10_RELATIONS)) == 37
    assert sorted(YAGO3_10_RELATIONS)[0] == "actedIn"
    assert sorted(YAGO3_10_RELATIONS)[-1] == "worksAt"


def test_membership_and_tsv_round_trip(tmp_path):
    g = ReferenceGraph.from_triples([("a", "r", "b"), ("b", "q", "c")])
    assert Triple("a", "r", "b") in g
    assert Triple("a", "q", "b") not in g
    assert ("nope", "r", "b") not in g
    g.write(tmp_path / "out.tsv")
    assert parse_triples(tmp_path / "out.tsv") == g


@given(triple_lists)
def test_interning_independent_of_input_order(edges):
    assert ReferenceGraph.from_triples(edges) == ReferenceGraph.from_triples(list(reversed(edges)))


@given(triple_lists)
def test_graph_holds_exactly_distinct_input(edges):
    g = ReferenceGraph.from_triples(edges)
    assert set(g.iter_triples()) == {Triple(*t) for t in edges}
    assert set(g.entities) == {t[0] for t in edges} | {t[2] for t in edges}
    assert list(g.relations) == sorted({t[1] for t in edges})


@given(triple_lists, labels, st.integers(1, 4))
def test_k_hop_matches_bfs_oracle(edges, center, k):
    g = ReferenceGraph.from_triples(edges)
    if not g.has_entity(center):
        return
    assert k_hop_neighbors(g, center, k) == bfs_oracle(edges, center, k)


@settings(max_examples=50)
@given(triple_lists, labels, st.integers(1, 3))
def test_k_hop_is_monotone_in_k(edges, center, k):
    g = ReferenceGraph.from_triples(edges)
    if g.has_entity(center):
        assert k_hop_neighbors(g, center, k) <= k_hop_neighbors(g, center, k + 1)


YAGO_DUMP = os.environ.get("KGUNLEARN_YAGO3_10")


@pytest.mark.skipif(not YAGO_DUMP, reason="set KGUNLEARN_YAGO3_10 to the train.txt dump to run")
def test_full_yago_dump_counts():
    g = parse_triples(YAGO_DUMP)
    assert len(g.entities) == 123_182
    assert len(g.relations) == 37
    assert relation_catalogue(g) == sorted(YAGO3_10_RELATIONS)
