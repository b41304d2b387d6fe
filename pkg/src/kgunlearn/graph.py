"""Reference knowledge graph: TSV ingestion, label interning and k-hop queries."""

from __future__ import annotations

import io
import os
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, NamedTuple, Union


class Triple(NamedTuple):
    subject: str
    relation: str
    object: str

    def as_dict(self) -> dict[str, str]:
        return {"s": self.subject, "r": self.relation, "o": self.object}

    @classmethod
    def from_dict(cls, data: dict) -> "Triple":
        return cls(str(data["s"]), str(data["r"]), str(data["o"]))

    def __str__(self) -> str:
        return f"({self.subject}, {self.relation}, {self.object})"


class TripleParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownEntityError(KeyError):
    pass


@dataclass(frozen=True)
class TripleFormat:
    """Layout of a triple dump. YAGO3-10 ships as plain ``s<TAB>r<TAB>o``."""

    delimiter: str = "\t"
    comment_prefix: str = "#"
    encoding: str = "utf-8"


TSV = TripleFormat()

# Relation types of YAGO3-10, as catalogued for the benchmark.
YAGO3_10_RELATIONS: tuple[str, ...] = (
    "actedIn", "wasBornIn", "hasGender", "hasAcademicAdvisor", "hasChild",
    "hasCitizenship", "hasDeathPlace", "hasEmployer", "hasGivenName",
    "hasInstrument", "hasLanguage", "hasLegalResidence", "hasMember", "hasName",
    "hasNationality", "hasOccupation", "hasOfficialLanguage", "hasPlaceOfBirth",
    "hasPlaceOfDeath", "hasSpouse", "hasSurname", "hasTitle",
    "holdsPoliticalPosition", "isAffiliatedTo", "isConnectedTo", "isKnownFor",
    "isLocatedIn", "isMarriedTo", "isPoliticianOf", "livesIn", "playsFor",
    "produced", "studiedAt", "wasBornOnDate", "wasCreatedOnDate",
    "wasDestroyedOnDate", "worksAt",
)


@dataclass(frozen=True)
class ReferenceGraph:
    """Immutable interned triple set.

    Entity and relation handles are dense indexes into label tables sorted
    lexicographically, so two graphs holding the same triples intern
    identically regardless of input order.
    """

    entities: tuple[str, ...]
    relations: tuple[str, ...]
    triples: tuple[tuple[int, int, int], ...]
    out_adjacency: tuple[tuple[int, ...], ...] = field(repr=False)
    in_adjacency: tuple[tuple[int, ...], ...] = field(repr=False)
    _entity_index: dict[str, int] = field(repr=False, compare=False)
    _relation_index: dict[str, int] = field(repr=False, compare=False)

    @classmethod
    def from_triples(cls, triples: Iterable[Triple | tuple[str, str, str]]) -> "ReferenceGraph":
        distinct = {Triple(*t) for t in triples}
        entities = tuple(sorted({t.subject for t in distinct} | {t.object for t in distinct}))
        relations = tuple(sorted({t.relation for t in distinct}))
        eidx = {label: i for i, label in enumerate(entities)}
        ridx = {label: i for i, label in enumerate(relations)}
        encoded = tuple(sorted((eidx[t.subject], ridx[t.relation], eidx[t.object]) for t in distinct))
        out_adj: list[set[int]] = [set() for _ in entities]
        in_adj: list[set[int]] = [set() for _ in entities]
        for s, _, o in encoded:
            out_adj[s].add(o)
            in_adj[o].add(s)
        return cls(
            entities=entities,
            relations=relations,
            triples=encoded,
            out_adjacency=tuple(tuple(sorted(a)) for a in out_adj),
            in_adjacency=tuple(tuple(sorted(a)) for a in in_adj),
            _entity_index=eidx,
            _relation_index=ridx,
        )

    def __len__(self) -> int:
        return len(self.triples)

    def __contains__(self, triple: object) -> bool:
        if not isinstance(triple, tuple) or len(triple) != 3:
            return False
        s, r, o = triple
        try:
            key = (self._entity_index[s], self._relation_index[r], self._entity_index[o])
        except KeyError:
            return False
        return key in self._triple_set

    @property
    def _triple_set(self) -> frozenset[tuple[int, int, int]]:
        cached = self.__dict__.get("_cached_triple_set")
        if cached is None:
            cached = frozenset(self.triples)
            object.__setattr__(self, "_cached_triple_set", cached)
        return cached

    def entity_index(self, label: str) -> int:
        try:
            return self._entity_index[label]
        except KeyError:
            raise UnknownEntityError(label) from None

    def relation_index(self, label: str) -> int:
        return self._relation_index[label]

    def has_entity(self, label: str) -> bool:
        return label in self._entity_index

    def iter_triples(self) -> Iterator[Triple]:
        ents, rels = self.entities, self.relations
        for s, r, o in self.triples:
            yield Triple(ents[s], rels[r], ents[o])

    def neighbors(self, label: str, *, directed: bool = False) -> set[str]:
        i = self.entity_index(label)
        found = set(self.out_adjacency[i])
        if not directed:
            found.update(self.in_adjacency[i])
        return {self.entities[j] for j in found}

    def distances(self, sources: Iterable[str], max_hops: int, *, directed: bool = False) -> dict[str, int]:
        """Breadth-first hop distances from any of ``sources``, up to ``max_hops``.

        Sources missing from the graph are ignored.
        """
        dist: dict[int, int] = {}
        queue: deque[int] = deque()
        for label in sources:
            i = self._entity_index.get(label)
            if i is not None and i not in dist:
                dist[i] = 0
                queue.append(i)
        while queue:
            u = queue.popleft()
            d = dist[u]
            if d == max_hops:
                continue
            nxt = self.out_adjacency[u] if directed else self.out_adjacency[u] + self.in_adjacency[u]
            for v in nxt:
                if v not in dist:
                    dist[v] = d + 1
                    queue.append(v)
        return {self.entities[i]: d for i, d in dist.items()}

    def to_tsv(self) -> str:
        return "".join(f"{t.subject}\t{t.relation}\t{t.object}\n" for t in self.iter_triples())

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")


Source = Union[bytes, str, os.PathLike, BinaryIO]


def _open_source(source: Source) -> BinaryIO:
    if isinstance(source, bytes):
        return io.BytesIO(source)
    if isinstance(source, (str, os.PathLike)):
        return open(source, "rb")
    return source


def parse_triples(source: Source, fmt: TripleFormat = TSV) -> ReferenceGraph:
    """Parse a triple dump into a :class:`ReferenceGraph`.

    ``source`` may be raw bytes, a path, or a binary stream. Blank lines and
    lines starting with ``fmt.comment_prefix`` are skipped; identical triples
    are stored once.
    """
    stream = _open_source(source)
    owned = stream is not source
    triples: list[Triple] = []
    try:
        for lineno, raw in enumerate(stream, start=1):
            try:
                line = raw.decode(fmt.encoding)
            except UnicodeDecodeError as exc:
                raise TripleParseError(f"invalid {fmt.encoding}: {exc}", lineno) from None
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith(fmt.comment_prefix):
                continue
            fields = line.split(fmt.delimiter)
            if len(fields) != 3:
                raise TripleParseError(f"expected 3 fields, found {len(fields)}", lineno)
            if any(not f for f in fields):
                raise TripleParseError("empty field", lineno)
            triples.append(Triple(*fields))
    finally:
        if owned:
            stream.close()
    if not triples:
        raise TripleParseError("no triples in input")
    return ReferenceGraph.from_triples(triples)


def k_hop_neighbors(graph: ReferenceGraph, center: str, k: int, *, directed: bool = False) -> set[str]:
    """Entities at hop distance 1..k from ``center`` (the center itself excluded).

    Traversal ignores edge direction unless ``directed`` is set, in which case
    only outgoing edges are followed.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    graph.entity_index(center)
    dist = graph.distances([center], k, directed=directed)
    dist.pop(center, None)
    return set(dist)


def relation_catalogue(graph: ReferenceGraph) -> list[str]:
    return list(graph.relations)
