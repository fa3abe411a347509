"""Multilingual knowledge-graph store, lexicon entity linking, neighborhoods.

File formats:
  entities: UTF-8 JSON-lines, one object per line:
            {"id": str, "labels": {lang: str}, "descriptions": {lang: str}}
  triples:  UTF-8 TSV  "head\\trelation\\ttail"
  lexicon:  UTF-8 TSV  "surface\\tlang\\tentity_id"

Adjacency is symmetric: a triple makes each endpoint a neighbor of the
other, relation direction ignored. Self-loops never contribute neighbors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .encoders import TokenSequence, tokenize

NULL_ENTITY = "__null__"


class KGLoadError(ValueError):
    """Malformed or inconsistent KG/lexicon input; message names the line."""


class UnknownEntityError(KeyError):
    pass


@dataclass
class Entity:
    entity_id: str
    labels: dict[str, str] = field(default_factory=dict)
    descriptions: dict[str, str] = field(default_factory=dict)

    def golden(self, lang: str) -> bool:
        """Has both a non-empty label and description in ``lang``."""
        return bool(self.labels.get(lang)) and bool(self.descriptions.get(lang))


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str


@dataclass
class Neighborhood:
    center: str
    language: str
    neighbor_ids: list[str]
    scores: list[float]


class KGStore:
    """Immutable after load; safe for concurrent readers."""

    def __init__(self, entities: dict[str, Entity], triples: list[Triple]):
        self.entities = entities
        self.triples = triples
        adj: dict[str, set[str]] = {eid: set() for eid in entities}
        for t in triples:
            if t.head != t.tail:
                adj[t.head].add(t.tail)
                adj[t.tail].add(t.head)
        self._adjacency = {eid: sorted(ns) for eid, ns in adj.items()}

    @classmethod
    def load(cls, entities_path: str | Path, triples_path: str | Path) -> "KGStore":
        entities: dict[str, Entity] = {}
        for n, line in enumerate(_lines(entities_path), start=1):
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise KGLoadError(f"malformed entity JSON at line {n}: {exc}") from exc
            eid = obj.get("id")
            if not isinstance(eid, str) or not eid:
                raise KGLoadError(f"missing entity id at line {n}")
            if eid in entities:
                raise KGLoadError(f"duplicate entity id '{eid}' at line {n}")
            entities[eid] = Entity(eid, dict(obj.get("labels", {})),
                                   dict(obj.get("descriptions", {})))
        triples: list[Triple] = []
        for n, line in enumerate(_lines(triples_path), start=1):
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise KGLoadError(f"malformed triple at line {n}: {line!r}")
            head, rel, tail = parts
            for endpoint in (head, tail):
                if endpoint not in entities:
                    raise KGLoadError(f"unknown entity '{endpoint}' at line {n}")
            triples.append(Triple(head, rel, tail))
        return cls(entities, triples)

    def save(self, entities_path: str | Path, triples_path: str | Path) -> None:
        """Canonical export: loading then saving reproduces the bytes."""
        with open(entities_path, "w", encoding="utf-8") as f:
            for eid in sorted(self.entities):
                e = self.entities[eid]
                f.write(json.dumps({"id": e.entity_id,
                                    "labels": dict(sorted(e.labels.items())),
                                    "descriptions": dict(sorted(e.descriptions.items()))},
                                   ensure_ascii=False) + "\n")
        with open(triples_path, "w", encoding="utf-8") as f:
            for t in self.triples:
                f.write(f"{t.head}\t{t.relation}\t{t.tail}\n")

    def neighbors(self, entity_id: str) -> list[str]:
        if entity_id not in self._adjacency:
            raise UnknownEntityError(entity_id)
        return self._adjacency[entity_id]

    def golden_neighbors(self, entity_id: str, lang: str) -> list[str]:
        return [n for n in self.neighbors(entity_id) if self.entities[n].golden(lang)]

    def entity(self, entity_id: str) -> Entity:
        try:
            return self.entities[entity_id]
        except KeyError as exc:
            raise UnknownEntityError(entity_id) from exc


def _lines(path: str | Path) -> Iterable[str]:
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.rstrip("\n")
            if line:
                yield line


class Lexicon:
    """Surface-form gazetteer with greedy longest-match linking.

    A surface colliding within one language resolves to the
    lexicographically smallest entity id, making link output independent of
    insertion order.
    """

    def __init__(self) -> None:
        self._surfaces: dict[str, dict[tuple[str, ...], str]] = {}
        self._max_len: dict[str, int] = {}

    def add(self, surface: str, lang: str, entity_id: str) -> None:
        if not surface:
            raise KGLoadError("empty lexicon surface form")
        key = tuple(tokenize(surface, lang).tokens)
        table = self._surfaces.setdefault(lang, {})
        existing = table.get(key)
        if existing is None or entity_id < existing:
            table[key] = entity_id
        self._max_len[lang] = max(self._max_len.get(lang, 0), len(key))

    @classmethod
    def load(cls, path: str | Path) -> "Lexicon":
        lex = cls()
        for n, line in enumerate(_lines(path), start=1):
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise KGLoadError(f"malformed lexicon entry at line {n}: {line!r}")
            lex.add(*parts)
        return lex

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for lang in sorted(self._surfaces):
                for key in sorted(self._surfaces[lang]):
                    f.write(f"{' '.join(key)}\t{lang}\t{self._surfaces[lang][key]}\n")

    def link(self, query: TokenSequence) -> list[tuple[int, int, str]]:
        """Greedy longest-match, left to right, non-overlapping spans.

        Returns (start, end, entity_id) with token indices, end exclusive.
        """
        table = self._surfaces.get(query.language)
        if not table:
            return []
        toks = query.tokens
        max_len = self._max_len[query.language]
        spans = []
        i = 0
        while i < len(toks):
            matched = False
            for length in range(min(max_len, len(toks) - i), 0, -1):
                eid = table.get(tuple(toks[i:i + length]))
                if eid is not None:
                    spans.append((i, i + length, eid))
                    i += length
                    matched = True
                    break
            if not matched:
                i += 1
        return spans


def link_entities(query: TokenSequence, lexicon: Lexicon) -> list[tuple[int, int, str]]:
    return lexicon.link(query)


def select_central_entity(linked: list[tuple[int, int, str]], kg: KGStore,
                          language: str) -> str:
    """One entity per query: the link with the largest golden neighborhood
    in the query's language, earliest mention on ties; none -> NULL_ENTITY."""
    if not linked:
        return NULL_ENTITY
    best_id = None
    best_count = -1
    for _start, _end, eid in linked:  # in mention order, strict > keeps earliest
        count = len(kg.golden_neighbors(eid, language))
        if count > best_count:
            best_count = count
            best_id = eid
    return best_id


def top_k_neighbors(center: str, language: str, k: int, kg: KGStore,
                    embeddings) -> Neighborhood:
    """Top-k golden graph neighbors by embedding cosine, copy-padded to k.

    Fewer than k real neighbors: cycle through the existing ones in rank
    order until the list has length k (recorded scores floor at the last
    real score to stay non-increasing). No neighbors at all: the center
    fills every slot. The NULL sentinel yields an all-NULL neighborhood.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if center == NULL_ENTITY:
        return Neighborhood(center, language, [NULL_ENTITY] * k, [0.0] * k)
    candidates = kg.golden_neighbors(center, language)
    scored = sorted(((embeddings.cosine(center, c), c) for c in candidates),
                    key=lambda sc: (-sc[0], sc[1]))
    top = scored[:k]
    if not top:
        return Neighborhood(center, language, [center] * k, [1.0] * k)
    ids = [eid for _score, eid in top]
    scores = [score for score, _eid in top]
    i = 0
    while len(ids) < k:
        ids.append(ids[i % len(top)])
        scores.append(scores[len(top) - 1])
        i += 1
    return Neighborhood(center, language, ids, scores)
