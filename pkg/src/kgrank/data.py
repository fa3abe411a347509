"""Dataset loading and the seeded synthetic bilingual corpus generator.

Directory layout (shared document collection, per-split queries/qrels):

    corpus/
      docs.tsv                id \\t lang \\t text
      entities.jsonl          KG entities (see kg module)
      triples.tsv             KG triples
      lexicon.tsv             surface \\t lang \\t entity_id
      train/queries.tsv       id \\t lang \\t text
      train/qrels.tsv         query_id \\t doc_id \\t label
      valid/...  test/...

The generator builds a latent-entity world over two pseudo-languages with
disjoint token alphabets and a hidden one-to-one token translation, so
query-document surface overlap is zero by construction. Every query names
exactly one entity (via the emitted lexicon); documents are bags of
target-language tokens. The relevance label is a deterministic function of
(a) overlap with the translated query and (b) overlap with the central
entity's description and its graph neighborhood descriptions, mixed by
``kg_signal_weight``. Low-relevance documents carry signature tokens of
*other* entities, so global token statistics alone cannot separate labels;
ranking requires relating each document to its query's entity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kg import Entity, KGStore, Lexicon, Triple

SPLITS = ("train", "valid", "test")


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    queries: dict[str, tuple[str, str]]            # id -> (text, lang)
    documents: dict[str, tuple[str, str]]          # id -> (text, lang)
    judgments: dict[str, dict[str, int]]           # qid -> {doc_id: label}
    splits: dict[str, list[str]] = field(default_factory=dict)

    def language_pair(self) -> tuple[str, str]:
        q_langs = {lang for _t, lang in self.queries.values()}
        d_langs = {lang for _t, lang in self.documents.values()}
        if len(q_langs) != 1 or len(d_langs) != 1:
            raise DatasetError("expected one query language and one document language")
        return q_langs.pop(), d_langs.pop()


def _read_tsv3(path: Path) -> list[tuple[str, str, str, int]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for n, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(f"{path.name} line {n}: expected 3 columns")
            rows.append((parts[0], parts[1], parts[2], n))
    return rows


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    documents: dict[str, tuple[str, str]] = {}
    for doc_id, lang, text, n in _read_tsv3(directory / "docs.tsv"):
        if doc_id in documents:
            raise DatasetError(f"docs.tsv line {n}: duplicate document id '{doc_id}'")
        documents[doc_id] = (text, lang)
    queries: dict[str, tuple[str, str]] = {}
    judgments: dict[str, dict[str, int]] = {}
    splits: dict[str, list[str]] = {}
    for split in SPLITS:
        split_dir = directory / split
        qids = []
        for qid, lang, text, n in _read_tsv3(split_dir / "queries.tsv"):
            if qid in queries:
                raise DatasetError(
                    f"{split}/queries.tsv line {n}: duplicate query id '{qid}'")
            queries[qid] = (text, lang)
            qids.append(qid)
        splits[split] = qids
        counts = {}
        for qid, doc_id, label_str, n in _read_tsv3(split_dir / "qrels.tsv"):
            if qid not in queries:
                raise DatasetError(
                    f"{split}/qrels.tsv line {n}: unknown query '{qid}'")
            if doc_id not in documents:
                raise DatasetError(
                    f"{split}/qrels.tsv line {n}: unknown document '{doc_id}'")
            try:
                label = int(label_str)
            except ValueError as exc:
                raise DatasetError(
                    f"{split}/qrels.tsv line {n}: non-integer label") from exc
            if not 0 <= label <= 6:
                raise DatasetError(
                    f"{split}/qrels.tsv line {n}: label out of range 0..6")
            per_q = judgments.setdefault(qid, {})
            if doc_id in per_q:
                raise DatasetError(
                    f"{split}/qrels.tsv line {n}: duplicate judgment "
                    f"({qid}, {doc_id})")
            per_q[doc_id] = label
            counts[qid] = counts.get(qid, 0) + 1
        if counts:
            sizes = set(counts.values())
            if len(sizes) != 1:
                raise DatasetError(
                    f"{split}: candidate count varies across queries ({sizes})")
        for qid in qids:
            if qid not in judgments:
                raise DatasetError(f"{split}: query '{qid}' has no judgments")
    return Dataset(queries, documents, judgments, splits)


def save_dataset(directory: str | Path, dataset: Dataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "docs.tsv", "w", encoding="utf-8") as f:
        for doc_id in dataset.documents:
            text, lang = dataset.documents[doc_id]
            f.write(f"{doc_id}\t{lang}\t{text}\n")
    for split in SPLITS:
        split_dir = directory / split
        split_dir.mkdir(exist_ok=True)
        with open(split_dir / "queries.tsv", "w", encoding="utf-8") as f:
            for qid in dataset.splits.get(split, []):
                text, lang = dataset.queries[qid]
                f.write(f"{qid}\t{lang}\t{text}\n")
        with open(split_dir / "qrels.tsv", "w", encoding="utf-8") as f:
            for qid in dataset.splits.get(split, []):
                for doc_id, label in dataset.judgments[qid].items():
                    f.write(f"{qid}\t{doc_id}\t{label}\n")


# -- synthetic world -----------------------------------------------------------


@dataclass
class SynthConfig:
    seed: int = 0
    train_queries: int = 200
    valid_queries: int = 50
    test_queries: int = 50
    candidates_per_query: int = 20
    n_entities: int = 120
    neighbors_per_entity: int = 3
    sig_tokens_per_entity: int = 6
    filler_vocab: int = 200
    query_extra_tokens: int = 2
    doc_length: int = 16
    relations: int = 4
    kg_signal_weight: float = 0.7
    entity_desc_weight: float = 0.35   # central-description share of the KG signal
    central_hit_cap: int = 3
    neighbor_hit_cap: int = 6
    translation_hit_cap: int = 2
    source_lang: str = "src"
    target_lang: str = "tgt"

    def __post_init__(self) -> None:
        if not 0.0 <= self.kg_signal_weight <= 1.0:
            raise DatasetError("kg_signal_weight must lie in [0, 1]")
        if self.neighbors_per_entity >= self.n_entities:
            raise DatasetError("neighbors_per_entity must be below n_entities")
        if self.neighbors_per_entity % 2 == 1 and self.n_entities % 2 == 1:
            raise DatasetError("odd neighbor degree needs an even entity count")


def relevance_label(doc_tokens: list[str], translated_query: set[str],
                    central_desc: set[str], neighborhood_desc: set[str],
                    config: SynthConfig) -> int:
    """Deterministic graded label from token-set overlaps."""
    doc = set(doc_tokens)
    s_ctr = min(1.0, len(doc & central_desc) / config.central_hit_cap)
    s_nb = min(1.0, len(doc & neighborhood_desc) / config.neighbor_hit_cap)
    alpha = config.entity_desc_weight
    s_kg = alpha * s_ctr + (1.0 - alpha) * s_nb
    s_tr = min(1.0, len(doc & translated_query) / config.translation_hit_cap)
    w = config.kg_signal_weight
    return int(math.floor(6.0 * (w * s_kg + (1.0 - w) * s_tr) + 0.5))


def _regular_edges(n: int, degree: int,
                   rng: np.random.Generator) -> list[tuple[int, int]]:
    """Random labeling of a circulant graph: every vertex has exactly
    ``degree`` distinct neighbors."""
    perm = [int(x) for x in rng.permutation(n)]
    edges = set()
    for off in range(1, degree // 2 + 1):
        for i in range(n):
            a, b = perm[i], perm[(i + off) % n]
            edges.add((min(a, b), max(a, b)))
    if degree % 2 == 1:
        for i in range(n // 2):
            a, b = perm[i], perm[i + n // 2]
            edges.add((min(a, b), max(a, b)))
    return sorted(edges)


class SynthWorld:
    """All latent structure behind one generated corpus."""

    def __init__(self, config: SynthConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        n = config.n_entities
        self.translate = {f"sfill{j}": f"tfill{j}"
                          for j in range(config.filler_vocab)}
        self.sig_t = [[f"tsig{i}x{j}" for j in range(config.sig_tokens_per_entity)]
                      for i in range(n)]
        sig_s = [[f"ssig{i}x{j}" for j in range(config.sig_tokens_per_entity)]
                 for i in range(n)]
        for i in range(n):
            self.translate[f"sname{i}"] = f"tname{i}"
            for a, b in zip(sig_s[i], self.sig_t[i]):
                self.translate[a] = b
        entities = {}
        for i in range(n):
            eid = f"e{i:04d}"
            entities[eid] = Entity(
                eid,
                labels={config.source_lang: f"sname{i}",
                        config.target_lang: f"tname{i}"},
                descriptions={config.source_lang: " ".join(sig_s[i]),
                              config.target_lang: " ".join(self.sig_t[i])})
        triples = [Triple(f"e{a:04d}", f"r{int(rng.integers(config.relations))}",
                          f"e{b:04d}")
                   for a, b in _regular_edges(n, config.neighbors_per_entity, rng)]
        self.kg = KGStore(entities, triples)
        self.lexicon = Lexicon()
        for i in range(n):
            self.lexicon.add(f"sname{i}", config.source_lang, f"e{i:04d}")
            self.lexicon.add(f"tname{i}", config.target_lang, f"e{i:04d}")
        self.rng = rng

    def neighborhood_desc_tokens(self, entity_index: int) -> set[str]:
        eid = f"e{entity_index:04d}"
        tokens: set[str] = set()
        for nid in self.kg.neighbors(eid):
            tokens.update(self.sig_t[int(nid[1:])])
        return tokens

    def central_desc_tokens(self, entity_index: int) -> set[str]:
        return set(self.sig_t[entity_index])


def generate(config: SynthConfig) -> tuple[Dataset, KGStore, Lexicon]:
    world = SynthWorld(config)
    cfg = config
    rng = world.rng
    queries: dict[str, tuple[str, str]] = {}
    documents: dict[str, tuple[str, str]] = {}
    judgments: dict[str, dict[str, int]] = {}
    splits: dict[str, list[str]] = {}
    filler_t = [f"tfill{j}" for j in range(cfg.filler_vocab)]
    filler_s = [f"sfill{j}" for j in range(cfg.filler_vocab)]
    all_entities = list(range(cfg.n_entities))

    sizes = {"train": cfg.train_queries, "valid": cfg.valid_queries,
             "test": cfg.test_queries}
    for split in SPLITS:
        qids = []
        for qi in range(sizes[split]):
            qid = f"{split}-q{qi:04d}"
            ent = int(rng.integers(cfg.n_entities))
            extras = [filler_s[int(j)] for j in
                      rng.choice(cfg.filler_vocab, cfg.query_extra_tokens,
                                 replace=False)]
            query_tokens = [f"sname{ent}"] + extras
            queries[qid] = (" ".join(query_tokens), cfg.source_lang)
            qids.append(qid)
            translated = {world.translate[t] for t in query_tokens}
            central = world.central_desc_tokens(ent)
            neighborhood = world.neighborhood_desc_tokens(ent)
            own = central | neighborhood
            foreign = [e for e in all_entities
                       if e != ent and not (set(world.sig_t[e]) & own)]
            levels = [lv % 7 for lv in range(cfg.candidates_per_query)]
            rng.shuffle(levels)
            judgments[qid] = {}
            for di, level in enumerate(levels):
                doc_id = f"{qid}-d{di:02d}"
                tokens = _make_document(level, translated, central,
                                        neighborhood, foreign, filler_t,
                                        world, rng)
                documents[doc_id] = (" ".join(tokens), cfg.target_lang)
                judgments[qid][doc_id] = relevance_label(
                    tokens, translated, central, neighborhood, cfg)
        splits[split] = qids
    dataset = Dataset(queries, documents, judgments, splits)
    return dataset, world.kg, world.lexicon


def _make_document(level: int, translated: set[str], central: set[str],
                   neighborhood: set[str], foreign: list[int],
                   filler_t: list[str], world: SynthWorld,
                   rng: np.random.Generator) -> list[str]:
    """Compose a target-language bag whose overlaps aim at ``level``/6.

    The recorded label is recomputed from the final bag, so accidental
    filler collisions with the translated query stay honest.
    """
    cfg = world.config
    frac = level / 6.0

    def jittered(cap: int) -> int:
        target = frac * cap + rng.uniform(-0.75, 0.75)
        return int(np.clip(round(target), 0, cap))

    tokens: list[str] = []
    tokens += _draw(sorted(neighborhood), jittered(cfg.neighbor_hit_cap), rng)
    tokens += _draw(sorted(central), jittered(cfg.central_hit_cap), rng)
    tokens += _draw(sorted(translated), jittered(cfg.translation_hit_cap), rng)
    remaining = max(0, cfg.doc_length - len(tokens))
    n_distract = remaining // 2
    for _ in range(n_distract):
        e = foreign[int(rng.integers(len(foreign)))]
        sig = world.sig_t[e]
        tokens.append(sig[int(rng.integers(len(sig)))])
    for _ in range(remaining - n_distract):
        tokens.append(filler_t[int(rng.integers(len(filler_t)))])
    rng.shuffle(tokens)
    return tokens


def _draw(pool: list[str], count: int, rng: np.random.Generator) -> list[str]:
    count = min(count, len(pool))
    if count == 0:
        return []
    return [pool[int(i)] for i in rng.choice(len(pool), count, replace=False)]


def save_corpus(directory: str | Path, dataset: Dataset, kg: KGStore,
                lexicon: Lexicon) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_dataset(directory, dataset)
    kg.save(directory / "entities.jsonl", directory / "triples.tsv")
    lexicon.save(directory / "lexicon.tsv")
