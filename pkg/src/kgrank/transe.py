"""Translation-based graph embeddings for neighbor relevance ranking.

Triples (h, r, t) are scored by -||v_h + v_r - v_t||_2, trained with a
margin ranking loss against corrupted triples (head or tail replaced
uniformly, filtered so no corruption is itself a training triple). Entity
vectors are L2-normalized at every epoch boundary; relation vectors are
normalized once at initialization. Initialization is uniform in
[-6/sqrt(d), 6/sqrt(d)].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kg import Triple


@dataclass
class KGEmbeddings:
    dim: int
    entity: dict[str, np.ndarray] = field(default_factory=dict)
    relation: dict[str, np.ndarray] = field(default_factory=dict)

    def score(self, head: str, relation: str, tail: str) -> float:
        """Higher is more plausible; 0 is an exact translation."""
        v = self.entity[head] + self.relation[relation] - self.entity[tail]
        return -float(np.linalg.norm(v))

    def cosine(self, a: str, b: str) -> float:
        va, vb = self.entity[a], self.entity[b]
        na, nb = np.linalg.norm(va), np.linalg.norm(vb)
        if na == 0.0 or nb == 0.0:
            return 0.0
        return float(np.dot(va, vb) / (na * nb))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps({"id": "__dim__", "kind": "meta",
                                "vec": [self.dim]}) + "\n")
            for kind, table in (("entity", self.entity), ("relation", self.relation)):
                for eid in sorted(table):
                    vec = [float(f"{x:.17g}") for x in table[eid]]
                    f.write(json.dumps({"id": eid, "kind": kind, "vec": vec}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "KGEmbeddings":
        entity: dict[str, np.ndarray] = {}
        relation: dict[str, np.ndarray] = {}
        dim = 0
        with open(path, encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                obj = json.loads(line)
                if obj["kind"] == "meta":
                    dim = int(obj["vec"][0])
                    continue
                vec = np.asarray(obj["vec"], dtype=np.float64)
                (entity if obj["kind"] == "entity" else relation)[obj["id"]] = vec
        return cls(dim, entity, relation)


def score(head: str, relation: str, tail: str, emb: KGEmbeddings) -> float:
    return emb.score(head, relation, tail)


def cosine(a: str, b: str, emb: KGEmbeddings) -> float:
    return emb.cosine(a, b)


def train_transe(triples: list[Triple], dim: int = 16, margin: float = 1.0,
                 epochs: int = 200, lr: float = 0.01, negatives: int = 5,
                 seed: int = 0) -> tuple[KGEmbeddings, list[float]]:
    """Stochastic single-triple updates; deterministic under ``seed``.

    Returns the embeddings and the per-epoch mean margin loss.
    """
    if not triples:
        raise ValueError("cannot train embeddings on an empty triple set")
    rng = np.random.default_rng(seed)
    ents = sorted({e for t in triples for e in (t.head, t.tail)})
    rels = sorted({t.relation for t in triples})
    e_index = {e: i for i, e in enumerate(ents)}
    r_index = {r: i for i, r in enumerate(rels)}
    bound = 6.0 / np.sqrt(dim)
    E = rng.uniform(-bound, bound, (len(ents), dim))
    R = rng.uniform(-bound, bound, (len(rels), dim))
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    R /= np.linalg.norm(R, axis=1, keepdims=True)
    triple_idx = [(e_index[t.head], r_index[t.relation], e_index[t.tail])
                  for t in triples]
    seen = set(triple_idx)
    losses: list[float] = []

    for _epoch in range(epochs):
        epoch_loss = 0.0
        steps = 0
        for pos in rng.permutation(len(triple_idx)):
            h, r, t = triple_idx[pos]
            for _ in range(negatives):
                hc, tc = _corrupt(h, r, t, len(ents), seen, rng)
                if hc is None:
                    continue
                d_pos_vec = E[h] + R[r] - E[t]
                d_neg_vec = E[hc] + R[r] - E[tc]
                d_pos = np.linalg.norm(d_pos_vec)
                d_neg = np.linalg.norm(d_neg_vec)
                violation = margin + d_pos - d_neg
                steps += 1
                if violation <= 0.0:
                    continue
                epoch_loss += violation
                g_pos = d_pos_vec / max(d_pos, 1e-12)
                g_neg = d_neg_vec / max(d_neg, 1e-12)
                E[h] -= lr * g_pos
                E[t] += lr * g_pos
                R[r] -= lr * (g_pos - g_neg)
                E[hc] += lr * g_neg
                E[tc] -= lr * g_neg
        E /= np.linalg.norm(E, axis=1, keepdims=True)
        losses.append(epoch_loss / max(steps, 1))

    emb = KGEmbeddings(dim,
                       {e: E[i].copy() for e, i in e_index.items()},
                       {r: R[i].copy() for r, i in r_index.items()})
    return emb, losses


def _corrupt(h: int, r: int, t: int, n_entities: int, seen: set,
             rng: np.random.Generator, max_tries: int = 100):
    """Replace head or tail uniformly; never return a known training triple."""
    for _ in range(max_tries):
        cand = int(rng.integers(n_entities))
        if rng.integers(2) == 0:
            if (cand, r, t) not in seen:
                return cand, t
        else:
            if (h, r, cand) not in seen:
                return h, cand
    return None, None


def mean_tail_rank(emb: KGEmbeddings, triples: list[Triple]) -> float:
    """Average rank of the true tail when all entities are scored as tails."""
    ents = sorted(emb.entity)
    ranks = []
    for t in triples:
        true_score = emb.score(t.head, t.relation, t.tail)
        rank = 1 + sum(1 for e in ents
                       if e != t.tail and emb.score(t.head, t.relation, e) > true_score)
        ranks.append(rank)
    return float(np.mean(ranks))
