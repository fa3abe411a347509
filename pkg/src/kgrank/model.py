"""Full ranking model: encoders + per-language fusion branches + match head.

Variants:
  full      hierarchical fusion over [pair; entity; neighbors] per language
  flat      mean-pooled entity+neighbors straight into the combiner
  text_only scalar head over the pair vector alone (no KG path)

Ablations apply to the full variant: labels or descriptions replaced by the
placeholder token at encoding time, neighbor rows replaced by copies of the
entity row, or the target-language knowledge vector zeroed in the combiner.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor, param
from .encoders import EncoderConfig, PairEncoder, TokenSequence, tokenize
from .fusion import (Ablation, KnowledgeFusionParams, LanguageFusionParams,
                     build_fusion_input, flat_fusion_score, knowledge_fusion,
                     language_fusion, match_score)
from .kg import (NULL_ENTITY, KGStore, Lexicon, Neighborhood,
                 select_central_entity, top_k_neighbors)

VARIANTS = ("full", "flat", "text_only")
CHECKPOINT_FORMAT = "kgrank.checkpoint/1"


@dataclass
class ModelConfig:
    dim: int = 32
    heads: int = 6
    neighbors: int = 3
    buckets: int = 4096
    cap_query: int = 64
    cap_document: int = 512
    variant: str = "full"
    activation: str = "sigmoid"
    share_encoders: bool = False
    source_lang: str = "en"
    target_lang: str = "es"
    seed: int = 0
    ablation: Ablation = field(default_factory=Ablation)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.activation not in ("sigmoid", "raw"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablation"] = asdict(self.ablation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["ablation"] = Ablation(**d.get("ablation", {}))
        return cls(**d)


@dataclass
class QueryKG:
    """Per-query KG inputs, resolved once and reused for every candidate."""
    entity_id: str
    null: bool
    labels: dict[str, TokenSequence]
    descriptions: dict[str, TokenSequence]
    neighbor_labels: dict[str, list[TokenSequence]]
    neighbor_descriptions: dict[str, list[TokenSequence]]


class Ranker:
    """Holds all trainable tensors and runs the scoring forward pass."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        enc_cfg = EncoderConfig(dim=config.dim, buckets=config.buckets,
                                cap_first=config.cap_query,
                                cap_second=config.cap_document)
        self.qd_encoder = PairEncoder(enc_cfg, rng)
        if config.variant == "text_only":
            self.k_encoder = None
        elif config.share_encoders:
            self.k_encoder = self.qd_encoder
        else:
            self.k_encoder = PairEncoder(enc_cfg, rng)
        if config.variant == "full":
            self.know_source = KnowledgeFusionParams(config.dim, config.heads,
                                                     config.neighbors, rng)
            self.know_target = KnowledgeFusionParams(config.dim, config.heads,
                                                     config.neighbors, rng)
        else:
            self.know_source = self.know_target = None
        if config.variant in ("full", "flat"):
            self.lang = LanguageFusionParams(config.dim, rng)
            self.w_text = self.b_text = None
        else:
            self.lang = None
            a = 1.0 / np.sqrt(config.dim)
            self.w_text = param(rng.uniform(-a, a, (1, config.dim)))
            self.b_text = param(np.zeros((1, 1)))
        self._zero_vec = Tensor(np.zeros((1, config.dim)))

    # -- parameter bookkeeping -------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = self.qd_encoder.named_tensors("qd_encoder")
        if self.k_encoder is not None and self.k_encoder is not self.qd_encoder:
            named += self.k_encoder.named_tensors("k_encoder")
        if self.know_source is not None:
            named += self.know_source.named_tensors("know_source")
            named += self.know_target.named_tensors("know_target")
        if self.lang is not None:
            named += self.lang.named_tensors("lang")
        if self.w_text is not None:
            named += [("text_head.w", self.w_text), ("text_head.b", self.b_text)]
        return named

    def parameter_groups(self) -> dict[str, list[Tensor]]:
        """Two learning-rate groups: the encoders and everything else."""
        encoder, fusion = [], []
        for name, t in self.named_parameters():
            (encoder if name.split(".")[0].endswith("encoder") else fusion).append(t)
        return {"encoder": encoder, "fusion": fusion}

    def zero_grads(self) -> None:
        for _name, t in self.named_parameters():
            t.zero_grad()

    # -- forward passes -----------------------------------------------------------

    def encode_kg(self, tape: Tape, qkg: QueryKG) -> dict[str, tuple[Tensor, list[Tensor]]]:
        """Entity and neighbor vectors per language, shared across candidates.

        The NULL sentinel contributes zero vectors everywhere.
        """
        cfg = self.config
        out = {}
        if cfg.variant == "text_only":
            return out
        for role, lang in (("s", cfg.source_lang), ("t", cfg.target_lang)):
            if qkg.null or (role == "t" and cfg.variant == "full"
                            and cfg.ablation.drop_target_language):
                out[role] = (self._zero_vec,
                             [self._zero_vec] * cfg.neighbors)
                continue
            v_ent = self.k_encoder.encode(tape, qkg.labels[lang],
                                          qkg.descriptions[lang])
            if cfg.variant == "full" and cfg.ablation.drop_neighbors:
                nbrs = [v_ent] * cfg.neighbors
            else:
                nbrs = [self.k_encoder.encode(tape, lab, desc)
                        for lab, desc in zip(qkg.neighbor_labels[lang],
                                             qkg.neighbor_descriptions[lang])]
            out[role] = (v_ent, nbrs)
        return out

    def score_pair(self, tape: Tape, query: TokenSequence, document: TokenSequence,
                   kg_vecs: dict, activation: str | None = None) -> Tensor:
        v_pair = self.qd_encoder.encode(tape, query, document)
        return self.score_from_vectors(tape, v_pair, kg_vecs, activation)

    def score_from_vectors(self, tape: Tape, v_pair: Tensor, kg_vecs: dict,
                           activation: str | None = None) -> Tensor:
        cfg = self.config
        act = activation or cfg.activation
        if cfg.variant == "text_only":
            z = tape.affine(v_pair, self.w_text, self.b_text)
            return tape.sigmoid(z) if act == "sigmoid" else z
        ent_s, nbrs_s = kg_vecs["s"]
        ent_t, nbrs_t = kg_vecs["t"]
        if cfg.variant == "flat":
            return flat_fusion_score(tape, v_pair, ent_s, nbrs_s, ent_t, nbrs_t,
                                     self.lang, act)
        e_s = build_fusion_input(tape, v_pair, ent_s, nbrs_s, cfg.neighbors)
        kg_s = knowledge_fusion(tape, e_s, self.know_source)
        if cfg.ablation.drop_target_language:
            kg_t = self._zero_vec
        else:
            e_t = build_fusion_input(tape, v_pair, ent_t, nbrs_t, cfg.neighbors)
            kg_t = knowledge_fusion(tape, e_t, self.know_target)
        combined = language_fusion(tape, v_pair, kg_s, kg_t, self.lang)
        return match_score(tape, v_pair, combined, self.lang, act)

    # -- persistence ---------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        payload = {
            "format": CHECKPOINT_FORMAT,
            "config": self.config.to_dict(),
            "rng": {"init_seed": self.config.seed},
            "params": {
                name: {"shape": list(t.shape),
                       "data": [float(x) for x in t.data.ravel()]}
                for name, t in self.named_parameters()
            },
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Ranker":
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unrecognized checkpoint format in {path}")
        model = cls(ModelConfig.from_dict(payload["config"]))
        stored = payload["params"]
        for name, t in model.named_parameters():
            entry = stored[name]
            if tuple(entry["shape"]) != t.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}")
            t.data = np.asarray(entry["data"], dtype=np.float64).reshape(t.shape)
        return model


class Pipeline:
    """Wires a ranker to a KG store, lexicon, and graph embeddings."""

    def __init__(self, model: Ranker, kg: KGStore, lexicon: Lexicon,
                 embeddings):
        self.model = model
        self.kg = kg
        self.lexicon = lexicon
        self.embeddings = embeddings
        self._neighborhoods: dict[tuple[str, str], Neighborhood] = {}
        self._query_cache: dict[str, QueryKG] = {}
        self._seq_cache: dict[tuple[str, str], TokenSequence] = {}

    def tokenized(self, text: str, lang: str) -> TokenSequence:
        key = (text, lang)
        seq = self._seq_cache.get(key)
        if seq is None:
            seq = tokenize(text, lang)
            self._seq_cache[key] = seq
        return seq

    def neighborhood(self, entity_id: str, lang: str) -> Neighborhood:
        key = (entity_id, lang)
        if key not in self._neighborhoods:
            self._neighborhoods[key] = top_k_neighbors(
                entity_id, lang, self.model.config.neighbors, self.kg,
                self.embeddings)
        return self._neighborhoods[key]

    def query_kg(self, query_text: str) -> QueryKG:
        if query_text in self._query_cache:
            return self._query_cache[query_text]
        cfg = self.model.config
        seq = tokenize(query_text, cfg.source_lang)
        spans = self.lexicon.link(seq)
        center = select_central_entity(spans, self.kg, cfg.source_lang)
        if center == NULL_ENTITY:
            qkg = QueryKG(NULL_ENTITY, True, {}, {}, {}, {})
        else:
            ab = cfg.ablation
            entity = self.kg.entity(center)
            labels, descs, n_labels, n_descs = {}, {}, {}, {}
            for lang in (cfg.source_lang, cfg.target_lang):
                labels[lang] = _text_or_blank(entity.labels.get(lang), lang,
                                              blank=ab.drop_labels)
                descs[lang] = _text_or_blank(entity.descriptions.get(lang), lang,
                                             blank=ab.drop_descriptions)
                hood = self.neighborhood(center, lang)
                n_labels[lang], n_descs[lang] = [], []
                for nid in hood.neighbor_ids:
                    nb = self.kg.entity(nid)
                    n_labels[lang].append(
                        _text_or_blank(nb.labels.get(lang), lang,
                                       blank=ab.drop_labels))
                    n_descs[lang].append(
                        _text_or_blank(nb.descriptions.get(lang), lang,
                                       blank=ab.drop_descriptions))
            qkg = QueryKG(center, False, labels, descs, n_labels, n_descs)
        self._query_cache[query_text] = qkg
        return qkg

    def score_documents(self, query_text: str,
                        documents: list[tuple[str, str]],
                        activation: str | None = None) -> list[tuple[str, float]]:
        """Scores (doc_id, text) candidates under frozen parameters."""
        cfg = self.model.config
        tape = Tape()
        qkg = self.query_kg(query_text)
        kg_vecs = self.model.encode_kg(tape, qkg)
        query_seq = self.tokenized(query_text, cfg.source_lang)
        out = []
        for doc_id, text in documents:
            doc_seq = self.tokenized(text, cfg.target_lang)
            s = self.model.score_pair(tape, query_seq, doc_seq, kg_vecs,
                                      activation)
            out.append((doc_id, s.item()))
        return out


def _text_or_blank(text: str | None, lang: str, blank: bool) -> TokenSequence:
    if blank or not text:
        return tokenize("", lang)
    return tokenize(text, lang)
