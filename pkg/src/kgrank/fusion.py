"""Hierarchical fusion of pair, entity, and neighborhood vectors.

Per language branch, the (2+k) x d input matrix stacks the query-document
vector, the central entity vector, and k neighbor vectors. Multi-head
scaled dot-product attention (full-width d x d heads, scores scaled by
sqrt(d)) runs over those rows; each head output is layer-normalized, the
heads are packed through a (m*d) x d matrix, and an aggregator maps the
flattened result to a single 1 x d knowledge vector through tanh.

The language combiner joins the query-document vector with both per-branch
knowledge vectors through one affine + tanh. The match head maps the
concatenated [pair; combined] vector to a scalar, squashed by a sigmoid in
the default activation mode or left raw (ranking is invariant between the
two since the squash is monotone).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DimensionError, Tape, Tensor, param

LN_EPS = 1e-5


class AblationError(ValueError):
    """Mutually inconsistent ablation flags."""


@dataclass
class Ablation:
    """Feature-removal switches for the ablation study variants."""
    drop_descriptions: bool = False
    drop_labels: bool = False
    drop_neighbors: bool = False
    drop_target_language: bool = False

    def __post_init__(self) -> None:
        if self.drop_descriptions and self.drop_labels:
            raise AblationError("cannot drop both labels and descriptions")

    def any_active(self) -> bool:
        return (self.drop_descriptions or self.drop_labels
                or self.drop_neighbors or self.drop_target_language)


class KnowledgeFusionParams:
    """Trainable weights for one language branch of the knowledge fusion."""

    def __init__(self, dim: int, heads: int, neighbors: int,
                 rng: np.random.Generator):
        if heads < 1:
            raise ValueError("need at least one attention head")
        self.dim = dim
        self.heads = heads
        self.neighbors = neighbors
        a = 1.0 / np.sqrt(dim)
        u = lambda shape: param(rng.uniform(-a, a, shape))
        self.w_query = [u((dim, dim)) for _ in range(heads)]
        self.w_key = [u((dim, dim)) for _ in range(heads)]
        self.w_value = [u((dim, dim)) for _ in range(heads)]
        self.w_pack = u((heads * dim, dim))
        self.ln_gain = [param(np.ones((1, dim))) for _ in range(heads)]
        self.ln_bias = [param(np.zeros((1, dim))) for _ in range(heads)]
        rows = 2 + neighbors
        self.w_agg = u((dim, rows * dim))
        self.b_agg = param(np.zeros((1, dim)))

    def named_tensors(self, prefix: str) -> list[tuple[str, Tensor]]:
        named = []
        for j in range(self.heads):
            named += [(f"{prefix}.head{j}.w_query", self.w_query[j]),
                      (f"{prefix}.head{j}.w_key", self.w_key[j]),
                      (f"{prefix}.head{j}.w_value", self.w_value[j]),
                      (f"{prefix}.head{j}.ln_gain", self.ln_gain[j]),
                      (f"{prefix}.head{j}.ln_bias", self.ln_bias[j])]
        named += [(f"{prefix}.w_pack", self.w_pack),
                  (f"{prefix}.w_agg", self.w_agg),
                  (f"{prefix}.b_agg", self.b_agg)]
        return named


class LanguageFusionParams:
    """Combiner over [pair; source knowledge; target knowledge] plus the
    scalar match head over [pair; combined]."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        a = 1.0 / np.sqrt(dim)
        self.w_lang = param(rng.uniform(-a, a, (dim, 3 * dim)))
        self.b_lang = param(np.zeros((1, dim)))
        self.w_score = param(rng.uniform(-a, a, (1, 2 * dim)))
        self.b_score = param(np.zeros((1, 1)))

    def named_tensors(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.w_lang", self.w_lang),
                (f"{prefix}.b_lang", self.b_lang),
                (f"{prefix}.w_score", self.w_score),
                (f"{prefix}.b_score", self.b_score)]


def build_fusion_input(tape: Tape, v_pair: Tensor, v_entity: Tensor,
                       neighbor_vecs: list[Tensor], k: int) -> Tensor:
    """Stack [pair; entity; neighbor_1 .. neighbor_k] into a (2+k) x d matrix."""
    if len(neighbor_vecs) != k:
        raise DimensionError(
            f"expected exactly {k} neighbor vectors, got {len(neighbor_vecs)}")
    return tape.stack_rows([v_pair, v_entity] + list(neighbor_vecs))


def knowledge_fusion(tape: Tape, fusion_input: Tensor,
                     p: KnowledgeFusionParams) -> Tensor:
    """One language branch: multi-head attention over the stacked rows,
    per-head layer norm, head packing, then the tanh aggregator. 1 x d out."""
    rows, d = fusion_input.shape
    if d != p.dim or rows != 2 + p.neighbors:
        raise DimensionError(
            f"fusion input {fusion_input.shape} does not match params "
            f"(dim={p.dim}, neighbors={p.neighbors})")
    inv_sqrt_d = 1.0 / np.sqrt(d)
    head_outputs = []
    for j in range(p.heads):
        q = tape.matmul_t(fusion_input, p.w_query[j])
        k = tape.matmul_t(fusion_input, p.w_key[j])
        v = tape.matmul_t(fusion_input, p.w_value[j])
        scores = tape.scale(tape.matmul_t(q, k), inv_sqrt_d)
        att = tape.matmul(tape.softmax_rows(scores), v)
        head_outputs.append(tape.layer_norm(att, p.ln_gain[j], p.ln_bias[j],
                                            eps=LN_EPS))
    packed = tape.matmul(tape.concat_cols(head_outputs), p.w_pack)
    return tape.tanh(tape.affine(tape.vec_rows(packed), p.w_agg, p.b_agg))


def language_fusion(tape: Tape, v_pair: Tensor, kg_source: Tensor,
                    kg_target: Tensor, p: LanguageFusionParams) -> Tensor:
    """Combine the pair vector with both knowledge vectors; 1 x d out."""
    joined = tape.concat_cols([v_pair, kg_source, kg_target])
    return tape.tanh(tape.affine(joined, p.w_lang, p.b_lang))


def match_score(tape: Tape, v_pair: Tensor, combined: Tensor,
                p: LanguageFusionParams, activation: str = "sigmoid") -> Tensor:
    """Scalar relevance score for a query-document pair."""
    z = tape.affine(tape.concat_cols([v_pair, combined]), p.w_score, p.b_score)
    if activation == "sigmoid":
        return tape.sigmoid(z)
    if activation == "raw":
        return z
    raise ValueError(f"unknown activation mode {activation!r}")


def flat_fusion_score(tape: Tape, v_pair: Tensor,
                      entity_source: Tensor, neighbors_source: list[Tensor],
                      entity_target: Tensor, neighbors_target: list[Tensor],
                      p: LanguageFusionParams,
                      activation: str = "sigmoid") -> Tensor:
    """Non-hierarchical variant: the attention stage is bypassed and each
    branch's entity + neighbor vectors are mean-pooled before the combiner."""
    pooled_s = tape.mean_rows(tape.stack_rows([entity_source] + neighbors_source))
    pooled_t = tape.mean_rows(tape.stack_rows([entity_target] + neighbors_target))
    combined = language_fusion(tape, v_pair, pooled_s, pooled_t, p)
    return match_score(tape, v_pair, combined, p, activation)
