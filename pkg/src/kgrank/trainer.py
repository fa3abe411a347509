"""Pairwise hinge-loss training with split learning rates.

Each sampled triple (query, relevant doc, irrelevant doc) contributes
max(0, 1 - score(q, d+) + score(q, d-)); a batch loss is the plain sum of
its triples with no normalization. Encoder parameters update at one rate,
fusion/matching parameters at another. Plain SGD by default; an
adaptive-moment optimizer is available behind the config switch.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .data import Dataset
from .encoders import tokenize
from .evaluate import evaluate_run, rank_candidates
from .fusion import Ablation
from .kg import KGStore, Lexicon
from .model import ModelConfig, Pipeline, Ranker
from .transe import KGEmbeddings


class TrainingDataError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    dim: int = 32
    heads: int = 6
    neighbors: int = 3
    buckets: int = 4096
    variant: str = "full"
    activation: str = "sigmoid"
    share_encoders: bool = False
    ablation: Ablation = field(default_factory=Ablation)
    lr_encoder: float = 1e-5
    lr_fusion: float = 1e-3
    pairs_per_epoch: int = 1600
    max_epochs: int = 15
    margin: float = 1.0  # fixed by the pairwise loss definition
    optimizer: str = "sgd"
    seed: int = 0
    relevance_threshold: int = 1
    graded_pairs: bool = False

    def __post_init__(self) -> None:
        if self.lr_encoder < 0 or self.lr_fusion < 0:
            raise ValueError("learning rates must be non-negative")
        if self.pairs_per_epoch < 1:
            raise ValueError("pairs_per_epoch must be >= 1")
        if not 1 <= self.relevance_threshold <= 6:
            raise ValueError("relevance threshold must be in 1..6")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def model_config(self, source_lang: str, target_lang: str) -> ModelConfig:
        return ModelConfig(dim=self.dim, heads=self.heads,
                           neighbors=self.neighbors, buckets=self.buckets,
                           variant=self.variant, activation=self.activation,
                           share_encoders=self.share_encoders,
                           source_lang=source_lang, target_lang=target_lang,
                           seed=self.seed, ablation=self.ablation)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablation"] = asdict(self.ablation)
        return d


def hinge_loss(tape: Tape, pos_scores: list[Tensor], neg_scores: list[Tensor],
               margin: float = 1.0) -> Tensor:
    """Sum over every (positive, negative) pair of max(0, m - pos + neg)."""
    if not pos_scores or not neg_scores:
        raise TrainingDataError("hinge loss needs scores on both sides")
    m = Tensor([[margin]])
    total = None
    for pos in pos_scores:
        for neg in neg_scores:
            term = tape.relu(tape.add(tape.sub(m, pos), neg))
            total = term if total is None else tape.add(total, term)
    return total


def sample_pairs(dataset: Dataset, split: str, n: int, threshold: int,
                 rng: np.random.Generator,
                 graded: bool = False) -> list[tuple[str, str, str]]:
    """Uniformly sample (query, relevant doc, irrelevant doc) triples.

    Threshold mode: relevant means label >= threshold. Graded mode: any
    document pair with strictly different labels, higher one first.
    """
    eligible = []
    per_query: dict[str, tuple[list[str], list[str]]] = {}
    for qid in dataset.splits[split]:
        labels = dataset.judgments.get(qid, {})
        if graded:
            distinct = {lab for lab in labels.values()}
            if len(distinct) >= 2:
                eligible.append(qid)
        else:
            pos = sorted(d for d, lab in labels.items() if lab >= threshold)
            neg = sorted(d for d, lab in labels.items() if lab < threshold)
            if pos and neg:
                eligible.append(qid)
                per_query[qid] = (pos, neg)
    if not eligible:
        raise TrainingDataError(
            f"no query in split '{split}' has documents on both sides of "
            f"threshold {threshold} (graded={graded})")
    triples = []
    for _ in range(n):
        qid = eligible[int(rng.integers(len(eligible)))]
        if graded:
            docs = sorted(dataset.judgments[qid])
            for _try in range(100):
                a, b = rng.choice(len(docs), 2, replace=False)
                da, db = docs[int(a)], docs[int(b)]
                la, lb = dataset.judgments[qid][da], dataset.judgments[qid][db]
                if la != lb:
                    triples.append((qid, da, db) if la > lb else (qid, db, da))
                    break
        else:
            pos, neg = per_query[qid]
            triples.append((qid, pos[int(rng.integers(len(pos)))],
                            neg[int(rng.integers(len(neg)))]))
    return triples


class SGD:
    def __init__(self, groups: dict[str, tuple[list[Tensor], float]]):
        self.groups = groups

    def step(self) -> None:
        for tensors, lr in self.groups.values():
            if lr == 0.0:
                continue
            for t in tensors:
                if t.grad is not None:
                    t.data -= lr * t.grad


class Adam:
    def __init__(self, groups: dict[str, tuple[list[Tensor], float]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.groups = groups
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.state: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for tensors, lr in self.groups.values():
            if lr == 0.0:
                continue
            for tensor in tensors:
                if tensor.grad is None:
                    continue
                key = id(tensor)
                if key not in self.state:
                    self.state[key] = (np.zeros_like(tensor.data),
                                       np.zeros_like(tensor.data))
                m, v = self.state[key]
                m *= b1
                m += (1 - b1) * tensor.grad
                v *= b2
                v += (1 - b2) * tensor.grad ** 2
                m_hat = m / (1 - b1 ** self.t)
                v_hat = v / (1 - b2 ** self.t)
                tensor.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(config: TrainConfig, model: Ranker):
    groups = model.parameter_groups()
    lr_groups = {"encoder": (groups["encoder"], config.lr_encoder),
                 "fusion": (groups["fusion"], config.lr_fusion)}
    return Adam(lr_groups) if config.optimizer == "adam" else SGD(lr_groups)


@dataclass
class TrainResult:
    model: Ranker
    metrics: list[dict]
    best_epoch: int
    best_val_ndcg10: float


def validate(pipeline: Pipeline, dataset: Dataset, split: str,
             ks: tuple[int, ...] = (1, 5, 10)) -> dict[int, float]:
    """Score-only ranking over a split; parameters are never touched."""
    run = {}
    for qid in dataset.splits[split]:
        candidates = [(doc_id, dataset.documents[doc_id][0])
                      for doc_id in sorted(dataset.judgments[qid])]
        scored = pipeline.score_documents(dataset.queries[qid][0], candidates)
        run[qid] = rank_candidates(scored)
    return evaluate_run(run, dataset.judgments, ks)


def train(dataset: Dataset, kg: KGStore, lexicon: Lexicon,
          embeddings: KGEmbeddings, config: TrainConfig,
          log=None) -> TrainResult:
    """Train on the train split, track the best validation NDCG@10 epoch,
    and return the model restored to that best state."""
    source_lang, target_lang = dataset.language_pair()
    model = Ranker(config.model_config(source_lang, target_lang))
    pipeline = Pipeline(model, kg, lexicon, embeddings)
    optimizer = _make_optimizer(config, model)
    sample_rng = np.random.default_rng(
        np.random.SeedSequence(config.seed).spawn(1)[0])

    def snapshot() -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in model.named_parameters()}

    metrics: list[dict] = []
    t0 = time.perf_counter()
    val = validate(pipeline, dataset, "valid")
    row = {"epoch": 0, "train_loss": None,
           "val_ndcg@1": val[1], "val_ndcg@5": val[5], "val_ndcg@10": val[10],
           "wall_ms": int((time.perf_counter() - t0) * 1000)}
    metrics.append(row)
    if log:
        log(row)
    best = snapshot()
    best_epoch, best_val = 0, val[10]

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        triples = sample_pairs(dataset, "train", config.pairs_per_epoch,
                               config.relevance_threshold, sample_rng,
                               config.graded_pairs)
        epoch_loss = 0.0
        for qid, pos_id, neg_id in triples:
            tape = Tape()
            query_text = dataset.queries[qid][0]
            qkg = pipeline.query_kg(query_text)
            kg_vecs = model.encode_kg(tape, qkg)
            query_seq = pipeline.tokenized(query_text, source_lang)
            pos_seq = pipeline.tokenized(dataset.documents[pos_id][0], target_lang)
            neg_seq = pipeline.tokenized(dataset.documents[neg_id][0], target_lang)
            s_pos = model.score_pair(tape, query_seq, pos_seq, kg_vecs)
            s_neg = model.score_pair(tape, query_seq, neg_seq, kg_vecs)
            loss = hinge_loss(tape, [s_pos], [s_neg], config.margin)
            value = loss.item()
            if math.isnan(value) or math.isinf(value):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} on query {qid}")
            epoch_loss += value
            if value > 0.0:
                tape.backward(loss)
                optimizer.step()
                model.zero_grads()
        val = validate(pipeline, dataset, "valid")
        row = {"epoch": epoch, "train_loss": epoch_loss,
               "val_ndcg@1": val[1], "val_ndcg@5": val[5],
               "val_ndcg@10": val[10],
               "wall_ms": int((time.perf_counter() - t0) * 1000)}
        metrics.append(row)
        if log:
            log(row)
        if val[10] > best_val:
            best_val = val[10]
            best_epoch = epoch
            best = snapshot()

    for name, t in model.named_parameters():
        t.data = best[name]
    return TrainResult(model, metrics, best_epoch, best_val)
