"""Ranking and NDCG@k evaluation against graded judgments (labels 0..6).

Gain is exponential (2^label - 1) with a log2(rank+1) discount; the ideal
ordering comes from the same candidate set sorted by label. Queries whose
candidates are all label 0 score 0 by convention so that macro averages
stay defined.

Run files are TREC-style TSV: query_id, doc_id, rank (1-based), score,
run_tag. Judgments are TSV: query_id, doc_id, label.
"""

from __future__ import annotations

import math
from pathlib import Path

MAX_LABEL = 6

Run = dict[str, list[tuple[str, float]]]
Judgments = dict[str, dict[str, int]]


class EvaluationError(ValueError):
    pass


def rank_candidates(scored: list[tuple[str, float]]) -> list[tuple[str, float]]:
    """Descending score; ties broken by ascending doc id."""
    return sorted(scored, key=lambda pair: (-pair[1], pair[0]))


def _dcg(labels: list[int], k: int) -> float:
    return sum((2.0 ** rel - 1.0) / math.log2(i + 2)
               for i, rel in enumerate(labels[:k]))


def ndcg_at_k(ranked_labels: list[int], k: int) -> float:
    if k < 1:
        raise EvaluationError(f"k must be >= 1, got {k}")
    ideal = sorted(ranked_labels, reverse=True)
    idcg = _dcg(ideal, k)
    if idcg == 0.0:
        return 0.0
    return _dcg(ranked_labels, k) / idcg


def evaluate_run(run: Run, judgments: Judgments,
                 ks: tuple[int, ...] = (1, 5, 10)) -> dict[int, float]:
    """Unweighted mean NDCG@k over queries."""
    if not run:
        raise EvaluationError("empty run")
    totals = {k: 0.0 for k in ks}
    for qid, ranked in run.items():
        if qid not in judgments:
            raise EvaluationError(f"no judgments for query '{qid}'")
        labels_for_q = judgments[qid]
        labels = []
        for doc_id, _score in ranked:
            if doc_id not in labels_for_q:
                raise EvaluationError(
                    f"no judgment for document '{doc_id}' of query '{qid}'")
            labels.append(labels_for_q[doc_id])
        for k in ks:
            totals[k] += ndcg_at_k(labels, k)
    return {k: totals[k] / len(run) for k in ks}


def as_percent(value: float) -> str:
    return f"{100.0 * value:.2f}"


# -- file formats ------------------------------------------------------------


def write_run(path: str | Path, run: Run, tag: str = "kgrank") -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid in run:
            for rank, (doc_id, score) in enumerate(run[qid], start=1):
                f.write(f"{qid}\t{doc_id}\t{rank}\t{score!r}\t{tag}\n")


def read_run(path: str | Path) -> Run:
    run: Run = {}
    with open(path, encoding="utf-8") as f:
        for n, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise EvaluationError(f"malformed run line {n}: {line!r}")
            qid, doc_id, _rank, score, _tag = parts
            run.setdefault(qid, []).append((doc_id, float(score)))
    for qid in run:
        run[qid] = rank_candidates(run[qid])
    return run


def write_qrels(path: str | Path, judgments: Judgments) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid in judgments:
            for doc_id, label in judgments[qid].items():
                f.write(f"{qid}\t{doc_id}\t{label}\n")


def read_qrels(path: str | Path) -> Judgments:
    judgments: Judgments = {}
    with open(path, encoding="utf-8") as f:
        for n, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise EvaluationError(f"malformed qrels line {n}: {line!r}")
            qid, doc_id, label_str = parts
            try:
                label = int(label_str)
            except ValueError as exc:
                raise EvaluationError(
                    f"non-integer label at qrels line {n}") from exc
            if not 0 <= label <= MAX_LABEL:
                raise EvaluationError(
                    f"label out of range 0..{MAX_LABEL} at qrels line {n}")
            if doc_id in judgments.get(qid, {}):
                raise EvaluationError(
                    f"duplicate judgment for ({qid}, {doc_id}) at line {n}")
            judgments.setdefault(qid, {})[doc_id] = label
    return judgments
