"""Command-line pipeline driver.

Every subcommand writes its outputs plus a ``manifest.json`` recording the
resolved configuration, content hashes of the inputs, and the package
version. Reports render matplotlib figures next to the delimited outputs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from . import __version__, report
from .data import (DatasetError, SynthConfig, generate, load_dataset,
                   save_corpus)
from .evaluate import (EvaluationError, as_percent, evaluate_run,
                       rank_candidates, read_qrels, read_run, write_run)
from .fusion import Ablation, AblationError
from .gradcheck import run_full_suite
from .kg import KGLoadError, KGStore, Lexicon, UnknownEntityError
from .model import Pipeline, Ranker
from .trainer import (NumericalError, TrainConfig, TrainingDataError, train,
                      validate)
from .transe import KGEmbeddings, train_transe
from .encoders import tokenize


class ConfigError(ValueError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_inputs(paths: list[Path]) -> dict[str, str]:
    hashes = {}
    for p in sorted(set(map(Path, paths))):
        if p.is_dir():
            for child in sorted(p.rglob("*")):
                if child.is_file():
                    hashes[str(child)] = _sha256(child)
        else:
            hashes[str(p)] = _sha256(p)
    return hashes


def _write_manifest(out_dir: Path, command: str, config: dict,
                    inputs: list[Path], outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": _hash_inputs(inputs),
        "outputs": sorted(outputs),
        "version": __version__,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, sort_keys=True, indent=2)
        f.write("\n")


def _outputs_exist(paths: list[Path], force: bool, label: str) -> bool:
    existing = [p for p in paths if p.exists()]
    if existing and not force:
        print(f"{label}: outputs already exist ({existing[0]}); "
              f"use --force to overwrite")
        return True
    return False


def _read_config_file(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    values = {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    for n, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {n}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce_into(cls, file_values: dict[str, str], overrides: dict) -> dict:
    """Defaults < config file < explicit flags, typed by dataclass fields."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in file_values.items():
        if key not in fields:
            continue
        ftype = fields[key].type
        try:
            if ftype == "bool" or ftype is bool:
                out[key] = raw.lower() in ("1", "true", "yes", "on")
            elif ftype == "int" or ftype is int:
                out[key] = int(raw)
            elif ftype == "float" or ftype is float:
                out[key] = float(raw)
            else:
                out[key] = raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    for key, value in overrides.items():
        if value is not None and key in fields:
            out[key] = value
    return out


def _train_config(args) -> TrainConfig:
    file_values = _read_config_file(args.config)
    overrides = {
        "dim": args.dim, "heads": args.heads, "neighbors": args.k,
        "buckets": args.buckets, "variant": args.variant,
        "activation": args.activation,
        "share_encoders": args.share_encoders or None,
        "lr_encoder": args.lr_encoder, "lr_fusion": args.lr_fusion,
        "pairs_per_epoch": args.pairs, "max_epochs": args.epochs,
        "optimizer": args.optimizer, "seed": args.seed,
        "relevance_threshold": args.threshold,
    }
    kwargs = _coerce_into(TrainConfig, file_values, overrides)
    ablation_file = {k: v.lower() in ("1", "true", "yes", "on")
                     for k, v in file_values.items()
                     if k.startswith("drop_")}
    ablation_flags = {
        "drop_descriptions": args.drop_descriptions or None,
        "drop_labels": args.drop_labels or None,
        "drop_neighbors": args.drop_neighbors or None,
        "drop_target_language": args.drop_target_language or None,
    }
    ablation_kwargs = dict(ablation_file)
    for key, value in ablation_flags.items():
        if value is not None:
            ablation_kwargs[key] = value
    try:
        kwargs["ablation"] = Ablation(**ablation_kwargs)
        return TrainConfig(**kwargs)
    except (AblationError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _add_train_flags(sub) -> None:
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--dim", type=int)
    sub.add_argument("--heads", "-m", type=int, dest="heads")
    sub.add_argument("--k", type=int, help="neighbors per entity")
    sub.add_argument("--buckets", type=int)
    sub.add_argument("--variant", choices=("full", "flat", "text_only"))
    sub.add_argument("--activation", choices=("sigmoid", "raw"))
    sub.add_argument("--share-encoders", action="store_true", default=False)
    sub.add_argument("--lr-encoder", type=float)
    sub.add_argument("--lr-fusion", type=float)
    sub.add_argument("--pairs", type=int, help="sampled triples per epoch")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--optimizer", choices=("sgd", "adam"))
    sub.add_argument("--seed", type=int)
    sub.add_argument("--threshold", type=int,
                     help="labels >= threshold count as relevant")
    sub.add_argument("--drop-descriptions", action="store_true", default=False)
    sub.add_argument("--drop-labels", action="store_true", default=False)
    sub.add_argument("--drop-neighbors", action="store_true", default=False)
    sub.add_argument("--drop-target-language", action="store_true",
                     default=False)


def _load_corpus(data_dir: Path):
    dataset = load_dataset(data_dir)
    kg = KGStore.load(data_dir / "entities.jsonl", data_dir / "triples.tsv")
    lexicon = Lexicon.load(data_dir / "lexicon.tsv")
    return dataset, kg, lexicon


# -- subcommands --------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    outputs = [out / "docs.tsv", out / "entities.jsonl"]
    if _outputs_exist(outputs, args.force, "synth"):
        return 0
    file_values = _read_config_file(args.config)
    overrides = {
        "seed": args.seed, "kg_signal_weight": args.kg_signal_weight,
        "train_queries": args.train_queries,
        "valid_queries": args.valid_queries, "test_queries": args.test_queries,
        "candidates_per_query": args.candidates,
        "n_entities": args.entities,
        "neighbors_per_entity": args.neighbors_per_entity,
    }
    try:
        config = SynthConfig(**_coerce_into(SynthConfig, file_values, overrides))
    except (DatasetError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    dataset, kg, lexicon = generate(config)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(out, dataset, kg, lexicon)
    labels = sorted({lab for per_q in dataset.judgments.values()
                     for lab in per_q.values()})
    _write_manifest(out, "synth", dataclasses.asdict(config), [],
                    ["docs.tsv", "entities.jsonl", "triples.tsv",
                     "lexicon.tsv", "train", "valid", "test"])
    print(f"synth: {len(dataset.queries)} queries, "
          f"{len(dataset.documents)} documents, "
          f"{len(kg.entities)} entities, labels present: {labels}")
    return 0


def cmd_kg_build(args) -> int:
    out = Path(args.out)
    outputs = [out / "entities.jsonl", out / "triples.tsv"]
    if _outputs_exist(outputs, args.force, "kg-build"):
        return 0
    kg = KGStore.load(args.entities, args.triples)
    out.mkdir(parents=True, exist_ok=True)
    kg.save(out / "entities.jsonl", out / "triples.tsv")
    _write_manifest(out, "kg-build", {},
                    [Path(args.entities), Path(args.triples)],
                    ["entities.jsonl", "triples.tsv"])
    degrees = [len(kg.neighbors(e)) for e in kg.entities]
    print(f"kg-build: {len(kg.entities)} entities, {len(kg.triples)} triples, "
          f"mean degree {sum(degrees) / max(len(degrees), 1):.2f}")
    return 0


def cmd_transe_train(args) -> int:
    out = Path(args.out)
    outputs = [out / "embeddings.jsonl"]
    if _outputs_exist(outputs, args.force, "transe-train"):
        return 0
    kg = KGStore.load(args.entities, args.triples)
    emb, losses = train_transe(kg.triples, dim=args.dim, margin=args.margin,
                               epochs=args.epochs, lr=args.lr,
                               negatives=args.negatives, seed=args.seed)
    out.mkdir(parents=True, exist_ok=True)
    emb.save(out / "embeddings.jsonl")
    with open(out / "loss.tsv", "w", encoding="utf-8") as f:
        f.write("epoch\tmean_margin_loss\n")
        for i, value in enumerate(losses, start=1):
            f.write(f"{i}\t{value!r}\n")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(1, len(losses) + 1), losses, color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean margin loss")
    fig.tight_layout()
    fig.savefig(out / "loss.png", dpi=120)
    plt.close(fig)
    config = {"dim": args.dim, "margin": args.margin, "epochs": args.epochs,
              "lr": args.lr, "negatives": args.negatives, "seed": args.seed}
    _write_manifest(out, "transe-train", config,
                    [Path(args.entities), Path(args.triples)],
                    ["embeddings.jsonl", "loss.tsv", "loss.png"])
    print(f"transe-train: {len(emb.entity)} entity vectors, "
          f"final loss {losses[-1]:.4f}")
    return 0


def cmd_link(args) -> int:
    out = Path(args.out)
    if _outputs_exist([out], args.force, "link"):
        return 0
    lexicon = Lexicon.load(args.lexicon)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_links = 0
    with open(args.queries, encoding="utf-8") as fin, \
            open(out, "w", encoding="utf-8") as fout:
        for n, raw in enumerate(fin, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(f"queries line {n}: expected 3 columns")
            qid, lang, text = parts
            for start, end, eid in lexicon.link(tokenize(text, lang)):
                fout.write(f"{qid}\t{start}\t{end}\t{eid}\n")
                n_links += 1
    print(f"link: {n_links} mentions linked -> {out}")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    outputs = [out / "checkpoint.json", out / "metrics.jsonl"]
    if _outputs_exist(outputs, args.force, "train"):
        return 0
    config = _train_config(args)
    data_dir = Path(args.data)
    dataset, kg, lexicon = _load_corpus(data_dir)
    embeddings = KGEmbeddings.load(args.embeddings)
    out.mkdir(parents=True, exist_ok=True)

    def log(row: dict) -> None:
        loss = "-" if row["train_loss"] is None else f"{row['train_loss']:.2f}"
        print(f"epoch {row['epoch']:>3}  loss {loss:>10}  "
              f"val NDCG@10 {as_percent(row['val_ndcg@10'])}")

    result = train(dataset, kg, lexicon, embeddings, config, log=log)
    result.model.save(out / "checkpoint.json")
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as f:
        for row in result.metrics:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    report.training_curves(result.metrics, out / "training_curve.png")
    _write_manifest(out, "train", config.to_dict(),
                    [data_dir, Path(args.embeddings)],
                    ["checkpoint.json", "metrics.jsonl", "training_curve.png"])
    print(f"train: best epoch {result.best_epoch} "
          f"(val NDCG@10 {as_percent(result.best_val_ndcg10)})")
    return 0


def cmd_rank(args) -> int:
    out = Path(args.out)
    if _outputs_exist([out], args.force, "rank"):
        return 0
    data_dir = Path(args.data)
    dataset, kg, lexicon = _load_corpus(data_dir)
    embeddings = KGEmbeddings.load(args.embeddings)
    model = Ranker.load(args.checkpoint)
    pipeline = Pipeline(model, kg, lexicon, embeddings)
    if args.split not in dataset.splits:
        raise DatasetError(f"unknown split {args.split!r}")
    run = {}
    for qid in dataset.splits[args.split]:
        candidates = [(doc_id, dataset.documents[doc_id][0])
                      for doc_id in sorted(dataset.judgments[qid])]
        scored = pipeline.score_documents(dataset.queries[qid][0], candidates,
                                          activation=args.activation)
        run[qid] = rank_candidates(scored)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_run(out, run, tag=args.tag)
    print(f"rank: {len(run)} queries -> {out}")
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out) if args.out else None
    if out and _outputs_exist([out], args.force, "eval"):
        return 0
    run = read_run(args.run)
    judgments = read_qrels(args.qrels)
    ks = tuple(int(k) for k in args.ks.split(","))
    values = evaluate_run(run, judgments, ks)
    for k in ks:
        print(f"NDCG@{k}\t{as_percent(values[k])}")
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as f:
            f.write("metric\tvalue_percent\n")
            for k in ks:
                f.write(f"NDCG@{k}\t{as_percent(values[k])}\n")
        report.metric_bars(values, out.with_suffix(".png"))
    return 0


def cmd_gradcheck(args) -> int:
    suite = run_full_suite(base_seed=args.seed, dim=args.d, neighbors=args.k,
                           heads=args.m, op_seeds=args.op_seeds,
                           pipeline_seeds=args.pipeline_seeds)
    ok = suite.max_rel_err < 1e-4
    status = "PASS" if ok else "FAIL"
    print(f"{status} ({suite.checks} checks, max rel-err {suite.max_rel_err:.3e})")
    if not ok:
        print(f"worst: {suite.worst}")
        return 4
    return 0


def cmd_sweep_k(args) -> int:
    out = Path(args.out)
    outputs = [out / "sweep.tsv"]
    if _outputs_exist(outputs, args.force, "sweep-k"):
        return 0
    base = _train_config(args)
    data_dir = Path(args.data)
    dataset, kg, lexicon = _load_corpus(data_dir)
    embeddings = KGEmbeddings.load(args.embeddings)
    k_values = [int(k) for k in args.k_list.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    for k in k_values:
        for seed in seeds:
            config = dataclasses.replace(base, neighbors=k, seed=seed)
            result = train(dataset, kg, lexicon, embeddings, config)
            pipeline = Pipeline(result.model, kg, lexicon, embeddings)
            test = validate(pipeline, dataset, "test")
            rows.append({"k": k, "seed": seed, "ndcg@1": test[1],
                         "ndcg@5": test[5], "ndcg@10": test[10]})
            print(f"sweep-k: k={k} seed={seed} "
                  f"test NDCG@10 {as_percent(test[10])}")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.tsv", "w", encoding="utf-8") as f:
        f.write("k\tseed\tndcg@1\tndcg@5\tndcg@10\n")
        for row in rows:
            f.write(f"{row['k']}\t{row['seed']}\t{row['ndcg@1']!r}\t"
                    f"{row['ndcg@5']!r}\t{row['ndcg@10']!r}\n")
    report.sweep_curve(rows, out / "sweep.png")
    _write_manifest(out, "sweep-k",
                    {**base.to_dict(), "k_list": k_values, "seeds": seeds},
                    [data_dir, Path(args.embeddings)],
                    ["sweep.tsv", "sweep.png"])
    for k in k_values:
        mean10 = sum(r["ndcg@10"] for r in rows if r["k"] == k) / len(seeds)
        print(f"sweep-k: k={k} mean test NDCG@10 {as_percent(mean10)}")
    return 0


# -- wiring ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgrank",
        description="Cross-lingual ranking with knowledge-graph fusion")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic bilingual corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--kg-signal-weight", type=float)
    p.add_argument("--train-queries", type=int)
    p.add_argument("--valid-queries", type=int)
    p.add_argument("--test-queries", type=int)
    p.add_argument("--candidates", type=int)
    p.add_argument("--entities", type=int)
    p.add_argument("--neighbors-per-entity", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("kg-build", help="validate and canonicalize KG files")
    p.add_argument("--entities", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_kg_build)

    p = subs.add_parser("transe-train", help="train graph embeddings")
    p.add_argument("--entities", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_transe_train)

    p = subs.add_parser("link", help="lexicon entity linking over queries")
    p.add_argument("--queries", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_link)

    p = subs.add_parser("train", help="train the ranking model")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("rank", help="rank a split with a trained checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--activation", choices=("sigmoid", "raw"))
    p.add_argument("--tag", default="kgrank")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_rank)

    p = subs.add_parser("eval", help="NDCG@k of a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--ks", default="1,5,10")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--op-seeds", type=int, default=20)
    p.add_argument("--pipeline-seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = subs.add_parser("sweep-k", help="train/eval across neighbor counts")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-list", default="1,3,5,7")
    p.add_argument("--seeds", default="0")
    p.add_argument("--force", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep_k)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, KGLoadError, EvaluationError, TrainingDataError,
            UnknownEntityError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
