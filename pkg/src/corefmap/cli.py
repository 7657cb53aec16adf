"""Command-line entry point: ``corefmap <command> [options]``.

Exit codes: 0 on success, 1 when inputs fail validation (nothing is written
in that case), 2 on any other runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint
from .coref import (
    CorefClusters,
    build_coref_graph,
    load_cluster_file,
    load_graph_file,
    save_cluster_file,
    save_graph_file,
)
from .corpus import load_documents, load_embeddings, save_documents
from .errors import ConfigurationError, CorefMapError, ParseError, ValidationError
from .evaluation import lexrank_graph, merge_kinds, random_graph, score_corpus, time_phase1, write_report
from .mindmap import KSM, KSM_K, SSM, KeywordScorer, build_mindmap, by_kind, export, gold_from_parents, load_mindmaps
from .model import ModelConfig
from .relgraph import load_relation_graphs, save_relation_graphs
from .train import (
    Example,
    PseudoLabel,
    TrainConfig,
    load_labels,
    make_examples,
    model_from_checkpoint,
    save_labels,
    synth_labels,
    train,
    tree_to_label,
    write_metrics,
)

logger = logging.getLogger("corefmap")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

# configuration key -> value type
TRAIN_FLAGS = {
    "learning_rate": float,
    "batch_size": int,
    "lam": float,
    "eta": float,
    "tau": float,
    "patience": int,
    "max_epochs": int,
    "seed": int,
    "clip_norm": float,
}
MODEL_FLAGS = {
    "embedding_dim": int,
    "hidden_size": int,
    "gcn_layers": int,
    "gin_layers": int,
    "proj_width": int,
    "gcn_dropout": float,
}
BOOL_KEYS = {"self_message", "exclude_positive", "use_gcn", "resample_perturbation", "synth_labels", "timing"}
EXTRA_KEYS = {"val_fraction": float}


# ---- helpers ------------------------------------------------------------


def _require_file(path: str | None, what: str) -> Path:
    if path is None:
        raise ConfigurationError(f"missing required input: {what}")
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"{what} not found: {path}")
    return p


def _parse_bool(text: str, key: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"{key}: expected a boolean, got {text!r}")


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    types = {**TRAIN_FLAGS, **MODEL_FLAGS, **EXTRA_KEYS}
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected key=value", path, lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            try:
                if key in BOOL_KEYS:
                    out[key] = _parse_bool(value, key)
                elif key in types:
                    out[key] = types[key](value)
                else:
                    raise ParseError(f"unknown configuration key {key!r}", path, lineno)
            except (ValueError, ConfigurationError) as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(f"bad value for {key}: {value!r}", path, lineno) from exc
    return out


def effective_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    merged: dict = {}
    merged.update({k: v for k, v in asdict(TrainConfig()).items()})
    merged.update({k: v for k, v in asdict(ModelConfig()).items()})
    merged.update({"synth_labels": False, "timing": False, "val_fraction": 0.1})
    if args.config:
        merged.update(read_config_file(_require_file(args.config, "config file")))
    for key in list(TRAIN_FLAGS) + list(MODEL_FLAGS) + list(EXTRA_KEYS) + sorted(BOOL_KEYS):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _train_config(cfg: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    values = {k: v for k, v in cfg.items() if k in known}
    return TrainConfig(**values)


def _model_config(cfg: dict) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    return ModelConfig(**{k: v for k, v in cfg.items() if k in known})


def _graphs_for(args, documents) -> dict:
    """Coreference graphs from ``--graphs`` or ``--clusters``; every document must be covered."""
    if getattr(args, "graphs", None):
        graphs = load_graph_file(_require_file(args.graphs, "graph file"), documents)
    else:
        clusters = load_cluster_file(_require_file(args.clusters, "cluster file"), documents)
        graphs = {d.id: build_coref_graph(clusters[d.id], d.n) for d in documents if d.id in clusters}
    missing = [d.id for d in documents if d.id not in graphs]
    if missing:
        raise ConfigurationError(f"no coreference clusters for document {missing[0]!r}")
    return graphs


def _write_lines(path: Path, lines: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


# ---- commands -----------------------------------------------------------


def cmd_build_graph(args) -> int:
    documents = load_documents(_require_file(args.documents, "documents"))
    clusters = load_cluster_file(_require_file(args.clusters, "cluster file"), documents)
    graphs = {d.id: build_coref_graph(clusters.get(d.id, CorefClusters.empty()), d.n) for d in documents}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_graph_file(graphs, out)
    print(f"wrote {len(graphs)} coreference graphs to {out}")
    return EXIT_OK


def _split_validation(examples: list[Example], fraction: float, seed: int) -> tuple[list, list]:
    if not 0.0 <= fraction < 1.0:
        raise ConfigurationError(f"val_fraction must be in [0, 1), got {fraction}")
    if fraction == 0.0 or len(examples) < 2:
        return examples, examples
    k = max(1, math.ceil(fraction * len(examples)))
    order = np.random.default_rng([seed, 3]).permutation(len(examples))
    val_idx = set(order[:k].tolist())
    return (
        [ex for i, ex in enumerate(examples) if i not in val_idx],
        [ex for i, ex in enumerate(examples) if i in val_idx],
    )


def cmd_train(args) -> int:
    cfg = effective_config(args)
    tcfg, mcfg = _train_config(cfg), _model_config(cfg)
    documents = load_documents(_require_file(args.documents, "documents"))
    table = load_embeddings(_require_file(args.embeddings, "embeddings"), mcfg.embedding_dim)
    graphs = _graphs_for(args, documents)
    if cfg["synth_labels"]:
        labels = {d.id: synth_labels(d, tcfg.seed) for d in documents}
    else:
        labels = load_labels(_require_file(args.labels, "labels (or pass --synth-labels)"))
    examples = make_examples(documents, graphs, labels)
    for ex in examples:
        ex.document.check_trainable()
    if args.val_documents:
        val_docs = load_documents(_require_file(args.val_documents, "validation documents"))
        val_graphs = _graphs_for(argparse.Namespace(graphs=None, clusters=args.val_clusters or args.clusters), val_docs)
        val_labels = labels if not cfg["synth_labels"] else {d.id: synth_labels(d, tcfg.seed) for d in val_docs}
        train_set, val_set = examples, make_examples(val_docs, val_graphs, val_labels)
    else:
        train_set, val_set = _split_validation(examples, cfg["val_fraction"], tcfg.seed)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_lines(out / "effective_config.txt", [f"{k} = {cfg[k]}" for k in sorted(cfg)])
    result = train(train_set, val_set, table, tcfg, mcfg)
    result.checkpoint.save(out / "checkpoint.bin")
    write_metrics(result.log, out / "metrics.csv", include_seconds=cfg["timing"])
    print(f"trained {len(result.log)} epochs (best {result.best_epoch}); checkpoint at {out / 'checkpoint.bin'}")
    return EXIT_OK


def _load_model(path):
    ckpt = Checkpoint.load(_require_file(path, "checkpoint"))
    return model_from_checkpoint(ckpt)


def cmd_infer(args) -> int:
    model = _load_model(args.checkpoint)
    documents = load_documents(_require_file(args.documents, "documents"))
    table = load_embeddings(_require_file(args.embeddings, "embeddings"), model.config.embedding_dim)
    graphs = _graphs_for(args, documents)

    def one(doc):
        return model.predict(doc, graphs[doc.id], table)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(one, documents))
    else:
        results = [one(d) for d in documents]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_relation_graphs(results, out)
    print(f"wrote {len(results)} relation graphs to {out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    documents = load_documents(_require_file(args.documents, "documents"))
    if args.method == "lexrank":
        graphs = [lexrank_graph(d) for d in documents]
    else:
        graphs = [random_graph(d.n, seed=[args.seed, k], doc_id=d.id) for k, d in enumerate(documents)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_relation_graphs(graphs, out)
    print(f"wrote {len(graphs)} {args.method} relation graphs to {out}")
    return EXIT_OK


def cmd_mindmap(args) -> int:
    documents = load_documents(_require_file(args.documents, "documents"))
    graphs = load_relation_graphs(_require_file(args.graphs, "relation graphs"))
    kind = KSM if args.ksm else SSM
    fmt = "dot" if args.dot else "json"
    if not 0.0 < args.keep_ratio <= 1.0:
        raise ConfigurationError(f"--keep-ratio must be in (0, 1], got {args.keep_ratio}")
    if args.ksm_k < 1:
        raise ConfigurationError(f"--ksm-k must be at least 1, got {args.ksm_k}")
    for d in documents:
        if d.id not in graphs:
            raise ConfigurationError(f"no relation graph for document {d.id!r}")
        if graphs[d.id].n != d.n:
            raise ValidationError(f"relation graph for {d.id!r} has n={graphs[d.id].n}, document has {d.n}")
    scorer = KeywordScorer(documents) if kind == KSM else None
    maps = [build_mindmap(graphs[d.id], d, kind, args.keep_ratio, args.ksm_k, scorer) for d in documents]
    texts = [export(m, fmt).rstrip("\n") for m in maps]
    _write_lines(Path(args.out), texts)
    print(f"wrote {len(maps)} {kind.upper()} mind-maps ({fmt}) to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    predicted = by_kind(load_mindmaps(_require_file(args.predicted, "predicted mind-maps")))
    gold = by_kind(load_mindmaps(_require_file(args.gold, "gold mind-maps")))
    if not gold:
        raise ValidationError(f"{args.gold}: no gold mind-maps")
    groups = []
    for kind in sorted(gold):
        if kind not in predicted:
            raise ValidationError(f"{args.predicted}: no {kind} mind-maps to compare with {args.gold}")
        missing = sorted(set(gold[kind]) - set(predicted[kind]))
        if missing:
            raise ValidationError(f"{args.predicted}: no {kind} mind-map for document {missing[0]!r}")
        groups.append(score_corpus(predicted[kind], gold[kind], args.jobs))
    rows = merge_kinds(*groups)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(rows, out)
    print(f"scored {len(rows)} documents; report at {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    model = _load_model(args.checkpoint)
    documents = load_documents(_require_file(args.documents, "documents"))
    table = load_embeddings(_require_file(args.embeddings, "embeddings"), model.config.embedding_dim)
    graphs = _graphs_for(args, documents)
    if args.repetitions < 1:
        raise ConfigurationError("--repetitions must be at least 1")
    seconds = time_phase1(
        lambda d, g: model.predict(d, g, table),
        documents,
        [graphs[d.id] for d in documents],
        args.repetitions,
    )
    report = {
        "documents": len(documents),
        "sentences": sum(d.n for d in documents),
        "repetitions": args.repetitions,
        "seconds": seconds,
    }
    print(json.dumps(report))
    if args.out:
        _write_lines(Path(args.out), [json.dumps(report)])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite, summarize

    results = run_suite(args.seeds, args.tolerance)
    for name, err in summarize(results).items():
        print(f"{name:28s} {err:.3e}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks within {args.tolerance:g}")
    return EXIT_OK if not failed else EXIT_RUNTIME


def cmd_synth(args) -> int:
    from .synthetic import generate_corpus

    if args.n_docs < 1:
        raise ConfigurationError("--n-docs must be at least 1")
    corpus = generate_corpus(args.n_docs, args.seed, prefix=args.prefix, vocab_seed=args.vocab_seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    docs = corpus.documents
    save_documents(docs, out / "documents.jsonl")
    save_cluster_file({d.document.id: d.clusters for d in corpus.docs}, out / "clusters.jsonl")
    save_labels([PseudoLabel(d.document.id, tree_to_label(d.parents)) for d in corpus.docs], out / "labels.jsonl")
    corpus.table.save(out / "embeddings.txt")
    scorer = KeywordScorer(docs)
    gold = []
    for d in corpus.docs:
        gold.append(gold_from_parents(d.document, d.parents, SSM))
        gold.append(gold_from_parents(d.document, d.parents, KSM, KSM_K, scorer))
    _write_lines(out / "gold.jsonl", [export(m, "json") for m in gold])
    print(f"wrote {len(docs)} synthetic documents to {out}")
    return EXIT_OK


# ---- parser -------------------------------------------------------------


def _add_graph_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--clusters", help="JSON lines {id, clusters}")
    src.add_argument("--graphs", help="coreference graphs written by build-graph")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corefmap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="coreference clusters -> sentence graphs")
    p.add_argument("--documents", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="fit a model and write checkpoint.bin and metrics.csv")
    p.add_argument("--documents", required=True)
    _add_graph_source(p)
    p.add_argument("--labels")
    p.add_argument("--synth-labels", action="store_const", const=True, default=None)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--val-documents")
    p.add_argument("--val-clusters")
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="key=value file; flags take precedence")
    for key, typ in {**TRAIN_FLAGS, **MODEL_FLAGS}.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ)
    p.add_argument("--self-message", action="store_const", const=True, default=None,
                   help="aggregate each node's own message over its neighbours")
    p.add_argument("--exclude-positive", action="store_const", const=True, default=None,
                   help="leave the positive pair out of the contrastive denominator")
    p.add_argument("--timing", action="store_const", const=True, default=None,
                   help="record wall-clock seconds in metrics.csv (otherwise 0, keeping the file reproducible)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="documents -> relation graphs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--documents", required=True)
    _add_graph_source(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("baseline", help="LexRank or Random relation graphs")
    p.add_argument("--documents", required=True)
    p.add_argument("--method", choices=("lexrank", "random"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("mindmap", help="relation graphs -> mind-maps")
    p.add_argument("--graphs", required=True)
    p.add_argument("--documents", required=True)
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--ssm", action="store_true", help="sentence labels (default)")
    kind.add_argument("--ksm", action="store_true", help="keyword labels")
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true", help="JSON lines (default)")
    fmt.add_argument("--dot", action="store_true", help="Graphviz DOT")
    p.add_argument("--keep-ratio", type=float, default=1.0)
    p.add_argument("--ksm-k", type=int, default=KSM_K)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mindmap)

    p = sub.add_parser("eval", help="ROUGE report of predicted against gold mind-maps")
    p.add_argument("--predicted", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time document -> relation graph conversion")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--documents", required=True)
    _add_graph_source(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic corpus with gold trees")
    p.add_argument("--n-docs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-seed", type=int, default=None)
    p.add_argument("--prefix", default="doc")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (CorefMapError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
