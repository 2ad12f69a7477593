"""Command-line surface: extract topics, evaluate them, run label-noise
robustness studies and inspect top words.

All randomized commands take ``--seed`` (default from ``TOPICLEAR_SEED``);
with the default ``--threads 1`` every command is byte-reproducible.  Output
files are staged and renamed into place together, so a failing command never
leaves partial results behind.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .embeddings_io import Corpus, read_assignment, read_corpus, read_embeddings, write_assignment
from .gmm import GmmOptions
from .metrics import (
    Partition,
    TopicWords,
    ami,
    ari,
    build_cooccurrence,
    coherence_cv,
    coherence_npmi,
    coherence_uci,
    composition_matrix,
    delta_tfidf,
    greedy_match,
    run_noise_study,
    spearman_rho,
    top_words,
)
from .pipeline import PipelineConfig, extract_topics


class OutputSet:
    """Stages output files and commits them all-or-nothing."""

    def __init__(self):
        self._staged: list[tuple[Path, Path]] = []

    def stage(self, final_path) -> Path:
        final = Path(final_path)
        tmp = final.with_name(final.name + ".tmp")
        self._staged.append((tmp, final))
        return tmp

    def write_text(self, final_path, text: str) -> None:
        tmp = self.stage(final_path)
        tmp.write_text(text, encoding="utf-8")

    def __enter__(self) -> "OutputSet":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            for tmp, final in self._staged:
                os.replace(tmp, final)
        else:
            for tmp, _ in self._staged:
                tmp.unlink(missing_ok=True)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _read_corpus_arg(args) -> Corpus:
    names = args.label_names.split(",") if getattr(args, "label_names", None) else None
    return read_corpus(args.corpus, label_names=names)


def _gold_partition(corpus: Corpus) -> Partition:
    return Partition(labels=corpus.gold(), k=corpus.n_labels)


def cmd_extract(args) -> int:
    corpus = _read_corpus_arg(args)
    embeddings = read_embeddings(args.embeddings)
    if corpus.n_docs != embeddings.n_docs:
        raise ValueError(
            f"corpus has {corpus.n_docs} documents but embeddings file has "
            f"{embeddings.n_docs} rows"
        )
    cfg = PipelineConfig(
        k=args.k,
        d=args.d,
        max_adr_iter=args.max_iter,
        seed=args.seed,
        gmm_opts=GmmOptions(
            max_iter=args.gmm_max_iter,
            tol=args.gmm_tol,
            reg_covar=args.gmm_reg_covar,
            n_init=args.gmm_n_init,
        ),
        lda_reg=args.lda_reg,
    )
    started = time.monotonic()
    result = extract_topics(embeddings, cfg)
    elapsed = time.monotonic() - started

    report = {
        "k": cfg.k,
        "d": cfg.d,
        "max_adr_iter": cfg.max_adr_iter,
        "seed": cfg.seed,
        "iterations": result.iterations,
        "converged": result.converged,
        "history": [
            {
                "changed_count": it.changed_count,
                "gmm_log_likelihood": it.gmm_log_likelihood,
            }
            for it in result.history
        ],
        "seed_gmm_log_likelihood": float(result.seed_gmm_ll_trace[-1]),
        "lda_regularization": result.lda.regularization,
        "lda_trace_ratio": result.lda.trace_ratio,
        "topic_sizes": np.bincount(result.assignment.h, minlength=cfg.k).tolist(),
    }
    if corpus.has_gold_labels:
        gold = _gold_partition(corpus)
        report["ari_vs_gold"] = ari(result.assignment, gold)
        report["ami_vs_gold"] = ami(result.assignment, gold)

    manifest_path = args.manifest or Path(args.out_result).with_suffix(".manifest.json")
    manifest = {
        "tool": "topiclear",
        "version": __version__,
        "command": "extract",
        "config": {
            "k": cfg.k,
            "d": cfg.d,
            "max_adr_iter": cfg.max_adr_iter,
            "seed": cfg.seed,
            "lda_reg": args.lda_reg,
            "gmm": {
                "max_iter": cfg.gmm_opts.max_iter,
                "tol": cfg.gmm_opts.tol,
                "reg_covar": cfg.gmm_opts.reg_covar,
                "n_init": cfg.gmm_opts.n_init,
            },
            "threads": args.threads,
        },
        "inputs": {
            "corpus": {"path": str(args.corpus), "sha256": _sha256(args.corpus)},
            "embeddings": {"path": str(args.embeddings), "sha256": _sha256(args.embeddings)},
        },
        "outputs": {
            "assignment": str(args.out_assignment),
            "result": str(args.out_result),
        },
        "timing_seconds": elapsed,
    }

    with OutputSet() as outs:
        write_assignment(result.assignment, outs.stage(args.out_assignment))
        outs.write_text(args.out_result, _json_text(report))
        outs.write_text(manifest_path, _json_text(manifest))
    print(
        f"extracted {cfg.k} topics from {corpus.n_docs} documents in "
        f"{result.iterations} iteration(s), converged={result.converged}"
    )
    return 0


def _coherence_words(corpus: Corpus, assignment, n_top: int) -> TopicWords:
    """Top words for coherence scoring, skipping topics too small to score."""
    ranked = top_words(corpus, assignment, n=n_top)
    usable = [lst for lst in ranked.topics if len(lst) >= 2]
    if not usable:
        raise ValueError("no topic has the 2+ words needed for coherence")
    return TopicWords(topics=usable, n_top=n_top)


def _coherence_block(corpus: Corpus, assignment, args) -> dict:
    words = _coherence_words(corpus, assignment, args.top_n)
    union = {w for lst in words.topics for w, _ in lst}
    stats_uci = build_cooccurrence(corpus, args.uci_window, restrict_vocab=union)
    stats_cv = build_cooccurrence(corpus, args.cv_window, restrict_vocab=union)
    return {
        "c_uci": coherence_uci(words, stats_uci, args.top_n),
        "c_npmi": coherence_npmi(words, stats_uci, args.top_n),
        "c_v": coherence_cv(words, stats_cv, args.top_n),
    }


def cmd_evaluate(args) -> int:
    corpus = _read_corpus_arg(args)
    assignment = read_assignment(args.assignment)
    if assignment.n_docs != corpus.n_docs:
        raise ValueError(
            f"assignment covers {assignment.n_docs} documents but corpus has {corpus.n_docs}"
        )
    report: dict = {"n_docs": corpus.n_docs, "k": assignment.k}
    if not args.no_clustering:
        if not corpus.has_gold_labels:
            raise ValueError(
                "missing gold labels: clustering metrics need gold_label on every "
                "document (or pass --no-clustering)"
            )
        gold = _gold_partition(corpus)
        report["ari"] = ari(assignment, gold)
        report["ami"] = ami(assignment, gold)
        report["composition_matrix"] = composition_matrix(assignment, gold).tolist()
        if corpus.label_names:
            report["label_names"] = corpus.label_names
    if not args.no_coherence:
        report.update(_coherence_block(corpus, assignment, args))
    display = top_words(corpus, assignment, n=args.display_n)
    report["top_words"] = [
        [{"word": w, "count": c} for w, c in ranked] for ranked in display.topics
    ]

    with OutputSet() as outs:
        outs.write_text(args.out, _json_text(report))
        if args.out_csv:
            lines = ["metric,value"]
            for key in ("ari", "ami", "c_uci", "c_npmi", "c_v"):
                if key in report:
                    lines.append(f"{key},{report[key]!r}")
            outs.write_text(args.out_csv, "\n".join(lines) + "\n")
    for key in ("ari", "ami", "c_uci", "c_npmi", "c_v"):
        if key in report:
            print(f"{key} = {report[key]:.4f}")
    return 0


def _parse_p_grid(text: str) -> list[float]:
    grid = [float(p) for p in text.split(",") if p.strip() != ""]
    if not grid:
        raise ValueError("empty noise-level grid")
    for p in grid:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"noise level {p} outside [0, 1]")
    return grid


def cmd_noise_study(args) -> int:
    corpus = _read_corpus_arg(args)
    if not corpus.has_gold_labels:
        raise ValueError("missing gold labels: the noise study perturbs gold_label values")
    gold = _gold_partition(corpus)
    p_grid = _parse_p_grid(args.p_grid)
    rows = run_noise_study(
        corpus,
        gold,
        p_grid,
        replicates=args.replicates,
        seed=args.seed,
        n_top=args.top_n,
        uci_window=args.uci_window,
        cv_window=args.cv_window,
    )

    csv_lines = ["p_n,replicate,ari,ami,c_uci,c_npmi,c_v"]
    for r in rows:
        csv_lines.append(
            f"{r.p_n!r},{r.replicate},{r.ari!r},{r.ami!r},{r.c_uci!r},{r.c_npmi!r},{r.c_v!r}"
        )

    measures = ("ari", "ami", "c_uci", "c_npmi", "c_v")
    p_values = [r.p_n for r in rows]
    spearman: dict[str, float | None] = {}
    for m in measures:
        values = [getattr(r, m) for r in rows]
        try:
            spearman[m] = spearman_rho(p_values, values)
        except ValueError:
            spearman[m] = None
    levels = []
    for p in p_grid:
        level_rows = [r for r in rows if r.p_n == p]
        entry = {"p_n": p, "mean_agreement": float(np.mean([r.agreement for r in level_rows]))}
        for m in measures:
            entry[f"mean_{m}"] = float(np.mean([getattr(r, m) for r in level_rows]))
        levels.append(entry)
    summary = {
        "replicates": args.replicates,
        "seed": args.seed,
        "p_grid": p_grid,
        "spearman": spearman,
        "levels": levels,
    }

    with OutputSet() as outs:
        outs.write_text(args.out_csv, "\n".join(csv_lines) + "\n")
        outs.write_text(args.out_summary, _json_text(summary))
    for m in measures:
        rho = spearman[m]
        print(f"spearman(p_n, {m}) = {'undefined' if rho is None else f'{rho:.3f}'}")
    return 0


def cmd_topwords(args) -> int:
    corpus = _read_corpus_arg(args)
    assignment = read_assignment(args.assignment)
    if assignment.n_docs != corpus.n_docs:
        raise ValueError(
            f"assignment covers {assignment.n_docs} documents but corpus has {corpus.n_docs}"
        )
    ranked = top_words(corpus, assignment, n=args.n)
    sizes = np.bincount(assignment.h, minlength=assignment.k)

    table: list[str] = []
    csv_lines = ["kind,topic,rank,word,score"]
    for t, words in enumerate(ranked.topics):
        if not words:
            table.append(f"topic {t} ({sizes[t]} docs): (empty)")
            continue
        table.append(f"topic {t} ({sizes[t]} docs): " + ", ".join(w for w, _ in words))
        for rank, (w, c) in enumerate(words, start=1):
            csv_lines.append(f"top,{t},{rank},{w},{c:g}")

    if args.delta_tfidf is not None:
        contrast = delta_tfidf(corpus, assignment, topic=args.delta_tfidf, n=args.n)
        table.append("")
        table.append(
            f"delta tf-idf for topic {args.delta_tfidf}: "
            + ", ".join(w for w, _ in contrast)
        )
        for rank, (w, score) in enumerate(contrast, start=1):
            csv_lines.append(f"delta_tfidf,{args.delta_tfidf},{rank},{w},{score:.6g}")

    if args.match:
        other = read_assignment(args.match)
        if other.n_docs != corpus.n_docs:
            raise ValueError(
                f"--match assignment covers {other.n_docs} documents but corpus has "
                f"{corpus.n_docs}"
            )
        ours = top_words(corpus, assignment, n=None)
        theirs = top_words(corpus, other, n=None)
        table.append("")
        table.append("greedy topic matching (cosine over term frequencies):")
        for a_t, b_t, sim in greedy_match(ours, theirs):
            table.append(f"  topic {a_t} ~ other {b_t}  sim {sim:.3f}")
            csv_lines.append(f"match,{a_t},{b_t},,{sim:.3f}")

    text = "\n".join(table) + "\n"
    print(text, end="")
    with OutputSet() as outs:
        if args.out_table:
            outs.write_text(args.out_table, text)
        if args.out_csv:
            outs.write_text(args.out_csv, "\n".join(csv_lines) + "\n")
    return 0


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--seed",
        type=int,
        default=int(os.environ.get("TOPICLEAR_SEED", "0")),
        help="random seed (default: $TOPICLEAR_SEED or 0)",
    )
    sub.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker hint; outputs are byte-reproducible at 1 (the default) and "
        "reproducible for any fixed value otherwise",
    )
    sub.add_argument(
        "--label-names",
        default=None,
        help="comma-separated display names for gold labels",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topiclear",
        description="Topic extraction from document embeddings with evaluation tools.",
    )
    parser.add_argument("--version", action="version", version=f"topiclear {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("extract", help="cluster embeddings into topics")
    p.add_argument("--corpus", required=True, help="JSONL corpus path")
    p.add_argument("--embeddings", required=True, help="binary embeddings path")
    p.add_argument("--k", type=int, required=True, help="number of topics")
    p.add_argument("--d", type=int, default=64, help="intermediate feature dimension")
    p.add_argument("--max-iter", type=int, default=10, help="refinement iteration cap")
    p.add_argument("--gmm-max-iter", type=int, default=100)
    p.add_argument("--gmm-tol", type=float, default=1e-3)
    p.add_argument("--gmm-reg-covar", type=float, default=1e-6)
    p.add_argument("--gmm-n-init", type=int, default=1)
    p.add_argument(
        "--lda-reg",
        type=float,
        default=None,
        help="discriminant ridge (default: scaled from the within-class scatter)",
    )
    p.add_argument("--out-assignment", required=True, help="assignment CSV to write")
    p.add_argument("--out-result", required=True, help="diagnostics JSON to write")
    p.add_argument("--manifest", default=None, help="run manifest path")
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = subs.add_parser("evaluate", help="score an assignment against a corpus")
    p.add_argument("--assignment", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--top-n", type=int, default=10, help="top words per topic for coherence")
    p.add_argument("--display-n", type=int, default=20, help="top words per topic to report")
    p.add_argument("--uci-window", type=int, default=10)
    p.add_argument("--cv-window", type=int, default=110)
    p.add_argument("--no-clustering", action="store_true", help="skip ARI/AMI/composition")
    p.add_argument("--no-coherence", action="store_true", help="skip coherence measures")
    p.add_argument("--out", required=True, help="report JSON to write")
    p.add_argument("--out-csv", default=None, help="optional flat metrics CSV")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("noise-study", help="label-noise robustness of the measures")
    p.add_argument("--corpus", required=True)
    p.add_argument(
        "--p-grid",
        default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8",
        help="comma-separated noise levels",
    )
    p.add_argument("--replicates", type=int, default=40)
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--uci-window", type=int, default=10)
    p.add_argument("--cv-window", type=int, default=110)
    p.add_argument("--out-csv", required=True, help="per-replicate measure CSV")
    p.add_argument("--out-summary", required=True, help="summary JSON with rank correlations")
    _add_common(p)
    p.set_defaults(func=cmd_noise_study)

    p = subs.add_parser("topwords", help="inspect topic top words")
    p.add_argument("--assignment", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--n", type=int, default=20, help="words per topic")
    p.add_argument(
        "--delta-tfidf",
        type=int,
        default=None,
        metavar="TOPIC",
        help="also list words specific to TOPIC versus the rest",
    )
    p.add_argument("--match", default=None, help="other assignment CSV to match topics against")
    p.add_argument("--out-table", default=None, help="plain-text table path")
    p.add_argument("--out-csv", default=None, help="CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_topwords)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
