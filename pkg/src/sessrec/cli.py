"""Command-line pipeline: preprocess, synth, train, evaluate, ablate, report.

Exit codes: 0 success, 2 configuration errors, 3 I/O and data errors,
4 runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import dataio, evaluation, reporting, trainer
from .config import build_config, save_config_snapshot
from .dataio import ColumnSchema
from .errors import ConfigError, DataError, SessrecError
from .model import ABLATION_NAMES

logger = logging.getLogger(__name__)

ABLATION_ROWS = [
    ("full", None),
    ("-NeighborSessions", "no-neighbor-sessions"),
    ("-MultiAttention", "no-multi-attention"),
    ("-ContrastiveLearning", "no-contrastive"),
]


def _require_clobber_consent(marker, force, what):
    if Path(marker).exists() and not force:
        raise ConfigError(
            f"{what} already exists at {marker}; rerun with --force to overwrite")


def _print_stats(stats):
    print("corpus statistics")
    for key in ("train_examples", "test_examples", "items",
                "avg_session_length", "train_sessions", "test_sessions"):
        print(f"  {key:<20} {stats[key]}")


def cmd_preprocess(args):
    out = Path(args.out)
    _require_clobber_consent(out / "stats.txt", args.force, "a corpus")
    if args.synthetic:
        corpus = dataio.synth_generate(
            n_items=args.n_items, n_sessions=args.n_sessions,
            concentration=args.concentration, seed=args.seed,
            test_fraction=args.test_fraction)
    else:
        if not args.input:
            raise ConfigError("preprocess needs --input (or --synthetic)")
        schema = ColumnSchema(delimiter=args.delimiter,
                              session_col=args.session_col,
                              item_col=args.item_col,
                              time_col=args.time_col,
                              skip_header=args.skip_header)
        interactions, malformed = dataio.load_interactions(args.input, schema)
        if not interactions:
            raise DataError(f"no parseable interactions in {args.input}")
        if malformed:
            print(f"skipped {malformed} malformed lines")
        sessions, vocab = dataio.sessionize_and_filter(
            interactions, min_session_len=args.min_session_len,
            min_item_freq=args.min_item_freq)
        boundary = (args.test_boundary if args.test_boundary is not None
                    else args.test_fraction)
        corpus = dataio.temporal_split(sessions, vocab, boundary)
    stats = dataio.save_corpus(corpus, out)
    _print_stats(stats)
    print(f"corpus written to {out}")
    return 0


def cmd_synth(args):
    out = Path(args.out)
    _require_clobber_consent(out / "stats.txt", args.force, "a corpus")
    corpus = dataio.synth_generate(
        n_items=args.n_items, n_sessions=args.n_sessions,
        concentration=args.concentration, seed=args.seed,
        test_fraction=args.test_fraction)
    stats = dataio.save_corpus(corpus, out)
    _print_stats(stats)
    print(f"synthetic corpus written to {out}")
    return 0


def _collect_overrides(args):
    keys = ("batch_size", "d", "lr", "weight_decay", "epochs", "patience",
            "topk_sessions", "beta", "tau", "heads", "k_sp", "dropout",
            "bisect_iters", "ggnn_steps", "grad_clip", "seed",
            "validation_fraction", "max_position")
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k, None)
                 is not None}
    if args.ablate:
        overrides["ablations"] = tuple(args.ablate)
    return overrides


def _train_once(corpus, config, out_dir, force, resume=None):
    out = Path(out_dir)
    if resume is None:
        _require_clobber_consent(out / "runlog.jsonl", force, "a run")
        if (out / "runlog.jsonl").exists():
            (out / "runlog.jsonl").unlink()
    out.mkdir(parents=True, exist_ok=True)
    save_config_snapshot(config, out / "config.txt")
    return trainer.train(corpus, config, out, resume_from=resume)


def cmd_train(args):
    corpus = dataio.load_corpus(args.corpus)
    config = build_config(dataset=args.dataset, config_file=args.config,
                          overrides=_collect_overrides(args))
    result = _train_once(corpus, config, args.out, args.force,
                         resume=args.resume)
    print(f"trained {config.epochs} epochs; best val MRR@20 "
          f"{result.best_metric:.4f}")
    print(f"checkpoints and runlog in {args.out}")
    return 0


def cmd_evaluate(args):
    run_dir = Path(args.run)
    corpus = dataio.load_corpus(args.corpus)
    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    _require_clobber_consent(out_dir / "metrics.json", args.force, "a report")

    checkpoint = run_dir / ("last.npz" if args.use_last else "best.npz")
    model, config, _ = trainer.load_model_for_eval(checkpoint,
                                                   corpus.item_count)
    report = evaluation.evaluate_model(model, corpus.test, config,
                                       model_id=run_dir.name)
    report.save(out_dir / "metrics.json")
    (out_dir / "metrics.txt").write_text(report.to_text())
    print(report.to_text(), end="")

    if args.baselines:
        for name, builder in (("popularity", evaluation.popularity_baseline),
                              ("markov", evaluation.markov_baseline)):
            baseline_report = evaluation.evaluate_ranker(
                builder(corpus), corpus.test, model_id=name)
            baseline_report.save(out_dir / f"metrics_{name}.json")
            print(baseline_report.to_text(), end="")

    if args.export_attention:
        n = evaluation.export_attention(model, corpus.test, config,
                                        out_dir / "attention.tsv")
        print(f"attention weights for {n} examples -> attention.tsv")
    print(f"evaluation written to {out_dir}")
    return 0


def cmd_ablate(args):
    corpus = dataio.load_corpus(args.corpus)
    out = Path(args.out)
    _require_clobber_consent(out / "ablation.tsv", args.force, "an ablation report")
    out.mkdir(parents=True, exist_ok=True)

    reports = []
    for row_name, ablation in ABLATION_ROWS:
        overrides = _collect_overrides(args)
        overrides["ablations"] = (ablation,) if ablation else ()
        config = build_config(dataset=args.dataset, config_file=args.config,
                              overrides=overrides)
        run_dir = out / row_name.strip("-").lower().replace("-", "_")
        result = _train_once(corpus, config, run_dir, force=True)
        model, _, _ = trainer.load_model_for_eval(result.best_checkpoint,
                                                  corpus.item_count)
        report = evaluation.evaluate_model(model, corpus.test, config,
                                           model_id=row_name)
        report.save(run_dir / "metrics.json")
        reports.append(report)
        print(f"{row_name}: P@20 {report.overall['P@20']:.2f} "
              f"M@20 {report.overall['M@20']:.2f}")

    rows = reporting.comparison_rows(reports)
    tsv_path, txt_path = reporting.write_table(rows, out, stem="ablation")
    reporting.render_metric_bars(rows, out / "ablation_bar.png")
    print(f"ablation table in {tsv_path} and {txt_path}")
    return 0


def cmd_report(args):
    tsv_path, txt_path, figures = reporting.write_report(args.runs, args.out)
    print(Path(txt_path).read_text(), end="")
    print(f"report written to {args.out} "
          f"({Path(tsv_path).name}, {len(figures)} figures)")
    return 0


def _add_train_flags(parser):
    parser.add_argument("--dataset", default=None,
                        help="per-dataset defaults: tmall, retailrocket, diginetica")
    parser.add_argument("--config", default=None, help="key = value config file")
    parser.add_argument("--ablate", action="append", choices=ABLATION_NAMES,
                        default=None)
    for name, typ in (("batch-size", int), ("d", int), ("lr", float),
                      ("weight-decay", float), ("epochs", int),
                      ("patience", int), ("topk-sessions", int),
                      ("beta", float), ("tau", float), ("heads", int),
                      ("k-sp", int), ("dropout", float),
                      ("bisect-iters", int), ("ggnn-steps", int),
                      ("grad-clip", float), ("seed", int),
                      ("validation-fraction", float), ("max-position", int)):
        parser.add_argument(f"--{name}", type=typ, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sessrec",
        description="session-based next-item recommendation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="raw log -> corpus directory")
    p.add_argument("--input", default=None)
    p.add_argument("--delimiter", default="\t")
    p.add_argument("--session-col", type=int, default=0)
    p.add_argument("--item-col", type=int, default=1)
    p.add_argument("--time-col", type=int, default=2)
    p.add_argument("--skip-header", action="store_true")
    p.add_argument("--min-session-len", type=int, default=2)
    p.add_argument("--min-item-freq", type=int, default=5)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--test-boundary", type=int, default=None,
                   help="absolute timestamp boundary (overrides the fraction)")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--n-items", type=int, default=500)
    p.add_argument("--n-sessions", type=int, default=20000)
    p.add_argument("--concentration", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--n-items", type=int, default=500)
    p.add_argument("--n-sessions", type=int, default=20000)
    p.add_argument("--concentration", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a corpus directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None,
                   help="checkpoint to continue from")
    p.add_argument("--force", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained run")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--use-last", action="store_true")
    p.add_argument("--baselines", action="store_true")
    p.add_argument("--export-attention", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and evaluate the ablation grid")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="aggregate run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SessrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
