"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (representation collapse or non-finite values).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from . import evalsuite, gradcheck
from .pipeline import (
    MetricsLog,
    encode_corpus,
    load_checkpoint,
    load_config,
    save_checkpoint,
    train,
    write_encoded,
    write_metrics_csv,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser():
    parser = _Parser(prog="twoview", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="checkpoint.bin", help="checkpoint output path")
    p.add_argument("--metrics-out", default="", help="optional metrics CSV path")

    p = sub.add_parser("encode", help="encode a corpus with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--regime", required=True, choices=["sup", "unsup"])
    p.add_argument("--out", required=True)
    p.add_argument("--view", default="ensemble", help="which representation to write")
    p.add_argument("--no-header", action="store_true")

    p = sub.add_parser("eval-sts", help="Pearson correlation against gold similarities")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", required=True, help="TSV: sentence_a<TAB>sentence_b<TAB>score")

    p = sub.add_parser("eval-cls", help="linear probe accuracy on labeled sentences")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--train", required=True, dest="train_tsv", help="TSV: label<TAB>sentence")
    p.add_argument("--test", required=True, dest="test_tsv")

    p = sub.add_parser("ablate", help="train and score every objective variant")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="report output directory")

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--probes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    return parser


_REGIMES = {"sup": "supervised", "unsup": "unsupervised"}


def _eval_hook_for(cfg):
    """Wire the configured eval assets into the training cadence."""
    if cfg.eval_every <= 0 or not (cfg.eval_corpus or cfg.eval_pairs):
        return None
    from .textio import load_corpus, load_word_vectors

    table = load_word_vectors(cfg.vectors)
    corpus = load_corpus(cfg.eval_corpus) if cfg.eval_corpus else None
    pairs = evalsuite.read_sts_tsv(cfg.eval_pairs) if cfg.eval_pairs else None

    def hook(params, cfg, step):
        out = {}
        if corpus is not None:
            for view, value in evalsuite.retrieval_scores(
                    params, cfg.variant, corpus, table, seed=cfg.seed).items():
                out[f"recall_{view}"] = value
        if pairs is not None:
            for view, value in evalsuite.sts_scores(
                    params, cfg.variant, pairs, table, seed=cfg.seed).items():
                out[f"sts_{view}"] = value
        return out

    return hook


def _run(args) -> int:
    if args.command == "train":
        cfg = load_config(args.config)
        ckpt, metrics = train(cfg, eval_hook=_eval_hook_for(cfg))
        save_checkpoint(ckpt, args.out)
        if args.metrics_out:
            write_metrics_csv(metrics, args.metrics_out)
        final = metrics.records[-1].loss if metrics.records else float("nan")
        print(f"trained {ckpt.step} steps, final loss {final:.6f}, "
              f"temperature {ckpt.params.temperature.read():.4f}")
        print(f"checkpoint written to {args.out}")
        return 0

    if args.command == "encode":
        ckpt = load_checkpoint(args.ckpt)
        reps = encode_corpus(ckpt, args.corpus, _REGIMES[args.regime])
        if args.view not in reps:
            raise ConfigError(f"unknown view '{args.view}' (have: {', '.join(reps)})")
        write_encoded(reps[args.view], args.out, header=not args.no_header)
        print(f"wrote {reps[args.view].shape[0]} vectors of dim {reps[args.view].shape[1]} "
              f"to {args.out}")
        return 0

    if args.command == "eval-sts":
        ckpt = load_checkpoint(args.ckpt)
        pairs = evalsuite.read_sts_tsv(args.pairs)
        score = evalsuite.eval_sts(ckpt, pairs)
        print(f"pearson_r = {score:.6f}")
        return 0

    if args.command == "eval-cls":
        ckpt = load_checkpoint(args.ckpt)
        from .textio import load_word_vectors

        train_rows, ids = evalsuite.read_labeled_tsv(args.train_tsv)
        test_rows, _ = evalsuite.read_labeled_tsv(args.test_tsv, ids)
        table = load_word_vectors(ckpt.config.vectors)
        scores = evalsuite.probe_scores(ckpt.params, ckpt.config.variant,
                                        train_rows, test_rows, table, seed=ckpt.config.seed)
        for view, value in scores.items():
            print(f"accuracy[{view}] = {value:.4f}")
        return 0

    if args.command == "ablate":
        cfg = load_config(args.config)
        report = evalsuite.run_ablation(cfg)
        text_path, csv_path = evalsuite.write_ablation_report(report, args.out)
        print(evalsuite.format_ablation_report(report))
        print(f"written to {text_path} and {csv_path}")
        return 0

    if args.command == "gradcheck":
        reports = gradcheck.run_all_checks(probes=args.probes, seed=args.seed)
        print(gradcheck.format_reports(reports))
        if all(r.ok() for r in reports):
            return 0
        print("gradient check FAILED", file=sys.stderr)
        return 3

    raise ConfigError(f"unknown command {args.command}")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _run(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
