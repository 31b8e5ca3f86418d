"""Command-line entry point.

Subcommands: augment, synth, train, evaluate, gradcheck, compare.
Exit codes: 0 success, 1 usage / rejected input, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import trainer as tr
from .config import default_run_config, load_run_config, render_resolved
from .data import (
    SynthConfig,
    generate_synthetic,
    load_benchmark_dir,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
)
from .errors import DataError, InputError, NumericalError
from .evaluation import compute_metrics, rank_corpus, repeated_typo_eval
from .experiments import compare, gradcheck
from .losses import Method
from .rng import derive_seed
from .typos import AugmentationPolicy, generate_variants

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _parse_method(name: str) -> Method:
    try:
        return Method(name.strip().lower())
    except ValueError:
        raise InputError(
            f"unknown method {name!r} (expected one of {[m.value for m in Method]})"
        ) from None


def _read_queries_tsv(path) -> dict[str, str]:
    out = {}
    try:
        f = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read queries {path}: {e}") from None
    with f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 tab-separated fields")
            out[parts[0]] = parts[1]
    return out


def _cmd_augment(args) -> int:
    queries = _read_queries_tsv(args.queries)
    noop_count = 0
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        for qid, text in queries.items():
            policy = AugmentationPolicy(
                k=args.k,
                min_word_len=args.min_word_len,
                transforms_per_variant=args.transforms_per_variant,
                seed=derive_seed(args.seed, qid),
            )
            variants, noop = generate_variants(text, policy)
            noop_count += int(noop)
            for idx, variant in enumerate(variants):
                f.write(f"{qid}\t{idx}\t{variant}\n")
    if noop_count:
        print(
            f"warning: {noop_count} queries had no eligible word and were "
            "copied unchanged",
            file=sys.stderr,
        )
    print(f"wrote {args.k} variants for {len(queries)} queries to {args.out}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    config = SynthConfig(
        num_passages=args.num_passages,
        num_train_queries=args.num_train_queries,
        num_eval_queries=args.num_eval_queries,
        vocab_size=args.vocab_size,
        passage_len_words=args.passage_len_words,
        query_len_words=args.query_len_words,
        hard_negatives_per_query=args.hard_negatives,
        seed=args.seed,
    )
    bench = generate_synthetic(config, args.out)
    print(
        f"wrote synthetic benchmark to {args.out}: "
        f"{config.num_passages} passages, {config.num_train_queries} train / "
        f"{config.num_eval_queries} eval queries"
    )
    for name, path in bench.paths.items():
        print(f"  {name}: {path}")
    return EXIT_OK


def _load_config(args):
    if args.config:
        cfg = load_run_config(args.config)
    else:
        cfg = default_run_config()
    if getattr(args, "method", None):
        cfg = cfg.with_method(_parse_method(args.method))
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, seed=args.seed)
        )
    return cfg


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    bench = load_benchmark_dir(args.data_dir)
    model, log = tr.train(
        bench.train.training_instances(),
        bench.train.collection,
        cfg.method,
        cfg.train,
        cfg.encoder,
        cfg.augment,
    )
    save_checkpoint(model, args.out)
    Path(str(args.out) + ".resolved.cfg").write_text(
        render_resolved(cfg), encoding="utf-8"
    )
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="\n") as f:
            f.write("step\tloss\tlr\n")
            for entry in log:
                f.write(f"{entry.step}\t{entry.loss!r}\t{entry.lr!r}\n")
    print(
        f"trained {cfg.method.method.value} for {cfg.train.total_steps} steps; "
        f"final loss {log[-1].loss:.6f}; checkpoint at {args.out}"
    )
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    queries = _read_queries_tsv(args.queries)
    dataset = load_dataset(args.collection, args.queries, args.qrels, None)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    clean_run = rank_corpus(model, queries, dataset.collection, args.top_k)
    clean = compute_metrics(metrics, clean_run, dataset.qrels)
    rows = [("clean", m, clean[m].mean, 0.0) for m in metrics]
    if args.typo_repeats > 0:
        policy = AugmentationPolicy(k=1, seed=args.seed)
        typo = repeated_typo_eval(
            model,
            queries,
            dataset.collection,
            dataset.qrels,
            args.typo_repeats,
            policy,
            metrics,
            args.top_k,
        )
        rows += [("typo", m, typo.metrics[m].mean, typo.metrics[m].std) for m in metrics]
    lines = ["setting\tmetric\tmean\tstd"]
    for setting, metric, mean, std in rows:
        lines.append(f"{setting}\t{metric}\t{mean:.6f}\t{std:.6f}")
    report = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
    print(report, end="")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    method = _parse_method(args.method)
    result = gradcheck(method, seed=args.seed, n_batches=args.batches)
    print(f"{method.value}: max relative error {result.max_rel_err:.3e}")
    return EXIT_OK if result.passed else EXIT_NUMERICAL


def _cmd_compare(args) -> int:
    cfg = _load_config(args)
    bench = load_benchmark_dir(args.data_dir)
    methods = [_parse_method(m) for m in args.methods.split(",") if m.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    result = compare(
        bench,
        methods,
        seeds,
        cfg,
        args.out,
        metrics=metrics,
        typo_repeats=args.typo_repeats,
        top_k=args.top_k,
        jobs=args.jobs,
    )
    print(f"compared {len(methods)} methods x {len(seeds)} seeds; report in {args.out}")
    for method in methods:
        typo = result.mean(method, "typo", metrics[0])
        clean = result.mean(method, "clean", metrics[0])
        print(f"  {method.value:12s} clean {metrics[0]}={clean:.4f} typo {metrics[0]}={typo:.4f}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="typodr", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("augment", help="generate typoed variants of queries")
    p.add_argument("--queries", required=True, help="input TSV: qid<TAB>text")
    p.add_argument("--k", type=int, required=True, help="variants per query")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output TSV: qid, variant_index, text")
    p.add_argument("--min-word-len", type=int, default=3, dest="min_word_len")
    p.add_argument(
        "--transforms-per-variant", type=int, default=1, dest="transforms_per_variant"
    )
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--num-passages", type=int, default=2000)
    p.add_argument("--num-train-queries", type=int, default=500)
    p.add_argument("--num-eval-queries", type=int, default=200)
    p.add_argument("--vocab-size", type=int, default=300)
    p.add_argument("--passage-len-words", type=int, default=6)
    p.add_argument("--query-len-words", type=int, default=3)
    p.add_argument("--hard-negatives", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train one method on a benchmark directory")
    p.add_argument("--config", help="run config file (INI sections)")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="training log TSV (step, loss, lr)")
    p.add_argument("--method", help="override the config's method")
    p.add_argument("--seed", type=int, help="override the config's training seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--collection", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--metrics", default="mrr@10,recall@1000,ndcg@10,map")
    p.add_argument("--typo-repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top-k", type=int, default=1000)
    p.add_argument("--report", help="write the report TSV here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--method", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batches", type=int, default=20)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("compare", help="train and evaluate a method grid")
    p.add_argument("--data-dir", required=True)
    p.add_argument(
        "--methods",
        default="dr,dr_cl,dr_cl_m,dr_dl,dr_dl_m,dr_st_dl,dr_st_dl_m",
    )
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--config", help="run config file")
    p.add_argument("--metrics", default="mrr@10,recall@10,ndcg@10,map")
    p.add_argument("--typo-repeats", type=int, default=5)
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare)
    return parser


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run_cli())
