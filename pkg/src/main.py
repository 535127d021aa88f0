#!/usr/bin/env python3
"""
mt-pathology-bench - command-line entry point

Batch commands over trace bundles: validate, score, eval, combine, select,
downsample, synth and report. Run as ``python -m src.main <command> ...``.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd
import structlog

from .combiner.crossval import crossval_combine
from .combiner.logreg import load_model_file, save_model
from .core.corpus import corpus_stats, dump_corpus, filter_evaluable, load_corpus, stats_rows
from .core.errors import (
    EXIT_USAGE,
    CorpusValidationError,
    MissingFeature,
    MissingScores,
    NoEvaluableDirections,
    ScoreTableMismatch,
    ToolkitError,
    UsageError,
)
from .core.types import Side
from .detectors import attn_ot
from .detectors.registry import OT_BASES, parse_detector_list, resolve_detector, score_corpus
from .detectors.word import side_features, word_feature_table
from .evaluation.downsample import matched_downsample
from .evaluation.report import load_matrices, merge_matrices, ranking_agreement, summary_rows
from .evaluation.tasks import NON_SCORE_COLUMNS, TaskId, build_task, evaluate_instances, results_matrix, score_series
from .selection.strategies import SelectionPlan, Strategy, execute_plan, quantile_weights, select
from .synth.generator import generate_corpus, load_synth_config
from .utils.config import ToolkitConfig, load_config, load_model
from .utils.logging_config import configure_logging
from .utils.tables import read_csv, read_lines, write_csv, write_json, write_lines

logger = structlog.get_logger(__name__)

EXIT_OK = 0


class ToolkitArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return value


def _csv_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _load(args: argparse.Namespace, config: ToolkitConfig, path: Optional[str] = None):
    return load_corpus(path or args.corpus, getattr(args, "overlay", None), config.annotation)


# Commands


def cmd_validate(args: argparse.Namespace, config: ToolkitConfig) -> int:
    try:
        corpus = _load(args, config)
    except CorpusValidationError as exc:
        for failure in exc.failures:
            for violation in failure.violations:
                print(f"{failure.record_id}\t{violation}")
        print(f"{len(exc.failures)} invalid record(s)")
        return exc.exit_code
    print(f"{len(corpus)} valid record(s)")
    for (direction, source), count in corpus.manifest.items():
        print(f"{direction}\t{source}\t{count}")
    rows = stats_rows(corpus_stats(corpus))
    if rows:
        print(pd.DataFrame(rows).to_string(index=False))
        if args.stats_out:
            write_csv(pd.DataFrame(rows), args.stats_out)
    return EXIT_OK


def _build_ot_context(args, config, corpus, names) -> Optional[attn_ot.OtContext]:
    specs = [resolve_detector(name) for name in names]
    needs_ref = [s for s in specs if s.needs_reference]
    if not needs_ref:
        return None
    if not args.ref:
        raise UsageError(f"detectors {[s.name for s in needs_ref]} need --ref")
    variants = {s.drop_eos for s in needs_ref}
    needs_cal = any(s.needs_calibration for s in specs)
    bundle = attn_ot.load_calibrations(args.calib) if (needs_cal and args.calib) else None
    reference = _load(args, config, args.ref)
    ctx = attn_ot.OtContext.build(
        reference,
        variants,
        config.ot,
        calibration_corpus=corpus if needs_cal and bundle is None else None,
        bundle=bundle,
    )
    if args.calib_out and ctx.calibrations:
        attn_ot.save_calibrations(ctx.bundle(), args.calib_out)
    return ctx


def cmd_score(args: argparse.Namespace, config: ToolkitConfig) -> int:
    corpus = _load(args, config)
    threads = args.threads or config.threads
    if args.level == "word":
        side = Side(args.side)
        table = word_feature_table(corpus, side, threads).frame
        if args.model:
            model = load_model_file(args.model)
            absent = [f for f in model.feature_names if f not in table.columns]
            if absent:
                raise MissingFeature([f"column {f}" for f in absent])
            features = table[model.feature_names]
            complete = features.notna().all(axis=1)
            table["combo"] = float("nan")
            if complete.any():
                table.loc[complete, "combo"] = model.decision_function(features[complete].to_numpy())
        write_csv(table, args.output)
        print(f"{len(table)} word rows written to {args.output}")
        return EXIT_OK

    if not args.detectors:
        raise UsageError("--detectors is required for sentence-level scoring")
    names = parse_detector_list(args.detectors)
    if args.drop_eos:
        names = [n + attn_ot.NOEOS_SUFFIX if n in OT_BASES else n for n in names]
    ctx = _build_ot_context(args, config, corpus, names)
    table = score_corpus(corpus, names, ctx, threads)
    write_csv(table, args.output)
    if args.json:
        write_json(table.to_dict(orient="records"), args.json)
    print(f"{len(table)} records x {len(names)} detectors written to {args.output}")
    return EXIT_OK


def _check_table_fits_task(table: pd.DataFrame, task: TaskId) -> None:
    if task.is_word_level != ("word_index" in table.columns):
        level = "word" if "word_index" in table.columns else "sentence"
        raise ScoreTableMismatch(f"{level}-level score table cannot be evaluated on {task.value}")
    if task.is_word_level and "side" in table.columns:
        sides = sorted(set(table["side"].dropna()))
        if sides != [task.side.value]:
            raise ScoreTableMismatch(f"score table side {sides} does not match {task.value} ({task.side.value})")


def cmd_eval(args: argparse.Namespace, config: ToolkitConfig) -> int:
    corpus = _load(args, config)
    task = TaskId(args.task)
    table = read_csv(args.scores)
    _check_table_fits_task(table, task)
    instances = build_task(corpus, task)
    detectors = _csv_list(args.detectors) if args.detectors else [c for c in table.columns if c not in NON_SCORE_COLUMNS]
    results = []
    for detector in detectors:
        if detector not in table.columns:
            raise UsageError(f"score table has no column {detector!r}")
        try:
            results.append(
                evaluate_instances(
                    instances, score_series(table, detector, task), task, detector, config.resources.high_resource_set
                )
            )
        except (MissingScores, NoEvaluableDirections) as exc:
            logger.warning("detector_not_evaluated", detector=detector, reason=str(exc))
    if not results:
        raise NoEvaluableDirections(f"no detector could be evaluated on {task.value}")
    matrix = results_matrix(results)
    write_csv(matrix, args.output)
    if args.json:
        write_json([r.to_dict() for r in results], args.json)
    print(matrix.to_string(index=False))
    for result in results:
        if result.excluded:
            print(f"excluded ({result.detector}): {', '.join(result.excluded)}")
    return EXIT_OK


def cmd_combine(args: argparse.Namespace, config: ToolkitConfig) -> int:
    corpus = filter_evaluable(_load(args, config))
    task = TaskId(args.task)
    if not task.is_word_level:
        raise UsageError("combine works on word_halluc or word_omission")
    features = _csv_list(args.features) if args.features else list(side_features(task.side))
    combiner = config.combiner
    overrides = {k: v for k, v in (("lam", args.lam), ("folds", args.folds)) if v is not None}
    if overrides:
        combiner = combiner.model_copy(update=overrides)
    frame = word_feature_table(corpus, task.side, args.threads or config.threads).frame
    result = crossval_combine(frame, features, args.seed, combiner, threads=args.threads or config.threads)
    save_model(result.model, args.output)

    instances = build_task(corpus, task)
    oof = pd.Series(result.oof, index=pd.MultiIndex.from_frame(frame[["id", "word_index"]]), name="combo")
    evaluation = evaluate_instances(instances, oof, task, "combo", config.resources.high_resource_set)
    for direction, value in evaluation.scores.items():
        print(f"{direction}\t{value:.4f}")
    print(f"mean\t{evaluation.mean:.4f}")
    if not result.converged:
        print(f"not converged\tfolds {result.unconverged_folds}, final {result.model.converged}")
    if args.oof:
        out = frame[["id", "direction", "data_source", "word_index", "word_text", "gold_label"]].copy()
        out["combo"] = result.oof
        write_csv(out, args.oof)
    return EXIT_OK


def cmd_select(args: argparse.Namespace, config: ToolkitConfig) -> int:
    corpus = _load(args, config)
    table = read_csv(args.scores) if args.scores else None
    detectors = _csv_list(args.detectors) if args.detectors else []
    if table is not None and not detectors:
        detectors = [c for c in table.columns if c not in ("id", "direction", "data_source")]
    exclude = read_lines(args.exclude) if args.exclude else []
    audit = {"seed": args.seed, "detectors": detectors, "excluded": len(exclude)}

    if args.plan:
        plan = load_model(args.plan, SelectionPlan)
        picked = execute_plan(corpus, table, plan, args.seed, detectors, exclude)
        ids = picked["id"].tolist()
        audit.update(strategy="plan", plan=plan.model_dump(), selections=picked.to_dict(orient="records"))
    else:
        if not args.strategy or args.n is None:
            raise UsageError("--strategy and -n are required without --plan")
        strategy = Strategy(args.strategy)
        ids = select(corpus, table, strategy, args.n, args.seed, detectors, exclude)
        audit.update(strategy=strategy.value, n=args.n, ids=ids)
        if strategy == Strategy.QUANTILE:
            pool = sorted(r.id for r in corpus if r.id not in set(exclude))
            audit["weights"] = quantile_weights(table, detectors, pool).to_dict()
    write_lines(ids, args.output)
    write_json(audit, args.audit or f"{args.output}.audit.json")
    print(f"{len(ids)} id(s) written to {args.output}")
    return EXIT_OK


def cmd_downsample(args: argparse.Namespace, config: ToolkitConfig) -> int:
    a = _load(args, config, args.corpus_a)
    b = _load(args, config, args.corpus_b)
    out_a, out_b = matched_downsample(a, b, args.seed)
    for corpus, source, target in ((out_a, args.corpus_a, args.output[0]), (out_b, args.corpus_b, args.output[1])):
        dump_corpus(corpus, Path(target) / Path(source).name)
    print(f"kept {len(out_a)} / {len(a)} and {len(out_b)} / {len(b)} records")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, config: ToolkitConfig) -> int:
    synth_config = load_synth_config(args.synth_config)
    corpus = generate_corpus(synth_config, args.seed)
    dump_corpus(corpus, args.output)
    print(f"{len(corpus)} synthetic record(s) written to {args.output}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace, config: ToolkitConfig) -> int:
    matrices = load_matrices(args.eval)
    merged = merge_matrices(matrices)
    out = Path(args.output)
    write_csv(merged, out / "combined.csv")
    bundle = {
        "matrices": {name: frame.to_dict(orient="records") for name, frame in matrices.items()},
        "best": summary_rows(matrices),
    }
    if args.compare:
        first, second = (Path(p).stem for p in args.compare)
        compared = load_matrices(args.compare)
        rho = ranking_agreement(compared[first], compared[second])
        bundle["ranking_agreement"] = {"a": first, "b": second, "spearman": rho}
        print(f"ranking agreement {first} vs {second}: {rho:.4f}")
    write_json(bundle, out / "combined.json")
    print(f"{len(merged)} cell(s) from {len(matrices)} matri(ces) written to {out}")
    return EXIT_OK


# Parser


def create_parser() -> argparse.ArgumentParser:
    logging_flags = ToolkitArgumentParser(add_help=False)
    logging_flags.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    logging_flags.add_argument("--log-json", action="store_true", help="emit logs as JSON lines")

    common = ToolkitArgumentParser(add_help=False, parents=[logging_flags])
    common.add_argument("--config", help="toolkit config (YAML or JSON)")
    common.add_argument("--threads", type=int, default=None, help="record-level worker threads")
    common.add_argument("--overlay", help="annotation overlay JSONL merged by id")

    parser = ToolkitArgumentParser(
        prog="mt-pathology-bench",
        description="Hallucination and omission detection benchmark over translation traces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a trace bundle")
    p.add_argument("corpus")
    p.add_argument("--stats-out", help="write per-direction severity rates as CSV")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("score", parents=[common], help="compute detector scores")
    p.add_argument("corpus")
    p.add_argument("--detectors", help="comma-separated detector ids")
    p.add_argument("--level", choices=["sentence", "word"], default="sentence")
    p.add_argument("--side", choices=[s.value for s in Side], default=Side.TARGET.value)
    p.add_argument("--model", help="linear model JSON adding a combo column to word scores")
    p.add_argument("--ref", help="reference corpus for the attention OT detectors")
    p.add_argument("--calib", help="calibration JSON to load")
    p.add_argument("--calib-out", help="write the calibration used")
    p.add_argument("--drop-eos", action="store_true", help="use EOS-dropped attention for OT detectors")
    p.add_argument("--json", help="also write the table as JSON")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("eval", parents=[common], help="evaluate score columns on a task")
    p.add_argument("corpus")
    p.add_argument("--scores", required=True)
    p.add_argument("--task", required=True, choices=[t.value for t in TaskId])
    p.add_argument("--detectors", help="comma-separated subset of score columns")
    p.add_argument("--json", help="write results with counts and exclusions")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("combine", parents=[common], help="cross-validated feature combination")
    p.add_argument("corpus")
    p.add_argument("--task", required=True, choices=[TaskId.WORD_HALLUC.value, TaskId.WORD_OMISSION.value])
    p.add_argument("--features", help="comma-separated feature columns")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--oof", help="write out-of-fold scores as CSV")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=cmd_combine)

    p = sub.add_parser("select", parents=[common], help="pick records for annotation")
    p.add_argument("corpus")
    p.add_argument("--scores")
    p.add_argument("--detectors")
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("-n", type=int)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--plan", help="selection plan JSON with per-stratum strategy counts")
    p.add_argument("--exclude", help="file of ids never to select")
    p.add_argument("--audit", help="audit JSON path (default <output>.audit.json)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=cmd_select)

    p = sub.add_parser("downsample", parents=[common], help="matched stratified downsampling")
    p.add_argument("corpus_a")
    p.add_argument("corpus_b")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("-o", "--output", nargs=2, required=True, metavar=("DIR_A", "DIR_B"))
    p.set_defaults(handler=cmd_downsample)

    p = sub.add_parser("synth", parents=[logging_flags], help="generate a synthetic trace corpus")
    p.add_argument("--config", dest="synth_config", help="synthetic corpus config JSON")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("report", parents=[common], help="merge evaluation matrices")
    p.add_argument("--eval", nargs="+", required=True)
    p.add_argument("--compare", nargs=2, metavar=("EVAL_A", "EVAL_B"))
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_logging(args.log_level, args.log_json)
    try:
        config = load_config(getattr(args, "config", None))
        return args.handler(args, config)
    except ToolkitError as exc:
        logger.error("command_failed", command=args.command, error=type(exc).__name__, message=str(exc))
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
