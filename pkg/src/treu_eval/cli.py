"""Command-line interface.

Subcommands mirror the pipeline stages: ``ingest`` source data, ``render``
prompts, ``run`` an evaluation or setting comparison, ``sweep`` training
sizes, ``score`` a prediction file, compute ``metrics`` from accuracies,
``report`` a results directory, and the built-in ``toy-runner``.

Exit codes: 0 success, 1 error, 2 usage, 3 partial results (``report`` on
a directory with missing cells).  Heavy imports stay inside the handlers
so that spawning the toy runner many times per experiment stays cheap.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shlex
import sys
from pathlib import Path

from treu_eval import __version__
from treu_eval.errors import TreuEvalError

SETTING_NAMES = ("baseline", "infusion", "self_rationalization")
DATASET_NAMES = ("cose_v1.0", "cose_v1.11", "ecqa", "esnli", "comve")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 3


def _configure_logging(log_json: bool) -> None:
    if log_json:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger = logging.getLogger("treu_eval")
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)


def _usage(message: str) -> SystemExit:
    print(f"treu-eval: {message}", file=sys.stderr)
    return SystemExit(2)


def _parse_list(text: str, convert, what: str) -> list:
    try:
        return [convert(token) for token in text.split(",") if token.strip()]
    except ValueError as err:
        raise _usage(f"invalid {what} list {text!r}: {err}")


def _build_config(args) -> "RunnerConfig":
    from treu_eval import protocol

    config = protocol.preset(args.preset) if args.preset else protocol.RunnerConfig()
    overrides = {}
    for name in ("model_name", "seed", "sep_token", "decode"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    extras = dict(config.extras)
    for item in getattr(args, "extra", None) or []:
        key, _, raw = item.partition("=")
        if not key or not raw:
            raise _usage(f"--extra expects KEY=VALUE, got {item!r}")
        try:
            extras[key] = json.loads(raw)
        except json.JSONDecodeError:
            extras[key] = raw
    if extras:
        overrides["extras"] = extras
    return dataclasses.replace(config, **overrides)


def _runner_cmd(args) -> list[str]:
    tokens = shlex.split(args.runner_cmd)
    if not tokens:
        raise _usage("--runner-cmd must not be empty")
    return tokens


# --------------------------------------------------------------------------
# handlers


def _cmd_ingest(args) -> int:
    from treu_eval.ingest import ingest_dataset

    manifest, discrepancies = ingest_dataset(args.dataset, args.data_dir, args.out_dir)
    print(f"wrote {manifest.dataset} to {Path(args.out_dir) / manifest.dataset}")
    for split in ("train", "valid", "test"):
        if split in manifest.counts:
            print(f"  {split}: {manifest.counts[split]} instances")
    print(f"  mean explanation length: {manifest.mean_explanation_tokens:.3f} tokens")
    if discrepancies:
        print("statistics differ from the published numbers:", file=sys.stderr)
        for issue in discrepancies:
            print(f"  {issue}", file=sys.stderr)
    return EXIT_OK


def _cmd_render(args) -> int:
    from treu_eval.canonical import read_canonical
    from treu_eval.unified import PromptConfig, Setting, render_corpus, write_rendered

    prompt = PromptConfig(sep_token=args.sep_token)
    instances = read_canonical(args.input)
    examples = render_corpus(instances, Setting(args.setting), prompt)
    out_path = Path(args.out_dir) / f"{Path(args.input).stem}.{args.setting}.jsonl"
    count = write_rendered(examples, out_path)
    print(f"wrote {count} examples to {out_path}")
    return EXIT_OK


def _cmd_run(args) -> int:
    from treu_eval.experiments import run_setting_comparison, run_treu_evaluation
    from treu_eval.metrics import render_results_table
    from treu_eval.unified import PromptConfig

    config = _build_config(args)
    prompt = PromptConfig(sep_token=config.sep_token)
    common = dict(
        canonical_dir=args.canonical_dir,
        out_dir=args.out_dir,
        prompt=prompt,
        strict_match=args.strict_match,
        jobs=args.jobs,
        timeout=args.timeout,
    )
    if args.mode == "treu":
        report = run_treu_evaluation(
            args.dataset, _runner_cmd(args), config, **common
        )
        print(render_results_table([report]), end="")
        if report.per_class:
            for label, scores in sorted(report.per_class.items()):
                print(
                    f"  {label}: simulatability {scores.simulatability:.3f}, "
                    f"treu {scores.treu:.3f}"
                )
    else:
        accuracies = run_setting_comparison(
            args.dataset, _runner_cmd(args), config, **common
        )
        for setting, value in accuracies.items():
            print(f"{setting.value} {value:.3f}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from treu_eval.experiments import fraction_means, run_sweep

    config = _build_config(args)
    cells = run_sweep(
        args.dataset,
        _runner_cmd(args),
        config,
        canonical_dir=args.canonical_dir,
        out_dir=args.out_dir,
        fractions=_parse_list(args.fractions, float, "fractions"),
        seeds=_parse_list(args.seeds, int, "seeds"),
        strict_match=args.strict_match,
        jobs=args.jobs,
        timeout=args.timeout,
    )
    for pair, by_fraction in sorted(fraction_means(cells).items()):
        row = ", ".join(
            f"{token}: {entry['mean']:.3f}" for token, entry in sorted(
                by_fraction.items(), key=lambda kv: float(kv[0])
            )
        )
        print(f"{pair}  {row}")
    return EXIT_OK


def _cmd_score(args) -> int:
    from treu_eval.canonical import read_canonical
    from treu_eval.protocol import read_predictions
    from treu_eval.scoring import accuracy

    instances = read_canonical(args.canonical)
    predictions = read_predictions(args.preds, expected_ids=[i.id for i in instances])
    report = accuracy(
        predictions,
        instances,
        args.finetune_setting,
        args.predict_setting,
        strict=args.strict_match,
    )
    print(report.to_json(), end="")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    from treu_eval.metrics import simulatability, treu

    print(f"simulatability {simulatability(args.acc_bb, args.acc_bi):.3f}")
    print(f"treu {treu(args.acc_bb, args.acc_bi, args.acc_ii):.3f}")
    if args.acc_ib is not None:
        print(f"acc_ib {args.acc_ib:.3f}")
    return EXIT_OK


def _cmd_report(args) -> int:
    from treu_eval.experiments import emit_report

    status = emit_report(args.results_dir)
    for exp_id in status.experiments:
        print(f"reported {exp_id}")
    if status.missing:
        print(f"missing {len(status.missing)} cell(s):", file=sys.stderr)
        for item in status.missing:
            print(f"  {item}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_toy_runner(args) -> int:
    from treu_eval.toy_runner import main as toy_main

    return toy_main(args.args)


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treu-eval",
        description="Evaluate human explanations by how much they help fine-tuned models.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-json", action="store_true",
        help="emit machine-readable progress events to stderr",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a source corpus to canonical files")
    p.add_argument("--dataset", required=True, choices=DATASET_NAMES)
    p.add_argument("--data-dir", required=True, help="directory with the original distribution")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("render", help="render a canonical file under one setting")
    p.add_argument("--in", dest="input", required=True, help="canonical JSONL file")
    p.add_argument("--setting", required=True, choices=SETTING_NAMES)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sep-token", default="<sep>")
    p.set_defaults(func=_cmd_render)

    def add_run_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("--dataset", required=True,
                       help="dataset label (canonical kind or a custom corpus name)")
        p.add_argument("--canonical-dir", required=True,
                       help="directory with train/valid/test canonical files")
        p.add_argument("--runner-cmd", required=True,
                       help="runner invocation, e.g. 'treu-eval toy-runner'")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--preset", choices=("eval_default", "esnli_eval", "sweep_pe2"))
        p.add_argument("--model-name")
        p.add_argument("--seed", type=int)
        p.add_argument("--sep-token", dest="sep_token")
        p.add_argument("--decode")
        p.add_argument("--extra", action="append", metavar="KEY=VALUE",
                       help="extra config field passed through to the runner")
        p.add_argument("--strict-match", action="store_true",
                       help="disable the containment fallback when scoring")
        p.add_argument("--jobs", type=int)
        p.add_argument("--timeout", type=float)

    p = sub.add_parser("run", help="run an explanation-quality evaluation")
    add_run_options(p)
    p.add_argument("--mode", choices=("treu", "settings"), default="treu")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="training-set size sweep")
    add_run_options(p)
    p.add_argument("--fractions", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--seeds", default="1,2,3")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("score", help="score a prediction file against canonical instances")
    p.add_argument("--preds", required=True)
    p.add_argument("--canonical", required=True)
    p.add_argument("--finetune-setting", required=True, choices=SETTING_NAMES)
    p.add_argument("--predict-setting", required=True, choices=SETTING_NAMES)
    p.add_argument("--strict-match", action="store_true")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("metrics", help="compute scores from accuracies")
    p.add_argument("--acc-bb", type=float, required=True)
    p.add_argument("--acc-bi", type=float, required=True)
    p.add_argument("--acc-ii", type=float, required=True)
    p.add_argument("--acc-ib", type=float)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("report", help="write reports for a results directory")
    p.add_argument("--results-dir", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("toy-runner", help="deterministic reference runner")
    p.add_argument("args", nargs=argparse.REMAINDER)
    p.set_defaults(func=_cmd_toy_runner)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_json)
    try:
        return args.func(args)
    except (TreuEvalError, OSError) as err:
        print(f"treu-eval: {err}", file=sys.stderr)
        return EXIT_ERROR


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
