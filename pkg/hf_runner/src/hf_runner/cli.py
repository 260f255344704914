"""Command line entry point implementing the runner subprocess contract."""

from __future__ import annotations

import argparse
import sys

from hf_runner.runner import RunnerError, finetune, predict


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hf-runner",
        description="Fine-tune and decode seq2seq transformers from rendered JSONL corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_finetune = sub.add_parser("finetune", help="train a model and save a checkpoint")
    p_finetune.add_argument("--config", required=True, help="runner config JSON")
    p_finetune.add_argument("--train", required=True, help="rendered training JSONL")
    p_finetune.add_argument("--out", required=True, help="directory to write the model into")

    p_predict = sub.add_parser("predict", help="generate one prediction per input line")
    p_predict.add_argument("--config", required=True, help="runner config JSON")
    p_predict.add_argument("--model", required=True, help="directory a finetune run wrote")
    p_predict.add_argument("--input", required=True, help="rendered evaluation JSONL")
    p_predict.add_argument("--output", required=True, help="predictions JSONL to write")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        import transformers.utils.logging as hf_logging

        hf_logging.set_verbosity_error()
        hf_logging.disable_progress_bar()
    except ImportError:
        pass
    try:
        if args.command == "finetune":
            finetune(args.config, args.train, args.out)
        else:
            predict(args.config, args.model, args.input, args.output)
    except (RunnerError, OSError) as err:
        print(f"hf-runner: {err}", file=sys.stderr)
        return 1
    return 0


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
