"""Deterministic reference runner for exercising the pipeline end to end.

No learning happens here.  "Fine-tuning" just inspects the training corpus
and records what a cooperative model would have picked up: whether inputs
carried an explanation segment (so the model may rely on it at inference
time) and whether targets asked for rationalized answers.  Prediction then
follows fixed, seeded policies, which makes every accuracy downstream a
small counting exercise that tests can verify by hand.

Keep imports light: the orchestrator spawns this module as a subprocess
many times per experiment, e.g. via ``python -m treu_eval.toy_runner`` or
``treu-eval toy-runner``.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from dataclasses import dataclass
from pathlib import Path

from treu_eval.errors import TreuEvalError
from treu_eval.scoring import normalize

__all__ = ["ToyBehavior", "toy_finetune", "toy_predict", "main"]

MODEL_FILENAME = "toy_model.json"
BASELINE_POLICIES = ("first_choice", "seeded_uniform")
LEAD = "because"


class ToyRunnerError(TreuEvalError):
    pass


@dataclass(frozen=True)
class ToyBehavior:
    """Knobs read from the config file's extras.

    baseline_policy: how to answer without an explanation; either always
      the first choice or a seeded uniform pick.
    zero_shot_overlap_prob: chance that a model which never fine-tuned on
      explanations still exploits one present in its input.
    sr_shift_prob: chance that a rationalization-fine-tuned model answers
      off by one, modeling the harder combined generation task.
    """

    baseline_policy: str = "first_choice"
    zero_shot_overlap_prob: float = 0.5
    sr_shift_prob: float = 0.0

    @classmethod
    def from_config(cls, config: dict) -> "ToyBehavior":
        behavior = cls(
            baseline_policy=config.get("toy_baseline_policy", "first_choice"),
            zero_shot_overlap_prob=config.get("toy_zero_shot_overlap_prob", 0.5),
            sr_shift_prob=config.get("toy_sr_shift_prob", 0.0),
        )
        if behavior.baseline_policy not in BASELINE_POLICIES:
            raise ToyRunnerError(
                f"unknown toy_baseline_policy {behavior.baseline_policy!r}; "
                f"expected one of {BASELINE_POLICIES}"
            )
        return behavior


def _read_jsonl(path: Path, required: tuple[str, ...]) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise ToyRunnerError(f"{path}:{lineno}: invalid JSON ({err})") from err
            for key in required:
                if key not in record:
                    raise ToyRunnerError(f"{path}:{lineno}: missing field {key!r}")
            records.append(record)
    return records


def _split_input(input_text: str, sep_token: str) -> tuple[str, str | None]:
    """Split a rendered input into its task part and explanation, if any."""
    marker = f" {sep_token} "
    if marker not in input_text:
        return input_text, None
    task, tail = input_text.split(marker, 1)
    if tail.startswith(f"{LEAD} "):
        tail = tail[len(LEAD) + 1:]
    return task, tail


def _parse_choices(task_text: str) -> list[str]:
    """Recover the choice texts from a rendered task segment."""
    positions = []
    n = 1
    cursor = 0
    while True:
        marker = f" choice-{n}: "
        index = task_text.find(marker, cursor)
        if index < 0:
            break
        positions.append((index, index + len(marker)))
        cursor = index + len(marker)
        n += 1
    if not positions:
        raise ToyRunnerError(f"no choices found in input: {task_text[:80]!r}")
    choices = []
    for i, (_, start) in enumerate(positions):
        end = positions[i + 1][0] if i + 1 < len(positions) else len(task_text)
        choices.append(task_text[start:end].strip())
    return choices


def _overlap_argmax(choices: list[str], explanation: str) -> int:
    """Choice sharing the most normalized tokens with the explanation,
    counted with multiplicity; ties go to the lowest index."""
    expl_tokens = normalize(explanation).split()
    best_index = 0
    best_score = -1
    for i, choice in enumerate(choices):
        tokens = normalize(choice).split()
        remaining = list(expl_tokens)
        score = 0
        for token in tokens:
            if token in remaining:
                remaining.remove(token)
                score += 1
        if score > best_score:
            best_index, best_score = i, score
    return best_index


def toy_finetune(config: dict, train_file: Path, out_dir: Path) -> None:
    """Record corpus traits in lieu of training.

    ``learned_reliance`` is set iff the training inputs carried the
    separator token, i.e. the corpus was rendered for infusion.
    """
    records = _read_jsonl(train_file, required=("instance_id", "input_text", "target_text"))
    behavior = ToyBehavior.from_config(config)
    sep_token = config.get("sep_token", "<sep>")
    learned_reliance = any(f" {sep_token} " in r["input_text"] for r in records)
    sr_trained = any(f" {LEAD} " in r["target_text"] for r in records)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = {
        "learned_reliance": learned_reliance,
        "sr_trained": sr_trained,
        "seed": config.get("seed", 42),
        "sep_token": sep_token,
        "baseline_policy": behavior.baseline_policy,
        "zero_shot_overlap_prob": behavior.zero_shot_overlap_prob,
        "sr_shift_prob": behavior.sr_shift_prob,
    }
    (out_dir / MODEL_FILENAME).write_text(
        json.dumps(model, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def toy_predict(model_dir: Path, eval_file: Path, output_file: Path) -> None:
    """Answer each input under the recorded policies, in input order."""
    model_path = model_dir / MODEL_FILENAME
    if not model_path.is_file():
        raise ToyRunnerError(f"no {MODEL_FILENAME} in {model_dir}; fine-tune first")
    model = json.loads(model_path.read_text(encoding="utf-8"))
    records = _read_jsonl(eval_file, required=("instance_id", "input_text"))
    rng = random.Random(model["seed"])

    output_file.parent.mkdir(parents=True, exist_ok=True)
    with open(output_file, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            task, explanation = _split_input(record["input_text"], model["sep_token"])
            choices = _parse_choices(task)

            if model["baseline_policy"] == "first_choice":
                index = 0
            else:
                index = rng.randrange(len(choices))

            if explanation is not None:
                if model["learned_reliance"]:
                    index = _overlap_argmax(choices, explanation)
                elif rng.random() < model["zero_shot_overlap_prob"]:
                    index = _overlap_argmax(choices, explanation)

            generation = choices[index]
            if model["sr_trained"]:
                if rng.random() < model["sr_shift_prob"]:
                    index = (index + 1) % len(choices)
                    generation = choices[index]
                rationale = explanation if explanation is not None else "that is the trained pattern"
                generation = f"{generation} {LEAD} {rationale}"

            line = {"instance_id": record["instance_id"], "generation": generation}
            handle.write(json.dumps(line, ensure_ascii=False, separators=(",", ":")) + "\n")


def _load_config(path: str) -> dict:
    with open(path, encoding="utf-8") as handle:
        config = json.load(handle)
    if not isinstance(config, dict):
        raise ToyRunnerError(f"config file {path} is not a JSON object")
    return config


def build_parser(prog: str = "toy-runner") -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=prog, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    ft = sub.add_parser("finetune", help="inspect a training corpus and write a toy model")
    ft.add_argument("--config", required=True)
    ft.add_argument("--train", required=True)
    ft.add_argument("--out", required=True)

    pr = sub.add_parser("predict", help="answer a rendered corpus with a toy model")
    pr.add_argument("--config", required=True)
    pr.add_argument("--model", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--output", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "finetune":
            toy_finetune(_load_config(args.config), Path(args.train), Path(args.out))
        else:
            toy_predict(Path(args.model), Path(args.input), Path(args.output))
    except (ToyRunnerError, OSError, json.JSONDecodeError) as err:
        print(f"toy-runner: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
