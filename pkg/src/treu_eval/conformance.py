"""Conformance checks any model runner must pass.

The checks exercise the full subprocess contract against a small rendered
corpus: fine-tuning succeeds and leaves a loadable model directory,
prediction is total over the input ids, repeated greedy prediction is
byte-identical, and garbage input fails with a nonzero exit instead of
garbage output.  The toy runner passes this suite; so must any real one.
"""

from __future__ import annotations

import subprocess
from pathlib import Path
from typing import Sequence

from treu_eval import protocol, unified
from treu_eval.canonical import CanonicalInstance
from treu_eval.protocol import ModelHandle, RunnerConfig
from treu_eval.unified import Setting

__all__ = ["default_corpus", "run_conformance"]


def default_corpus(n: int = 50, choices_per_instance: int = 3) -> list[CanonicalInstance]:
    """Small synthetic corpus whose explanations quote the gold choice."""
    instances = []
    for i in range(n):
        gold = i % choices_per_instance
        choice_texts = tuple(f"w{i}x{j}" for j in range(choices_per_instance))
        instances.append(
            CanonicalInstance(
                id=f"conformance/{i}",
                dataset="conformance",
                split="train",
                question=f"which marker belongs to row {i}?",
                choices=choice_texts,
                gold_index=gold,
                explanation=f"the marker {choice_texts[gold]} belongs to this row",
            )
        )
    return instances


def _check(failures: list[str], condition: bool, message: str) -> None:
    if not condition:
        failures.append(message)


def run_conformance(
    runner_cmd: Sequence[str],
    config: RunnerConfig,
    workdir: str | Path,
    *,
    instances: Sequence[CanonicalInstance] | None = None,
    check_determinism: bool = True,
    timeout: float | None = None,
) -> list[str]:
    """Run the conformance suite; an empty return value means pass.

    Each failed expectation contributes one human-readable string.  The
    suite stops early only if fine-tuning itself fails, since nothing
    downstream is meaningful without a model.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if instances is None:
        instances = default_corpus()
    failures: list[str] = []

    train_file = workdir / "train_infusion.jsonl"
    eval_file = workdir / "eval_infusion.jsonl"
    unified.write_rendered(unified.render_corpus(instances, Setting.INFUSION), train_file)
    unified.write_rendered(unified.render_corpus(instances, Setting.INFUSION), eval_file)

    model_dir = workdir / "model"
    try:
        handle = protocol.finetune(
            runner_cmd, train_file, config, model_dir,
            dataset="conformance", timeout=timeout,
        )
    except protocol.ProtocolError as err:
        return [f"finetune failed: {err}"]

    _check(failures, handle.finetune_setting == Setting.INFUSION.value,
           f"model metadata setting {handle.finetune_setting!r} != corpus setting")
    try:
        reloaded = ModelHandle.load(model_dir)
        reloaded.verify_against(train_file)
    except protocol.ProtocolError as err:
        _check(failures, False, f"model metadata does not round-trip: {err}")

    output_file = workdir / "preds.jsonl"
    try:
        predictions = protocol.predict(
            runner_cmd, handle, eval_file, output_file,
            train_file=train_file, timeout=timeout,
        )
    except protocol.ProtocolError as err:
        failures.append(f"predict failed: {err}")
        return failures

    expected_ids = [inst.id for inst in instances]
    _check(failures, {p.instance_id for p in predictions} == set(expected_ids),
           "predictions do not cover exactly the input ids")
    _check(failures, all(isinstance(p.generation, str) for p in predictions),
           "generations must be strings")

    if check_determinism:
        second_file = workdir / "preds_repeat.jsonl"
        try:
            protocol.predict(
                runner_cmd, handle, eval_file, second_file,
                train_file=train_file, timeout=timeout,
            )
            _check(failures, output_file.read_bytes() == second_file.read_bytes(),
                   "repeated prediction is not byte-identical")
        except protocol.ProtocolError as err:
            failures.append(f"repeated predict failed: {err}")

    garbage_file = workdir / "garbage.jsonl"
    garbage_file.write_text("this is not json\n", encoding="utf-8")
    config_path = model_dir / "config.json"
    completed = subprocess.run(
        [*runner_cmd, "predict", "--config", str(config_path), "--model", str(model_dir),
         "--input", str(garbage_file), "--output", str(workdir / "garbage_out.jsonl")],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, timeout=timeout,
    )
    if completed.returncode == 0:
        failures.append("runner must exit nonzero on malformed input")
    elif not completed.stderr.strip():
        failures.append("runner must print a diagnostic on stderr when failing")

    return failures
