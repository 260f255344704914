"""Shared fixtures: instance builders, synthetic corpora, runner commands."""

from __future__ import annotations

import json
import stat
import sys
from pathlib import Path

import pytest

from treu_eval.canonical import CanonicalInstance, write_canonical

GOLDEN_DIR = Path(__file__).parent / "golden"

# Reference results shipped with the package (see README): per model family
# and dataset, the measured accuracies with the scores they imply.
# Column order: acc_BB, acc_BI, simulatability, acc_II, treu.
REFERENCE_SCORES: dict[str, dict[str, tuple[float, float, float, float, float]]] = {
    "t5-base": {
        "ECQA": (0.572, 0.746, 0.174, 0.989, 0.591),
        "CoS-E v1.11": (0.608, 0.610, 0.002, 0.803, 0.197),
        "CoS-E v1.0": (0.695, 0.645, -0.05, 0.878, 0.133),
        "e-SNLI": (0.907, 0.676, -0.231, 0.981, -0.157),
        "ComVE": (0.88, 0.527, -0.353, 0.949, -0.284),
    },
    "bart-base": {
        "ECQA": (0.428, 0.438, 0.010, 0.901, 0.483),
        "CoS-E v1.11": (0.443, 0.449, 0.006, 0.700, 0.263),
        "CoS-E v1.0": (0.512, 0.486, -0.026, 0.790, 0.252),
        "e-SNLI": (0.888, 0.658, -0.23, 0.978, -0.14),
        "ComVE": (0.812, 0.596, -0.216, 0.864, -0.164),
    },
}


def make_instance(**overrides) -> CanonicalInstance:
    """A valid three-choice instance; override any field."""
    fields = dict(
        id="unit/1",
        dataset="unit-test",
        split="train",
        question="which word is the marker?",
        choices=("alpha", "bravo", "charlie"),
        gold_index=0,
        explanation="the marker is alpha in this round",
    )
    fields.update(overrides)
    fields["choices"] = tuple(fields["choices"])
    return CanonicalInstance(**fields)


def make_corpus(
    n: int,
    split: str = "train",
    *,
    dataset: str = "unit-test",
    k: int = 4,
    quote_gold: bool = True,
) -> list[CanonicalInstance]:
    """Synthetic corpus with cycling gold indices and disjoint choice tokens.

    With ``quote_gold`` the explanation contains the gold choice token
    verbatim and no other choice token, so an explanation-reliant model
    answers perfectly while token overlap with wrong choices stays zero.
    """
    instances = []
    for i in range(n):
        gold = i % k
        choices = tuple(f"w{i}x{j}" for j in range(k))
        if quote_gold:
            explanation = f"the marker {choices[gold]} fits row {i}"
        else:
            explanation = f"row {i} follows the usual pattern"
        instances.append(
            CanonicalInstance(
                id=f"{dataset}/{split}/{i}",
                dataset=dataset,
                split=split,
                question=f"which marker belongs to row {i}?",
                choices=choices,
                gold_index=gold,
                explanation=explanation,
            )
        )
    return instances


def write_splits(
    root: Path,
    train: list[CanonicalInstance],
    evaluation: list[CanonicalInstance],
    eval_split: str = "valid",
) -> Path:
    """Write a canonical dataset directory and return it."""
    root.mkdir(parents=True, exist_ok=True)
    write_canonical(train, root / "train.jsonl")
    write_canonical(evaluation, root / f"{eval_split}.jsonl")
    return root


@pytest.fixture()
def toy_cmd() -> list[str]:
    return [sys.executable, "-m", "treu_eval.toy_runner"]


@pytest.fixture()
def golden_instances() -> list[CanonicalInstance]:
    records = json.loads((GOLDEN_DIR / "instances.json").read_text(encoding="utf-8"))
    return [
        CanonicalInstance(
            id=r["id"],
            dataset=r["dataset"],
            split=r["split"],
            question=r["question"],
            choices=tuple(r["choices"]),
            gold_index=r["gold_index"],
            explanation=r["explanation"],
            class_label=r["class_label"],
        )
        for r in records
    ]


@pytest.fixture()
def golden_prompts() -> list[dict]:
    path = GOLDEN_DIR / "prompts.jsonl"
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


@pytest.fixture()
def spy_runner(tmp_path) -> tuple[list[str], Path]:
    """A runner that logs every invocation, then delegates to the toy runner.

    Returns the command and the log file; one log line per subprocess call.
    """
    log_path = tmp_path / "spy_invocations.log"
    script = tmp_path / "spy_runner.py"
    script.write_text(
        f"""\
import sys
with open({str(log_path)!r}, "a", encoding="utf-8") as handle:
    handle.write(" ".join(sys.argv[1:2]) + "\\n")
from treu_eval.toy_runner import main
sys.exit(main(sys.argv[1:]))
""",
        encoding="utf-8",
    )
    return [sys.executable, str(script)], log_path


def spy_calls(log_path: Path) -> list[str]:
    if not log_path.is_file():
        return []
    return log_path.read_text(encoding="utf-8").splitlines()


def make_runner_script(tmp_path: Path, name: str, body: str) -> list[str]:
    """Write a standalone runner script for protocol failure-mode tests.

    ``body`` is Python source receiving ``args`` (parsed argparse namespace
    with the protocol's flags) and must do the runner's work itself.
    """
    script = tmp_path / f"{name}.py"
    script.write_text(
        """\
import argparse, json, sys
parser = argparse.ArgumentParser()
sub = parser.add_subparsers(dest="command", required=True)
ft = sub.add_parser("finetune")
ft.add_argument("--config", required=True)
ft.add_argument("--train", required=True)
ft.add_argument("--out", required=True)
pr = sub.add_parser("predict")
pr.add_argument("--config", required=True)
pr.add_argument("--model", required=True)
pr.add_argument("--input", required=True)
pr.add_argument("--output", required=True)
args = parser.parse_args()
"""
        + body,
        encoding="utf-8",
    )
    script.chmod(script.stat().st_mode | stat.S_IXUSR)
    return [sys.executable, str(script)]
