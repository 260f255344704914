"""Adapters from each corpus's published distribution to canonical records.

One adapter per dataset, all behind :func:`parse_dataset`.  Expected
layouts under the per-dataset source directory:

* CoS-E (v1.0 and v1.11): the question files ``train_rand_split.jsonl``
  and ``dev_rand_split.jsonl`` next to the explanation files
  ``cose_train*.jsonl`` and ``cose_dev*.jsonl``, joined by id.  The
  open-ended explanation is used.  These corpora ship no test split.
* ECQA: the aggregated per-split CSVs ``cqa_data_train.csv``,
  ``cqa_data_val.csv`` and ``cqa_data_test.csv`` produced by the dataset's
  generation script (columns ``q_no``, ``q_text``, ``q_op1``..``q_op5``,
  ``q_ans``, ``taskB``).  The free-flow combined explanation (``taskB``)
  is used.
* e-SNLI: ``esnli_train_*.csv`` (the train split ships in two parts),
  ``esnli_dev.csv``, ``esnli_test.csv``.  The first annotator explanation
  is used; the three relation labels become the fixed choice list and the
  question is built from premise and hypothesis.
* ComVE: subdirectories ``train/``, ``valid/``, ``test/``, each holding
  ``subtaskA_data*.csv`` (id, sent0, sent1), ``subtaskA_answers*.csv``
  (id, label of the nonsensical sentence) and ``subtaskC_answers*.csv``
  (id plus three reference reasons, of which the first non-empty one is
  used).  Answer and reason files may be headerless, as distributed.

Instances with empty explanations, duplicate ids, unresolvable answer
keys, or malformed rows are load errors carrying file and row context,
never silently dropped.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Callable, Iterator

from treu_eval.canonical import (
    CanonicalError,
    CanonicalInstance,
    DatasetKind,
    Discrepancy,
    SplitManifest,
    build_manifest,
    validate_manifest,
    write_canonical,
)
from treu_eval.errors import TreuEvalError
from treu_eval.scoring import normalize
from treu_eval.unified import comve_question, esnli_question

__all__ = ["IngestError", "parse_dataset", "ingest_dataset"]

ESNLI_LABELS = ("entailment", "neutral", "contradiction")


class IngestError(TreuEvalError):
    """Source data that cannot be turned into canonical instances."""


def _require_file(path: Path) -> Path:
    if not path.is_file():
        raise IngestError(f"missing source file: {path}")
    return path


def _single_match(source_dir: Path, pattern: str) -> Path:
    matches = sorted(source_dir.glob(pattern))
    if not matches:
        raise IngestError(f"no file matching {pattern!r} under {source_dir}")
    if len(matches) > 1:
        raise IngestError(
            f"multiple files match {pattern!r} under {source_dir}: "
            f"{[m.name for m in matches]}"
        )
    return matches[0]


def _read_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise IngestError(f"{path}:{lineno}: invalid JSON ({err})") from err
            if not isinstance(record, dict):
                raise IngestError(f"{path}:{lineno}: record is not an object")
            yield lineno, record


def _read_csv(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8-sig", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise IngestError(f"{path}: empty CSV file")
        for row_number, row in enumerate(reader, start=2):
            yield row_number, row


def _field(row: dict, name: str, where: str) -> str:
    value = row.get(name)
    if value is None:
        raise IngestError(f"{where}: missing column {name!r}")
    return value.strip()


def _validated(instance: CanonicalInstance, where: str) -> CanonicalInstance:
    try:
        instance.validate()
    except CanonicalError as err:
        raise IngestError(f"{where}: {err}") from err
    return instance


def _check_unique(seen: set[str], instance_id: str, where: str) -> None:
    if instance_id in seen:
        raise IngestError(f"{where}: duplicate id {instance_id!r}")
    seen.add(instance_id)


# --------------------------------------------------------------------------
# CoS-E


def _parse_cose(kind: DatasetKind, source_dir: Path) -> list[CanonicalInstance]:
    instances: list[CanonicalInstance] = []
    split_files = (
        ("train", "train_rand_split.jsonl", "cose_train*.jsonl"),
        ("valid", "dev_rand_split.jsonl", "cose_dev*.jsonl"),
    )
    for split, question_name, explanation_pattern in split_files:
        question_path = _require_file(source_dir / question_name)
        explanation_path = _single_match(source_dir, explanation_pattern)

        explanations: dict[str, str] = {}
        for lineno, record in _read_jsonl(explanation_path):
            where = f"{explanation_path}:{lineno}"
            try:
                instance_id = record["id"]
                explanation = record["explanation"]["open-ended"]
            except (KeyError, TypeError) as err:
                raise IngestError(f"{where}: malformed explanation record ({err})") from err
            if instance_id in explanations:
                raise IngestError(f"{where}: duplicate id {instance_id!r}")
            explanations[instance_id] = explanation.strip()

        seen: set[str] = set()
        for lineno, record in _read_jsonl(question_path):
            where = f"{question_path}:{lineno}"
            try:
                instance_id = record["id"]
                stem = record["question"]["stem"]
                raw_choices = record["question"]["choices"]
                answer_key = record["answerKey"]
            except (KeyError, TypeError) as err:
                raise IngestError(f"{where}: malformed question record ({err})") from err
            _check_unique(seen, instance_id, where)

            labels = [c.get("label", "").strip() for c in raw_choices]
            choices = tuple(c.get("text", "").strip() for c in raw_choices)
            if answer_key in labels:
                gold_index = labels.index(answer_key)
            else:
                gold_index = _match_answer(choices, answer_key, where)

            explanation = explanations.get(instance_id)
            if explanation is None:
                raise IngestError(f"{where}: no explanation for id {instance_id!r}")
            if not explanation:
                raise IngestError(f"{where}: empty explanation for id {instance_id!r}")

            instances.append(
                _validated(
                    CanonicalInstance(
                        id=instance_id,
                        dataset=kind.value,
                        split=split,
                        question=stem.strip(),
                        choices=choices,
                        gold_index=gold_index,
                        explanation=explanation,
                    ),
                    where,
                )
            )
    return instances


def _match_answer(choices: tuple[str, ...], answer: str, where: str) -> int:
    """Index of the answer among the choices, exact text first, then
    normalized; anything else is an unknown answer key."""
    if answer in choices:
        return choices.index(answer)
    wanted = normalize(answer)
    matches = [i for i, choice in enumerate(choices) if normalize(choice) == wanted]
    if len(matches) != 1:
        raise IngestError(f"{where}: answer {answer!r} not found among choices {choices}")
    return matches[0]


# --------------------------------------------------------------------------
# ECQA


def _parse_ecqa(source_dir: Path) -> list[CanonicalInstance]:
    instances: list[CanonicalInstance] = []
    split_files = (
        ("train", "cqa_data_train.csv"),
        ("valid", "cqa_data_val.csv"),
        ("test", "cqa_data_test.csv"),
    )
    option_columns = ("q_op1", "q_op2", "q_op3", "q_op4", "q_op5")
    for split, name in split_files:
        path = _require_file(source_dir / name)
        seen: set[str] = set()
        for row_number, row in _read_csv(path):
            where = f"{path}:{row_number}"
            instance_id = _field(row, "q_no", where)
            _check_unique(seen, instance_id, where)
            question = _field(row, "q_text", where)
            choices = tuple(_field(row, column, where) for column in option_columns)
            answer = _field(row, "q_ans", where)
            explanation = _field(row, "taskB", where)
            if not explanation:
                raise IngestError(f"{where}: empty explanation for id {instance_id!r}")
            instances.append(
                _validated(
                    CanonicalInstance(
                        id=instance_id,
                        dataset=DatasetKind.ECQA.value,
                        split=split,
                        question=question,
                        choices=choices,
                        gold_index=_match_answer(choices, answer, where),
                        explanation=explanation,
                    ),
                    where,
                )
            )
    return instances


# --------------------------------------------------------------------------
# e-SNLI


def _parse_esnli(source_dir: Path) -> list[CanonicalInstance]:
    instances: list[CanonicalInstance] = []
    train_parts = sorted(source_dir.glob("esnli_train_*.csv"))
    if not train_parts:
        raise IngestError(f"no file matching 'esnli_train_*.csv' under {source_dir}")
    split_files = [
        ("train", part) for part in train_parts
    ] + [
        ("valid", _require_file(source_dir / "esnli_dev.csv")),
        ("test", _require_file(source_dir / "esnli_test.csv")),
    ]
    seen_by_split: dict[str, set[str]] = {"train": set(), "valid": set(), "test": set()}
    for split, path in split_files:
        for row_number, row in _read_csv(path):
            where = f"{path}:{row_number}"
            instance_id = _field(row, "pairID", where)
            _check_unique(seen_by_split[split], instance_id, where)
            label = _field(row, "gold_label", where)
            if label not in ESNLI_LABELS:
                raise IngestError(f"{where}: unknown relation label {label!r}")
            premise = _field(row, "Sentence1", where)
            hypothesis = _field(row, "Sentence2", where)
            explanation = _field(row, "Explanation_1", where)
            if not explanation:
                raise IngestError(f"{where}: empty explanation for id {instance_id!r}")
            instances.append(
                _validated(
                    CanonicalInstance(
                        id=instance_id,
                        dataset=DatasetKind.ESNLI.value,
                        split=split,
                        question=esnli_question(premise, hypothesis),
                        choices=ESNLI_LABELS,
                        gold_index=ESNLI_LABELS.index(label),
                        explanation=explanation,
                        class_label=label,
                    ),
                    where,
                )
            )
    return instances


# --------------------------------------------------------------------------
# ComVE


def _read_comve_rows(path: Path, width: int) -> Iterator[tuple[int, list[str]]]:
    """Plain CSV rows; a leading header row (first cell "id") is skipped so
    both headered and headerless distributions work."""
    with open(path, encoding="utf-8-sig", newline="") as handle:
        reader = csv.reader(handle)
        for row_number, row in enumerate(reader, start=1):
            if not row:
                continue
            if row_number == 1 and row[0].strip().lower() == "id":
                continue
            if len(row) < width:
                raise IngestError(
                    f"{path}:{row_number}: expected at least {width} columns, got {len(row)}"
                )
            yield row_number, [cell.strip() for cell in row]


def _parse_comve(source_dir: Path) -> list[CanonicalInstance]:
    instances: list[CanonicalInstance] = []
    for split in ("train", "valid", "test"):
        split_dir = source_dir / split
        if not split_dir.is_dir():
            if split == "train":
                raise IngestError(f"missing source directory: {split_dir}")
            continue
        data_path = _single_match(split_dir, "subtaskA_data*.csv")
        answer_path = _single_match(split_dir, "subtaskA_answers*.csv")
        reason_path = _single_match(split_dir, "subtaskC_answers*.csv")

        answers: dict[str, int] = {}
        for row_number, row in _read_comve_rows(answer_path, width=2):
            where = f"{answer_path}:{row_number}"
            instance_id, label = row[0], row[1]
            if label not in ("0", "1"):
                raise IngestError(f"{where}: answer label must be 0 or 1, got {label!r}")
            if instance_id in answers:
                raise IngestError(f"{where}: duplicate id {instance_id!r}")
            answers[instance_id] = int(label)

        reasons: dict[str, str] = {}
        for row_number, row in _read_comve_rows(reason_path, width=2):
            where = f"{reason_path}:{row_number}"
            instance_id = row[0]
            if instance_id in reasons:
                raise IngestError(f"{where}: duplicate id {instance_id!r}")
            non_empty = [cell for cell in row[1:] if cell]
            if not non_empty:
                raise IngestError(f"{where}: no reference reason for id {instance_id!r}")
            reasons[instance_id] = non_empty[0]

        seen: set[str] = set()
        for row_number, row in _read_comve_rows(data_path, width=3):
            where = f"{data_path}:{row_number}"
            instance_id = row[0]
            _check_unique(seen, instance_id, where)
            if instance_id not in answers:
                raise IngestError(f"{where}: no answer label for id {instance_id!r}")
            if instance_id not in reasons:
                raise IngestError(f"{where}: no reference reason for id {instance_id!r}")
            instances.append(
                _validated(
                    CanonicalInstance(
                        id=instance_id,
                        dataset=DatasetKind.COMVE.value,
                        split=split,
                        question=comve_question(),
                        choices=(row[1], row[2]),
                        gold_index=answers[instance_id],
                        explanation=reasons[instance_id],
                    ),
                    where,
                )
            )
    return instances


# --------------------------------------------------------------------------
# entry points


_ADAPTERS: dict[DatasetKind, Callable[[Path], list[CanonicalInstance]]] = {
    DatasetKind.COSE_V1_0: lambda d: _parse_cose(DatasetKind.COSE_V1_0, d),
    DatasetKind.COSE_V1_11: lambda d: _parse_cose(DatasetKind.COSE_V1_11, d),
    DatasetKind.ECQA: _parse_ecqa,
    DatasetKind.ESNLI: _parse_esnli,
    DatasetKind.COMVE: _parse_comve,
}


def parse_dataset(
    kind: DatasetKind | str, source_dir: str | Path
) -> tuple[list[CanonicalInstance], SplitManifest]:
    """Parse one corpus from its source directory.

    Returns the instances (train, then valid, then test, in file order)
    and the split manifest computed from them.
    """
    try:
        kind = DatasetKind(str(getattr(kind, "value", kind)))
    except ValueError:
        raise IngestError(
            f"unknown dataset kind {kind!r}; expected one of "
            f"{[k.value for k in DatasetKind]}"
        ) from None
    source_dir = Path(source_dir)
    if not source_dir.is_dir():
        raise IngestError(f"source directory not found: {source_dir}")
    instances = _ADAPTERS[kind](source_dir)
    if not instances:
        raise IngestError(f"{source_dir}: no instances parsed")
    return instances, build_manifest(kind, instances)


def ingest_dataset(
    kind: DatasetKind | str,
    source_dir: str | Path,
    out_dir: str | Path,
) -> tuple[SplitManifest, list[Discrepancy]]:
    """Parse a corpus and write canonical split files plus the manifest.

    Output layout: ``<out_dir>/<dataset>/{train,valid,test}.jsonl`` (absent
    splits are not written) and ``<out_dir>/<dataset>/manifest.json``.
    Returns the manifest and any discrepancies against the published
    statistics; discrepancies are the caller's to report, not errors.
    """
    instances, manifest = parse_dataset(kind, source_dir)
    dataset_dir = Path(out_dir) / manifest.dataset
    dataset_dir.mkdir(parents=True, exist_ok=True)
    for split in ("train", "valid", "test"):
        split_instances = [inst for inst in instances if inst.split == split]
        if split_instances:
            write_canonical(split_instances, dataset_dir / f"{split}.jsonl")
    (dataset_dir / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest, validate_manifest(manifest)
