"""Match generated text against answer choices and compute accuracy.

Generations are free text, so scoring goes through a small normalization
step and an optional containment fallback instead of raw string equality.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from treu_eval.errors import TreuEvalError

if TYPE_CHECKING:
    from treu_eval.canonical import CanonicalInstance
    from treu_eval.protocol import Prediction

__all__ = [
    "ScoringError",
    "AccuracyReport",
    "ClassBreakdown",
    "normalize",
    "match_choice",
    "accuracy",
]

ANSWER_LEAD = "because"


class ScoringError(TreuEvalError):
    """Raised when predictions and instances cannot be joined or scored."""


def _setting_value(setting: object) -> str:
    """Accept a Setting enum member or its plain string value."""
    return str(getattr(setting, "value", setting))


def normalize(text: str) -> str:
    """Canonical comparison form: casefold to lowercase, collapse whitespace
    runs to single spaces, drop surrounding whitespace and any trailing
    period/space run.  Idempotent by construction.
    """
    collapsed = " ".join(text.lower().split())
    return collapsed.rstrip(" .")


def match_choice(
    generation: str,
    instance: "CanonicalInstance",
    setting: str,
    *,
    strict: bool = False,
    lead: str = ANSWER_LEAD,
) -> int | None:
    """Return the index of the choice the generation names, or None.

    Under self-rationalization the model is trained to produce
    ``<answer> <lead> <explanation>``, so only the text before the first
    ``" <lead> "`` is matched.  Matching tries exact normalized equality
    first; unless ``strict`` is set, it falls back to the single choice
    whose normalized text occurs inside the normalized generation.
    Ambiguous containment (two or more choices present) matches nothing.
    """
    candidate = generation
    if _setting_value(setting) == "self_rationalization":
        candidate = generation.split(f" {lead} ", 1)[0]

    normalized = normalize(candidate)
    choices = [normalize(c) for c in instance.choices]

    for i, choice in enumerate(choices):
        if normalized == choice:
            return i

    if strict:
        return None

    contained = [i for i, choice in enumerate(choices) if choice and choice in normalized]
    if len(contained) == 1:
        return contained[0]
    return None


@dataclass(frozen=True)
class ClassBreakdown:
    """Per-class instance and correct counts; accuracy is their ratio."""

    n: int
    n_correct: int

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n


@dataclass(frozen=True)
class AccuracyReport:
    """Accuracy of one (fine-tune setting, predict setting) evaluation run."""

    dataset: str
    finetune_setting: str
    predict_setting: str
    n: int
    n_correct: int
    per_class: dict[str, ClassBreakdown] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n

    def to_dict(self) -> dict:
        record: dict = {
            "dataset": self.dataset,
            "finetune_setting": self.finetune_setting,
            "predict_setting": self.predict_setting,
            "n": self.n,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
        }
        if self.per_class:
            record["per_class"] = {
                label: {"n": b.n, "n_correct": b.n_correct, "accuracy": b.accuracy}
                for label, b in sorted(self.per_class.items())
            }
        return record

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n"

    def to_csv_row(self) -> str:
        """One headerless CSV line for concatenation into summary tables."""
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(
            [
                self.dataset,
                self.finetune_setting,
                self.predict_setting,
                self.n,
                self.n_correct,
                repr(self.accuracy),
            ]
        )
        return buf.getvalue()

    @classmethod
    def from_dict(cls, record: Mapping) -> "AccuracyReport":
        per_class = {
            label: ClassBreakdown(n=entry["n"], n_correct=entry["n_correct"])
            for label, entry in record.get("per_class", {}).items()
        }
        return cls(
            dataset=record["dataset"],
            finetune_setting=record["finetune_setting"],
            predict_setting=record["predict_setting"],
            n=record["n"],
            n_correct=record["n_correct"],
            per_class=per_class,
        )


def accuracy(
    predictions: Iterable["Prediction"],
    instances: Sequence["CanonicalInstance"],
    finetune_setting: str,
    predict_setting: str,
    *,
    strict: bool = False,
    lead: str = ANSWER_LEAD,
) -> AccuracyReport:
    """Join predictions to instances by id and score them.

    Every instance must have exactly one prediction and vice versa;
    anything unmatched on either side is an error, not a dropped row.
    Unmatched generations count as incorrect.  Instances carrying a
    class label contribute to the per-class breakdown.
    """
    instance_by_id = {inst.id: inst for inst in instances}
    if not instance_by_id:
        raise ScoringError("cannot score an empty instance set")
    if len(instance_by_id) != len(instances):
        raise ScoringError("instance ids are not unique")

    generation_by_id: dict[str, str] = {}
    for pred in predictions:
        if pred.instance_id in generation_by_id:
            raise ScoringError(f"duplicate prediction for instance {pred.instance_id!r}")
        generation_by_id[pred.instance_id] = pred.generation

    missing = sorted(set(instance_by_id) - set(generation_by_id))
    extra = sorted(set(generation_by_id) - set(instance_by_id))
    if missing:
        raise ScoringError(f"no prediction for {len(missing)} instance(s), first: {missing[0]!r}")
    if extra:
        raise ScoringError(f"prediction for unknown instance {extra[0]!r}")

    n_correct = 0
    class_n: dict[str, int] = {}
    class_correct: dict[str, int] = {}
    dataset = instances[0].dataset
    for inst in instances:
        picked = match_choice(
            generation_by_id[inst.id], inst, predict_setting, strict=strict, lead=lead
        )
        correct = picked == inst.gold_index
        if correct:
            n_correct += 1
        if inst.class_label is not None:
            class_n[inst.class_label] = class_n.get(inst.class_label, 0) + 1
            class_correct[inst.class_label] = class_correct.get(inst.class_label, 0) + int(correct)

    per_class = {
        label: ClassBreakdown(n=class_n[label], n_correct=class_correct[label])
        for label in class_n
    }
    return AccuracyReport(
        dataset=str(getattr(dataset, "value", dataset)),
        finetune_setting=_setting_value(finetune_setting),
        predict_setting=_setting_value(predict_setting),
        n=len(instances),
        n_correct=n_correct,
        per_class=per_class,
    )
