"""Render canonical instances into seq2seq training and evaluation text.

Every dataset is cast as multiple-choice generation over one shared prompt
shape so that results stay comparable across corpora:

    explain: <question> choice-1: <c1> ... choice-N: <cN>

Three settings control where the explanation goes. ``baseline`` leaves it
out entirely. ``infusion`` appends it to the input after a separator token,
led by "because". ``self_rationalization`` keeps the baseline input and
asks the model to produce the answer followed by "because" and the
explanation. Rendering is pure: same instance and config, same bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from treu_eval.canonical import CanonicalInstance, DatasetKind
from treu_eval.errors import TreuEvalError

__all__ = [
    "Setting",
    "PromptConfig",
    "RenderedExample",
    "RenderError",
    "esnli_question",
    "comve_question",
    "question_for",
    "render",
    "render_corpus",
    "write_rendered",
    "read_rendered",
]


class RenderError(TreuEvalError):
    """Raised when an instance cannot be rendered under a setting."""


class Setting(str, Enum):
    """Where the explanation enters fine-tuning and inference."""

    BASELINE = "baseline"
    INFUSION = "infusion"
    SELF_RATIONALIZATION = "self_rationalization"


@dataclass(frozen=True)
class PromptConfig:
    """Text constants of the unified prompt; defaults match the shipped
    reference results and should not change between fine-tune and predict."""

    question_prefix: str = "explain:"
    choice_prefix_pattern: str = "choice-{n}:"
    sep_token: str = "<sep>"
    explanation_lead: str = "because"

    def choice_prefix(self, n: int) -> str:
        return self.choice_prefix_pattern.format(n=n)


@dataclass(frozen=True)
class RenderedExample:
    instance_id: str
    setting: Setting
    input_text: str
    target_text: str
    class_label: str | None = None


def esnli_question(premise: str, hypothesis: str) -> str:
    """Fixed relation-classification question over an NLI sentence pair."""
    return f"what is the relation between {premise.strip()} and {hypothesis.strip()}?"


def comve_question() -> str:
    """Fixed question for the commonsense-validation task."""
    return "which sentence is against commonsense?"


def question_for(instance: CanonicalInstance) -> str:
    """Question text an instance renders with.

    ECQA and CoS-E keep their original question verbatim.  NLI and
    commonsense-validation instances use fixed templates, applied at
    ingestion time; the ComVE template is re-asserted here so the prompt
    is independent of whatever the canonical file carries.
    """
    if instance.dataset == DatasetKind.COMVE.value:
        return comve_question()
    return instance.question.strip()


def _check_sep_collision(instance: CanonicalInstance, config: PromptConfig) -> None:
    fields = [("question", instance.question), ("explanation", instance.explanation)]
    fields += [(f"choice {i + 1}", choice) for i, choice in enumerate(instance.choices)]
    for name, text in fields:
        if config.sep_token in text:
            raise RenderError(
                f"instance {instance.id!r}: separator token {config.sep_token!r} "
                f"occurs in its {name}"
            )


def render(
    instance: CanonicalInstance,
    setting: Setting,
    config: PromptConfig = PromptConfig(),
) -> RenderedExample:
    """Produce the (input, target) text pair for one instance.

    Segments are joined with exactly one ASCII space and there is no
    trailing whitespace.  Content fields are trimmed but otherwise kept
    verbatim; an instance whose content contains the separator token is
    rejected rather than silently rendered ambiguous.
    """
    setting = Setting(setting)
    _check_sep_collision(instance, config)

    parts = [config.question_prefix, question_for(instance)]
    for i, choice in enumerate(instance.choices):
        parts.append(config.choice_prefix(i + 1))
        parts.append(choice.strip())
    input_text = " ".join(parts)

    explanation = instance.explanation.strip()
    gold = instance.gold_choice().strip()

    if setting is Setting.BASELINE:
        target_text = gold
    elif setting is Setting.INFUSION:
        input_text = f"{input_text} {config.sep_token} {config.explanation_lead} {explanation}"
        target_text = gold
    else:
        target_text = f"{gold} {config.explanation_lead} {explanation}"

    return RenderedExample(
        instance_id=instance.id,
        setting=setting,
        input_text=input_text,
        target_text=target_text,
        class_label=instance.class_label,
    )


def render_corpus(
    instances: Sequence[CanonicalInstance],
    setting: Setting,
    config: PromptConfig = PromptConfig(),
) -> list[RenderedExample]:
    """Render many instances, preserving order and ids one-to-one."""
    return [render(instance, setting, config) for instance in instances]


def _serialize(example: RenderedExample) -> str:
    record = {
        "instance_id": example.instance_id,
        "setting": example.setting.value,
        "input_text": example.input_text,
        "target_text": example.target_text,
        "class_label": example.class_label,
    }
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_rendered(examples: Iterable[RenderedExample], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for example in examples:
            handle.write(_serialize(example) + "\n")
            count += 1
    return count


def read_rendered(path: str | Path) -> list[RenderedExample]:
    path = Path(path)
    if not path.is_file():
        raise RenderError(f"rendered file not found: {path}")
    examples: list[RenderedExample] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            try:
                record = json.loads(line)
                examples.append(
                    RenderedExample(
                        instance_id=record["instance_id"],
                        setting=Setting(record["setting"]),
                        input_text=record["input_text"],
                        target_text=record["target_text"],
                        class_label=record.get("class_label"),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as err:
                raise RenderError(f"{path}:{lineno}: bad rendered record ({err})") from err
    return examples
