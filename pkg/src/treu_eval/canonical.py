"""Canonical instance schema shared by every dataset.

All five supported corpora are flattened into one record shape: a question,
its answer choices, the gold choice index, and a human-written explanation.
Files are UTF-8 JSONL with a fixed field order so identical data serializes
to identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from treu_eval.errors import TreuEvalError
from treu_eval.scoring import normalize

__all__ = [
    "DatasetKind",
    "CanonicalInstance",
    "SplitManifest",
    "Discrepancy",
    "CanonicalError",
    "SCHEMA_VERSION",
    "SPLITS",
    "EXPECTED_STATS",
    "display_name",
    "choice_count",
    "write_canonical",
    "read_canonical",
    "build_manifest",
    "validate_manifest",
]

SCHEMA_VERSION = 1
SPLITS = ("train", "valid", "test")

_FIELD_ORDER = (
    "id",
    "dataset",
    "split",
    "question",
    "choices",
    "gold_index",
    "explanation",
    "class_label",
)


class CanonicalError(TreuEvalError):
    """Malformed canonical data: bad file, bad record, broken invariant."""


class DatasetKind(str, Enum):
    """The five supported source corpora."""

    COSE_V1_0 = "cose_v1.0"
    COSE_V1_11 = "cose_v1.11"
    ECQA = "ecqa"
    ESNLI = "esnli"
    COMVE = "comve"


_DISPLAY_NAMES = {
    DatasetKind.COSE_V1_0: "CoS-E v1.0",
    DatasetKind.COSE_V1_11: "CoS-E v1.11",
    DatasetKind.ECQA: "ECQA",
    DatasetKind.ESNLI: "e-SNLI",
    DatasetKind.COMVE: "ComVE",
}

# Answer-choice cardinality is a fixed property of each corpus.
_CHOICE_COUNTS = {
    DatasetKind.COSE_V1_0: 3,
    DatasetKind.COSE_V1_11: 5,
    DatasetKind.ECQA: 5,
    DatasetKind.ESNLI: 3,
    DatasetKind.COMVE: 2,
}


def display_name(dataset: str | DatasetKind) -> str:
    try:
        return _DISPLAY_NAMES[DatasetKind(str(getattr(dataset, "value", dataset)))]
    except ValueError:
        return str(dataset)


def choice_count(kind: DatasetKind) -> int:
    return _CHOICE_COUNTS[kind]


@dataclass(frozen=True)
class CanonicalInstance:
    """One question with its choices, gold answer, and explanation.

    ``dataset`` is normally one of the :class:`DatasetKind` values, but any
    label is accepted so synthetic corpora can flow through the same files;
    kind-specific invariants only apply to the known corpora.
    ``class_label`` is populated for classification-style data (the NLI
    relation) and None elsewhere.
    """

    id: str
    dataset: str
    split: str
    question: str
    choices: tuple[str, ...]
    gold_index: int
    explanation: str
    class_label: str | None = None

    def validate(self) -> None:
        if not self.id:
            raise CanonicalError("instance id must be non-empty")
        if self.split not in SPLITS:
            raise CanonicalError(f"instance {self.id!r}: unknown split {self.split!r}")
        if len(self.choices) < 2:
            raise CanonicalError(f"instance {self.id!r}: needs at least two choices")
        if not 0 <= self.gold_index < len(self.choices):
            raise CanonicalError(
                f"instance {self.id!r}: gold_index {self.gold_index} out of range "
                f"for {len(self.choices)} choices"
            )
        if not self.explanation.strip():
            raise CanonicalError(f"instance {self.id!r}: explanation is empty")
        seen = set()
        for choice in self.choices:
            key = normalize(choice)
            if key in seen:
                raise CanonicalError(
                    f"instance {self.id!r}: choices not distinct after normalization "
                    f"({choice!r})"
                )
            seen.add(key)
        try:
            kind = DatasetKind(self.dataset)
        except ValueError:
            return
        expected = _CHOICE_COUNTS[kind]
        if len(self.choices) != expected:
            raise CanonicalError(
                f"instance {self.id!r}: {display_name(kind)} instances have "
                f"{expected} choices, got {len(self.choices)}"
            )

    def gold_choice(self) -> str:
        return self.choices[self.gold_index]


def _serialize(instance: CanonicalInstance) -> str:
    record = {
        "id": instance.id,
        "dataset": instance.dataset,
        "split": instance.split,
        "question": instance.question,
        "choices": list(instance.choices),
        "gold_index": instance.gold_index,
        "explanation": instance.explanation,
        "class_label": instance.class_label,
        "schema_version": SCHEMA_VERSION,
    }
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_canonical(instances: Iterable[CanonicalInstance], path: str | Path) -> int:
    """Write instances as JSONL, validating each. Returns the line count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for instance in instances:
            instance.validate()
            handle.write(_serialize(instance) + "\n")
            count += 1
    return count


def read_canonical(path: str | Path) -> list[CanonicalInstance]:
    """Read and validate a canonical JSONL file.

    Rejects unknown schema versions, records with missing or extra fields,
    and any instance that breaks a schema invariant; error messages carry
    the line number and instance id.
    """
    path = Path(path)
    if not path.is_file():
        raise CanonicalError(f"canonical file not found: {path}")
    instances: list[CanonicalInstance] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                raise CanonicalError(f"{path}:{lineno}: blank line in canonical file")
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CanonicalError(f"{path}:{lineno}: invalid JSON ({err})") from err
            if not isinstance(record, dict):
                raise CanonicalError(f"{path}:{lineno}: record is not an object")
            version = record.get("schema_version")
            if version != SCHEMA_VERSION:
                raise CanonicalError(
                    f"{path}:{lineno}: unsupported schema_version {version!r}"
                )
            fields = set(record) - {"schema_version"}
            missing = set(_FIELD_ORDER) - fields
            extra = fields - set(_FIELD_ORDER)
            if missing or extra:
                raise CanonicalError(
                    f"{path}:{lineno}: bad fields (missing {sorted(missing)}, "
                    f"extra {sorted(extra)})"
                )
            instance = CanonicalInstance(
                id=record["id"],
                dataset=record["dataset"],
                split=record["split"],
                question=record["question"],
                choices=tuple(record["choices"]),
                gold_index=record["gold_index"],
                explanation=record["explanation"],
                class_label=record["class_label"],
            )
            try:
                instance.validate()
            except CanonicalError as err:
                raise CanonicalError(f"{path}:{lineno}: {err}") from err
            instances.append(instance)
    return instances


@dataclass(frozen=True)
class SplitManifest:
    """Per-split instance counts plus corpus-level explanation length.

    Splits a corpus does not ship (CoS-E has no test split) are simply
    absent from ``counts``; they are never recorded as zero.
    ``mean_explanation_tokens`` uses whitespace tokenization over all
    parsed instances.
    """

    dataset: str
    counts: dict[str, int]
    mean_explanation_tokens: float

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "counts": {split: self.counts[split] for split in SPLITS if split in self.counts},
            "mean_explanation_tokens": self.mean_explanation_tokens,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n"

    @classmethod
    def from_dict(cls, record: dict) -> "SplitManifest":
        return cls(
            dataset=record["dataset"],
            counts=dict(record["counts"]),
            mean_explanation_tokens=record["mean_explanation_tokens"],
        )


def build_manifest(dataset: str | DatasetKind, instances: Sequence[CanonicalInstance]) -> SplitManifest:
    if not instances:
        raise CanonicalError("cannot build a manifest from zero instances")
    counts: dict[str, int] = {}
    token_total = 0
    for inst in instances:
        counts[inst.split] = counts.get(inst.split, 0) + 1
        token_total += len(inst.explanation.split())
    return SplitManifest(
        dataset=str(getattr(dataset, "value", dataset)),
        counts=counts,
        mean_explanation_tokens=token_total / len(instances),
    )


# Published corpus statistics used to validate ingested data: per-split
# instance counts and mean explanation length in whitespace tokens.
EXPECTED_STATS: dict[DatasetKind, SplitManifest] = {
    DatasetKind.COSE_V1_0: SplitManifest(
        dataset=DatasetKind.COSE_V1_0.value,
        counts={"train": 7610, "valid": 950},
        mean_explanation_tokens=16.148,
    ),
    DatasetKind.COSE_V1_11: SplitManifest(
        dataset=DatasetKind.COSE_V1_11.value,
        counts={"train": 9741, "valid": 1221},
        mean_explanation_tokens=8.996,
    ),
    DatasetKind.ECQA: SplitManifest(
        dataset=DatasetKind.ECQA.value,
        counts={"train": 7598, "valid": 1098, "test": 2194},
        mean_explanation_tokens=63.572,
    ),
    DatasetKind.ESNLI: SplitManifest(
        dataset=DatasetKind.ESNLI.value,
        counts={"train": 549367, "valid": 9842, "test": 9824},
        mean_explanation_tokens=15.977,
    ),
    DatasetKind.COMVE: SplitManifest(
        dataset=DatasetKind.COMVE.value,
        counts={"train": 10000, "valid": 1000, "test": 1000},
        mean_explanation_tokens=10.288,
    ),
}

MEAN_TOKENS_TOLERANCE = 1.0


@dataclass(frozen=True)
class Discrepancy:
    """One mismatch between an observed manifest and the expected one."""

    field: str
    expected: object
    actual: object

    def __str__(self) -> str:
        return f"{self.field}: expected {self.expected!r}, got {self.actual!r}"


def validate_manifest(
    manifest: SplitManifest,
    expected: SplitManifest | None = None,
) -> list[Discrepancy]:
    """Compare a manifest against the published statistics.

    Discrepancies are data to report, not errors: local copies of a corpus
    legitimately drift from the published numbers.  Counts must match
    exactly (including which splits exist at all); mean explanation length
    is compared with an absolute tolerance of 1.0 tokens.
    """
    if expected is None:
        try:
            expected = EXPECTED_STATS[DatasetKind(manifest.dataset)]
        except (ValueError, KeyError):
            raise CanonicalError(
                f"no expected statistics for dataset {manifest.dataset!r}"
            ) from None

    issues: list[Discrepancy] = []
    for split in SPLITS:
        want = expected.counts.get(split)
        have = manifest.counts.get(split)
        if want is None and have is None:
            continue
        if want is None:
            issues.append(Discrepancy(f"{split}_split", "absent", have))
        elif have is None:
            issues.append(Discrepancy(f"{split}_count", want, "absent"))
        elif want != have:
            issues.append(Discrepancy(f"{split}_count", want, have))
    delta = abs(manifest.mean_explanation_tokens - expected.mean_explanation_tokens)
    if delta > MEAN_TOKENS_TOLERANCE:
        issues.append(
            Discrepancy(
                "mean_explanation_tokens",
                expected.mean_explanation_tokens,
                manifest.mean_explanation_tokens,
            )
        )
    return issues
