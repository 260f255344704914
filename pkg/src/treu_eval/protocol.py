"""File-and-subprocess contract between experiments and model runners.

A runner is any executable honoring two invocations:

    <cmd> finetune --config <file> --train <file> --out <dir>
    <cmd> predict  --config <file> --model <dir> --input <file> --output <file>

Train/eval files are rendered corpora (see ``treu_eval.unified``); the
prediction file is JSONL ``{"instance_id": ..., "generation": ...}``.
Exit code zero means success, anything else failure with diagnostics on
stderr.  This module drives the child processes, writes run metadata next
to the model artifacts, and validates that predictions are total over the
input ids.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from treu_eval.errors import TreuEvalError

__all__ = [
    "ProtocolError",
    "RunnerFailure",
    "RunnerConfig",
    "ModelHandle",
    "Prediction",
    "PRESETS",
    "preset",
    "content_hash",
    "finetune",
    "predict",
    "write_predictions",
    "read_predictions",
]

METADATA_FILENAME = "run_metadata.json"


class ProtocolError(TreuEvalError):
    """Contract violation on our side of the fence: bad config, bad
    prediction file, metadata mismatch."""


class RunnerFailure(ProtocolError):
    """The runner subprocess exited nonzero or never produced its output."""


@dataclass(frozen=True)
class RunnerConfig:
    """Hyperparameters shipped to the runner as a JSON object.

    ``decode`` selects the generation strategy and defaults to greedy;
    runners may honor additional keys passed through ``extras`` (they are
    serialized flat, alongside the core fields).
    """

    max_len: int = 512
    target_max_len: int = 64
    train_batch_size: int = 1
    learning_rate: float = 5e-5
    num_train_epochs: int = 12
    seed: int = 42
    model_name: str = "t5-base"
    sep_token: str = "<sep>"
    decode: str = "greedy"
    extras: dict = field(default_factory=dict)

    _CORE_FIELDS = (
        "max_len",
        "target_max_len",
        "train_batch_size",
        "learning_rate",
        "num_train_epochs",
        "seed",
        "model_name",
        "sep_token",
        "decode",
    )

    def to_dict(self) -> dict:
        record = {name: getattr(self, name) for name in self._CORE_FIELDS}
        overlap = set(self.extras) & set(record)
        if overlap:
            raise ProtocolError(f"extras shadow core config fields: {sorted(overlap)}")
        record.update(self.extras)
        return record

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, record: Mapping) -> "RunnerConfig":
        core = {name: record[name] for name in cls._CORE_FIELDS if name in record}
        extras = {key: value for key, value in record.items() if key not in cls._CORE_FIELDS}
        return cls(**core, extras=extras)

    @classmethod
    def load(cls, path: str | Path) -> "RunnerConfig":
        with open(path, encoding="utf-8") as handle:
            record = json.load(handle)
        if not isinstance(record, dict):
            raise ProtocolError(f"config file {path} is not a JSON object")
        return cls.from_dict(record)

    def dump(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json(), encoding="utf-8")


def _named_preset_fields(
    max_len: int, target_max_len: int, batch: int, lr: float, epochs: int
) -> dict:
    return {
        "max_len": max_len,
        "target_max_len": target_max_len,
        "train_batch_size": batch,
        "learning_rate": lr,
        "num_train_epochs": epochs,
    }


# Hyperparameter bundles behind the shipped reference results.  The NLI
# corpus is two orders of magnitude larger than the others, hence its own
# preset with two epochs; the sweep preset trades target length and epochs
# for throughput across its sixty fine-tuning runs per dataset.
PRESETS: dict[str, dict] = {
    "eval_default": _named_preset_fields(512, 64, 1, 5e-5, 12),
    "esnli_eval": _named_preset_fields(512, 64, 1, 5e-5, 2),
    "sweep_pe2": _named_preset_fields(512, 16, 1, 1e-4, 6),
}


def preset(name: str, **overrides) -> RunnerConfig:
    """Build a RunnerConfig from a named preset, with field overrides."""
    try:
        fields = dict(PRESETS[name])
    except KeyError:
        raise ProtocolError(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}"
        ) from None
    fields.update(overrides)
    return RunnerConfig(**fields)


def content_hash(path: str | Path) -> str:
    """Hex SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class ModelHandle:
    """A fine-tuned model directory plus the metadata describing the run."""

    directory: Path
    finetune_setting: str
    dataset: str
    config: RunnerConfig
    content_hash: str

    def metadata_path(self) -> Path:
        return self.directory / METADATA_FILENAME

    def save_metadata(self) -> None:
        record = {
            "finetune_setting": self.finetune_setting,
            "dataset": self.dataset,
            "config": self.config.to_dict(),
            "content_hash": self.content_hash,
        }
        text = json.dumps(record, ensure_ascii=False, indent=2, sort_keys=True) + "\n"
        try:
            self.metadata_path().write_text(text, encoding="utf-8")
        except OSError as err:
            raise ProtocolError(f"could not write run metadata: {err}") from err

    @classmethod
    def load(cls, directory: str | Path) -> "ModelHandle":
        directory = Path(directory)
        path = directory / METADATA_FILENAME
        if not path.is_file():
            raise ProtocolError(f"model directory {directory} has no {METADATA_FILENAME}")
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
            return cls(
                directory=directory,
                finetune_setting=record["finetune_setting"],
                dataset=record["dataset"],
                config=RunnerConfig.from_dict(record["config"]),
                content_hash=record["content_hash"],
            )
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise ProtocolError(f"unparseable run metadata in {directory}: {err}") from err

    def verify_against(self, train_file: str | Path) -> None:
        actual = content_hash(train_file)
        if actual != self.content_hash:
            raise ProtocolError(
                f"model in {self.directory} was fine-tuned on different data: "
                f"metadata hash {self.content_hash[:12]}…, file hash {actual[:12]}…"
            )


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    generation: str


def write_predictions(predictions: Iterable[Prediction], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for pred in predictions:
            record = {"instance_id": pred.instance_id, "generation": pred.generation}
            handle.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
            count += 1
    return count


def read_predictions(path: str | Path, expected_ids: Sequence[str] | None = None) -> list[Prediction]:
    """Parse a prediction file, optionally checking totality.

    With ``expected_ids`` given, the file must contain exactly one
    prediction per id: duplicates, unknown ids, and missing ids are all
    errors naming the offender.
    """
    path = Path(path)
    if not path.is_file():
        raise ProtocolError(f"prediction file not found: {path}")
    predictions: list[Prediction] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            try:
                record = json.loads(line)
                instance_id = record["instance_id"]
                generation = record["generation"]
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise ProtocolError(f"{path}:{lineno}: bad prediction line ({err})") from err
            if not isinstance(instance_id, str) or not isinstance(generation, str):
                raise ProtocolError(f"{path}:{lineno}: instance_id and generation must be strings")
            if instance_id in seen:
                raise ProtocolError(f"{path}:{lineno}: duplicate prediction for {instance_id!r}")
            seen.add(instance_id)
            predictions.append(Prediction(instance_id=instance_id, generation=generation))

    if expected_ids is not None:
        expected = set(expected_ids)
        missing = sorted(expected - seen)
        extra = sorted(seen - expected)
        if missing:
            raise ProtocolError(
                f"{path}: missing prediction for {len(missing)} id(s), first: {missing[0]!r}"
            )
        if extra:
            raise ProtocolError(f"{path}: prediction for unexpected id {extra[0]!r}")
    return predictions


def _run(argv: list[str], timeout: float | None) -> None:
    try:
        completed = subprocess.run(
            argv,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            timeout=timeout,
            text=True,
        )
    except FileNotFoundError as err:
        raise RunnerFailure(f"runner executable not found: {argv[0]!r}") from err
    except subprocess.TimeoutExpired as err:
        raise RunnerFailure(f"runner timed out after {timeout}s: {' '.join(argv)}") from err
    if completed.returncode != 0:
        stderr = completed.stderr.strip()
        raise RunnerFailure(
            f"runner exited {completed.returncode}: {' '.join(argv)}\n{stderr}"
        )


def _read_corpus_settings(train_file: Path) -> str:
    """Single setting used by a rendered file; mixed settings are a bug."""
    settings: set[str] = set()
    with open(train_file, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            try:
                settings.add(json.loads(line)["setting"])
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise ProtocolError(f"{train_file}:{lineno}: bad rendered line ({err})") from err
    if not settings:
        raise ProtocolError(f"{train_file}: empty training file")
    if len(settings) > 1:
        raise ProtocolError(f"{train_file}: mixed settings {sorted(settings)}")
    return settings.pop()


def finetune(
    runner_cmd: Sequence[str],
    train_file: str | Path,
    config: RunnerConfig,
    out_dir: str | Path,
    *,
    dataset: str = "unspecified",
    timeout: float | None = None,
) -> ModelHandle:
    """Fine-tune a model on a rendered corpus via the runner subprocess.

    On success the model directory holds whatever artifacts the runner
    wrote plus our metadata record binding it to the exact training bytes.
    """
    train_file = Path(train_file)
    out_dir = Path(out_dir)
    if not train_file.is_file():
        raise ProtocolError(f"training file not found: {train_file}")
    setting = _read_corpus_settings(train_file)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_path = out_dir / "config.json"
    config.dump(config_path)

    argv = [*runner_cmd, "finetune", "--config", str(config_path),
            "--train", str(train_file), "--out", str(out_dir)]
    _run(argv, timeout)

    handle = ModelHandle(
        directory=out_dir,
        finetune_setting=setting,
        dataset=str(getattr(dataset, "value", dataset)),
        config=config,
        content_hash=content_hash(train_file),
    )
    handle.save_metadata()
    return handle


def predict(
    runner_cmd: Sequence[str],
    model: ModelHandle,
    eval_file: str | Path,
    output_file: str | Path,
    *,
    train_file: str | Path | None = None,
    timeout: float | None = None,
) -> list[Prediction]:
    """Generate predictions for a rendered corpus with a fine-tuned model.

    When the training file is still around, its hash is checked against
    the model metadata first, so stale or swapped model directories fail
    loudly instead of producing silently wrong numbers.
    """
    eval_file = Path(eval_file)
    output_file = Path(output_file)
    if not eval_file.is_file():
        raise ProtocolError(f"evaluation file not found: {eval_file}")
    if not model.metadata_path().is_file():
        raise ProtocolError(f"model directory {model.directory} has no metadata; not fine-tuned?")
    if train_file is not None:
        model.verify_against(train_file)

    expected_ids = []
    with open(eval_file, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            try:
                expected_ids.append(json.loads(line)["instance_id"])
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise ProtocolError(f"{eval_file}:{lineno}: bad rendered line ({err})") from err
    if not expected_ids:
        raise ProtocolError(f"{eval_file}: empty evaluation file")

    output_file.parent.mkdir(parents=True, exist_ok=True)
    config_path = model.directory / "config.json"
    if not config_path.is_file():
        config_path = output_file.parent / "predict_config.json"
        model.config.dump(config_path)

    argv = [*runner_cmd, "predict", "--config", str(config_path),
            "--model", str(model.directory), "--input", str(eval_file),
            "--output", str(output_file)]
    _run(argv, timeout)

    if not output_file.is_file():
        raise RunnerFailure(f"runner exited 0 but wrote no output file {output_file}")
    return read_predictions(output_file, expected_ids=expected_ids)
