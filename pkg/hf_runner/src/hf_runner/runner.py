"""Fine-tune and decode seq2seq transformers behind the runner contract.

The contract is file-based: a flat JSON config, JSONL example files with
``instance_id``/``input_text``/``target_text`` fields, and a JSONL
prediction file with one ``{"instance_id", "generation"}`` object per
input line.
This module never imports the orchestrator; the files are the interface.

Separator handling depends on the tokenizer. A model family whose
pre-training defines a start token (BART's ``<s>``) reuses that token in
place of the configured separator; a family without one (T5) gets the
separator added to the vocabulary with resized embeddings. The model and
tokenizer are saved to a ``checkpoint/`` subdirectory so the orchestrator's
own ``config.json`` in the model directory is left untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import torch
import transformers
from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

__all__ = [
    "RunnerError",
    "RunnerSettings",
    "Example",
    "read_examples",
    "prepare_separator",
    "finetune",
    "predict",
    "CHECKPOINT_DIRNAME",
    "TRAINING_LOG_FILENAME",
]

CHECKPOINT_DIRNAME = "checkpoint"
TRAINING_LOG_FILENAME = "training_log.json"

PREDICT_BATCH_SIZE = 8


class RunnerError(Exception):
    """Anything the runner can diagnose: bad config, bad example files,
    a model directory that was never fine-tuned."""


@dataclass(frozen=True)
class RunnerSettings:
    """The configuration fields this runner consumes.

    Unknown fields in the config file are ignored so orchestrator-side
    extensions do not break older runners.
    """

    model_name: str
    max_len: int = 512
    target_max_len: int = 64
    train_batch_size: int = 1
    learning_rate: float = 5e-5
    num_train_epochs: int = 12
    seed: int = 42
    sep_token: str = "<sep>"
    decode: str = "greedy"

    @classmethod
    def load(cls, path: str | Path) -> "RunnerSettings":
        path = Path(path)
        if not path.is_file():
            raise RunnerError(f"config file not found: {path}")
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise RunnerError(f"{path}: not valid JSON ({err})") from err
        if not isinstance(record, dict):
            raise RunnerError(f"{path}: config must be a JSON object")
        if "model_name" not in record:
            raise RunnerError(f"{path}: config has no model_name")

        kwargs = {"model_name": record["model_name"]}
        for name, kind in (
            ("max_len", int),
            ("target_max_len", int),
            ("train_batch_size", int),
            ("num_train_epochs", int),
            ("seed", int),
            ("learning_rate", float),
            ("sep_token", str),
            ("decode", str),
        ):
            if name not in record:
                continue
            value = record[name]
            if kind is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, kind) or isinstance(value, bool):
                raise RunnerError(f"{path}: {name} must be {kind.__name__}, got {value!r}")
            kwargs[name] = value
        settings = cls(**kwargs)

        if not isinstance(settings.model_name, str) or not settings.model_name:
            raise RunnerError(f"{path}: model_name must be a non-empty string")
        if settings.decode != "greedy":
            raise RunnerError(
                f"unsupported decode strategy {settings.decode!r}; only greedy is implemented"
            )
        for name in ("max_len", "target_max_len", "train_batch_size", "num_train_epochs"):
            if getattr(settings, name) < 1:
                raise RunnerError(f"{path}: {name} must be positive")
        return settings


@dataclass(frozen=True)
class Example:
    instance_id: str
    input_text: str
    target_text: str


def read_examples(path: str | Path) -> list[Example]:
    """Parse a rendered JSONL example file; any malformed line is an error."""
    path = Path(path)
    if not path.is_file():
        raise RunnerError(f"example file not found: {path}")
    examples: list[Example] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                raise RunnerError(f"{path}:{lineno}: blank line in example file")
            try:
                record = json.loads(line)
                instance_id = record["instance_id"]
                input_text = record["input_text"]
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise RunnerError(f"{path}:{lineno}: malformed example line ({err})") from err
            target_text = record.get("target_text", "")
            if not isinstance(instance_id, str) or not isinstance(input_text, str):
                raise RunnerError(f"{path}:{lineno}: instance_id and input_text must be strings")
            if not isinstance(target_text, str):
                raise RunnerError(f"{path}:{lineno}: target_text must be a string")
            examples.append(Example(instance_id, input_text, target_text))
    if not examples:
        raise RunnerError(f"{path}: no examples")
    return examples


def _load_checkpoint(location: str | Path):
    try:
        tokenizer = AutoTokenizer.from_pretrained(location)
        model = AutoModelForSeq2SeqLM.from_pretrained(location)
    except (OSError, ValueError) as err:
        raise RunnerError(f"cannot load model from {location}: {err}") from err
    return tokenizer, model


def prepare_separator(tokenizer, model, sep_token: str) -> str:
    """Return the separator text to substitute into the inputs.

    Tokenizers that define a start token reuse it; the configured
    separator never reaches them. Everyone else gets the separator as an
    additional special token, resizing the embeddings when the vocabulary
    actually grew.
    """
    if tokenizer.bos_token:
        return tokenizer.bos_token
    added = tokenizer.add_special_tokens({"additional_special_tokens": [sep_token]})
    if added:
        model.resize_token_embeddings(len(tokenizer))
    return sep_token


def _substitute(texts: Sequence[str], sep_token: str, replacement: str) -> list[str]:
    if replacement == sep_token:
        return list(texts)
    return [text.replace(sep_token, replacement) for text in texts]


def _batches(items: Sequence, size: int) -> Iterator[Sequence]:
    for start in range(0, len(items), size):
        yield items[start : start + size]


def finetune(config_path: str | Path, train_path: str | Path, out_dir: str | Path) -> None:
    """Train input_text -> target_text and save a checkpoint under out_dir.

    One AdamW step per batch, no shuffling, no warmup: the loss trace is a
    deterministic function of the seed, the corpus, and the settings, and
    is logged next to the checkpoint for comparison across runs.
    """
    settings = RunnerSettings.load(config_path)
    examples = read_examples(train_path)
    for i, example in enumerate(examples, start=1):
        if not example.target_text:
            raise RunnerError(f"{train_path}: example {i} has no target_text")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(settings.seed)
    tokenizer, model = _load_checkpoint(settings.model_name)
    separator = prepare_separator(tokenizer, model, settings.sep_token)
    inputs = _substitute([ex.input_text for ex in examples], settings.sep_token, separator)
    targets = [ex.target_text for ex in examples]

    model.train()
    optimizer = torch.optim.AdamW(model.parameters(), lr=settings.learning_rate)
    losses: list[float] = []
    indices = list(range(len(examples)))
    for _ in range(settings.num_train_epochs):
        for batch in _batches(indices, settings.train_batch_size):
            encoded = tokenizer(
                [inputs[i] for i in batch],
                padding=True, truncation=True, max_length=settings.max_len,
                return_tensors="pt",
            )
            target_ids = tokenizer(
                [targets[i] for i in batch],
                padding=True, truncation=True, max_length=settings.target_max_len,
                return_tensors="pt",
            ).input_ids
            labels = target_ids.masked_fill(target_ids == tokenizer.pad_token_id, -100)
            loss = model(
                input_ids=encoded.input_ids,
                attention_mask=encoded.attention_mask,
                labels=labels,
            ).loss
            loss.backward()
            optimizer.step()
            optimizer.zero_grad()
            losses.append(float(loss.detach()))

    model.eval()
    checkpoint_dir = out_dir / CHECKPOINT_DIRNAME
    model.save_pretrained(checkpoint_dir)
    tokenizer.save_pretrained(checkpoint_dir)

    log = {
        "model_name": settings.model_name,
        "optimizer": "AdamW",
        "learning_rate": settings.learning_rate,
        "num_train_epochs": settings.num_train_epochs,
        "train_batch_size": settings.train_batch_size,
        "seed": settings.seed,
        "shuffle": False,
        "separator": separator,
        "n_examples": len(examples),
        "losses": losses,
        "torch_version": torch.__version__,
        "transformers_version": transformers.__version__,
    }
    (out_dir / TRAINING_LOG_FILENAME).write_text(
        json.dumps(log, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def predict(
    config_path: str | Path,
    model_dir: str | Path,
    input_path: str | Path,
    output_path: str | Path,
) -> None:
    """Greedy-decode every input and write one prediction line per example."""
    settings = RunnerSettings.load(config_path)
    examples = read_examples(input_path)
    checkpoint_dir = Path(model_dir) / CHECKPOINT_DIRNAME
    if not checkpoint_dir.is_dir():
        raise RunnerError(f"{model_dir} holds no {CHECKPOINT_DIRNAME}/; fine-tune first")

    tokenizer, model = _load_checkpoint(checkpoint_dir)
    separator = prepare_separator(tokenizer, model, settings.sep_token)
    inputs = _substitute([ex.input_text for ex in examples], settings.sep_token, separator)
    model.eval()

    generations: list[str] = []
    with torch.no_grad():
        for batch in _batches(inputs, PREDICT_BATCH_SIZE):
            encoded = tokenizer(
                list(batch),
                padding=True, truncation=True, max_length=settings.max_len,
                return_tensors="pt",
            )
            output_ids = model.generate(
                input_ids=encoded.input_ids,
                attention_mask=encoded.attention_mask,
                max_new_tokens=settings.target_max_len,
                do_sample=False,
                num_beams=1,
            )
            generations.extend(tokenizer.batch_decode(output_ids, skip_special_tokens=True))

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8", newline="\n") as handle:
        for example, generation in zip(examples, generations):
            record = {"instance_id": example.instance_id, "generation": generation}
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
