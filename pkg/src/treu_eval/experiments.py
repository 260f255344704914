"""Experiment orchestration: fine-tune/predict grids over one dataset.

Three entry points cover the supported experiment shapes:

* :func:`run_treu_evaluation` -- the three-cell grid behind the headline
  scores (baseline model evaluated with and without explanations, plus an
  explanation-infused model evaluated with them).
* :func:`run_setting_comparison` -- one model per setting, each evaluated
  under its own setting.
* :func:`run_sweep` -- training-set-size sweep: sampled subsets crossed
  with seeds and both fine-tune settings, every model evaluated under both
  predict settings.

Results live in a self-describing directory: ``<out>/<exp_id>/`` holds a
manifest, one subdirectory per cell (config, model artifacts for the cell
that owns the model, predictions, accuracy), and rendered corpora.  Every
cell records content hashes of its inputs and outputs, so rerunning an
experiment recomputes only cells whose files changed and leaves finished
work byte-identical.  A cell owns its directory exclusively; models are
shared by reference, with the cell whose predict setting equals its
fine-tune setting owning the artifact.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from treu_eval import protocol, scoring, unified
from treu_eval.canonical import CanonicalInstance, display_name, read_canonical
from treu_eval.errors import TreuEvalError
from treu_eval.metrics import (
    AccuracyQuad,
    TreuReport,
    per_class_treu,
    rank_datasets,
    render_results_table,
)
from treu_eval.protocol import ModelHandle, RunnerConfig, content_hash
from treu_eval.scoring import AccuracyReport
from treu_eval.unified import PromptConfig, Setting

__all__ = [
    "ExperimentError",
    "SweepCell",
    "ReportStatus",
    "DEFAULT_FRACTIONS",
    "DEFAULT_SEEDS",
    "SAMPLER_ALGORITHM",
    "sample_indices",
    "fraction_means",
    "run_treu_evaluation",
    "run_setting_comparison",
    "run_sweep",
    "emit_report",
]

logger = logging.getLogger("treu_eval.experiments")

MANIFEST_SCHEMA_VERSION = 1
DEFAULT_FRACTIONS: tuple[float, ...] = tuple(round(i / 10, 1) for i in range(1, 11))
DEFAULT_SEEDS: tuple[int, ...] = (1, 2, 3)

# Subset sampling is pinned to one named algorithm so a manifest fully
# determines which instances a fractional cell trained on.
SAMPLER_ALGORITHM = "numpy-pcg64-permutation-prefix"


class ExperimentError(TreuEvalError):
    """Unusable inputs or an inconsistent results directory."""


def _event(name: str, **fields) -> None:
    logger.info(json.dumps({"event": name, **fields}, ensure_ascii=False, sort_keys=True))


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _fraction_token(fraction: float) -> str:
    return f"{fraction:g}"


def sample_indices(n: int, fraction: float, seed: int) -> list[int]:
    """Indices of a uniform sample without replacement, in corpus order.

    The sample size is floor(fraction * n) computed in exact arithmetic,
    so e.g. 0.29 of 100 instances is 29, not a float-rounding artifact.
    Fraction 1.0 returns the identity selection regardless of seed.
    """
    if not 0 < fraction <= 1:
        raise ExperimentError(f"fraction must be in (0, 1], got {fraction}")
    k = math.floor(Fraction(str(fraction)) * n)
    if k == 0:
        raise ExperimentError(f"fraction {fraction} of {n} instances selects nothing")
    if k == n:
        return list(range(n))
    rng = np.random.default_rng(seed)
    picked = rng.permutation(n)[:k]
    return sorted(int(i) for i in picked)


@dataclass(frozen=True)
class SweepCell:
    """One accuracy measurement inside a training-size sweep."""

    fraction: float
    seed: int
    finetune_setting: Setting
    predict_setting: Setting
    n: int
    n_correct: int

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n

    def to_dict(self) -> dict:
        return {
            "fraction": self.fraction,
            "seed": self.seed,
            "finetune_setting": self.finetune_setting.value,
            "predict_setting": self.predict_setting.value,
            "n": self.n,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
        }


def fraction_means(cells: Iterable[SweepCell]) -> dict[str, dict[str, dict]]:
    """Seed-averaged accuracies, grouped by setting pair then fraction.

    The average is the plain arithmetic mean over seeds.
    """
    grouped: dict[str, dict[str, dict[str, float]]] = {}
    for cell in cells:
        pair = f"{cell.finetune_setting.value}-{cell.predict_setting.value}"
        token = _fraction_token(cell.fraction)
        grouped.setdefault(pair, {}).setdefault(token, {})[str(cell.seed)] = cell.accuracy
    summary: dict[str, dict[str, dict]] = {}
    for pair, by_fraction in grouped.items():
        summary[pair] = {}
        for token, by_seed in by_fraction.items():
            values = [by_seed[s] for s in sorted(by_seed, key=int)]
            summary[pair][token] = {
                "per_seed": {s: by_seed[s] for s in sorted(by_seed, key=int)},
                "mean": sum(values) / len(values),
            }
    return summary


# --------------------------------------------------------------------------
# plumbing


@dataclass(frozen=True)
class _CellPlan:
    cell_id: str
    finetune_setting: Setting
    predict_setting: Setting
    train_file: Path
    eval_file: Path
    model_cell: str
    fraction: float | None = None
    seed: int | None = None

    def owns_model(self) -> bool:
        return self.model_cell == self.cell_id

    def manifest_entry(self, exp_dir: Path) -> dict:
        entry = {
            "finetune_setting": self.finetune_setting.value,
            "predict_setting": self.predict_setting.value,
            "train_file": str(self.train_file.relative_to(exp_dir)),
            "eval_file": str(self.eval_file.relative_to(exp_dir)),
            "model_cell": self.model_cell,
        }
        if self.fraction is not None:
            entry["fraction"] = self.fraction
        if self.seed is not None:
            entry["seed"] = self.seed
        return entry


@dataclass
class _Experiment:
    exp_id: str
    exp_type: str
    dataset: str
    exp_dir: Path
    runner_cmd: tuple[str, ...]
    config: RunnerConfig
    prompt: PromptConfig
    strict_match: bool
    eval_split: str
    eval_instances: list[CanonicalInstance]
    cells: list[_CellPlan]
    jobs: int
    timeout: float | None
    extra_manifest: dict

    def cell_dir(self, cell_id: str) -> Path:
        return self.exp_dir / "cells" / cell_id

    def model_dir(self, cell_id: str) -> Path:
        return self.cell_dir(cell_id) / "model"


def _load_split(canonical_dir: Path, split: str) -> list[CanonicalInstance]:
    return read_canonical(canonical_dir / f"{split}.jsonl")


def _load_corpus(canonical_dir: Path) -> tuple[list[CanonicalInstance], list[CanonicalInstance], str]:
    """Training instances plus the evaluation split (test when the corpus
    ships one, otherwise valid)."""
    canonical_dir = Path(canonical_dir)
    train_path = canonical_dir / "train.jsonl"
    if not train_path.is_file():
        raise ExperimentError(f"no train split under {canonical_dir}")
    train = read_canonical(train_path)
    if not train:
        raise ExperimentError(f"train split {train_path} is empty")
    for split in ("test", "valid"):
        path = canonical_dir / f"{split}.jsonl"
        if path.is_file():
            instances = read_canonical(path)
            if not instances:
                raise ExperimentError(f"evaluation split {path} is empty")
            return train, instances, split
    raise ExperimentError(f"no test or valid split under {canonical_dir}")


def _hash_many(paths: Iterable[Path], exp_dir: Path) -> dict[str, str]:
    hashes = {}
    for path in paths:
        try:
            key = str(path.relative_to(exp_dir))
        except ValueError:
            key = str(path)
        hashes[key] = content_hash(path)
    return dict(sorted(hashes.items()))


def _manifest_body(exp: _Experiment, inputs: dict[str, str]) -> dict:
    prompt = exp.prompt
    body = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "experiment_id": exp.exp_id,
        "experiment_type": exp.exp_type,
        "dataset": exp.dataset,
        "dataset_display_name": display_name(exp.dataset),
        "runner_cmd": list(exp.runner_cmd),
        "config": exp.config.to_dict(),
        "prompt": {
            "question_prefix": prompt.question_prefix,
            "choice_prefix_pattern": prompt.choice_prefix_pattern,
            "sep_token": prompt.sep_token,
            "explanation_lead": prompt.explanation_lead,
        },
        "strict_match": exp.strict_match,
        "eval_split": exp.eval_split,
        "cells": {cell.cell_id: cell.manifest_entry(exp.exp_dir) for cell in sorted(
            exp.cells, key=lambda c: c.cell_id
        )},
        "inputs": inputs,
    }
    body.update(exp.extra_manifest)
    return body


def _write_manifest(exp: _Experiment, inputs: dict[str, str]) -> None:
    """Create or refresh the manifest, refusing to reuse a directory that
    holds a structurally different experiment."""
    manifest_path = exp.exp_dir / "manifest.json"
    body = _manifest_body(exp, inputs)
    created = _utc_now()
    if manifest_path.is_file():
        try:
            existing = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise ExperimentError(f"corrupt manifest {manifest_path}: {err}") from err
        identity_keys = set(body) - {"inputs"}
        old_identity = {k: v for k, v in existing.items() if k in identity_keys}
        new_identity = {k: v for k, v in body.items() if k in identity_keys}
        if old_identity != new_identity:
            raise ExperimentError(
                f"{exp.exp_dir} already holds a different experiment; "
                f"use a fresh output directory"
            )
        created = existing.get("timestamps", {}).get("created", created)
    body["timestamps"] = {"created": created, "updated": _utc_now()}
    text = json.dumps(body, ensure_ascii=False, indent=2, sort_keys=True) + "\n"
    manifest_path.write_text(text, encoding="utf-8")


def _render_to(
    instances: Sequence[CanonicalInstance],
    setting: Setting,
    prompt: PromptConfig,
    path: Path,
) -> list[unified.RenderedExample]:
    examples = unified.render_corpus(instances, setting, prompt)
    unified.write_rendered(examples, path)
    return examples


def _done_path(cell_dir: Path) -> Path:
    return cell_dir / "done.json"


def _cell_fingerprint(exp: _Experiment, cell: _CellPlan) -> dict[str, str]:
    fingerprint = {
        "config": protocol.content_hash(exp.cell_dir(cell.cell_id) / "config.json"),
        "train": content_hash(cell.train_file),
        "eval": content_hash(cell.eval_file),
    }
    return fingerprint


def _outputs_fingerprint(cell_dir: Path) -> dict[str, str]:
    return {
        "preds.jsonl": content_hash(cell_dir / "preds.jsonl"),
        "accuracy.json": content_hash(cell_dir / "accuracy.json"),
    }


def _cell_is_done(exp: _Experiment, cell: _CellPlan) -> bool:
    cell_dir = exp.cell_dir(cell.cell_id)
    done_path = _done_path(cell_dir)
    if not done_path.is_file():
        return False
    try:
        done = json.loads(done_path.read_text(encoding="utf-8"))
        if done.get("inputs") != _cell_fingerprint(exp, cell):
            return False
        return done.get("outputs") == _outputs_fingerprint(cell_dir)
    except (OSError, json.JSONDecodeError, protocol.ProtocolError):
        return False


def _model_is_ready(exp: _Experiment, cell: _CellPlan) -> bool:
    """A reusable model: parseable metadata whose training hash matches the
    current training file and whose config matches the experiment's."""
    try:
        handle = ModelHandle.load(exp.model_dir(cell.cell_id))
        handle.verify_against(cell.train_file)
        return handle.config.to_dict() == exp.config.to_dict()
    except protocol.ProtocolError:
        return False


def _ensure_model(exp: _Experiment, cell: _CellPlan) -> None:
    assert cell.owns_model()
    cell_dir = exp.cell_dir(cell.cell_id)
    cell_dir.mkdir(parents=True, exist_ok=True)
    exp.config.dump(cell_dir / "config.json")
    if _model_is_ready(exp, cell):
        _event("finetune_skipped", cell=cell.cell_id)
        return
    _event("finetune_start", cell=cell.cell_id, train=str(cell.train_file))
    protocol.finetune(
        exp.runner_cmd,
        cell.train_file,
        exp.config,
        exp.model_dir(cell.cell_id),
        dataset=exp.dataset,
        timeout=exp.timeout,
    )
    _event("finetune_done", cell=cell.cell_id)


def _run_cell(exp: _Experiment, cell: _CellPlan) -> AccuracyReport:
    cell_dir = exp.cell_dir(cell.cell_id)
    cell_dir.mkdir(parents=True, exist_ok=True)
    exp.config.dump(cell_dir / "config.json")
    accuracy_path = cell_dir / "accuracy.json"

    if _cell_is_done(exp, cell):
        _event("cell_skipped", cell=cell.cell_id)
        return AccuracyReport.from_dict(json.loads(accuracy_path.read_text(encoding="utf-8")))

    model = ModelHandle.load(exp.model_dir(cell.model_cell))
    preds_path = cell_dir / "preds.jsonl"
    _event("predict_start", cell=cell.cell_id, eval=str(cell.eval_file))
    predictions = protocol.predict(
        exp.runner_cmd,
        model,
        cell.eval_file,
        preds_path,
        train_file=cell.train_file,
        timeout=exp.timeout,
    )
    report = scoring.accuracy(
        predictions,
        exp.eval_instances,
        cell.finetune_setting.value,
        cell.predict_setting.value,
        strict=exp.strict_match,
        lead=exp.prompt.explanation_lead,
    )
    accuracy_path.write_text(report.to_json(), encoding="utf-8")
    done = {
        "inputs": _cell_fingerprint(exp, cell),
        "outputs": _outputs_fingerprint(cell_dir),
    }
    _done_path(cell_dir).write_text(
        json.dumps(done, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    _event("cell_done", cell=cell.cell_id, accuracy=report.accuracy)
    return report


def _execute(exp: _Experiment) -> dict[str, AccuracyReport]:
    """Fine-tune all owning cells, then predict and score every cell."""
    owners = [cell for cell in exp.cells if cell.owns_model()]
    owned = {cell.model_cell for cell in exp.cells}
    missing = owned - {cell.cell_id for cell in owners}
    if missing:
        raise ExperimentError(f"cells reference unplanned models: {sorted(missing)}")

    with ThreadPoolExecutor(max_workers=exp.jobs) as pool:
        list(pool.map(lambda cell: _ensure_model(exp, cell), owners))
        reports = list(pool.map(lambda cell: _run_cell(exp, cell), exp.cells))
    return {cell.cell_id: report for cell, report in zip(exp.cells, reports)}


def _prepare(
    *,
    exp_type: str,
    dataset: object,
    runner_cmd: Sequence[str],
    config: RunnerConfig,
    canonical_dir: str | Path,
    out_dir: str | Path,
    prompt: PromptConfig,
    strict_match: bool,
    jobs: int | None,
    timeout: float | None,
    extra_manifest: dict | None = None,
) -> tuple[_Experiment, list[CanonicalInstance], Path]:
    label = str(getattr(dataset, "value", dataset))
    if not label:
        raise ExperimentError("dataset label must be non-empty")
    if not runner_cmd:
        raise ExperimentError("runner_cmd must have at least one token")
    train, eval_instances, eval_split = _load_corpus(Path(canonical_dir))

    exp_id = f"{label}-{exp_type}"
    exp_dir = Path(out_dir) / exp_id
    (exp_dir / "rendered").mkdir(parents=True, exist_ok=True)
    exp = _Experiment(
        exp_id=exp_id,
        exp_type=exp_type,
        dataset=label,
        exp_dir=exp_dir,
        runner_cmd=tuple(str(t) for t in runner_cmd),
        config=config,
        prompt=prompt,
        strict_match=strict_match,
        eval_split=eval_split,
        eval_instances=eval_instances,
        cells=[],
        jobs=jobs if jobs and jobs > 0 else 4,
        timeout=timeout,
        extra_manifest=dict(extra_manifest or {}),
    )
    return exp, train, exp_dir


def _finalize(exp: _Experiment, canonical_dir: Path, rendered: Iterable[Path]) -> None:
    canonical_files = [
        canonical_dir / f"{split}.jsonl"
        for split in ("train", exp.eval_split)
    ]
    inputs = _hash_many([*canonical_files, *rendered], exp.exp_dir)
    _write_manifest(exp, inputs)


# --------------------------------------------------------------------------
# experiment shapes


def run_treu_evaluation(
    dataset: object,
    runner_cmd: Sequence[str],
    config: RunnerConfig,
    *,
    canonical_dir: str | Path,
    out_dir: str | Path,
    prompt: PromptConfig = PromptConfig(),
    strict_match: bool = False,
    jobs: int | None = None,
    timeout: float | None = None,
    model_family: str | None = None,
) -> TreuReport:
    """Measure explanation quality on one dataset with one model family.

    Fine-tunes a baseline model and an explanation-infused model, collects
    the three accuracies the scores need, and writes ``treu_report.json``
    into the experiment directory.  Per-class scores are included when the
    corpus carries class labels on every instance.
    """
    exp, train, exp_dir = _prepare(
        exp_type="treu",
        dataset=dataset,
        runner_cmd=runner_cmd,
        config=config,
        canonical_dir=canonical_dir,
        out_dir=out_dir,
        prompt=prompt,
        strict_match=strict_match,
        jobs=jobs,
        timeout=timeout,
    )
    rendered_dir = exp_dir / "rendered"
    train_b = rendered_dir / "train_baseline.jsonl"
    train_i = rendered_dir / "train_infusion.jsonl"
    eval_b = rendered_dir / "eval_baseline.jsonl"
    eval_i = rendered_dir / "eval_infusion.jsonl"
    _render_to(train, Setting.BASELINE, exp.prompt, train_b)
    _render_to(train, Setting.INFUSION, exp.prompt, train_i)
    _render_to(exp.eval_instances, Setting.BASELINE, exp.prompt, eval_b)
    _render_to(exp.eval_instances, Setting.INFUSION, exp.prompt, eval_i)

    bb = _CellPlan("baseline-baseline", Setting.BASELINE, Setting.BASELINE,
                   train_b, eval_b, "baseline-baseline")
    bi = _CellPlan("baseline-infusion", Setting.BASELINE, Setting.INFUSION,
                   train_b, eval_i, "baseline-baseline")
    ii = _CellPlan("infusion-infusion", Setting.INFUSION, Setting.INFUSION,
                   train_i, eval_i, "infusion-infusion")
    exp.cells = [bb, bi, ii]
    _finalize(exp, Path(canonical_dir), [train_b, train_i, eval_b, eval_i])

    reports = _execute(exp)
    report_bb = reports["baseline-baseline"]
    report_bi = reports["baseline-infusion"]
    report_ii = reports["infusion-infusion"]

    per_class = None
    if all(r.per_class for r in (report_bb, report_bi, report_ii)):
        labeled = sum(b.n for b in report_bb.per_class.values())
        if labeled == report_bb.n:
            per_class = per_class_treu(report_bb, report_bi, report_ii)

    quad = AccuracyQuad(
        acc_bb=report_bb.accuracy,
        acc_bi=report_bi.accuracy,
        acc_ii=report_ii.accuracy,
    )
    treu_report = TreuReport.from_quad(
        dataset=display_name(exp.dataset),
        model_family=model_family or config.model_name,
        quad=quad,
        per_class=per_class,
    )
    (exp_dir / "treu_report.json").write_text(treu_report.to_json(), encoding="utf-8")
    return treu_report


def run_setting_comparison(
    dataset: object,
    runner_cmd: Sequence[str],
    config: RunnerConfig,
    *,
    canonical_dir: str | Path,
    out_dir: str | Path,
    prompt: PromptConfig = PromptConfig(),
    strict_match: bool = False,
    jobs: int | None = None,
    timeout: float | None = None,
) -> dict[Setting, float]:
    """Accuracy of each setting when fine-tuning and inference agree."""
    exp, train, exp_dir = _prepare(
        exp_type="settings",
        dataset=dataset,
        runner_cmd=runner_cmd,
        config=config,
        canonical_dir=canonical_dir,
        out_dir=out_dir,
        prompt=prompt,
        strict_match=strict_match,
        jobs=jobs,
        timeout=timeout,
    )
    rendered_dir = exp_dir / "rendered"
    cells = []
    rendered_paths = []
    for setting in Setting:
        train_path = rendered_dir / f"train_{setting.value}.jsonl"
        eval_path = rendered_dir / f"eval_{setting.value}.jsonl"
        _render_to(train, setting, exp.prompt, train_path)
        _render_to(exp.eval_instances, setting, exp.prompt, eval_path)
        rendered_paths += [train_path, eval_path]
        cell_id = f"{setting.value}-{setting.value}"
        cells.append(_CellPlan(cell_id, setting, setting, train_path, eval_path, cell_id))
    exp.cells = cells
    _finalize(exp, Path(canonical_dir), rendered_paths)

    reports = _execute(exp)
    result = {
        setting: reports[f"{setting.value}-{setting.value}"].accuracy for setting in Setting
    }
    comparison = {
        "dataset": display_name(exp.dataset),
        "accuracies": {setting.value: result[setting] for setting in Setting},
    }
    (exp_dir / "comparison.json").write_text(
        json.dumps(comparison, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return result


def run_sweep(
    dataset: object,
    runner_cmd: Sequence[str],
    config: RunnerConfig,
    *,
    canonical_dir: str | Path,
    out_dir: str | Path,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    prompt: PromptConfig = PromptConfig(),
    strict_match: bool = False,
    jobs: int | None = None,
    timeout: float | None = None,
) -> list[SweepCell]:
    """Cross training-set fractions with seeds and both settings.

    Every (fraction, seed, fine-tune setting) triple trains one model on a
    seeded uniform subset; each model is evaluated under both predict
    settings.  The runner seed of each cell is the sweep seed, so sampling
    and fine-tuning vary together.  Returns every cell; seed-averaged
    accuracies land in ``sweep_summary.json``.
    """
    if not fractions:
        raise ExperimentError("need at least one fraction")
    if not seeds:
        raise ExperimentError("need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ExperimentError("seeds must be distinct")
    exp, train, exp_dir = _prepare(
        exp_type="sweep",
        dataset=dataset,
        runner_cmd=runner_cmd,
        config=config,
        canonical_dir=canonical_dir,
        out_dir=out_dir,
        prompt=prompt,
        strict_match=strict_match,
        jobs=jobs,
        timeout=timeout,
        extra_manifest={
            "fractions": [float(f) for f in fractions],
            "seeds": [int(s) for s in seeds],
            "sampler": {
                "algorithm": SAMPLER_ALGORITHM,
                "numpy_version": np.__version__,
            },
        },
    )
    rendered_dir = exp_dir / "rendered"
    settings = (Setting.BASELINE, Setting.INFUSION)

    full_rendered = {}
    eval_paths = {}
    rendered_paths = []
    for setting in settings:
        full_rendered[setting] = unified.render_corpus(train, setting, exp.prompt)
        eval_path = rendered_dir / f"eval_{setting.value}.jsonl"
        _render_to(exp.eval_instances, setting, exp.prompt, eval_path)
        eval_paths[setting] = eval_path
        rendered_paths.append(eval_path)

    cells: list[_CellPlan] = []
    for fraction in fractions:
        for seed in seeds:
            indices = sample_indices(len(train), float(fraction), int(seed))
            token = _fraction_token(float(fraction))
            for ft in settings:
                subset = [full_rendered[ft][i] for i in indices]
                train_path = rendered_dir / f"train_{ft.value}_f{token}_s{seed}.jsonl"
                unified.write_rendered(subset, train_path)
                rendered_paths.append(train_path)
                owner = f"{ft.value}-{ft.value}-f{token}-s{seed}"
                for pt in settings:
                    cell_id = f"{ft.value}-{pt.value}-f{token}-s{seed}"
                    cells.append(
                        _CellPlan(
                            cell_id,
                            ft,
                            pt,
                            train_path,
                            eval_paths[pt],
                            owner,
                            fraction=float(fraction),
                            seed=int(seed),
                        )
                    )
    # Owners first within each group so the executor's fine-tune phase sees
    # them in a stable order.
    exp.cells = sorted(cells, key=lambda c: (c.cell_id != c.model_cell, c.cell_id))
    _finalize(exp, Path(canonical_dir), rendered_paths)

    reports = _execute(exp)
    sweep_cells = []
    for cell in exp.cells:
        report = reports[cell.cell_id]
        sweep_cells.append(
            SweepCell(
                fraction=cell.fraction,
                seed=cell.seed,
                finetune_setting=cell.finetune_setting,
                predict_setting=cell.predict_setting,
                n=report.n,
                n_correct=report.n_correct,
            )
        )
    sweep_cells.sort(
        key=lambda c: (c.fraction, c.seed, c.finetune_setting.value, c.predict_setting.value)
    )
    summary = {
        "dataset": display_name(exp.dataset),
        "fractions": [float(f) for f in fractions],
        "seeds": [int(s) for s in seeds],
        "means": fraction_means(sweep_cells),
    }
    (exp_dir / "sweep_cells.json").write_text(
        json.dumps([c.to_dict() for c in sweep_cells], ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    (exp_dir / "sweep_summary.json").write_text(
        json.dumps(summary, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return sweep_cells


# --------------------------------------------------------------------------
# reporting


@dataclass(frozen=True)
class ReportStatus:
    """Outcome of emit_report: full coverage or a list of missing cells."""

    complete: bool
    experiments: tuple[str, ...]
    missing: tuple[str, ...]


def _load_accuracy(path: Path) -> AccuracyReport | None:
    if not path.is_file():
        return None
    try:
        return AccuracyReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError):
        return None


_CSV_HEADER = [
    "experiment", "dataset", "experiment_type", "cell", "finetune_setting",
    "predict_setting", "fraction", "seed", "n", "n_correct", "accuracy", "status",
]


def _write_cell_csv(
    path: Path, exp_id: str, manifest: dict, reports: dict[str, AccuracyReport | None]
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_CSV_HEADER)
        for cell_id in sorted(manifest.get("cells", {})):
            entry = manifest["cells"][cell_id]
            report = reports.get(cell_id)
            common = [
                exp_id, manifest["dataset"], manifest["experiment_type"], cell_id,
                entry["finetune_setting"], entry["predict_setting"],
                entry.get("fraction", ""), entry.get("seed", ""),
            ]
            if report is None:
                writer.writerow([*common, "", "", "", "missing"])
            else:
                writer.writerow([*common, report.n, report.n_correct, repr(report.accuracy), "ok"])


def _treu_markdown(manifest: dict, exp_dir: Path) -> list[str]:
    lines = []
    report_path = exp_dir / "treu_report.json"
    if report_path.is_file():
        record = json.loads(report_path.read_text(encoding="utf-8"))
        acc = record["accuracies"]
        lines.append("| Dataset | acc_BB | acc_BI | Simulatability | acc_II | TREU |")
        lines.append("| --- | --- | --- | --- | --- | --- |")
        lines.append(
            f"| {record['dataset']} | {acc['acc_bb']:.3f} | {acc['acc_bi']:.3f} | "
            f"{record['simulatability']:.3f} | {acc['acc_ii']:.3f} | {record['treu']:.3f} |"
        )
        if record.get("per_class"):
            lines.append("")
            lines.append("Per-class scores:")
            lines.append("")
            lines.append("| Class | Simulatability | TREU |")
            lines.append("| --- | --- | --- |")
            for label in sorted(record["per_class"]):
                scores = record["per_class"][label]
                lines.append(
                    f"| {label} | {scores['simulatability']:.3f} | {scores['treu']:.3f} |"
                )
    else:
        lines.append("TREU report not computed yet (cells missing).")
    return lines


def _settings_markdown(manifest: dict, reports: dict[str, AccuracyReport | None]) -> list[str]:
    lines = ["| Setting (fine-tune = predict) | Accuracy |", "| --- | --- |"]
    for setting in Setting:
        cell_id = f"{setting.value}-{setting.value}"
        report = reports.get(cell_id)
        value = f"{report.accuracy:.3f}" if report else "missing"
        lines.append(f"| {setting.value} | {value} |")
    return lines


def _sweep_markdown(manifest: dict, reports: dict[str, AccuracyReport | None]) -> list[str]:
    fractions = [_fraction_token(f) for f in manifest.get("fractions", [])]
    seeds = [str(s) for s in manifest.get("seeds", [])]
    lines = []
    for ft in ("baseline", "infusion"):
        for pt in ("baseline", "infusion"):
            lines.append(f"Fine-tune {ft}, predict {pt}:")
            lines.append("")
            lines.append("| Seed | " + " | ".join(fractions) + " |")
            lines.append("| --- |" + " --- |" * len(fractions))
            columns: dict[str, list[float | None]] = {}
            for seed in seeds:
                row = [f"{seed}"]
                for token in fractions:
                    report = reports.get(f"{ft}-{pt}-f{token}-s{seed}")
                    row.append(f"{report.accuracy:.3f}" if report else "missing")
                    columns.setdefault(token, []).append(report.accuracy if report else None)
                lines.append("| " + " | ".join(row) + " |")
            means = []
            for token in fractions:
                values = columns.get(token, [])
                if values and all(v is not None for v in values):
                    means.append(f"{sum(values) / len(values):.3f}")
                else:
                    means.append("missing")
            lines.append("| average | " + " | ".join(means) + " |")
            lines.append("")
    return lines


def emit_report(results_dir: str | Path) -> ReportStatus:
    """Write ``report.csv`` and ``report.md`` into every experiment under
    ``results_dir`` and a cross-experiment ``summary.md`` beside them.

    Partial results are reported, not hidden: cells without an accuracy
    file show up as missing and flip the returned status.  A directory
    with no experiments at all is an error.
    """
    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise ExperimentError(f"results directory not found: {results_dir}")
    manifest_paths = sorted(results_dir.glob("*/manifest.json"))
    if not manifest_paths:
        raise ExperimentError(f"no experiments under {results_dir}")

    missing: list[str] = []
    exp_ids: list[str] = []
    treu_records: list[dict] = []
    for manifest_path in manifest_paths:
        exp_dir = manifest_path.parent
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise ExperimentError(f"corrupt manifest {manifest_path}: {err}") from err
        exp_id = manifest.get("experiment_id", exp_dir.name)
        exp_ids.append(exp_id)

        reports = {}
        for cell_id in manifest.get("cells", {}):
            reports[cell_id] = _load_accuracy(exp_dir / "cells" / cell_id / "accuracy.json")
            if reports[cell_id] is None:
                missing.append(f"{exp_id}/{cell_id}")

        _write_cell_csv(exp_dir / "report.csv", exp_id, manifest, reports)

        md = [f"# {manifest.get('dataset_display_name', manifest['dataset'])} "
              f"({manifest['experiment_type']})", ""]
        if manifest["experiment_type"] == "treu":
            md += _treu_markdown(manifest, exp_dir)
            report_path = exp_dir / "treu_report.json"
            if report_path.is_file():
                treu_records.append(json.loads(report_path.read_text(encoding="utf-8")))
        elif manifest["experiment_type"] == "settings":
            md += _settings_markdown(manifest, reports)
        elif manifest["experiment_type"] == "sweep":
            md += _sweep_markdown(manifest, reports)
        else:
            md.append(f"Unknown experiment type {manifest['experiment_type']!r}.")
        (exp_dir / "report.md").write_text("\n".join(md).rstrip() + "\n", encoding="utf-8")

    summary = ["# Results summary", ""]
    by_family: dict[str, list[dict]] = {}
    for record in treu_records:
        by_family.setdefault(record["model_family"], []).append(record)
    for family in sorted(by_family):
        records = by_family[family]
        summary.append(f"## {family}")
        summary.append("")
        table_reports = [
            TreuReport.from_quad(
                dataset=r["dataset"],
                model_family=r["model_family"],
                quad=AccuracyQuad(**r["accuracies"]),
            )
            for r in sorted(records, key=lambda r: r["dataset"])
        ]
        summary.append("```")
        summary.append(render_results_table(table_reports).rstrip())
        summary.append("```")
        if len(records) >= 2:
            treu_rank = rank_datasets({r["dataset"]: r["treu"] for r in records})
            sim_rank = rank_datasets({r["dataset"]: r["simulatability"] for r in records})
            summary.append("")
            summary.append(f"TREU ranking ({family}): {' > '.join(treu_rank)}")
            summary.append("")
            summary.append(f"Simulatability ranking ({family}): {' > '.join(sim_rank)}")
        summary.append("")
    if missing:
        summary.append("## Missing cells")
        summary.append("")
        for item in missing:
            summary.append(f"- {item}")
        summary.append("")
    (results_dir / "summary.md").write_text("\n".join(summary).rstrip() + "\n", encoding="utf-8")

    return ReportStatus(
        complete=not missing,
        experiments=tuple(exp_ids),
        missing=tuple(missing),
    )
