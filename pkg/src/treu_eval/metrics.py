"""Explanation-quality scores computed from evaluation accuracies.

Notation: acc_XY is the accuracy of a model fine-tuned under setting X and
evaluated under setting Y, where B is baseline (no explanations) and I is
infusion (explanations appended to the input).

    simulatability = acc_BI - acc_BB
    treu           = (acc_II - acc_BB) + (acc_BI - acc_BB)

Simulatability asks whether explanations help a model that never saw them
during fine-tuning.  TREU additionally credits what a model can extract
from explanations when it is trained to use them, which rewards
explanations that carry the answer even if a baseline model cannot parse
them zero-shot.  Both are differences of accuracies, so treu lies in
[-2, 2] and simulatability in [-1, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from treu_eval.errors import TreuEvalError
from treu_eval.scoring import AccuracyReport

__all__ = [
    "MetricsError",
    "AccuracyQuad",
    "TreuReport",
    "simulatability",
    "treu",
    "per_class_treu",
    "rank_datasets",
    "render_results_table",
]


class MetricsError(TreuEvalError):
    """Raised for inconsistent accuracy inputs."""


def simulatability(acc_bb: float, acc_bi: float) -> float:
    """Accuracy gain of the baseline-fine-tuned model when explanations
    are added to its input at inference time."""
    return acc_bi - acc_bb


def treu(acc_bb: float, acc_bi: float, acc_ii: float) -> float:
    """Total reliance/usefulness score; see the module docstring."""
    return (acc_ii - acc_bb) + (acc_bi - acc_bb)


@dataclass(frozen=True)
class AccuracyQuad:
    """The accuracies of one dataset/model pairing, keyed by
    fine-tune/predict setting.  acc_ib only exists in sweep runs."""

    acc_bb: float
    acc_bi: float
    acc_ii: float
    acc_ib: float | None = None

    def to_dict(self) -> dict:
        record = {"acc_bb": self.acc_bb, "acc_bi": self.acc_bi, "acc_ii": self.acc_ii}
        if self.acc_ib is not None:
            record["acc_ib"] = self.acc_ib
        return record


@dataclass(frozen=True)
class ClassScores:
    accuracy_quad: AccuracyQuad
    simulatability: float
    treu: float


@dataclass(frozen=True)
class TreuReport:
    """Scores of one dataset under one model family."""

    dataset: str
    model_family: str
    quad: AccuracyQuad
    simulatability: float
    treu: float
    per_class: dict[str, ClassScores] | None = None

    def to_dict(self) -> dict:
        record = {
            "dataset": self.dataset,
            "model_family": self.model_family,
            "accuracies": self.quad.to_dict(),
            "simulatability": self.simulatability,
            "treu": self.treu,
        }
        if self.per_class is not None:
            record["per_class"] = {
                label: {
                    "accuracies": scores.accuracy_quad.to_dict(),
                    "simulatability": scores.simulatability,
                    "treu": scores.treu,
                }
                for label, scores in sorted(self.per_class.items())
            }
        return record

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n"

    @classmethod
    def from_quad(
        cls,
        dataset: str,
        model_family: str,
        quad: AccuracyQuad,
        per_class: dict[str, ClassScores] | None = None,
    ) -> "TreuReport":
        return cls(
            dataset=dataset,
            model_family=model_family,
            quad=quad,
            simulatability=simulatability(quad.acc_bb, quad.acc_bi),
            treu=treu(quad.acc_bb, quad.acc_bi, quad.acc_ii),
            per_class=per_class,
        )


def _class_fractions(report: AccuracyReport) -> dict[str, Fraction]:
    return {
        label: Fraction(bd.n_correct, bd.n) for label, bd in report.per_class.items()
    }


def per_class_treu(
    report_bb: AccuracyReport,
    report_bi: AccuracyReport,
    report_ii: AccuracyReport,
) -> dict[str, ClassScores]:
    """Break treu and simulatability down by class label.

    The three reports must cover the same evaluation set, so their class
    sets and per-class instance counts have to agree.  Scores are computed
    from the integer counts in exact arithmetic, which makes the
    count-weighted mean of per-class treu equal the overall treu exactly.
    """
    reports = {"bb": report_bb, "bi": report_bi, "ii": report_ii}
    class_sets = {name: set(r.per_class) for name, r in reports.items()}
    if not class_sets["bb"]:
        raise MetricsError("reports carry no class labels")
    if class_sets["bb"] != class_sets["bi"] or class_sets["bb"] != class_sets["ii"]:
        raise MetricsError(f"class label sets differ across reports: {class_sets}")
    for label in class_sets["bb"]:
        counts = {name: r.per_class[label].n for name, r in reports.items()}
        if len(set(counts.values())) != 1:
            raise MetricsError(f"class {label!r} instance counts differ: {counts}")

    acc = {name: _class_fractions(r) for name, r in reports.items()}
    result: dict[str, ClassScores] = {}
    for label in sorted(class_sets["bb"]):
        bb, bi, ii = acc["bb"][label], acc["bi"][label], acc["ii"][label]
        result[label] = ClassScores(
            accuracy_quad=AccuracyQuad(
                acc_bb=float(bb), acc_bi=float(bi), acc_ii=float(ii)
            ),
            simulatability=float(simulatability(bb, bi)),
            treu=float(treu(bb, bi, ii)),
        )
    return result


def rank_datasets(scores: Mapping[str, float]) -> list[str]:
    """Order dataset names by score, best first.

    Equal scores fall back to lexicographic order of the names so the
    ranking is a deterministic function of its input.
    """
    return sorted(scores, key=lambda name: (-scores[name], name))


_TABLE_COLUMNS = ("acc_BB", "acc_BI", "Simulatability", "acc_II", "TREU")


def render_results_table(reports: Sequence[TreuReport]) -> str:
    """Plain-text results table, one row per dataset.

    Column order matches how the scores build on each other: the two
    baseline-model accuracies and their difference first, then the
    infusion-model accuracy and the combined score.  Values are rounded
    to three decimals for presentation only.
    """
    header = ("Dataset", *_TABLE_COLUMNS)
    rows = [header]
    for report in reports:
        rows.append(
            (
                report.dataset,
                f"{report.quad.acc_bb:.3f}",
                f"{report.quad.acc_bi:.3f}",
                f"{report.simulatability:.3f}",
                f"{report.quad.acc_ii:.3f}",
                f"{report.treu:.3f}",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
