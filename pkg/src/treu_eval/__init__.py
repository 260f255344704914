"""Toolkit for evaluating free-text explanations by their usefulness to models.

The package measures how much human-written explanations help a model answer
multiple-choice questions: fine-tune once without explanations, once with them,
and compare accuracies.  See ``treu_eval.metrics`` for the score definitions
and ``treu_eval.experiments`` for the orchestration entry points.
"""

__version__ = "0.1.0"

__all__ = [
    "canonical",
    "ingest",
    "unified",
    "scoring",
    "metrics",
    "protocol",
    "toy_runner",
    "experiments",
    "conformance",
    "cli",
]
