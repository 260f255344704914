"""Text-to-text transformer runner for treu-eval experiments."""

from hf_runner.runner import RunnerError, RunnerSettings, finetune, predict

__all__ = ["RunnerError", "RunnerSettings", "finetune", "predict"]
