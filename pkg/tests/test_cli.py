"""Command-line behavior: exit codes, output shape, passthrough."""

import json
import shutil
import subprocess
import sys

import pytest

from conftest import make_corpus, write_splits
from test_experiments import exact_corpus
from test_ingest import ecqa_tree
from treu_eval.canonical import write_canonical
from treu_eval.cli import main
from treu_eval.protocol import write_predictions, Prediction
from treu_eval.unified import Setting, read_rendered, render_corpus, write_rendered

TOY = "{} -m treu_eval.toy_runner".format(sys.executable)

EXACT_EXTRAS = [
    "--extra", "toy_baseline_policy=first_choice",
    "--extra", "toy_zero_shot_overlap_prob=0.0",
]


class TestParser:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["--help"])
        assert excinfo.value.code == 0
        assert "ingest" in capsys.readouterr().out

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert capsys.readouterr().out.startswith("treu-eval ")

    def test_missing_command_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 2

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["metrics", "--acc-bb", "0.5", "--acc-bi", "0.5",
                  "--acc-ii", "0.5", "--frobnicate"])
        assert excinfo.value.code == 2

    def test_bad_setting_choice(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["render", "--in", str(tmp_path / "x.jsonl"),
                  "--setting", "verbose", "--out-dir", str(tmp_path)])
        assert excinfo.value.code == 2


class TestMetrics:
    def test_reference_row(self, capsys):
        assert main(["metrics", "--acc-bb", "0.572",
                     "--acc-bi", "0.746", "--acc-ii", "0.989"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out == ["simulatability 0.174", "treu 0.591"]

    def test_negative_scores(self, capsys):
        assert main(["metrics", "--acc-bb", "0.907",
                     "--acc-bi", "0.676", "--acc-ii", "0.981"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out == ["simulatability -0.231", "treu -0.157"]

    def test_optional_acc_ib(self, capsys):
        assert main(["metrics", "--acc-bb", "0.5", "--acc-bi", "0.5",
                     "--acc-ii", "0.5", "--acc-ib", "0.25"]) == 0
        assert "acc_ib 0.250" in capsys.readouterr().out


class TestRender:
    def test_renders_canonical_file(self, tmp_path, capsys):
        instances = make_corpus(3)
        src = tmp_path / "train.jsonl"
        write_canonical(instances, src)
        assert main(["render", "--in", str(src), "--setting", "infusion",
                     "--out-dir", str(tmp_path / "rendered")]) == 0
        out_path = tmp_path / "rendered" / "train.infusion.jsonl"
        assert f"wrote 3 examples to {out_path}" in capsys.readouterr().out
        examples = read_rendered(out_path)
        assert [e.instance_id for e in examples] == [i.id for i in instances]
        assert all(" <sep> because " in e.input_text for e in examples)

    def test_invalid_instance_names_offender(self, tmp_path, capsys):
        src = tmp_path / "bad.jsonl"
        record = {
            "id": "bad/7", "dataset": "unit-test", "split": "train",
            "question": "which?", "choices": ["a", "b"], "gold_index": 5,
            "explanation": "text", "class_label": None, "schema_version": 1,
        }
        src.write_text(json.dumps(record) + "\n", encoding="utf-8")
        assert main(["render", "--in", str(src), "--setting", "baseline",
                     "--out-dir", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert err.startswith("treu-eval:")
        assert "bad/7" in err
        assert "out of range" in err

    def test_missing_input_file(self, tmp_path, capsys):
        assert main(["render", "--in", str(tmp_path / "absent.jsonl"),
                     "--setting", "baseline", "--out-dir", str(tmp_path)]) == 1
        assert capsys.readouterr().err.startswith("treu-eval:")


class TestScore:
    def test_scores_prediction_file(self, tmp_path, capsys):
        instances = make_corpus(4)
        canonical = tmp_path / "eval.jsonl"
        write_canonical(instances, canonical)
        predictions = [
            Prediction(inst.id, inst.choices[inst.gold_index]) for inst in instances[:3]
        ] + [Prediction(instances[3].id, "nothing sensible")]
        preds = tmp_path / "preds.jsonl"
        write_predictions(predictions, preds)

        assert main(["score", "--preds", str(preds), "--canonical", str(canonical),
                     "--finetune-setting", "baseline",
                     "--predict-setting", "baseline"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["n"] == 4
        assert report["n_correct"] == 3
        assert report["accuracy"] == 0.75

    def test_incomplete_predictions_fail(self, tmp_path, capsys):
        instances = make_corpus(3)
        canonical = tmp_path / "eval.jsonl"
        write_canonical(instances, canonical)
        preds = tmp_path / "preds.jsonl"
        write_predictions([Prediction(instances[0].id, "x")], preds)

        assert main(["score", "--preds", str(preds), "--canonical", str(canonical),
                     "--finetune-setting", "baseline",
                     "--predict-setting", "baseline"]) == 1
        assert "missing prediction" in capsys.readouterr().err


class TestIngest:
    def test_tiny_fixture(self, tmp_path, capsys):
        source = ecqa_tree(tmp_path / "source")
        assert main(["ingest", "--dataset", "ecqa", "--data-dir", str(source),
                     "--out-dir", str(tmp_path / "canon")]) == 0
        captured = capsys.readouterr()
        assert "train: 2 instances" in captured.out
        assert "valid: 1 instances" in captured.out
        assert "statistics differ from the published numbers:" in captured.err
        assert "train_count" in captured.err
        assert (tmp_path / "canon" / "ecqa" / "manifest.json").is_file()

    def test_unknown_dataset_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["ingest", "--dataset", "squad", "--data-dir", str(tmp_path),
                  "--out-dir", str(tmp_path)])
        assert excinfo.value.code == 2

    def test_missing_source_dir(self, tmp_path, capsys):
        assert main(["ingest", "--dataset", "ecqa",
                     "--data-dir", str(tmp_path / "absent"),
                     "--out-dir", str(tmp_path / "canon")]) == 1
        assert "source directory not found" in capsys.readouterr().err


class TestUsageErrors:
    def run_args(self, tmp_path):
        return [
            "--dataset", "unit-test",
            "--canonical-dir", str(tmp_path / "canon"),
            "--runner-cmd", TOY,
            "--out-dir", str(tmp_path / "results"),
        ]

    def test_bad_fractions_list(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["sweep", *self.run_args(tmp_path), "--fractions", "abc"])
        assert excinfo.value.code == 2
        assert "invalid fractions list" in capsys.readouterr().err

    def test_bad_seeds_list(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["sweep", *self.run_args(tmp_path), "--seeds", "one,two"])
        assert excinfo.value.code == 2
        assert "invalid seeds list" in capsys.readouterr().err

    def test_extra_requires_key_value(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["run", *self.run_args(tmp_path), "--extra", "oops"])
        assert excinfo.value.code == 2
        assert "--extra expects KEY=VALUE" in capsys.readouterr().err

    def test_empty_runner_cmd(self, tmp_path, capsys):
        exact_corpus(tmp_path / "canon", n_train=4, n_eval=4)
        args = self.run_args(tmp_path)
        args[args.index(TOY)] = "   "
        with pytest.raises(SystemExit) as excinfo:
            main(["run", *args])
        assert excinfo.value.code == 2
        assert "--runner-cmd must not be empty" in capsys.readouterr().err


class TestRun:
    def test_treu_mode(self, tmp_path, capsys):
        exact_corpus(tmp_path / "canon", n_train=8, n_eval=4)
        code = main([
            "run", "--mode", "treu",
            "--dataset", "unit-test",
            "--canonical-dir", str(tmp_path / "canon"),
            "--runner-cmd", TOY,
            "--out-dir", str(tmp_path / "results"),
            *EXACT_EXTRAS,
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "Dataset" in out and "TREU" in out
        assert "0.750" in out

    def test_treu_mode_prints_per_class(self, tmp_path, capsys):
        exact_corpus(tmp_path / "canon", n_train=8, n_eval=8, labeled=True)
        code = main([
            "run",
            "--dataset", "unit-test",
            "--canonical-dir", str(tmp_path / "canon"),
            "--runner-cmd", TOY,
            "--out-dir", str(tmp_path / "results"),
            *EXACT_EXTRAS,
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "even: simulatability 0.000, treu 0.500" in out
        assert "odd: simulatability 0.000, treu 1.000" in out

    def test_settings_mode(self, tmp_path, capsys):
        exact_corpus(tmp_path / "canon", n_train=8, n_eval=4)
        code = main([
            "run", "--mode", "settings",
            "--dataset", "unit-test",
            "--canonical-dir", str(tmp_path / "canon"),
            "--runner-cmd", TOY,
            "--out-dir", str(tmp_path / "results"),
            *EXACT_EXTRAS,
        ])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert "baseline 0.250" in lines
        assert "infusion 1.000" in lines
        assert any(line.startswith("self_rationalization ") for line in lines)

    def test_run_error_paths_exit_one(self, tmp_path, capsys):
        (tmp_path / "canon").mkdir()
        code = main([
            "run",
            "--dataset", "unit-test",
            "--canonical-dir", str(tmp_path / "canon"),
            "--runner-cmd", TOY,
            "--out-dir", str(tmp_path / "results"),
        ])
        assert code == 1
        assert "no train split under" in capsys.readouterr().err


class TestSweepCommand:
    def test_small_sweep(self, tmp_path, capsys):
        exact_corpus(tmp_path / "canon", n_train=8, n_eval=4)
        code = main([
            "sweep",
            "--dataset", "unit-test",
            "--canonical-dir", str(tmp_path / "canon"),
            "--runner-cmd", TOY,
            "--out-dir", str(tmp_path / "results"),
            "--fractions", "0.5,1.0",
            "--seeds", "1,2",
            "--jobs", "4",
            *EXACT_EXTRAS,
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "infusion-infusion  0.5: 1.000, 1: 1.000" in out
        assert "baseline-baseline  0.5: 0.250, 1: 0.250" in out


class TestReport:
    def test_complete_results(self, tmp_path, capsys):
        exact_corpus(tmp_path / "canon", n_train=8, n_eval=4)
        main([
            "run",
            "--dataset", "unit-test",
            "--canonical-dir", str(tmp_path / "canon"),
            "--runner-cmd", TOY,
            "--out-dir", str(tmp_path / "results"),
            *EXACT_EXTRAS,
        ])
        capsys.readouterr()
        assert main(["report", "--results-dir", str(tmp_path / "results")]) == 0
        assert "reported unit-test-treu" in capsys.readouterr().out

    def test_partial_results_exit_three(self, tmp_path, capsys):
        exact_corpus(tmp_path / "canon", n_train=8, n_eval=4)
        main([
            "run",
            "--dataset", "unit-test",
            "--canonical-dir", str(tmp_path / "canon"),
            "--runner-cmd", TOY,
            "--out-dir", str(tmp_path / "results"),
            *EXACT_EXTRAS,
        ])
        capsys.readouterr()
        accuracy = (
            tmp_path / "results" / "unit-test-treu" / "cells"
            / "infusion-infusion" / "accuracy.json"
        )
        accuracy.unlink()
        assert main(["report", "--results-dir", str(tmp_path / "results")]) == 3
        err = capsys.readouterr().err
        assert "missing 1 cell(s):" in err
        assert "unit-test-treu/infusion-infusion" in err

    def test_empty_results_dir(self, tmp_path, capsys):
        (tmp_path / "results").mkdir()
        assert main(["report", "--results-dir", str(tmp_path / "results")]) == 1
        assert "no experiments under" in capsys.readouterr().err


class TestToyRunnerPassthrough:
    def test_finetune_and_predict(self, tmp_path, capsys):
        instances = make_corpus(4)
        train = tmp_path / "train.jsonl"
        write_rendered(render_corpus(instances, Setting.BASELINE), train)
        config = tmp_path / "config.json"
        config.write_text("{}", encoding="utf-8")

        assert main(["toy-runner", "finetune", "--config", str(config),
                     "--train", str(train), "--out", str(tmp_path / "model")]) == 0
        assert main(["toy-runner", "predict", "--config", str(config),
                     "--model", str(tmp_path / "model"), "--input", str(train),
                     "--output", str(tmp_path / "preds.jsonl")]) == 0
        assert (tmp_path / "preds.jsonl").is_file()

    def test_toy_runner_errors_exit_one(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text("{}", encoding="utf-8")
        train = tmp_path / "train.jsonl"
        write_rendered(render_corpus(make_corpus(2), Setting.BASELINE), train)
        code = main(["toy-runner", "predict", "--config", str(config),
                     "--model", str(tmp_path / "untrained"), "--input", str(train),
                     "--output", str(tmp_path / "preds.jsonl")])
        assert code == 1
        assert "toy-runner:" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("treu-eval") is None,
                    reason="console script not installed")
def test_console_script_runs_nested_toy_runner(tmp_path):
    """The installed entry point drives a full evaluation whose runner is
    itself the console script's toy-runner passthrough."""
    exact_corpus(tmp_path / "canon", n_train=8, n_eval=4)
    completed = subprocess.run(
        [
            shutil.which("treu-eval"), "run",
            "--dataset", "unit-test",
            "--canonical-dir", str(tmp_path / "canon"),
            "--runner-cmd", "treu-eval toy-runner",
            "--out-dir", str(tmp_path / "results"),
            *EXACT_EXTRAS,
        ],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert completed.returncode == 0, completed.stderr
    assert "0.750" in completed.stdout
