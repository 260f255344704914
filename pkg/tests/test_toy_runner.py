"""Deterministic reference runner: recorded traits and fixed policies."""

import json

import pytest

from conftest import make_corpus
from treu_eval.toy_runner import (
    MODEL_FILENAME,
    ToyBehavior,
    ToyRunnerError,
    _overlap_argmax,
    _parse_choices,
    _split_input,
    main,
    toy_finetune,
    toy_predict,
)
from treu_eval.unified import Setting, render_corpus, write_rendered


def corpus_file(path, setting, n=8, *, split="train", quote_gold=True):
    instances = make_corpus(n, split=split, quote_gold=quote_gold)
    write_rendered(render_corpus(instances, setting), path)
    return path


def model_from(tmp_path, setting, config=None):
    train = corpus_file(tmp_path / "train.jsonl", setting)
    model_dir = tmp_path / "model"
    toy_finetune(config or {}, train, model_dir)
    return model_dir


def generations(output_path):
    lines = output_path.read_text(encoding="utf-8").splitlines()
    return [json.loads(line)["generation"] for line in lines]


class TestBehavior:
    def test_defaults(self):
        behavior = ToyBehavior.from_config({})
        assert behavior.baseline_policy == "first_choice"
        assert behavior.zero_shot_overlap_prob == 0.5
        assert behavior.sr_shift_prob == 0.0

    def test_reads_extras(self):
        behavior = ToyBehavior.from_config(
            {
                "toy_baseline_policy": "seeded_uniform",
                "toy_zero_shot_overlap_prob": 0.0,
                "toy_sr_shift_prob": 1.0,
            }
        )
        assert behavior.baseline_policy == "seeded_uniform"
        assert behavior.zero_shot_overlap_prob == 0.0
        assert behavior.sr_shift_prob == 1.0

    def test_unknown_policy(self):
        with pytest.raises(ToyRunnerError, match="unknown toy_baseline_policy 'oracle'"):
            ToyBehavior.from_config({"toy_baseline_policy": "oracle"})


class TestFinetune:
    def test_baseline_corpus_learns_nothing(self, tmp_path):
        model_dir = model_from(tmp_path, Setting.BASELINE)
        model = json.loads((model_dir / MODEL_FILENAME).read_text(encoding="utf-8"))
        assert model["learned_reliance"] is False
        assert model["sr_trained"] is False

    def test_infusion_corpus_sets_reliance(self, tmp_path):
        model_dir = model_from(tmp_path, Setting.INFUSION)
        model = json.loads((model_dir / MODEL_FILENAME).read_text(encoding="utf-8"))
        assert model["learned_reliance"] is True
        assert model["sr_trained"] is False

    def test_rationalization_corpus_sets_sr(self, tmp_path):
        model_dir = model_from(tmp_path, Setting.SELF_RATIONALIZATION)
        model = json.loads((model_dir / MODEL_FILENAME).read_text(encoding="utf-8"))
        assert model["learned_reliance"] is False
        assert model["sr_trained"] is True

    def test_records_config_knobs(self, tmp_path):
        config = {"seed": 9, "toy_baseline_policy": "seeded_uniform"}
        model_dir = model_from(tmp_path, Setting.BASELINE, config)
        model = json.loads((model_dir / MODEL_FILENAME).read_text(encoding="utf-8"))
        assert model["seed"] == 9
        assert model["baseline_policy"] == "seeded_uniform"
        assert model["sep_token"] == "<sep>"


class TestInputParsing:
    def test_split_without_separator(self):
        assert _split_input("explain: why? choice-1: a", "<sep>") == (
            "explain: why? choice-1: a",
            None,
        )

    def test_split_strips_lead(self):
        task, explanation = _split_input(
            "explain: why? choice-1: a <sep> because it rains", "<sep>"
        )
        assert task == "explain: why? choice-1: a"
        assert explanation == "it rains"

    def test_split_without_lead_keeps_tail(self):
        _, explanation = _split_input("task <sep> raw tail", "<sep>")
        assert explanation == "raw tail"

    def test_parse_choices_multiword(self):
        task = (
            "explain: which is best? choice-1: red apple"
            " choice-2: green pear choice-3: dried fig"
        )
        assert _parse_choices(task) == ["red apple", "green pear", "dried fig"]

    def test_parse_choices_requires_markers(self):
        with pytest.raises(ToyRunnerError, match="no choices found"):
            _parse_choices("explain: no options here")


class TestOverlapArgmax:
    def test_picks_highest_overlap(self):
        choices = ["red apple", "green pear", "dried fig"]
        assert _overlap_argmax(choices, "the pear was green and ripe") == 1

    def test_counts_multiplicity(self):
        choices = ["very very good", "very bad"]
        assert _overlap_argmax(choices, "very very awful") == 0

    def test_tie_goes_to_lowest_index(self):
        assert _overlap_argmax(["left", "right"], "nothing matches") == 0

    def test_normalizes_case_and_punctuation(self):
        assert _overlap_argmax(["Apple.", "pear"], "an APPLE a day") == 0


class TestPredict:
    def test_first_choice_policy(self, tmp_path):
        model_dir = model_from(tmp_path, Setting.BASELINE)
        eval_file = corpus_file(tmp_path / "eval.jsonl", Setting.BASELINE,
                                n=6, split="valid")
        out = tmp_path / "preds.jsonl"
        toy_predict(model_dir, eval_file, out)
        assert generations(out) == [f"w{i}x0" for i in range(6)]

    def test_seeded_uniform_is_deterministic(self, tmp_path):
        config = {"toy_baseline_policy": "seeded_uniform", "seed": 7}
        model_dir = model_from(tmp_path, Setting.BASELINE, config)
        eval_file = corpus_file(tmp_path / "eval.jsonl", Setting.BASELINE,
                                n=24, split="valid")
        first, second = tmp_path / "first.jsonl", tmp_path / "second.jsonl"
        toy_predict(model_dir, eval_file, first)
        toy_predict(model_dir, eval_file, second)
        assert first.read_bytes() == second.read_bytes()
        columns = {gen.rsplit("x", 1)[1] for gen in generations(first)}
        assert len(columns) > 1  # not stuck on one column

    def test_reliant_model_follows_explanations(self, tmp_path):
        model_dir = model_from(tmp_path, Setting.INFUSION)
        eval_file = corpus_file(tmp_path / "eval.jsonl", Setting.INFUSION,
                                n=8, split="valid")
        out = tmp_path / "preds.jsonl"
        toy_predict(model_dir, eval_file, out)
        assert generations(out) == [f"w{i}x{i % 4}" for i in range(8)]

    def test_zero_shot_overlap_disabled(self, tmp_path):
        config = {"toy_zero_shot_overlap_prob": 0.0}
        model_dir = model_from(tmp_path, Setting.BASELINE, config)
        eval_file = corpus_file(tmp_path / "eval.jsonl", Setting.INFUSION,
                                n=8, split="valid")
        out = tmp_path / "preds.jsonl"
        toy_predict(model_dir, eval_file, out)
        assert generations(out) == [f"w{i}x0" for i in range(8)]

    def test_zero_shot_overlap_certain(self, tmp_path):
        config = {"toy_zero_shot_overlap_prob": 1.0}
        model_dir = model_from(tmp_path, Setting.BASELINE, config)
        eval_file = corpus_file(tmp_path / "eval.jsonl", Setting.INFUSION,
                                n=8, split="valid")
        out = tmp_path / "preds.jsonl"
        toy_predict(model_dir, eval_file, out)
        assert generations(out) == [f"w{i}x{i % 4}" for i in range(8)]

    def test_rationalizing_model_appends_lead(self, tmp_path):
        model_dir = model_from(tmp_path, Setting.SELF_RATIONALIZATION)
        eval_file = corpus_file(tmp_path / "eval.jsonl", Setting.SELF_RATIONALIZATION,
                                n=4, split="valid")
        out = tmp_path / "preds.jsonl"
        toy_predict(model_dir, eval_file, out)
        assert generations(out) == [
            f"w{i}x0 because that is the trained pattern" for i in range(4)
        ]

    def test_sr_shift_moves_answers_off_by_one(self, tmp_path):
        config = {"toy_sr_shift_prob": 1.0}
        model_dir = model_from(tmp_path, Setting.SELF_RATIONALIZATION, config)
        eval_file = corpus_file(tmp_path / "eval.jsonl", Setting.SELF_RATIONALIZATION,
                                n=4, split="valid")
        out = tmp_path / "preds.jsonl"
        toy_predict(model_dir, eval_file, out)
        assert generations(out) == [
            f"w{i}x1 because that is the trained pattern" for i in range(4)
        ]

    def test_predict_requires_model(self, tmp_path):
        eval_file = corpus_file(tmp_path / "eval.jsonl", Setting.BASELINE, n=2)
        with pytest.raises(ToyRunnerError, match="fine-tune first"):
            toy_predict(tmp_path / "untrained", eval_file, tmp_path / "out.jsonl")

    def test_rejects_input_missing_fields(self, tmp_path):
        model_dir = model_from(tmp_path, Setting.BASELINE)
        bad = tmp_path / "eval.jsonl"
        bad.write_text('{"instance_id": "x/1"}\n', encoding="utf-8")
        with pytest.raises(ToyRunnerError, match="missing field 'input_text'"):
            toy_predict(model_dir, bad, tmp_path / "out.jsonl")


class TestMain:
    def finetune_argv(self, tmp_path, config=None):
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config or {}), encoding="utf-8")
        train = corpus_file(tmp_path / "train.jsonl", Setting.BASELINE)
        return [
            "finetune",
            "--config", str(config_path),
            "--train", str(train),
            "--out", str(tmp_path / "model"),
        ]

    def test_full_run_exits_zero(self, tmp_path, capsys):
        assert main(self.finetune_argv(tmp_path)) == 0
        eval_file = corpus_file(tmp_path / "eval.jsonl", Setting.BASELINE,
                                n=3, split="valid")
        out = tmp_path / "preds.jsonl"
        assert main([
            "predict",
            "--config", str(tmp_path / "config.json"),
            "--model", str(tmp_path / "model"),
            "--input", str(eval_file),
            "--output", str(out),
        ]) == 0
        assert len(generations(out)) == 3
        assert capsys.readouterr().err == ""

    def test_missing_model_exits_one(self, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        config_path.write_text("{}", encoding="utf-8")
        eval_file = corpus_file(tmp_path / "eval.jsonl", Setting.BASELINE, n=2)
        code = main([
            "predict",
            "--config", str(config_path),
            "--model", str(tmp_path / "nowhere"),
            "--input", str(eval_file),
            "--output", str(tmp_path / "out.jsonl"),
        ])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("toy-runner:")
        assert "fine-tune first" in err

    def test_bad_config_exits_one(self, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        config_path.write_text("{broken", encoding="utf-8")
        train = corpus_file(tmp_path / "train.jsonl", Setting.BASELINE)
        code = main([
            "finetune",
            "--config", str(config_path),
            "--train", str(train),
            "--out", str(tmp_path / "model"),
        ])
        assert code == 1
        assert capsys.readouterr().err.startswith("toy-runner:")

    def test_unknown_policy_exits_one(self, tmp_path, capsys):
        argv = self.finetune_argv(tmp_path, {"toy_baseline_policy": "oracle"})
        assert main(argv) == 1
        assert "unknown toy_baseline_policy" in capsys.readouterr().err

    def test_non_object_config_exits_one(self, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        config_path.write_text("[]", encoding="utf-8")
        train = corpus_file(tmp_path / "train.jsonl", Setting.BASELINE)
        code = main([
            "finetune",
            "--config", str(config_path),
            "--train", str(train),
            "--out", str(tmp_path / "model"),
        ])
        assert code == 1
        assert "not a JSON object" in capsys.readouterr().err
