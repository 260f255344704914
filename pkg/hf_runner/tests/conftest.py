"""Tiny local seq2seq checkpoints for exercising the runner.

Both checkpoints are built from scratch so the tests never touch the
network: a word-level tokenizer trained on the rendered synthetic corpus
plus a randomly initialized two-layer model, saved to disk and loaded by
path exactly the way a published checkpoint would be loaded by name.

The T5-style checkpoint has no bos token and no separator in its
vocabulary, so it exercises the add-and-resize separator path; the
BART-style one defines ``<s>``, exercising the substitution path.  The
vocabulary is trained only on baseline and self-rationalization renders,
which contain every template word except the separator itself.
"""

from __future__ import annotations

from pathlib import Path

import pytest
import torch
from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import WhitespaceSplit
from tokenizers.processors import TemplateProcessing
from tokenizers.trainers import WordLevelTrainer
from transformers import (
    BartConfig,
    BartForConditionalGeneration,
    PreTrainedTokenizerFast,
    T5Config,
    T5ForConditionalGeneration,
)

from treu_eval import unified
from treu_eval.conformance import default_corpus
from treu_eval.unified import Setting


def _corpus_texts() -> list[str]:
    texts = []
    for setting in (Setting.BASELINE, Setting.SELF_RATIONALIZATION):
        for example in unified.render_corpus(default_corpus(), setting):
            texts.append(example.input_text)
            texts.append(example.target_text)
    return texts


def _train_word_level(specials: list[str]) -> Tokenizer:
    tokenizer = Tokenizer(WordLevel(unk_token="<unk>"))
    tokenizer.pre_tokenizer = WhitespaceSplit()
    tokenizer.train_from_iterator(_corpus_texts(), WordLevelTrainer(special_tokens=specials))
    return tokenizer


def build_t5_checkpoint(out_dir: Path) -> Path:
    tok = _train_word_level(["<pad>", "</s>", "<unk>"])
    tok.post_processor = TemplateProcessing(
        single="$A </s>",
        special_tokens=[("</s>", tok.token_to_id("</s>"))],
    )
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=tok, pad_token="<pad>", eos_token="</s>", unk_token="<unk>"
    )
    assert tokenizer.bos_token is None
    assert "<sep>" not in tokenizer.get_vocab()

    torch.manual_seed(0)
    config = T5Config(
        vocab_size=len(tokenizer),
        d_model=32, d_kv=8, d_ff=64, num_layers=2, num_heads=2,
        pad_token_id=tokenizer.pad_token_id,
        eos_token_id=tokenizer.eos_token_id,
        decoder_start_token_id=tokenizer.pad_token_id,
    )
    model = T5ForConditionalGeneration(config)
    model.save_pretrained(out_dir)
    tokenizer.save_pretrained(out_dir)
    return out_dir


def build_bart_checkpoint(out_dir: Path) -> Path:
    tok = _train_word_level(["<s>", "<pad>", "</s>", "<unk>"])
    tok.post_processor = TemplateProcessing(
        single="<s> $A </s>",
        special_tokens=[
            ("<s>", tok.token_to_id("<s>")),
            ("</s>", tok.token_to_id("</s>")),
        ],
    )
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        bos_token="<s>", pad_token="<pad>", eos_token="</s>", unk_token="<unk>",
    )

    torch.manual_seed(0)
    config = BartConfig(
        vocab_size=len(tokenizer),
        d_model=32,
        encoder_layers=2, decoder_layers=2,
        encoder_attention_heads=2, decoder_attention_heads=2,
        encoder_ffn_dim=64, decoder_ffn_dim=64,
        max_position_embeddings=640,
        pad_token_id=tokenizer.pad_token_id,
        bos_token_id=tokenizer.bos_token_id,
        eos_token_id=tokenizer.eos_token_id,
        decoder_start_token_id=tokenizer.eos_token_id,
        forced_bos_token_id=tokenizer.bos_token_id,
    )
    model = BartForConditionalGeneration(config)
    model.save_pretrained(out_dir)
    tokenizer.save_pretrained(out_dir)
    return out_dir


@pytest.fixture(scope="session")
def t5_checkpoint(tmp_path_factory) -> Path:
    return build_t5_checkpoint(tmp_path_factory.mktemp("tiny-t5"))


@pytest.fixture(scope="session")
def bart_checkpoint(tmp_path_factory) -> Path:
    return build_bart_checkpoint(tmp_path_factory.mktemp("tiny-bart"))


def write_rendered_corpus(path: Path, setting: Setting, n: int = 8, choices: int = 3) -> None:
    unified.write_rendered(unified.render_corpus(default_corpus(n, choices), setting), path)
