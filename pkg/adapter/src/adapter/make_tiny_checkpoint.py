"""Build a tiny offline checkpoint for adapter testing.

Trains a word-level tokenizer on a small built-in corpus and pairs it with
a randomly initialized two-layer causal LM (seeded, so the checkpoint is
reproducible).  No network access needed.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import torch
from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import Metaspace as MetaspacePre
from tokenizers.decoders import Metaspace as MetaspaceDec
from tokenizers.trainers import WordLevelTrainer
from transformers import LlamaConfig, LlamaForCausalLM, PreTrainedTokenizerFast

CORPUS = """
the cat sat on the mat and the dog ran over the hill
numbers like 1 2 3 4 5 add up to 15 in total
the answer is 42 because the problem asks for the product
a small model can still finish a sentence about the weather
rain fell on the hill and the cat ran home to the mat
the problem asks for the sum of 2 and 3 which is 5
Option A or Option B is the question we must decide now
Problem: find the value. The value equals 7. Final answer done
""".strip()


def build(out_dir: str, hidden_size: int = 32, layers: int = 2,
          seed: int = 0) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    tok = Tokenizer(WordLevel(unk_token="[UNK]"))
    tok.pre_tokenizer = MetaspacePre()
    tok.decoder = MetaspaceDec()
    trainer = WordLevelTrainer(special_tokens=["[UNK]", "[EOS]", "[PAD]"])
    tok.train_from_iterator(CORPUS.splitlines(), trainer)
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        unk_token="[UNK]",
        eos_token="[EOS]",
        pad_token="[PAD]",
    )
    tokenizer.save_pretrained(out)

    torch.manual_seed(seed)
    config = LlamaConfig(
        vocab_size=tokenizer.vocab_size,
        hidden_size=hidden_size,
        intermediate_size=hidden_size * 2,
        num_hidden_layers=layers,
        num_attention_heads=2,
        num_key_value_heads=2,
        max_position_embeddings=512,
        eos_token_id=tokenizer.eos_token_id,
        pad_token_id=tokenizer.pad_token_id,
    )
    model = LlamaForCausalLM(config)
    model.save_pretrained(out)
    return out


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="tiny_checkpoint")
    parser.add_argument("--hidden-size", type=int, default=32)
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    path = build(args.out, args.hidden_size, args.layers, args.seed)
    print(f"tiny checkpoint written to {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
