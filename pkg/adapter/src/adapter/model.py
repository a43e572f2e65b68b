"""Greedy-decoding operations over a loaded causal LM.

One instance serves one checkpoint.  All public methods are deterministic:
decoding is greedy, the model runs in eval mode under no_grad, and requests
are serialized by the caller (see server.py).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

WHITESPACE = " \t\n\r"


class ContextTooLong(Exception):
    """Request context exceeds the configured window."""


@dataclass
class TopEntry:
    token: str
    prob: float


class ModelRunner:
    def __init__(self, model_id: str, device: str = "cpu",
                 max_context: int = 2048) -> None:
        self.model_id = model_id
        self.device = torch.device(device)
        self.max_context = max_context
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = AutoModelForCausalLM.from_pretrained(model_id)
        self.model.to(self.device)
        self.model.eval()
        self.hidden_dim = int(self.model.config.hidden_size)

    # -- tokenization ------------------------------------------------------

    def count_tokens(self, text: str) -> int:
        if not text:
            return 0
        return len(self.tokenizer.encode(text, add_special_tokens=False))

    def _encode_context(self, context: str) -> torch.Tensor:
        ids = self.tokenizer.encode(context, add_special_tokens=False)
        if len(ids) > self.max_context:
            raise ContextTooLong(
                f"context is {len(ids)} tokens, limit {self.max_context}"
            )
        if not ids:
            # An empty prompt still needs one position to condition on.
            bos = self.tokenizer.bos_token_id or self.tokenizer.eos_token_id
            ids = [bos] if bos is not None else [0]
        return torch.tensor([ids], dtype=torch.long, device=self.device)

    # -- core forward passes ----------------------------------------------

    @torch.no_grad()
    def _next_logits(self, input_ids: torch.Tensor) -> torch.Tensor:
        out = self.model(input_ids=input_ids)
        return out.logits[0, -1, :]

    def _is_eot(self, token_id: int) -> bool:
        return token_id in set(
            filter(lambda t: t is not None,
                   [self.tokenizer.eos_token_id, self.tokenizer.pad_token_id])
        )

    def top_k(self, context: str, k: int) -> List[TopEntry]:
        input_ids = self._encode_context(context)
        logits = self._next_logits(input_ids)
        probs = torch.softmax(logits.float(), dim=-1)
        values, indices = torch.topk(probs, min(k * 2, probs.shape[-1]))
        entries: List[TopEntry] = []
        seen = set()
        for p, idx in zip(values.tolist(), indices.tolist()):
            if self._is_eot(idx):
                continue
            text = self.tokenizer.decode([idx]).strip()
            if not text or text in seen:
                continue
            seen.add(text)
            entries.append(TopEntry(text, float(p)))
            if len(entries) >= k:
                break
        return entries

    @torch.no_grad()
    def _greedy_ids(self, context: str, max_tokens: int) -> Tuple[List[int], List[int]]:
        input_ids = self._encode_context(context)
        ctx_ids = input_ids[0].tolist()
        produced: List[int] = []
        for _ in range(max_tokens):
            logits = self._next_logits(input_ids)
            token_id = int(torch.argmax(logits).item())
            if self._is_eot(token_id):
                break
            produced.append(token_id)
            input_ids = torch.cat(
                [input_ids, torch.tensor([[token_id]], device=self.device)], dim=1
            )
        return ctx_ids, produced

    def _decode_incremental(self, ctx_ids: List[int], ids: List[int]) -> List[str]:
        """Per-token surface text via whole-sequence decoding diffs against
        the context, so joining whitespace and context-dependent spacing are
        preserved exactly."""
        texts, prev = [], self.tokenizer.decode(ctx_ids)
        for i in range(len(ids)):
            cur = self.tokenizer.decode(ctx_ids + ids[: i + 1])
            texts.append(cur[len(prev):])
            prev = cur
        return texts

    # -- protocol operations ----------------------------------------------

    def next_word(self, context: str, k: int) -> Tuple[str, int, List[TopEntry]]:
        """Greedy tokens up to the next word boundary.

        A word is complete once non-whitespace content has been produced and
        the next greedy token would start a new whitespace-separated word.
        Returns ("", 0, []) at end of text.
        """
        # Budget: a word should never need more tokens than this.
        ctx_ids, ids = self._greedy_ids(context, 16)
        if not ids:
            return "", 0, []
        pieces = self._decode_incremental(ctx_ids, ids)
        word = ""
        used = 0
        for piece in pieces:
            if word.strip() and piece[:1] in WHITESPACE:
                break
            word += piece
            used += 1
            if word.strip() and word[-1] in WHITESPACE:
                # Token ended exactly on a boundary; trailing whitespace
                # belongs to the next word.
                word = word.rstrip()
                break
        if not word.strip():
            return "", 0, []
        return word, used, self.top_k(context, k)

    def segment(self, context: str, max_tokens: int) -> Tuple[str, int]:
        ctx_ids, ids = self._greedy_ids(context, max_tokens)
        if not ids:
            return "", 0
        base = self.tokenizer.decode(ctx_ids)
        text = self.tokenizer.decode(ctx_ids + ids)[len(base):]
        return text, len(ids)

    @torch.no_grad()
    def hidden_state(self, context: str) -> List[float]:
        input_ids = self._encode_context(context)
        out = self.model(input_ids=input_ids, output_hidden_states=True)
        vec = out.hidden_states[-1][0, -1, :].float().cpu()
        values = vec.tolist()
        if any(not math.isfinite(v) for v in values):
            raise RuntimeError("non-finite hidden state")
        return values

    def capabilities(self) -> dict:
        return {
            "name": self.model_id,
            "hidden_dim": self.hidden_dim,
            "supports_hidden_state": True,
            "tokenizer_id": f"hf:{self.model_id}",
        }
