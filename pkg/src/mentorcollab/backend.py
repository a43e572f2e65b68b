"""Model endpoint abstraction plus deterministic mocks and the wire client.

A backend is anything that can greedily continue text.  The two mock
families defined here let the whole protocol run without real LLMs:

* ``ScriptedBackend`` replays explicit full-text scripts (exact end-to-end
  fixtures); its tokenizer is "one whitespace word = one token".
* ``NGramBackend`` is an order-2 maximum-likelihood word model over a tiny
  corpus, for property tests that need nontrivial dynamics.

``HttpBackend`` speaks the JSON-over-HTTP wire protocol to a model adapter.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from abc import ABC, abstractmethod
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .errors import BackendUnavailable, CapabilityMissing, ScriptMiss
from .stream import WHITESPACE, Source, TopKDistribution, split_next_word


@dataclass(frozen=True)
class BackendCapabilities:
    name: str
    hidden_dim: Optional[int]
    supports_hidden_state: bool
    tokenizer_id: str

    def __post_init__(self) -> None:
        if self.supports_hidden_state and self.hidden_dim is None:
            raise ValueError("supports_hidden_state requires hidden_dim")


@dataclass(frozen=True)
class HiddenState:
    vector: Tuple[float, ...]
    position_context_hash: int

    def __post_init__(self) -> None:
        if any(not math.isfinite(v) for v in self.vector):
            raise ValueError("hidden state must be finite")


@dataclass(frozen=True)
class Segment:
    """A short greedy lookahead continuation from one model."""

    text: str
    native_token_count: int
    producer: Source

    @property
    def empty(self) -> bool:
        return self.native_token_count == 0


class Backend(ABC):
    """One model endpoint.  All decoding is greedy, hence deterministic."""

    @abstractmethod
    def capabilities(self) -> BackendCapabilities:
        ...

    @abstractmethod
    def next_word(self, context: str) -> Tuple[str, int, TopKDistribution]:
        """Greedy continuation up to and including the next whitespace boundary.

        Returns ``(word, native_token_count, topk)`` where ``topk`` is the
        distribution at the first token of the word.  End-of-text is
        signalled by an empty word with count 0.
        """

    @abstractmethod
    def propose_segment(self, context: str, max_tokens: int) -> Segment:
        """Greedy continuation of min(max_tokens, tokens-until-EOT) native tokens."""

    @abstractmethod
    def distribution(self, context: str, top_k: int) -> TopKDistribution:
        """Top-k next-token candidates with true (pre-renormalization) probabilities."""

    def hidden_state(self, context: str) -> HiddenState:
        raise CapabilityMissing(f"{self.capabilities().name} has no hidden states")

    @abstractmethod
    def count_tokens(self, text: str) -> int:
        """Token count of ``text`` in this backend's own tokenizer."""


def _context_hash(context: str) -> int:
    return int.from_bytes(hashlib.sha256(context.encode("utf-8")).digest()[:8], "big")


def _count_words(text: str) -> int:
    return len(text.split())


class _WordTokenMock(Backend):
    """Shared plumbing for mocks whose native token unit is the word."""

    def __init__(self, name: str, hidden_dim: Optional[int] = None) -> None:
        self._name = name
        self._hidden_dim = hidden_dim
        self.request_counts: Counter = Counter()

    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(
            name=self._name,
            hidden_dim=self._hidden_dim,
            supports_hidden_state=self._hidden_dim is not None,
            tokenizer_id=f"whitespace:{self._name}",
        )

    def count_tokens(self, text: str) -> int:
        return max(_count_words(text), 1) if text.strip() else 0

    def _default_hidden(self, context: str) -> HiddenState:
        # Deterministic pseudo-embedding: unit-scale values seeded by context.
        assert self._hidden_dim is not None
        h = hashlib.sha256(context.encode("utf-8")).digest()
        vals = []
        counter = 0
        while len(vals) < self._hidden_dim:
            block = hashlib.sha256(h + counter.to_bytes(4, "big")).digest()
            for i in range(0, len(block), 4):
                vals.append(int.from_bytes(block[i : i + 4], "big") / 2**31 - 1.0)
            counter += 1
        return HiddenState(tuple(vals[: self._hidden_dim]), _context_hash(context))

    def hidden_state(self, context: str) -> HiddenState:
        if self._hidden_dim is None:
            raise CapabilityMissing(f"{self._name} has no hidden states")
        self.request_counts["hidden_state"] += 1
        return self._default_hidden(context)


class ScriptedBackend(_WordTokenMock):
    """Replays explicit scripts.

    ``texts`` is a list of full documents (prompt + continuation).  Given a
    context, the first document having the context as a prefix defines the
    greedy continuation; no match raises ``ScriptMiss``.  ``reply_fn``, when
    set, intercepts segment requests (used to script verifier replies) by
    returning a reply string or None to fall through to the script.
    """

    def __init__(
        self,
        texts: Sequence[str],
        name: str = "scripted",
        hidden_dim: Optional[int] = None,
        topk_table: Optional[Dict[str, TopKDistribution]] = None,
        hidden_table: Optional[Dict[str, Sequence[float]]] = None,
        reply_fn: Optional[Callable[[str], Optional[str]]] = None,
    ) -> None:
        super().__init__(name, hidden_dim)
        self._texts = tuple(texts)
        self._topk_table = dict(topk_table or {})
        self._hidden_table = {k: tuple(v) for k, v in (hidden_table or {}).items()}
        self._reply_fn = reply_fn

    def _continuation(self, context: str) -> str:
        for text in self._texts:
            if text.startswith(context):
                return text[len(context) :]
        raise ScriptMiss(f"no script entry for context ending {context[-60:]!r}")

    def next_word(self, context: str) -> Tuple[str, int, TopKDistribution]:
        self.request_counts["next_word"] += 1
        rest = self._continuation(context)
        if not rest.strip():
            return "", 0, TopKDistribution((), k=1)
        word, _ = split_next_word(rest)
        topk = self._topk_table.get(context)
        if topk is None:
            topk = TopKDistribution(((word.lstrip(WHITESPACE), 1.0),), k=1)
        return word, 1, topk

    def propose_segment(self, context: str, max_tokens: int) -> Segment:
        self.request_counts["segment"] += 1
        if self._reply_fn is not None:
            reply = self._reply_fn(context)
            if reply is not None:
                return Segment(reply, max(_count_words(reply), 1), self._producer())
        rest = self._continuation(context)
        taken = ""
        for _ in range(max_tokens):
            if not rest.strip():
                break
            word, rest = split_next_word(rest)
            taken += word
        return Segment(taken, _count_words(taken), self._producer())

    def distribution(self, context: str, top_k: int) -> TopKDistribution:
        self.request_counts["distribution"] += 1
        topk = self._topk_table.get(context)
        if topk is not None:
            return TopKDistribution(topk.entries[:top_k], k=top_k)
        rest = self._continuation(context)
        if not rest.strip():
            return TopKDistribution((), k=top_k)
        word, _ = split_next_word(rest)
        return TopKDistribution(((word.lstrip(WHITESPACE), 1.0),), k=top_k)

    def hidden_state(self, context: str) -> HiddenState:
        if self._hidden_dim is None:
            raise CapabilityMissing(f"{self._name} has no hidden states")
        self.request_counts["hidden_state"] += 1
        vec = self._hidden_table.get(context)
        if vec is not None:
            return HiddenState(vec, _context_hash(context))
        return self._default_hidden(context)

    def _producer(self) -> Source:
        return Source.MENTOR if "mentor" in self._name else Source.GENERATOR


class NGramBackend(_WordTokenMock):
    """Order-2 (bigram) maximum-likelihood word model over a corpus.

    The next word depends only on the previous word; ties break toward the
    lexicographically smallest candidate so decoding stays deterministic.
    """

    def __init__(
        self, corpus: str, name: str = "ngram", hidden_dim: Optional[int] = None
    ) -> None:
        super().__init__(name, hidden_dim)
        tokens = corpus.split()
        self._counts: Dict[str, Counter] = defaultdict(Counter)
        for prev, cur in zip(tokens, tokens[1:]):
            self._counts[prev][cur] += 1
        self._start = tokens[0] if tokens else ""

    def _candidates(self, context: str) -> List[Tuple[str, float]]:
        words = context.split()
        prev = words[-1] if words else self._start
        counts = self._counts.get(prev)
        if not counts:
            return []
        total = sum(counts.values())
        # Sort by probability descending, then lexicographically.
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return [(w, c / total) for w, c in ranked]

    def next_word(self, context: str) -> Tuple[str, int, TopKDistribution]:
        self.request_counts["next_word"] += 1
        cands = self._candidates(context)
        if not cands:
            return "", 0, TopKDistribution((), k=1)
        word = cands[0][0]
        sep = "" if (context and context[-1] in WHITESPACE) else " "
        return sep + word, 1, TopKDistribution(tuple(cands[:5]), k=5)

    def propose_segment(self, context: str, max_tokens: int) -> Segment:
        self.request_counts["segment"] += 1
        taken = ""
        ctx = context
        for _ in range(max_tokens):
            word, count, _ = self.next_word(ctx)
            self.request_counts["next_word"] -= 1  # internal call, not a request
            if count == 0:
                break
            taken += word
            ctx += word
        return Segment(taken, _count_words(taken), self._producer())

    def distribution(self, context: str, top_k: int) -> TopKDistribution:
        self.request_counts["distribution"] += 1
        cands = self._candidates(context)
        return TopKDistribution(tuple(cands[:top_k]), k=top_k)

    def _producer(self) -> Source:
        return Source.MENTOR if "mentor" in self._name else Source.GENERATOR


class HttpBackend(Backend):
    """Wire-protocol client.  Idempotent calls retry twice with backoff."""

    RETRIES = 2
    BACKOFF_S = 0.25

    def __init__(self, base_url: str, producer: Source = Source.GENERATOR) -> None:
        import requests

        self._base = base_url.rstrip("/")
        self._session = requests.Session()
        self._producer = producer
        self._caps: Optional[BackendCapabilities] = None

    def _request(self, method: str, path: str, body: Optional[dict] = None) -> dict:
        import requests

        url = self._base + path
        last_err: Optional[Exception] = None
        for attempt in range(self.RETRIES + 1):
            try:
                if method == "GET":
                    resp = self._session.get(url, timeout=60)
                else:
                    resp = self._session.post(url, json=body, timeout=300)
                resp.raise_for_status()
                return resp.json()
            except requests.RequestException as err:  # pragma: no cover - timing
                last_err = err
                if attempt < self.RETRIES:
                    time.sleep(self.BACKOFF_S * 2**attempt)
        raise BackendUnavailable(f"{url}: {last_err}")

    def capabilities(self) -> BackendCapabilities:
        if self._caps is None:
            obj = self._request("GET", "/v1/capabilities")
            self._caps = BackendCapabilities(
                name=obj["name"],
                hidden_dim=obj.get("hidden_dim"),
                supports_hidden_state=obj["supports_hidden_state"],
                tokenizer_id=obj["tokenizer_id"],
            )
        return self._caps

    def next_word(self, context: str) -> Tuple[str, int, TopKDistribution]:
        obj = self._request("POST", "/v1/next_word", {"context": context, "top_k": 5})
        topk = TopKDistribution(
            tuple((e["token"], e["prob"]) for e in obj["topk"]), k=max(len(obj["topk"]), 1)
        )
        return obj["word"], obj["native_token_count"], topk

    def propose_segment(self, context: str, max_tokens: int) -> Segment:
        obj = self._request(
            "POST", "/v1/segment", {"context": context, "max_tokens": max_tokens}
        )
        return Segment(obj["text"], obj["native_token_count"], self._producer)

    def hidden_state(self, context: str) -> HiddenState:
        caps = self.capabilities()
        if not caps.supports_hidden_state:
            raise CapabilityMissing(f"{caps.name} has no hidden states")
        obj = self._request("POST", "/v1/hidden_state", {"context": context})
        if len(obj["vector"]) != obj["dim"]:
            raise BackendUnavailable("hidden_state dim/vector length mismatch")
        return HiddenState(tuple(obj["vector"]), _context_hash(context))

    def distribution(self, context: str, top_k: int) -> TopKDistribution:
        obj = self._request(
            "POST", "/v1/distribution", {"context": context, "top_k": top_k}
        )
        return TopKDistribution(
            tuple((e["token"], e["prob"]) for e in obj["topk"]), k=top_k
        )

    def count_tokens(self, text: str) -> int:
        obj = self._request("POST", "/v1/count_tokens", {"text": text})
        return obj["count"]
