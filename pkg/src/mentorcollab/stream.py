"""Domain types for the collaborative word stream plus small numeric helpers.

Everything here is an immutable value object: traces can be shared across
concurrent generation streams without locking.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence, Tuple

from .errors import EmptyDistribution, EmptyStream, EmptyTrace

# Word boundaries are ASCII whitespace only; broader unicode classes would
# have to be mirrored by every backend tokenizer, so we keep the narrow set.
WHITESPACE = " \t\n\r"


class Source(str, Enum):
    GENERATOR = "generator"
    MENTOR = "mentor"


class TerminatedReason(str, Enum):
    MAX_LENGTH = "max_length"
    STOP_SEQUENCE = "stop_sequence"
    END_OF_TEXT = "end_of_text"


class VerifierKind(str, Enum):
    NONE = "none"
    FREE = "free"
    MLP = "mlp"
    ALWAYS_GENERATOR = "always_generator"
    ALWAYS_MENTOR = "always_mentor"


class BaselineKind(str, Enum):
    AVERAGE_DECODING = "average_decoding"
    NUDGING = "nudging"
    COSD = "cosd"
    RSTITCH = "rstitch"


@dataclass(frozen=True)
class Word:
    """One whitespace-delimited unit of the output stream.

    ``text`` keeps its leading whitespace run so that concatenating word
    texts reconstructs the stream byte-exactly.  ``native_token_count`` is
    in the producing model's tokenizer; ``generator_token_count`` is the
    same text re-encoded by the generator and is the unit used for the
    length cap and the mentor-token ratio.
    """

    text: str
    source: Source
    native_token_count: int
    generator_token_count: int

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("word text must be non-empty")
        stripped = self.text.lstrip(WHITESPACE)
        if any(c in WHITESPACE for c in stripped):
            raise ValueError(f"word has internal whitespace: {self.text!r}")
        if self.native_token_count < 1 or self.generator_token_count < 1:
            raise ValueError("token counts must be >= 1 for non-empty words")


@dataclass(frozen=True)
class DecisionRecord:
    """What happened at one word boundary."""

    position: int
    probed: bool
    disagreed: bool = False
    verifier_choice: Optional[Source] = None
    segment_adopted_text: Optional[str] = None

    def __post_init__(self) -> None:
        if self.disagreed and not self.probed:
            raise ValueError("disagreed requires probed")
        if (self.verifier_choice is not None) != self.disagreed:
            raise ValueError("verifier_choice present iff disagreed")


@dataclass(frozen=True)
class GenerationTrace:
    prompt: str
    words: Tuple[Word, ...]
    decisions: Tuple[DecisionRecord, ...]
    terminated_reason: TerminatedReason

    @property
    def text(self) -> str:
        """The generated continuation (prompt excluded)."""
        return "".join(w.text for w in self.words)

    @property
    def generator_tokens(self) -> int:
        return sum(w.generator_token_count for w in self.words)


@dataclass(frozen=True)
class TopKDistribution:
    """A model's next-token candidates, sorted by probability descending."""

    entries: Tuple[Tuple[str, float], ...]
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be positive")
        probs = [p for _, p in self.entries]
        if any(probs[i] < probs[i + 1] for i in range(len(probs) - 1)):
            raise ValueError("entries must be sorted by prob descending")
        total = sum(probs)
        if self.entries and not (0.0 < total <= 1.0 + 1e-9):
            raise ValueError(f"probability mass out of range: {total}")
        tokens = [t for t, _ in self.entries]
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate token text in distribution")

    def top_prob(self) -> float:
        if not self.entries:
            raise EmptyDistribution("distribution has no entries")
        return self.entries[0][1]

    def top_token(self) -> str:
        if not self.entries:
            raise EmptyDistribution("distribution has no entries")
        return self.entries[0][0]


@dataclass(frozen=True)
class RunConfig:
    """All protocol hyperparameters for one run."""

    rho: float = 0.25
    segment_len: int = 16
    max_new_tokens: int = 512
    seed: int = 0
    verifier_kind: VerifierKind = VerifierKind.FREE
    baseline_kind: Optional[BaselineKind] = None
    gamma: float = 0.40
    alpha: float = 0.50
    beta: float = 0.50
    tau: float = 0.03
    top_k: int = 5
    stop_sequences: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        if self.segment_len < 1 or self.max_new_tokens < 1 or self.top_k < 1:
            raise ValueError("segment_len, max_new_tokens, top_k must be positive")
        if self.beta < 0 or self.tau < 0:
            raise ValueError("beta and tau must be nonnegative")


def split_next_word(raw_stream: str) -> Tuple[str, str]:
    """Split off the next word: leading whitespace run + maximal non-whitespace run.

    ``word + remainder == raw_stream`` always holds.
    """
    if not raw_stream:
        raise EmptyStream("cannot split an empty stream")
    i = 0
    n = len(raw_stream)
    while i < n and raw_stream[i] in WHITESPACE:
        i += 1
    while i < n and raw_stream[i] not in WHITESPACE:
        i += 1
    return raw_stream[:i], raw_stream[i:]


def words_disagree(word_g: str, word_m: str) -> bool:
    """Word-level disagreement: strip leading whitespace, then exact bytes."""
    return word_g.lstrip(WHITESPACE) != word_m.lstrip(WHITESPACE)


def entropy_nats(dist: TopKDistribution) -> float:
    """Shannon entropy in nats of the renormalized top-k distribution."""
    if not dist.entries:
        raise EmptyDistribution("cannot take entropy of an empty distribution")
    total = sum(p for _, p in dist.entries)
    h = 0.0
    for _, p in dist.entries:
        q = p / total
        if q > 0.0:
            h -= q * math.log(q)
    return max(h, 0.0)


def mentor_token_ratio(trace: GenerationTrace) -> float:
    """Fraction of output tokens (generator-tokenizer units) from mentor segments."""
    if not trace.words:
        raise EmptyTrace("trace has no words")
    total = sum(w.generator_token_count for w in trace.words)
    mentor = sum(
        w.generator_token_count for w in trace.words if w.source is Source.MENTOR
    )
    return mentor / total


# ---------------------------------------------------------------------------
# JSONL persistence.  Field names below are a format contract; do not rename.
# ---------------------------------------------------------------------------


def trace_to_dict(trace: GenerationTrace) -> dict:
    return {
        "prompt": trace.prompt,
        "words": [
            {
                "text": w.text,
                "source": w.source.value,
                "native_tokens": w.native_token_count,
                "gen_tokens": w.generator_token_count,
            }
            for w in trace.words
        ],
        "decisions": [
            {
                "position": d.position,
                "probed": d.probed,
                "disagreed": d.disagreed,
                "verifier_choice": d.verifier_choice.value if d.verifier_choice else None,
                "segment_adopted_text": d.segment_adopted_text,
            }
            for d in trace.decisions
        ],
        "terminated_reason": trace.terminated_reason.value,
    }


def trace_from_dict(obj: dict) -> GenerationTrace:
    words = tuple(
        Word(
            text=w["text"],
            source=Source(w["source"]),
            native_token_count=w["native_tokens"],
            generator_token_count=w["gen_tokens"],
        )
        for w in obj["words"]
    )
    decisions = tuple(
        DecisionRecord(
            position=d["position"],
            probed=d["probed"],
            disagreed=d["disagreed"],
            verifier_choice=Source(d["verifier_choice"]) if d["verifier_choice"] else None,
            segment_adopted_text=d["segment_adopted_text"],
        )
        for d in obj["decisions"]
    )
    return GenerationTrace(
        prompt=obj["prompt"],
        words=words,
        decisions=decisions,
        terminated_reason=TerminatedReason(obj["terminated_reason"]),
    )


def write_traces_jsonl(path, traces: Iterable[GenerationTrace]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(json.dumps(trace_to_dict(trace), ensure_ascii=False) + "\n")


def read_traces_jsonl(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(trace_from_dict(json.loads(line)))
    return out
