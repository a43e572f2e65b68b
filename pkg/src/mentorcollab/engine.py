"""The collaborative generation loop: decision, consultation, verification, splice.

One stream is strictly sequential; the per-stream RNG consumes exactly one
draw per word boundary (probe decision) plus one per verification event
(A/B assignment for the prompt-based verifier), in protocol order.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

from .backend import Backend, Segment
from .errors import ConfigError
from .stream import (
    DecisionRecord,
    GenerationTrace,
    RunConfig,
    Source,
    TerminatedReason,
    VerifierKind,
    Word,
    split_next_word,
    words_disagree,
)
from .verifier import MlpParams, Verdict, OptionAssignment, decide_free, decide_mlp


@dataclass
class EngineState:
    """Mutable state of one generation stream."""

    context_text: str
    generated_generator_tokens: int
    rng: random.Random
    words: List[Word] = field(default_factory=list)
    decisions: List[DecisionRecord] = field(default_factory=list)


def sample_decision(state: EngineState, rho: float) -> bool:
    """One Bernoulli(rho) draw; always advances the stream exactly once."""
    return state.rng.random() < rho


# Decision stage outcomes.
@dataclass(frozen=True)
class NoProbe:
    word: str
    native_tokens: int


@dataclass(frozen=True)
class Agree:
    word: str
    native_tokens: int


@dataclass(frozen=True)
class Disagree:
    word_g: str
    native_tokens_g: int
    word_m: str


DecisionOutcome = Union[NoProbe, Agree, Disagree]


def decision_stage(
    state: EngineState, generator: Backend, mentor: Backend, rho: float
) -> Optional[DecisionOutcome]:
    """Probe with probability rho; returns None if the generator is at EOT."""
    word_g, count_g, _ = generator.next_word(state.context_text)
    if count_g == 0:
        return None
    if not sample_decision(state, rho):
        return NoProbe(word_g, count_g)
    word_m, count_m, _ = mentor.next_word(state.context_text)
    if count_m == 0:
        # Mentor has nothing to offer; keep the generator's word.
        return Agree(word_g, count_g)
    if words_disagree(word_g, word_m):
        return Disagree(word_g, count_g, word_m)
    return Agree(word_g, count_g)


def consultation_stage(
    state: EngineState, generator: Backend, mentor: Backend, segment_len: int
) -> Tuple[Segment, Segment]:
    """Both models propose lookahead segments from the identical context."""
    seg_g = generator.propose_segment(state.context_text, segment_len)
    seg_m = mentor.propose_segment(state.context_text, segment_len)
    return seg_g, seg_m


class Verifier:
    """Dispatch wrapper binding RunConfig.verifier_kind to a decision rule."""

    def __init__(
        self, kind: VerifierKind, mlp_params: Optional[MlpParams] = None
    ) -> None:
        if kind is VerifierKind.MLP and mlp_params is None:
            raise ConfigError("verifier_kind=mlp requires checkpoint parameters")
        self.kind = kind
        self.mlp_params = mlp_params

    def decide(
        self,
        context: str,
        seg_g: Segment,
        seg_m: Segment,
        generator: Backend,
        rng: random.Random,
    ) -> Verdict:
        if self.kind is VerifierKind.ALWAYS_GENERATOR:
            return Verdict(Source.GENERATOR, OptionAssignment.GENERATOR_IS_A)
        if self.kind is VerifierKind.ALWAYS_MENTOR:
            return Verdict(Source.MENTOR, OptionAssignment.GENERATOR_IS_A)
        if self.kind is VerifierKind.MLP:
            assert self.mlp_params is not None
            return decide_mlp(self.mlp_params, generator, context)
        if self.kind is VerifierKind.FREE:
            return decide_free(context, seg_g, seg_m, generator, rng)
        raise ConfigError(f"verifier kind {self.kind} cannot verify")


def _append_word(
    state: EngineState,
    text: str,
    source: Source,
    native_tokens: int,
    generator: Backend,
    max_new_tokens: int,
) -> bool:
    """Append one word if it fits under the token cap; False means cap hit.

    Counts are in generator-tokenizer units; the cap is never exceeded, so a
    word whose tokens would cross it is dropped and the stream terminates.
    """
    gen_tokens = generator.count_tokens(text)
    if gen_tokens == 0:
        return True
    if state.generated_generator_tokens + gen_tokens > max_new_tokens:
        return False
    state.words.append(
        Word(
            text=text,
            source=source,
            native_token_count=max(native_tokens, 1),
            generator_token_count=gen_tokens,
        )
    )
    state.generated_generator_tokens += gen_tokens
    state.context_text += text
    return True


def splice_and_continue(
    state: EngineState,
    chosen: Segment,
    generator: Backend,
    max_new_tokens: int,
) -> bool:
    """Append the chosen segment word by word with its producer's provenance.

    Returns False when the token cap truncates the splice.
    """
    rest = chosen.text
    while rest.strip():
        word, rest = split_next_word(rest)
        if not _append_word(state, word, chosen.producer, 1, generator, max_new_tokens):
            return False
    return True


def _find_stop(text: str, stop_sequences: Tuple[str, ...]) -> bool:
    return any(s and s in text for s in stop_sequences)


def run_generation(
    prompt: str,
    config: RunConfig,
    generator: Backend,
    mentor: Backend,
    verifier: Optional[Verifier] = None,
) -> GenerationTrace:
    """Full protocol loop; the returned trace is deterministic in
    (prompt, config, backends)."""
    if verifier is None:
        verifier = Verifier(config.verifier_kind)
    state = EngineState(
        context_text=prompt,
        generated_generator_tokens=0,
        rng=random.Random(config.seed),
    )
    reason = TerminatedReason.END_OF_TEXT
    while True:
        outcome = decision_stage(state, generator, mentor, config.rho)
        if outcome is None:
            reason = TerminatedReason.END_OF_TEXT
            break
        position = len(state.words)
        if isinstance(outcome, (NoProbe, Agree)):
            if not _append_word(
                state,
                outcome.word,
                Source.GENERATOR,
                outcome.native_tokens,
                generator,
                config.max_new_tokens,
            ):
                reason = TerminatedReason.MAX_LENGTH
                break
            state.decisions.append(
                DecisionRecord(position=position, probed=isinstance(outcome, Agree))
            )
        else:
            seg_g, seg_m = consultation_stage(
                state, generator, mentor, config.segment_len
            )
            if seg_m.empty:
                # Nothing to adopt; verification skipped, generator branch taken.
                verdict = Verdict(Source.GENERATOR, OptionAssignment.GENERATOR_IS_A)
            else:
                verdict = verifier.decide(
                    state.context_text, seg_g, seg_m, generator, state.rng
                )
            chosen = seg_m if verdict.choice is Source.MENTOR else seg_g
            state.decisions.append(
                DecisionRecord(
                    position=position,
                    probed=True,
                    disagreed=True,
                    verifier_choice=verdict.choice,
                    segment_adopted_text=chosen.text,
                )
            )
            if chosen.empty:
                reason = TerminatedReason.END_OF_TEXT
                break
            # The adopted segment is atomic: no probes until it is consumed.
            if not splice_and_continue(state, chosen, generator, config.max_new_tokens):
                reason = TerminatedReason.MAX_LENGTH
                break
        if _find_stop(state.context_text[len(prompt) :], config.stop_sequences):
            reason = TerminatedReason.STOP_SEQUENCE
            break
        if state.generated_generator_tokens >= config.max_new_tokens:
            reason = TerminatedReason.MAX_LENGTH
            break
    return GenerationTrace(
        prompt=prompt,
        words=tuple(state.words),
        decisions=tuple(state.decisions),
        terminated_reason=reason,
    )


def context_at_decision(trace: GenerationTrace, record: DecisionRecord) -> str:
    """Reconstruct the context the models saw at a decision boundary."""
    return trace.prompt + "".join(w.text for w in trace.words[: record.position])
