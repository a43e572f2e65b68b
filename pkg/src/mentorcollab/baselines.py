"""Rule-based collaboration baselines: Average Decoding, Nudging, CoSD, R-Stitch.

The step rules are pure functions; the runners lift them to word-level
streams producing the same provenance-tagged traces as the main engine so
mentor-token accounting is comparable across methods.  All threshold
comparisons are strict: boundary equality never triggers a switch.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

from .backend import Backend
from .errors import EmptyDistribution
from .stream import (
    BaselineKind,
    DecisionRecord,
    GenerationTrace,
    RunConfig,
    Source,
    TerminatedReason,
    TopKDistribution,
    WHITESPACE,
    Word,
    entropy_nats,
)


@dataclass
class SwitchState:
    active_model: Source = Source.GENERATOR


class StepAction(Enum):
    KEEP_GENERATOR = "keep_generator"
    HAND_TO_MENTOR = "hand_to_mentor"
    USE_MENTOR_TOKEN = "use_mentor_token"


def average_decoding_step(
    dist_g: TopKDistribution, dist_m: TopKDistribution
) -> str:
    """Merge by token text, average with absent tokens contributing 0, and
    return the argmax (lexicographically smallest token on ties)."""
    if not dist_g.entries and not dist_m.entries:
        raise EmptyDistribution("both distributions are empty")
    merged: Dict[str, float] = {}
    for token, p in dist_g.entries:
        merged[token] = merged.get(token, 0.0) + p / 2.0
    for token, p in dist_m.entries:
        merged[token] = merged.get(token, 0.0) + p / 2.0
    return min(merged.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def nudging_step(p_top_g: float, gamma: float) -> StepAction:
    """Hand one word to the mentor iff the generator's top probability is
    strictly below gamma."""
    if p_top_g < gamma:
        return StepAction.HAND_TO_MENTOR
    return StepAction.KEEP_GENERATOR


def cosd_step(p_g_top: float, p_m_top: float, alpha: float, beta: float) -> StepAction:
    """Take the mentor token iff p_g < alpha and p_m > beta * p_g (both strict)."""
    if p_g_top < alpha and p_m_top > beta * p_g_top:
        return StepAction.USE_MENTOR_TOKEN
    return StepAction.KEEP_GENERATOR


def rstitch_step(state: SwitchState, entropy_active: float, tau: float) -> SwitchState:
    """Entropy-threshold switching on the active model's distribution."""
    if state.active_model is Source.GENERATOR and entropy_active > tau:
        return SwitchState(Source.MENTOR)
    if state.active_model is Source.MENTOR and entropy_active < tau:
        return SwitchState(Source.GENERATOR)
    return SwitchState(state.active_model)


# ---------------------------------------------------------------------------
# Word-level runners
# ---------------------------------------------------------------------------


def _append(
    words: list, text: str, source: Source, generator: Backend, budget: int, used: int
) -> Optional[int]:
    """Append a word under the generator-token cap; None means cap hit."""
    gen_tokens = generator.count_tokens(text)
    if gen_tokens == 0:
        return used
    if used + gen_tokens > budget:
        return None
    words.append(
        Word(
            text=text,
            source=source,
            native_token_count=1,
            generator_token_count=gen_tokens,
        )
    )
    return used + gen_tokens


def _finish(prompt: str, words: list, reason: TerminatedReason) -> GenerationTrace:
    return GenerationTrace(
        prompt=prompt, words=tuple(words), decisions=(), terminated_reason=reason
    )


def run_average_decoding(
    prompt: str, config: RunConfig, generator: Backend, mentor: Backend
) -> GenerationTrace:
    words: list = []
    context, used = prompt, 0
    reason = TerminatedReason.END_OF_TEXT
    while True:
        word_g, count_g, _ = generator.next_word(context)
        word_m, count_m, _ = mentor.next_word(context)
        if count_g == 0 and count_m == 0:
            break
        dist_g = generator.distribution(context, config.top_k)
        dist_m = mentor.distribution(context, config.top_k)
        token = average_decoding_step(dist_g, dist_m)
        # Prefer each model's own surface word when its greedy token won the
        # average, so exact whitespace is preserved.
        if count_g and token == word_g.lstrip(WHITESPACE):
            text, source = word_g, Source.GENERATOR
        elif count_m and token == word_m.lstrip(WHITESPACE):
            text, source = word_m, Source.MENTOR
        else:
            sep = "" if (context and context[-1] in WHITESPACE) else " "
            text, source = sep + token, Source.MENTOR
        new_used = _append(words, text, source, generator, config.max_new_tokens, used)
        if new_used is None:
            reason = TerminatedReason.MAX_LENGTH
            break
        used = new_used
        context += text
        if used >= config.max_new_tokens:
            reason = TerminatedReason.MAX_LENGTH
            break
    return _finish(prompt, words, reason)


def run_nudging(
    prompt: str, config: RunConfig, generator: Backend, mentor: Backend
) -> GenerationTrace:
    words: list = []
    context, used = prompt, 0
    reason = TerminatedReason.END_OF_TEXT
    while True:
        word_g, count_g, topk_g = generator.next_word(context)
        if count_g == 0:
            break
        action = nudging_step(topk_g.top_prob(), config.gamma)
        if action is StepAction.HAND_TO_MENTOR:
            word_m, count_m, _ = mentor.next_word(context)
            if count_m > 0:
                text, source = word_m, Source.MENTOR
            else:
                text, source = word_g, Source.GENERATOR
        else:
            text, source = word_g, Source.GENERATOR
        new_used = _append(words, text, source, generator, config.max_new_tokens, used)
        if new_used is None:
            reason = TerminatedReason.MAX_LENGTH
            break
        used = new_used
        context += text
        if used >= config.max_new_tokens:
            reason = TerminatedReason.MAX_LENGTH
            break
    return _finish(prompt, words, reason)


def run_cosd(
    prompt: str, config: RunConfig, generator: Backend, mentor: Backend
) -> GenerationTrace:
    words: list = []
    context, used = prompt, 0
    reason = TerminatedReason.END_OF_TEXT
    while True:
        word_g, count_g, topk_g = generator.next_word(context)
        if count_g == 0:
            break
        # Alpha = 0 short-circuits the mentor entirely (degeneracy contract).
        use_mentor = False
        if topk_g.top_prob() < config.alpha:
            word_m, count_m, topk_m = mentor.next_word(context)
            if count_m > 0:
                action = cosd_step(
                    topk_g.top_prob(), topk_m.top_prob(), config.alpha, config.beta
                )
                use_mentor = action is StepAction.USE_MENTOR_TOKEN
        if use_mentor:
            text, source = word_m, Source.MENTOR
        else:
            text, source = word_g, Source.GENERATOR
        new_used = _append(words, text, source, generator, config.max_new_tokens, used)
        if new_used is None:
            reason = TerminatedReason.MAX_LENGTH
            break
        used = new_used
        context += text
        if used >= config.max_new_tokens:
            reason = TerminatedReason.MAX_LENGTH
            break
    return _finish(prompt, words, reason)


def run_rstitch(
    prompt: str, config: RunConfig, generator: Backend, mentor: Backend
) -> GenerationTrace:
    words: list = []
    context, used = prompt, 0
    state = SwitchState(Source.GENERATOR)
    reason = TerminatedReason.END_OF_TEXT
    while True:
        active = generator if state.active_model is Source.GENERATOR else mentor
        dist = active.distribution(context, config.top_k)
        if dist.entries:
            state = rstitch_step(state, entropy_nats(dist), config.tau)
        active = generator if state.active_model is Source.GENERATOR else mentor
        word, count, _ = active.next_word(context)
        if count == 0:
            break
        new_used = _append(
            words, word, state.active_model, generator, config.max_new_tokens, used
        )
        if new_used is None:
            reason = TerminatedReason.MAX_LENGTH
            break
        used = new_used
        context += word
        if used >= config.max_new_tokens:
            reason = TerminatedReason.MAX_LENGTH
            break
    return _finish(prompt, words, reason)


BASELINE_RUNNERS = {
    BaselineKind.AVERAGE_DECODING: run_average_decoding,
    BaselineKind.NUDGING: run_nudging,
    BaselineKind.COSD: run_cosd,
    BaselineKind.RSTITCH: run_rstitch,
}


def run_baseline(
    prompt: str, config: RunConfig, generator: Backend, mentor: Backend
) -> GenerationTrace:
    if config.baseline_kind is None:
        raise ValueError("config.baseline_kind is not set")
    return BASELINE_RUNNERS[config.baseline_kind](prompt, config, generator, mentor)
