"""Backend conformance checks, shared between mock tests and adapter tests.

Every check raises AssertionError with a message on violation; callers run
them against any Backend (in-process mock or wire client) plus a few
contexts reachable in their corpus.
"""

from __future__ import annotations

from typing import List, Sequence

from .backend import Backend
from .stream import split_next_word


def check_determinism(backend: Backend, contexts: Sequence[str]) -> None:
    for ctx in contexts:
        first = backend.next_word(ctx)
        second = backend.next_word(ctx)
        assert first == second, f"next_word not deterministic on {ctx!r}"
        seg1 = backend.propose_segment(ctx, 4)
        seg2 = backend.propose_segment(ctx, 4)
        assert seg1 == seg2, f"propose_segment not deterministic on {ctx!r}"


def check_greedy_prefix(backend: Backend, contexts: Sequence[str]) -> None:
    """First native token of a segment equals the greedy next token."""
    for ctx in contexts:
        word, count, _ = backend.next_word(ctx)
        seg = backend.propose_segment(ctx, 1)
        if count == 0:
            assert seg.empty, f"segment non-empty at EOT on {ctx!r}"
            continue
        assert seg.text, f"empty segment but next_word produced {word!r}"
        # The one-token segment must be a prefix of the next word (or equal,
        # for single-token words).
        assert word.startswith(seg.text) or seg.text.startswith(word), (
            f"segment {seg.text!r} inconsistent with next word {word!r} on {ctx!r}"
        )


def check_distribution_contract(backend: Backend, contexts: Sequence[str]) -> None:
    for ctx in contexts:
        dist = backend.distribution(ctx, 5)
        probs = [p for _, p in dist.entries]
        assert all(probs[i] >= probs[i + 1] for i in range(len(probs) - 1)), (
            f"top-k probabilities not descending on {ctx!r}"
        )
        assert sum(probs) <= 1.0 + 1e-6, f"probability mass exceeds 1 on {ctx!r}"
        word, count, topk = backend.next_word(ctx)
        if count > 0 and dist.entries:
            assert topk.entries[0][1] <= 1.0
            # Greedy token probability agrees between the two calls.
            assert abs(topk.entries[0][1] - dist.entries[0][1]) < 1e-6


def check_hidden_state(backend: Backend, contexts: Sequence[str]) -> None:
    caps = backend.capabilities()
    if not caps.supports_hidden_state:
        return
    for ctx in contexts:
        h1 = backend.hidden_state(ctx)
        h2 = backend.hidden_state(ctx)
        assert len(h1.vector) == caps.hidden_dim, "hidden dim mismatch"
        assert h1.vector == h2.vector, f"hidden state not deterministic on {ctx!r}"


def check_segment_cap(backend: Backend, contexts: Sequence[str], max_tokens: int = 16) -> None:
    for ctx in contexts:
        seg = backend.propose_segment(ctx, max_tokens)
        assert seg.native_token_count <= max_tokens, "segment exceeds token cap"


def run_conformance(backend: Backend, contexts: Sequence[str]) -> List[str]:
    """Run every check; returns the list of check names that passed."""
    checks = [
        check_determinism,
        check_greedy_prefix,
        check_distribution_contract,
        check_hidden_state,
        check_segment_cap,
    ]
    passed = []
    for check in checks:
        check(backend, contexts)
        passed.append(check.__name__)
    return passed
