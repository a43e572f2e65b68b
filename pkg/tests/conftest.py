import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mentorcollab.backend import ScriptedBackend
from mentorcollab.verifier import VERIFICATION_QUERY


@dataclass
class RescueProblem:
    """A scripted problem where the generator alone answers wrong and the
    mentor's lookahead at the divergence word fixes it."""

    prompt: str
    generator_text: str  # wrong path, full document
    corrected_text: str  # post-splice path, full document
    mentor_text: str
    gold: str
    wrong: str


def make_rescue_problem(i: int) -> RescueProblem:
    prompt = f"Problem {i}: find the value."
    prefix = " The value equals"
    wrong = str(100 + i)
    gold = str(200 + i)
    generator_text = f"{prompt}{prefix} {wrong}. Final answer \\boxed{{{wrong}}}"
    mentor_text = f"{prompt}{prefix} {gold}. Final answer \\boxed{{{gold}}}"
    return RescueProblem(
        prompt=prompt,
        generator_text=generator_text,
        corrected_text=mentor_text,
        mentor_text=mentor_text,
        gold=gold,
        wrong=wrong,
    )


def make_rescue_backends(
    problems: List[RescueProblem], reply_with_mentor_letter: bool = False
):
    """Build (generator, mentor) scripted backends covering every reachable
    context: the wrong path, the post-splice path, and the mentor path."""
    gen_texts = []
    for p in problems:
        gen_texts.append(p.generator_text)
        gen_texts.append(p.corrected_text)
    mentor_texts = [p.mentor_text for p in problems]

    reply_fn = None
    if reply_with_mentor_letter:
        golds = [p.gold for p in problems]

        def reply_fn(context: str):
            if VERIFICATION_QUERY not in context:
                return None
            # Blind reply: pick the option whose segment contains the gold
            # number (the mentor's segment), whatever letter it got.
            a_block = context.split("Option A:")[1].split("Option B:")[0]
            b_block = context.split("Option B:")[1].split(VERIFICATION_QUERY)[0]
            for gold in golds:
                if f" {gold}." in a_block:
                    return " A"
                if f" {gold}." in b_block:
                    return " B"
            return " A"

    generator = ScriptedBackend(
        gen_texts, name="rescue-generator", hidden_dim=8, reply_fn=reply_fn
    )
    mentor = ScriptedBackend(mentor_texts, name="rescue-mentor")
    return generator, mentor


@pytest.fixture
def rescue_corpus() -> List[RescueProblem]:
    return [make_rescue_problem(i) for i in range(20)]


def make_scripted_corpus(n: int) -> Tuple[List[str], List[str]]:
    """(prompts, full documents) with deterministic multi-word continuations."""
    prompts, texts = [], []
    for i in range(n):
        prompt = f"Doc {i} begins:"
        words = " ".join(f"tok{i}x{j}" for j in range(5 + i % 7))
        prompts.append(prompt)
        texts.append(f"{prompt} {words} end{i}")
    return prompts, texts
