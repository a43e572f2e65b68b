"""Evaluation harness: datasets, prompt rendering, answer extraction, metrics.

Dataset ingestion format is JSONL with fields
``{id, domain, question, options?, gold, answer_kind}``; loaders for the
published benchmark formats convert into this schema (raw data is not
vendored here).
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import EmptyRun, TemplateMissing
from .stream import GenerationTrace, Source, mentor_token_ratio


class Domain(str, Enum):
    MATH = "math"
    GENERAL_KNOWLEDGE = "general_knowledge"
    COMMONSENSE = "commonsense"


class AnswerKind(str, Enum):
    BOXED = "boxed"
    MULTIPLE_CHOICE_AJ = "multiple_choice_aj"


CHOICE_LETTERS = "ABCDEFGHIJ"


@dataclass(frozen=True)
class EvalExample:
    id: str
    domain: Domain
    prompt_body: str
    gold_answer: str
    answer_kind: AnswerKind

    def __post_init__(self) -> None:
        if self.answer_kind is AnswerKind.MULTIPLE_CHOICE_AJ:
            if self.gold_answer not in CHOICE_LETTERS:
                raise ValueError(f"gold must be a letter A-J, got {self.gold_answer!r}")


@dataclass(frozen=True)
class RunMetrics:
    accuracy: float
    mentor_token_ratio_mean: float
    probes_per_example: float
    disagreements_per_example: float
    adoptions_per_example: float
    wall_tokens_total: int


TEMPLATE_FILES = {
    "math_4shot": "math_4shot.txt",
    "supergpqa_5shot": "supergpqa_5shot.txt",
    "com2_zeroshot": "com2_zeroshot.txt",
}

DEFAULT_TEMPLATE = {
    Domain.MATH: "math_4shot",
    Domain.GENERAL_KNOWLEDGE: "supergpqa_5shot",
    Domain.COMMONSENSE: "com2_zeroshot",
}


def load_template(template_id: str) -> str:
    filename = TEMPLATE_FILES.get(template_id)
    if filename is None:
        raise TemplateMissing(f"unknown template {template_id!r}")
    return (
        resources.files("mentorcollab")
        .joinpath("templates", filename)
        .read_text(encoding="utf-8")
    )


def render_prompt(example: EvalExample, template_id: Optional[str] = None) -> str:
    """Substitute the question into the domain template's marked slot.

    The zero-shot commonsense template uses extra slots; for it the loader
    is expected to have composed the full body into ``prompt_body`` already,
    which replaces the question slot (the remaining markers are removed in
    the slot-composed rendering path of ``render_com2_prompt``).
    """
    template_id = template_id or DEFAULT_TEMPLATE[example.domain]
    template = load_template(template_id)
    if "<<QUESTION>>" not in template:
        raise TemplateMissing(f"template {template_id!r} has no question slot")
    return template.replace("<<QUESTION>>", example.prompt_body)


def render_com2_prompt(crime: str, facts: str, question: str, options: str) -> str:
    template = load_template("com2_zeroshot")
    return (
        template.replace("<<CRIME>>", crime)
        .replace("<<FACTS>>", facts)
        .replace("<<QUESTION>>", question)
        .replace("<<OPTIONS>>", options)
    )


def load_examples_jsonl(path) -> List[EvalExample]:
    out: List[EvalExample] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            domain = Domain(obj["domain"])
            question = obj["question"]
            if obj.get("options"):
                question = question + "\n" + obj["options"]
            out.append(
                EvalExample(
                    id=str(obj["id"]),
                    domain=domain,
                    prompt_body=question,
                    gold_answer=obj["gold"],
                    answer_kind=AnswerKind(obj["answer_kind"]),
                )
            )
    return out


# ---------------------------------------------------------------------------
# Answer extraction
# ---------------------------------------------------------------------------


def extract_boxed(text: str) -> Optional[str]:
    """Contents of the last \\boxed{...}, balanced-brace matched."""
    starts = [m.end() for m in re.finditer(r"\\boxed\s*", text)]
    for start in reversed(starts):
        if start >= len(text) or text[start] != "{":
            continue
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    return text[start + 1 : i]
        # Unbalanced braces after \boxed{: extraction fails for this match.
    return None


_PRIMARY_CHOICE = re.compile(r"answer is \(?([A-J])\)?")
_SECONDARY_CHOICE = re.compile(r".*[aA]nswer:\s*([A-J])")


def extract_choice(text: str) -> Optional[str]:
    """Cascaded letter extraction; None means the example scores wrong."""
    matches = _PRIMARY_CHOICE.findall(text)
    if matches:
        return matches[-1]
    m = _SECONDARY_CHOICE.match(text.replace("\n", " "))
    if m:
        return m.group(1)
    return None


def _normalize_boxed(answer: str) -> str:
    return "".join(answer.split())


@dataclass(frozen=True)
class ScoreResult:
    correct: bool
    extracted: Optional[str]


def score_example(example: EvalExample, trace: GenerationTrace) -> ScoreResult:
    text = trace.text
    if example.answer_kind is AnswerKind.BOXED:
        extracted = extract_boxed(text)
        correct = extracted is not None and _normalize_boxed(
            extracted
        ) == _normalize_boxed(example.gold_answer)
    else:
        extracted = extract_choice(text)
        correct = extracted == example.gold_answer
    return ScoreResult(correct=correct, extracted=extracted)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def aggregate_metrics(
    scored_traces: Sequence[Tuple[ScoreResult, GenerationTrace]]
) -> RunMetrics:
    if not scored_traces:
        raise EmptyRun("no traces to aggregate")
    n = len(scored_traces)
    correct = sum(1 for s, _ in scored_traces if s.correct)
    ratios = []
    probes = disagreements = adoptions = tokens = 0
    for _, trace in scored_traces:
        ratios.append(mentor_token_ratio(trace) if trace.words else 0.0)
        tokens += trace.generator_tokens
        for d in trace.decisions:
            if d.probed:
                probes += 1
            if d.disagreed:
                disagreements += 1
                if d.verifier_choice is Source.MENTOR:
                    adoptions += 1
    return RunMetrics(
        accuracy=correct / n,
        mentor_token_ratio_mean=sum(ratios) / n,
        probes_per_example=probes / n,
        disagreements_per_example=disagreements / n,
        adoptions_per_example=adoptions / n,
        wall_tokens_total=tokens,
    )


def metrics_to_dict(metrics: RunMetrics) -> dict:
    return {
        "accuracy": metrics.accuracy,
        "mentor_token_ratio_mean": metrics.mentor_token_ratio_mean,
        "probes_per_example": metrics.probes_per_example,
        "disagreements_per_example": metrics.disagreements_per_example,
        "adoptions_per_example": metrics.adoptions_per_example,
        "wall_tokens_total": metrics.wall_tokens_total,
    }


def write_summary_csv(path, rows: Iterable[dict]) -> None:
    """CSV in the (method, rho, segment_len, accuracy, mentor_ratio) layout."""
    fieldnames = ["method", "rho", "segment_len", "accuracy", "mentor_ratio"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fieldnames})
