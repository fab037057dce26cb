"""Hindsight-style dataset preparation for confident re-derivations.

Two prompt builders turn (question, solution) pairs into regeneration
prompts: the teacher-hindsight prompt demands a wandering-free confident
re-derivation, the self-distillation prompt a fully detailed one. Each
prompt ends with a forced response prefix so the regenerated solution
starts in a declarative register. An evaluator prompt plus exact-phrase
verdict parsing and a marker-scrub check gate which pairs become training
data.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .backend import BackendClient, MODE_CHAT
from .harness import extract_boxed
from .answers import answers_match
from .lexicon import DEFAULT_LEXICON, EpistemicLexicon, count_markers

TEACHER_PREFIX = "Okay, so I"
SELF_PREFIX = "To solve the problem,"

TEACHER_HINDSIGHT_TEMPLATE = """You are given a QUESTION and its SOLUTION.

QUESTION:
{question}

SOLUTION:
{solution}

Using only the actual solving approach from the solution above — excluding any wandering or trial-and-error — as a reference, re-derive the result independently from scratch, step by step. Include all key equations and intermediate algebra. Do not express any uncertainty — never say "I think," "probably," or "it seems." State everything with full confidence.

Put your final answer within \\boxed{}.

Okay, so I"""

SELF_DISTILL_TEMPLATE = """You are given a QUESTION and its SOLUTION.

QUESTION:
{question}

SOLUTION:
{solution}

Using the solution above only as a reference, please re-derive the solution in a fully detailed, step-by-step manner. Include every key equation, all intermediate algebra, and clear logical justification for each step. Do not skip steps, and avoid any logical leaps or ambiguous arguments.

Put your final answer within \\boxed{}.

To solve the problem,"""

EVALUATOR_TEMPLATE = """You are an automatic solution evaluator.
Given a math problem, a proposed solution, and the ground-truth answer,
decide whether the proposed solution is correct.
Rules:
- If the solution is logically sound and the final conclusion is correct, output exactly: The solution is GOOD
- If the answer is incorrect, the solution contains logical gaps or errors, or the solver attempted to use a Python program, output exactly: The solution is BAD
- Do not provide any explanation.
- Do not output anything else.

Problem:
{question}

Proposed Solution:
{response}

Decision:"""

VERDICT_GOOD = "The solution is GOOD"
VERDICT_BAD = "The solution is BAD"

_PLACEHOLDER = re.compile(r"\{(question|solution|response)\}")


def _fill(template: str, values: dict[str, str]) -> str:
    # single-pass substitution so placeholder-looking text inside the
    # inputs is never re-substituted
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def build_teacher_hindsight_prompt(question: str, solution: str) -> str:
    """Teacher-hindsight regeneration prompt; ends with "Okay, so I"."""
    if not question.strip():
        raise ValueError("question must be non-empty")
    if not solution.strip():
        raise ValueError("solution must be non-empty")
    return _fill(TEACHER_HINDSIGHT_TEMPLATE, {"question": question, "solution": solution})


def build_self_distill_prompt(question: str, solution: str) -> str:
    """Self-distillation regeneration prompt; ends with "To solve the problem,"."""
    if not question.strip():
        raise ValueError("question must be non-empty")
    if not solution.strip():
        raise ValueError("solution must be non-empty")
    return _fill(SELF_DISTILL_TEMPLATE, {"question": question, "solution": solution})


def build_evaluator_prompt(question: str, response: str) -> str:
    if not question.strip():
        raise ValueError("question must be non-empty")
    return _fill(EVALUATOR_TEMPLATE, {"question": question, "response": response})


@dataclass
class Verdict:
    verdict: str  # "GOOD" or "BAD"
    parsed: bool
    raw: str


def parse_verdict(text: str) -> Verdict:
    """Exact-phrase verdict parse; the last occurrence wins.

    Anything without either phrase is BAD with parsed=False so the caller
    can record an unparseable-verdict diagnostic.
    """
    good = text.rfind(VERDICT_GOOD)
    bad = text.rfind(VERDICT_BAD)
    if good < 0 and bad < 0:
        return Verdict(verdict="BAD", parsed=False, raw=text)
    return Verdict(verdict="GOOD" if good > bad else "BAD", parsed=True, raw=text)


def evaluate_item(client: BackendClient, question: str, regenerated: str) -> Verdict:
    """Ask the backend to judge a regenerated solution."""
    prompt = build_evaluator_prompt(question, regenerated)
    if client.backend.mode == MODE_CHAT:
        completions = client.complete(
            messages=[{"role": "user", "content": prompt}],
            temperature=0.0,
            max_tokens=32,
        )
    else:
        completions = client.complete(prompt=prompt, temperature=0.0, max_tokens=32)
    raw = completions[0].text if completions else ""
    return parse_verdict(raw)


@dataclass
class ScrubCheck:
    total_markers: int
    max_per_response: int
    passed: bool
    counts: dict[str, int]


def verify_scrub(
    regenerated: str,
    lexicon: EpistemicLexicon = DEFAULT_LEXICON,
    max_per_response: int = 0,
) -> ScrubCheck:
    """Check the regenerated text carries at most max_per_response markers
    in total (<= semantics, so a total equal to the cap passes)."""
    counts = count_markers(regenerated, lexicon)
    total = sum(counts.values())
    return ScrubCheck(
        total_markers=total,
        max_per_response=max_per_response,
        passed=total <= max_per_response,
        counts=counts,
    )


MODE_TEACHER = "teacher"
MODE_SELF = "self"


@dataclass
class DistillRecord:
    question: str
    solution: str
    regenerated: str
    verdict: str
    verdict_parsed: bool
    marker_total: int
    answer_matched: bool | None
    kept: bool

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "solution": self.solution,
            "regenerated": self.regenerated,
            "verdict": self.verdict,
            "verdict_parsed": self.verdict_parsed,
            "marker_total": self.marker_total,
            "answer_matched": self.answer_matched,
            "kept": self.kept,
        }


def regenerate_item(
    client: BackendClient,
    question: str,
    solution: str,
    mode: str = MODE_TEACHER,
    max_tokens: int = 2048,
) -> str:
    """Regenerate one solution; the forced prefix is part of the result."""
    if mode == MODE_TEACHER:
        prompt, prefix = build_teacher_hindsight_prompt(question, solution), TEACHER_PREFIX
    elif mode == MODE_SELF:
        prompt, prefix = build_self_distill_prompt(question, solution), SELF_PREFIX
    else:
        raise ValueError(f"unknown distill mode {mode!r}")
    if client.backend.mode == MODE_CHAT:
        completions = client.complete(
            messages=[{"role": "user", "content": prompt}],
            temperature=0.0,
            max_tokens=max_tokens,
        )
    else:
        completions = client.complete(
            prompt=prompt, temperature=0.0, max_tokens=max_tokens
        )
    continuation = completions[0].text if completions else ""
    return prefix + continuation


def run_pipeline(
    client: BackendClient,
    items: list[dict],
    mode: str = MODE_TEACHER,
    lexicon: EpistemicLexicon = DEFAULT_LEXICON,
    max_markers: int = 0,
    out_path: str | None = None,
    training_path: str | None = None,
) -> list[DistillRecord]:
    """Regenerate, evaluate, and scrub-check a JSONL-style item list.

    An item is kept for training when the evaluator says GOOD, the scrub
    check passes, and (when a gold answer is present) the boxed answer
    matches. Writes the full record stream and the filtered training pairs
    when paths are given.
    """
    records = []
    for item in items:
        question, solution = item["question"], item["solution"]
        regenerated = regenerate_item(client, question, solution, mode=mode)
        verdict = evaluate_item(client, question, regenerated)
        scrub = verify_scrub(regenerated, lexicon, max_markers)
        matched: bool | None = None
        if item.get("answer_gt") is not None:
            extracted = extract_boxed(regenerated)
            matched = extracted is not None and answers_match(
                extracted, item["answer_gt"]
            )
        kept = (
            verdict.verdict == "GOOD"
            and scrub.passed
            and (matched is None or matched)
        )
        records.append(
            DistillRecord(
                question=question,
                solution=solution,
                regenerated=regenerated,
                verdict=verdict.verdict,
                verdict_parsed=verdict.parsed,
                marker_total=scrub.total_markers,
                answer_matched=matched,
                kept=kept,
            )
        )
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
    if training_path:
        with open(training_path, "w", encoding="utf-8") as fh:
            for rec in records:
                if rec.kept:
                    fh.write(
                        json.dumps(
                            {"question": rec.question, "response": rec.regenerated},
                            ensure_ascii=False,
                        )
                        + "\n"
                    )
    return records
