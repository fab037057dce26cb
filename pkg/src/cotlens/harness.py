"""Generation harness: interventions, answer extraction, and scoring.

Wraps a backend client with the experiment-level operations: plain and
intervened generation (marker suppression via logit bias, mid-trace "Wait"
injection, few-shot uncertainty priming), boxed-answer extraction, pass/acc
metrics, and a journaled batch runner that survives interruption and never
duplicates completions on retry.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .answers import answers_match
from .backend import (
    CAP_TOKEN_BIAS,
    MODE_CHAT,
    BackendClient,
    Completion,
)
from .errors import CapabilityError

INTERVENTION_NONE = "none"
INTERVENTION_SUPPRESS = "suppress"
INTERVENTION_INJECT_WAIT = "inject-wait"
INTERVENTION_FEW_SHOT = "few-shot"

_KINDS = (
    INTERVENTION_NONE,
    INTERVENTION_SUPPRESS,
    INTERVENTION_INJECT_WAIT,
    INTERVENTION_FEW_SHOT,
)

BOXED_SYSTEM_PROMPT = (
    "Please reason step by step, and put your final answer within \\boxed{}."
)

SUPPRESSION_BIAS = -100.0


@dataclass
class GenerationParams:
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 1024
    n: int = 1
    seed: int | None = None
    logprobs: bool = False
    top_logprobs: int = 0
    stop: list[str] | None = None


@dataclass
class InterventionSpec:
    kind: str = INTERVENTION_NONE
    suppress_bias: dict[int, float] = field(default_factory=dict)
    few_shot_prompt: str = ""
    forced_prefix: str = ""
    inject_marker: str = "Wait"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown intervention kind {self.kind!r}")
        if self.kind == INTERVENTION_SUPPRESS and not self.suppress_bias:
            raise ValueError("suppress intervention needs a token bias map")
        if self.kind == INTERVENTION_FEW_SHOT and not self.few_shot_prompt:
            raise ValueError("few-shot intervention needs a prompt")


NO_INTERVENTION = InterventionSpec()


def build_bias_map(
    markers, token_map: dict[str, int], bias: float = SUPPRESSION_BIAS
) -> dict[int, float]:
    """Suppression bias map from marker words and a surface-to-id table.

    Generates the case and leading-space variants of each marker and keeps
    the ones the token map knows about.
    """
    out: dict[int, float] = {}
    for marker in markers:
        variants = {marker, marker.lower(), marker.capitalize(), marker.upper()}
        variants |= {" " + v for v in set(variants)}
        for v in variants:
            if v in token_map:
                out[int(token_map[v])] = bias
    return out


def audit_markers(completions, markers) -> dict[str, int]:
    """Post-hoc count of marker surfaces in completion texts.

    Fallback audit for backends without real token-bias support; counts are
    case-insensitive whole words.
    """
    from .lexicon import EpistemicLexicon, count_markers

    lex = EpistemicLexicon(markers=tuple(markers))
    totals = {m: 0 for m in lex.markers}
    for comp in completions:
        text = comp.text if isinstance(comp, Completion) else str(comp)
        for m, c in count_markers(text, lex).items():
            totals[m] += c
    return totals


def _chat_messages(
    problem: str, intervention: InterventionSpec
) -> list[dict]:
    if intervention.kind == INTERVENTION_FEW_SHOT:
        messages = [
            {"role": "system", "content": BOXED_SYSTEM_PROMPT},
            {
                "role": "user",
                "content": intervention.few_shot_prompt + "\n\n" + problem,
            },
        ]
    else:
        messages = [{"role": "user", "content": problem}]
    if intervention.forced_prefix:
        messages.append({"role": "assistant", "content": intervention.forced_prefix})
    return messages


def _raw_prompt(problem: str, intervention: InterventionSpec) -> str:
    parts = []
    if intervention.kind == INTERVENTION_FEW_SHOT:
        parts.append(BOXED_SYSTEM_PROMPT)
        parts.append(intervention.few_shot_prompt)
    parts.append(problem)
    prompt = "\n\n".join(parts)
    if intervention.forced_prefix:
        prompt += intervention.forced_prefix
    return prompt


def generate(
    client: BackendClient,
    problem: str,
    params: GenerationParams,
    intervention: InterventionSpec = NO_INTERVENTION,
    idempotency_key: str | None = None,
) -> list[Completion]:
    """Generate completions for one problem under an intervention.

    Suppression requires the token-bias capability. The inject-wait kind
    runs the two-phase protocol once per requested completion. A forced
    prefix is part of the assistant turn, so returned texts include it.
    """
    if intervention.kind == INTERVENTION_INJECT_WAIT:
        results = []
        for i in range(params.n):
            seed = None if params.seed is None else params.seed + i
            one = inject_wait(
                client,
                problem,
                params,
                marker=intervention.inject_marker,
                seed=seed,
                idempotency_key=None if idempotency_key is None else f"{idempotency_key}:{i}",
            )
            results.append(
                Completion(text=one.text, tokens=one.tokens, index=i)
            )
        return results
    logit_bias = None
    if intervention.kind == INTERVENTION_SUPPRESS:
        if not client.backend.has(CAP_TOKEN_BIAS):
            raise CapabilityError("suppression requires the token-bias capability")
        logit_bias = intervention.suppress_bias
    kwargs = dict(
        temperature=params.temperature,
        top_p=params.top_p,
        max_tokens=params.max_tokens,
        n=params.n,
        seed=params.seed,
        logprobs=params.logprobs,
        top_logprobs=params.top_logprobs,
        logit_bias=logit_bias,
        stop=params.stop,
        idempotency_key=idempotency_key,
    )
    if client.backend.mode == MODE_CHAT:
        completions = client.complete(
            messages=_chat_messages(problem, intervention), **kwargs
        )
    else:
        completions = client.complete(
            prompt=_raw_prompt(problem, intervention), **kwargs
        )
    if intervention.forced_prefix:
        completions = [
            Completion(
                text=intervention.forced_prefix + c.text,
                tokens=c.tokens,
                finish_reason=c.finish_reason,
                index=c.index,
            )
            for c in completions
        ]
    return completions


@dataclass
class InjectionResult:
    text: str
    injection_offset: int
    fallback: bool
    phase1_text: str
    phase2_text: str
    tokens: list = field(default_factory=list)


def inject_wait(
    client: BackendClient,
    problem: str,
    params: GenerationParams,
    marker: str = "Wait",
    seed: int | None = None,
    idempotency_key: str | None = None,
) -> InjectionResult:
    """Two-phase generation with a marker inserted before the answer.

    Phase one generates normally. The completion is cut at the first
    ``\\boxed{`` occurrence, the marker is appended there, and phase two
    continues from that prefix. When phase one never boxes an answer the
    marker goes at the end and the result is flagged as a fallback.
    """
    seed = params.seed if seed is None else seed
    base_kwargs = dict(
        temperature=params.temperature,
        top_p=params.top_p,
        max_tokens=params.max_tokens,
        n=1,
        seed=seed,
        logprobs=params.logprobs,
        top_logprobs=params.top_logprobs,
    )
    chat = client.backend.mode == MODE_CHAT
    if chat:
        phase1 = client.complete(
            messages=[{"role": "user", "content": problem}],
            idempotency_key=None if idempotency_key is None else idempotency_key + ":p1",
            **base_kwargs,
        )
    else:
        phase1 = client.complete(
            prompt=problem,
            idempotency_key=None if idempotency_key is None else idempotency_key + ":p1",
            **base_kwargs,
        )
    phase1_text = phase1[0].text if phase1 else ""
    cut = phase1_text.find("\\boxed{")
    fallback = cut < 0
    if fallback:
        cut = len(phase1_text)
    prefix = phase1_text[:cut] + marker
    if chat:
        phase2 = client.complete(
            messages=[
                {"role": "user", "content": problem},
                {"role": "assistant", "content": prefix},
            ],
            idempotency_key=None if idempotency_key is None else idempotency_key + ":p2",
            **base_kwargs,
        )
    else:
        phase2 = client.complete(
            prompt=problem + prefix,
            idempotency_key=None if idempotency_key is None else idempotency_key + ":p2",
            **base_kwargs,
        )
    phase2_text = phase2[0].text if phase2 else ""
    tokens = (phase1[0].tokens if phase1 else []) + (phase2[0].tokens if phase2 else [])
    return InjectionResult(
        text=prefix + phase2_text,
        injection_offset=cut,
        fallback=fallback,
        phase1_text=phase1_text,
        phase2_text=phase2_text,
        tokens=tokens,
    )


def extract_boxed(text: str) -> str | None:
    """Content of the last balanced ``\\boxed{...}`` group, braces counted.

    Unbalanced trailing groups fall back to earlier occurrences; no boxed
    group at all gives None.
    """
    needle = "\\boxed{"
    starts = []
    idx = text.find(needle)
    while idx >= 0:
        starts.append(idx)
        idx = text.find(needle, idx + 1)
    for start in reversed(starts):
        depth = 1
        pos = start + len(needle)
        while pos < len(text) and depth > 0:
            ch = text[pos]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
            pos += 1
        if depth == 0:
            return text[start + len(needle) : pos - 1]
    return None


@dataclass
class CompletionScore:
    extracted: str | None
    correct: bool


@dataclass
class RunScores:
    pass_at_1: float
    acc_at_k: float
    len_at_k: float
    k: int
    per_completion: list[CompletionScore]


def _completion_text(c) -> str:
    return c.text if isinstance(c, Completion) else str(c)


def _completion_length(c) -> int:
    if isinstance(c, Completion) and c.tokens:
        return len(c.tokens)
    return len(_completion_text(c).split())


def score_run(completions, answer_gt: str, k: int) -> RunScores:
    """pass@1, acc@k, and mean length over the first k completions.

    Correctness is canonical answer equality on the extracted boxed answer;
    a completion with no boxed answer is wrong. Token counts fall back to
    whitespace splitting when no token records are attached.
    """
    completions = list(completions)
    if k <= 0:
        raise ValueError("k must be positive")
    if k > len(completions):
        raise ValueError(f"k={k} exceeds the {len(completions)} completions")
    per = []
    for c in completions:
        extracted = extract_boxed(_completion_text(c))
        ok = extracted is not None and answers_match(extracted, answer_gt)
        per.append(CompletionScore(extracted=extracted, correct=ok))
    head = per[:k]
    acc = sum(1 for s in head if s.correct) / k
    lengths = [_completion_length(c) for c in completions[:k]]
    return RunScores(
        pass_at_1=float(per[0].correct),
        acc_at_k=acc,
        len_at_k=float(sum(lengths) / k),
        k=k,
        per_completion=per,
    )


MODE_BASE = "base"
MODE_DISTILLED = "distilled"


@dataclass
class TemperaturePolicyReport:
    score: float
    setting: str
    mode: str


def _parse_setting(label: str) -> tuple[float, float | None]:
    body = label.strip()
    if body.lower().startswith("t"):
        body = body[1:]
    parts = body.split("/")
    temp = float(parts[0])
    top_p = float(parts[1]) if len(parts) > 1 else None
    return temp, top_p


def temperature_policy_report(
    scores: dict[str, float], mode: str = MODE_BASE
) -> TemperaturePolicyReport:
    """Pick the reportable score across sampling settings.

    Labels look like "0.0", "0.7", or "0.7/0.8" (temperature, optional
    top_p). Base-model mode reports the maximum across settings; distilled
    mode always reports the temperature-0.0 setting. Both temperature 0.0
    and temperature 0.7 (any top_p variant) must be present.
    """
    if mode not in (MODE_BASE, MODE_DISTILLED):
        raise ValueError(f"unknown policy mode {mode!r}")
    if not scores:
        raise ValueError("no scores supplied")
    parsed = {label: _parse_setting(label) for label in scores}
    temps = {t for t, _ in parsed.values()}
    if 0.0 not in temps or 0.7 not in temps:
        raise ValueError("need results for both temperature 0.0 and 0.7")
    if mode == MODE_DISTILLED:
        label = next(l for l, (t, _) in parsed.items() if t == 0.0)
        return TemperaturePolicyReport(
            score=scores[label], setting=label, mode=mode
        )
    best = max(scores, key=lambda l: scores[l])
    return TemperaturePolicyReport(score=scores[best], setting=best, mode=mode)


@dataclass
class RunResult:
    problem_id: str
    completions: list[str]
    extracted: list[str | None]
    scores: RunScores | None
    fallback_count: int = 0

    def to_dict(self) -> dict:
        d: dict = {
            "problem_id": self.problem_id,
            "completions": self.completions,
            "extracted": self.extracted,
        }
        if self.scores is not None:
            d["scores"] = {
                "pass_at_1": self.scores.pass_at_1,
                "acc_at_k": self.scores.acc_at_k,
                "len_at_k": self.scores.len_at_k,
                "k": self.scores.k,
            }
        return d


def _idempotency_key(problem_id: str, params: GenerationParams, intervention: InterventionSpec) -> str:
    blob = json.dumps(
        {
            "id": problem_id,
            "t": params.temperature,
            "p": params.top_p,
            "n": params.n,
            "seed": params.seed,
            "max": params.max_tokens,
            "kind": intervention.kind,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def load_journal(path: str) -> dict[str, dict]:
    """Completed problem ids and their recorded results."""
    done: dict[str, dict] = {}
    if not os.path.exists(path):
        return done
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                continue  # a torn tail line from an interrupted run
            done[obj["problem_id"]] = obj
    return done


def run_batch(
    client: BackendClient,
    problems: list[dict],
    params: GenerationParams,
    intervention: InterventionSpec = NO_INTERVENTION,
    k: int = 1,
    journal_path: str | None = None,
    resume: bool = False,
) -> list[RunResult]:
    """Generate and score a batch of problems with bounded concurrency.

    Each problem is one work item; results append to the journal as they
    finish, so an interrupted run restarted with resume=True only processes
    problems the journal does not already record. Idempotency keys make
    retried HTTP calls safe: a retry reuses the same key and the problem
    still yields exactly params.n completions.
    """
    done: dict[str, dict] = {}
    if journal_path and resume:
        done = load_journal(journal_path)
    results: dict[str, RunResult] = {}
    for pid, obj in done.items():
        results[pid] = RunResult(
            problem_id=pid,
            completions=obj.get("completions", []),
            extracted=obj.get("extracted", []),
            scores=None,
        )

    def work(problem: dict) -> RunResult:
        pid = str(problem["id"])
        key = _idempotency_key(pid, params, intervention)
        completions = generate(
            client, problem["problem"], params, intervention, idempotency_key=key
        )
        texts = [c.text for c in completions]
        extracted = [extract_boxed(t) for t in texts]
        scores = None
        if problem.get("answer_gt") is not None:
            scores = score_run(completions, problem["answer_gt"], min(k, len(texts)))
        return RunResult(
            problem_id=pid, completions=texts, extracted=extracted, scores=scores
        )

    todo = [p for p in problems if str(p["id"]) not in results]
    journal = open(journal_path, "a", encoding="utf-8") if journal_path else None
    try:
        max_workers = max(1, client.backend.limits.max_inflight)
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for result in pool.map(work, todo):
                results[result.problem_id] = result
                if journal:
                    journal.write(json.dumps(result.to_dict()) + "\n")
                    journal.flush()
    finally:
        if journal:
            journal.close()
    order = [str(p["id"]) for p in problems]
    return [results[pid] for pid in order if pid in results]


def aggregate_scores(results: list[RunResult]) -> dict:
    """Mean pass@1 / acc@k / len@k over the scored results."""
    scored = [r.scores for r in results if r.scores is not None]
    if not scored:
        return {"pass_at_1": math.nan, "acc_at_k": math.nan, "len_at_k": math.nan, "n": 0}
    return {
        "pass_at_1": sum(s.pass_at_1 for s in scored) / len(scored),
        "acc_at_k": sum(s.acc_at_k for s in scored) / len(scored),
        "len_at_k": sum(s.len_at_k for s in scored) / len(scored),
        "n": len(scored),
    }
