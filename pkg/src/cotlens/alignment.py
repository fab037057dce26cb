"""Distributional alignment between a model and a text dataset.

Scores each sample's fixed completion under the model (teacher forcing via
echoed logprobs), then summarizes: per-sample mean logprob, the empirical
CDF of those means, and per-class logprob/entropy statistics for
user-defined token classes. A class whose mean logprob sits far below the
all-token mean is flagged as outside the model's support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backend import CAP_ECHO, BackendClient
from .entropy import TAIL_BUCKET, token_entropy
from .errors import BackendError, CapabilityError, MissingDataError
from .traces import TokenRecord

DEFAULT_GAP_THRESHOLD = 5.0

IN_SUPPORT = "in-support"
OUTSIDE_SUPPORT = "outside-support"


@dataclass
class ScoredText:
    sample_id: str
    tokens: list[TokenRecord]


@dataclass
class SampleDiagnostic:
    sample_id: str
    message: str


def score_dataset(
    samples: list[dict],
    client: BackendClient,
    top_logprobs: int = 5,
) -> tuple[list[ScoredText], list[SampleDiagnostic]]:
    """Score every (id, prompt, completion) sample under the backend.

    The echo-logprobs capability is checked before any request goes out.
    Per-sample backend failures become diagnostics and do not abort the
    batch; an empty completion yields an empty token list plus a flag.
    """
    if not client.backend.has(CAP_ECHO):
        raise CapabilityError(
            "score_dataset requires the echo-logprobs capability"
        )
    scored: list[ScoredText] = []
    diagnostics: list[SampleDiagnostic] = []
    for sample in samples:
        sid = str(sample["id"])
        completion = sample["completion"]
        if completion == "":
            scored.append(ScoredText(sample_id=sid, tokens=[]))
            diagnostics.append(
                SampleDiagnostic(sample_id=sid, message="empty completion")
            )
            continue
        try:
            tokens = client.echo_logprobs(
                sample["prompt"], completion, top_logprobs=top_logprobs
            )
        except BackendError as exc:
            diagnostics.append(SampleDiagnostic(sample_id=sid, message=str(exc)))
            continue
        scored.append(ScoredText(sample_id=sid, tokens=tokens))
    return scored, diagnostics


@dataclass
class ClassStat:
    token_class: str
    count: int
    mean_logprob: float
    mean_entropy: float


@dataclass
class AlignmentReport:
    per_sample_mean: dict[str, float]
    cdf: list[tuple[float, float]]
    class_stats: dict[str, ClassStat]
    gaps: dict[str, float]
    all_token_mean: float
    tail: str


def _empirical_cdf(values: list[float]) -> list[tuple[float, float]]:
    """Right-continuous step points, starting at (min, 0) and ending at
    (max, 1). Invariant under duplicating the sample."""
    if not values:
        return []
    xs = sorted(values)
    n = len(xs)
    points: list[tuple[float, float]] = [(xs[0], 0.0)]
    for i, x in enumerate(xs):
        frac = (i + 1) / n
        if points and points[-1][0] == x and points[-1][1] != 0.0:
            points[-1] = (x, frac)
        else:
            points.append((x, frac))
    return points


def cdf_value(report: AlignmentReport, x: float) -> float:
    """Fraction of per-sample means at or below x."""
    means = list(report.per_sample_mean.values())
    if not means:
        raise MissingDataError("report has no scored samples")
    return sum(1 for m in means if m <= x) / len(means)


def _normalize_surface(s: str) -> str:
    return s.strip().lower()


def build_report(
    scored: list[ScoredText],
    classes: dict[str, set[str]] | None = None,
    tail: str = TAIL_BUCKET,
) -> AlignmentReport:
    """Aggregate scored samples into the alignment report.

    Class membership is by token surface match, case-insensitive and
    whitespace-stripped. The gap for a class is all-token mean logprob minus
    the class mean; classes that never occur get no gap but keep a zero
    count so support classification can flag them.
    """
    classes = classes or {}
    per_sample_mean: dict[str, float] = {}
    all_lps: list[float] = []
    for st in scored:
        lps = [t.logprob for t in st.tokens]
        all_lps.extend(lps)
        if lps:
            per_sample_mean[st.sample_id] = float(np.mean(lps))
    all_token_mean = float(np.mean(all_lps)) if all_lps else math.nan
    surface_sets = {
        name: {_normalize_surface(s) for s in surfaces}
        for name, surfaces in classes.items()
    }
    class_stats: dict[str, ClassStat] = {}
    gaps: dict[str, float] = {}
    for name, surfaces in surface_sets.items():
        lps = []
        ents = []
        for st in scored:
            for tok in st.tokens:
                if _normalize_surface(tok.text) in surfaces:
                    lps.append(tok.logprob)
                    if tok.topk:
                        ents.append(token_entropy(tok, tail))
        count = len(lps)
        mean_lp = float(np.mean(lps)) if lps else math.nan
        mean_ent = float(np.mean(ents)) if ents else math.nan
        class_stats[name] = ClassStat(
            token_class=name, count=count, mean_logprob=mean_lp, mean_entropy=mean_ent
        )
        if count:
            gaps[name] = all_token_mean - mean_lp
    return AlignmentReport(
        per_sample_mean=per_sample_mean,
        cdf=_empirical_cdf(list(per_sample_mean.values())),
        class_stats=class_stats,
        gaps=gaps,
        all_token_mean=all_token_mean,
        tail=tail,
    )


@dataclass
class SupportCall:
    status: str
    zero_count: bool
    gap: float | None


def classify_support(
    report: AlignmentReport, gap_threshold: float = DEFAULT_GAP_THRESHOLD
) -> dict[str, SupportCall]:
    """Classify each token class as in- or outside-support.

    A class is outside support when its gap reaches the threshold (>=), or
    when it never occurred at all, in which case the zero-count flag is set.
    """
    out: dict[str, SupportCall] = {}
    for name, stat in report.class_stats.items():
        if stat.count == 0:
            out[name] = SupportCall(status=OUTSIDE_SUPPORT, zero_count=True, gap=None)
            continue
        gap = report.gaps[name]
        status = OUTSIDE_SUPPORT if gap >= gap_threshold else IN_SUPPORT
        out[name] = SupportCall(status=status, zero_count=False, gap=gap)
    return out
