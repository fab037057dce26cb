"""Token-level Shannon entropy over truncated next-token distributions.

Backends expose only the top-k logprobs per position, so the per-token
entropy is computed from that truncated distribution under an explicit tail
policy. All entropies are in nats; a reporting layer may divide by ln 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CohortMissingError, InconsistentLogprobsError, MissingDataError
from .traces import Corpus, TokenRecord, Trace

TAIL_BUCKET = "bucket"
TAIL_DROP = "drop"
_SUM_TOL = 1e-4


def token_entropy(record: TokenRecord, tail: str = TAIL_BUCKET) -> float:
    """Entropy in nats of one token's truncated top-k distribution.

    tail="bucket" treats the leftover mass r = max(0, 1 - sum p) as one
    pseudo-outcome; tail="drop" renormalizes the top-k mass to one. Top-k
    probabilities summing above 1 + 1e-4 are an upstream inconsistency.
    """
    if tail not in (TAIL_BUCKET, TAIL_DROP):
        raise ValueError(f"unknown tail policy {tail!r}")
    if not record.topk:
        raise MissingDataError("token has no topk entries to compute entropy from")
    probs = np.exp(np.array([lp for _, lp in record.topk], dtype=np.float64))
    total = float(probs.sum())
    if total > 1.0 + _SUM_TOL:
        raise InconsistentLogprobsError(
            f"topk probabilities sum to {total:.6f} > 1"
        )
    if tail == TAIL_BUCKET:
        residual = max(0.0, 1.0 - total)
        outcomes = np.append(probs, residual)
    else:
        outcomes = probs / total
    nz = outcomes[outcomes > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass
class StepStat:
    index: int
    mean: float
    stddev: float


@dataclass
class EntropyProfile:
    trace_id: str
    per_token: list[float]
    per_step: list[StepStat]
    tail: str

    @property
    def tail_mass_used(self) -> bool:
        return self.tail == TAIL_BUCKET


def entropy_profile(
    trace: Trace, steps: list[tuple[int, int]], tail: str = TAIL_BUCKET
) -> EntropyProfile:
    """Per-token entropies plus mean/stddev aggregated over step spans.

    stddev is the population standard deviation, so single-token steps
    report 0.
    """
    per_token = []
    for i, tok in enumerate(trace.tokens):
        try:
            per_token.append(token_entropy(tok, tail))
        except (MissingDataError, InconsistentLogprobsError) as exc:
            raise type(exc)(f"token {i}: {exc}") from exc
    per_step = []
    for idx, (start, end) in enumerate(steps):
        if not (0 <= start < end <= len(per_token)):
            raise ValueError(f"step span ({start}, {end}) out of range")
        chunk = np.array(per_token[start:end])
        per_step.append(
            StepStat(index=idx, mean=float(chunk.mean()), stddev=float(chunk.std()))
        )
    return EntropyProfile(
        trace_id=trace.id, per_token=per_token, per_step=per_step, tail=tail
    )


@dataclass
class CohortRow:
    bin: int
    mean_correct: float
    mean_incorrect: float
    n_correct: int
    n_incorrect: int


def cohort_compare(
    corpus: Corpus,
    tail: str = TAIL_BUCKET,
    bins: int = 100,
    normalize: str = "position-percentile",
) -> list[CohortRow]:
    """Mean token entropy by relative position, correct vs incorrect cohort.

    Each token lands in bin floor(index / length * bins), clamped to the last
    bin, and bin means pool every token from the cohort. Traces without a
    correctness flag belong to neither cohort. Result order is insensitive to
    trace order. Empty bins report NaN means with zero counts.
    """
    if normalize != "position-percentile":
        raise ValueError(f"unknown normalization {normalize!r}")
    if bins < 1:
        raise ValueError("bins must be positive")
    sums = np.zeros((2, bins))
    counts = np.zeros((2, bins), dtype=np.int64)
    cohort_sizes = [0, 0]
    for trace in corpus.traces:
        if trace.correct is None:
            continue
        cohort = 0 if trace.correct else 1
        cohort_sizes[cohort] += 1
        n = len(trace.tokens)
        for i, tok in enumerate(trace.tokens):
            b = min(bins - 1, (i * bins) // n)
            sums[cohort, b] += token_entropy(tok, tail)
            counts[cohort, b] += 1
    if cohort_sizes[0] == 0:
        raise CohortMissingError("correct")
    if cohort_sizes[1] == 0:
        raise CohortMissingError("incorrect")
    rows = []
    for b in range(bins):
        mc = sums[0, b] / counts[0, b] if counts[0, b] else math.nan
        mi = sums[1, b] / counts[1, b] if counts[1, b] else math.nan
        rows.append(
            CohortRow(
                bin=b,
                mean_correct=float(mc),
                mean_incorrect=float(mi),
                n_correct=int(counts[0, b]),
                n_incorrect=int(counts[1, b]),
            )
        )
    return rows
