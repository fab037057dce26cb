"""Epistemic-marker counting over trace text.

The default lexicon is a small set of hedging and self-check words. Matches
are case-insensitive whole words: a marker counts only when neither
neighboring character is an ASCII letter, so "Unchecked" contributes nothing
to "check".
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .traces import Corpus, trace_text

DEFAULT_MARKERS: tuple[str, ...] = (
    "wait",
    "hmm",
    "perhaps",
    "maybe",
    "actually",
    "alternatively",
    "seems",
    "might",
    "likely",
    "guess",
    "sure",
    "correct",
    "check",
)


@dataclass(frozen=True)
class EpistemicLexicon:
    markers: tuple[str, ...] = DEFAULT_MARKERS

    def __post_init__(self):
        lowered = tuple(m.lower() for m in self.markers)
        if len(set(lowered)) != len(lowered):
            raise ValueError("lexicon contains duplicate markers")
        if any(not m or not m.isalpha() for m in lowered):
            raise ValueError("markers must be non-empty alphabetic words")
        object.__setattr__(self, "markers", lowered)


DEFAULT_LEXICON = EpistemicLexicon()


def _marker_pattern(marker: str) -> re.Pattern:
    return re.compile(
        rf"(?<![A-Za-z]){re.escape(marker)}(?![A-Za-z])", flags=re.IGNORECASE
    )


def count_markers(text: str, lexicon: EpistemicLexicon = DEFAULT_LEXICON) -> dict[str, int]:
    """Occurrence count for every marker in the lexicon (zeros included)."""
    return {
        m: len(_marker_pattern(m).findall(text)) for m in lexicon.markers
    }


@dataclass
class MarkerContext:
    trace_id: str
    marker: str
    snippet: str


@dataclass
class LexiconReport:
    per_trace: dict[str, dict[str, int]]
    totals: dict[str, int]
    per_response_mean: dict[str, float]
    contexts: dict[str, list[MarkerContext]]
    context_window: int


def corpus_report(
    corpus: Corpus,
    lexicon: EpistemicLexicon = DEFAULT_LEXICON,
    context_window: int = 40,
    max_contexts: int = 5,
) -> LexiconReport:
    """Marker counts per trace, corpus totals, per-response means, and
    up to max_contexts +/- context_window-character snippets per marker."""
    if len(corpus.traces) == 0:
        raise ValueError("corpus has no traces")
    per_trace: dict[str, dict[str, int]] = {}
    totals = {m: 0 for m in lexicon.markers}
    contexts: dict[str, list[MarkerContext]] = {m: [] for m in lexicon.markers}
    for trace in corpus.traces:
        text = trace_text(trace)
        counts = count_markers(text, lexicon)
        per_trace[trace.id] = counts
        for m in lexicon.markers:
            totals[m] += counts[m]
            if len(contexts[m]) >= max_contexts or counts[m] == 0:
                continue
            for match in _marker_pattern(m).finditer(text):
                if len(contexts[m]) >= max_contexts:
                    break
                lo = max(0, match.start() - context_window)
                hi = min(len(text), match.end() + context_window)
                contexts[m].append(
                    MarkerContext(trace_id=trace.id, marker=m, snippet=text[lo:hi])
                )
    n = len(corpus.traces)
    per_response_mean = {m: totals[m] / n for m in lexicon.markers}
    return LexiconReport(
        per_trace=per_trace,
        totals=totals,
        per_response_mean=per_response_mean,
        contexts=contexts,
        context_window=context_window,
    )


@dataclass
class TrendCell:
    marker: str
    label: str
    per_response_mean: float


@dataclass
class TrendChange:
    marker: str
    from_label: str
    to_label: str
    pct_change: float | None


@dataclass
class SizeTrend:
    cells: list[TrendCell]
    changes: list[TrendChange]


def size_trend(reports: list[tuple[str, LexiconReport]]) -> SizeTrend:
    """Long-format per-response means across labeled reports, with percent
    changes between every ordered pair of labels.

    A change from mean 4.0 to 7.0 reports +75.0. A zero baseline mean leaves
    the change undefined (None).
    """
    if len(reports) < 2:
        raise ValueError("size_trend needs at least two labeled reports")
    labels = [label for label, _ in reports]
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate labels in size_trend input")
    markers = list(reports[0][1].per_response_mean)
    for label, rep in reports[1:]:
        if list(rep.per_response_mean) != markers:
            raise ValueError(f"report {label!r} uses a different lexicon")
    cells = [
        TrendCell(marker=m, label=label, per_response_mean=rep.per_response_mean[m])
        for m in markers
        for label, rep in reports
    ]
    changes = []
    for m in markers:
        for i in range(len(reports)):
            for j in range(i + 1, len(reports)):
                a = reports[i][1].per_response_mean[m]
                b = reports[j][1].per_response_mean[m]
                pct = None if a == 0 else (b - a) / a * 100.0
                changes.append(
                    TrendChange(
                        marker=m,
                        from_label=labels[i],
                        to_label=labels[j],
                        pct_change=pct,
                    )
                )
    return SizeTrend(cells=cells, changes=changes)
