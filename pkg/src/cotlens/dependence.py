"""Kernel dependence scores between hidden states and final answers.

The core estimator is the biased HSIC with Gaussian kernels,

    HSIC(X, Y) = (n - 1)^-2 * trace(K H L H),   H = I - (1/n) J,

with bandwidths from the median heuristic unless overridden. Multi-sample
profiles score dependence across aligned trajectories at each relative
position; the single-trace mode is a distance proxy against the answer
embedding and is flagged as such, never conflated with the estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateDataError,
    LengthMismatchError,
    MissingAnswerError,
    SampleSizeError,
)
from .lexicon import DEFAULT_LEXICON, EpistemicLexicon, count_markers
from .traces import HiddenStates, Trace

MODE_MULTI = "multi-sample"
MODE_PROXY = "single-proxy"

_MIN_SAMPLES = 4


def _as_matrix(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("samples must form a 1-d or 2-d array")
    return arr


def _sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    return np.maximum(d2, 0.0)


def median_bandwidth(x) -> float:
    """Median pairwise Euclidean distance of the rows of x."""
    arr = _as_matrix(x)
    if arr.shape[0] < 2:
        raise SampleSizeError("median bandwidth needs at least two rows")
    d2 = _sq_dists(arr)
    iu = np.triu_indices(arr.shape[0], k=1)
    return float(np.median(np.sqrt(d2[iu])))


def _gram(x: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(_sq_dists(x) / (-2.0 * sigma * sigma))


def _center(k: np.ndarray) -> np.ndarray:
    row = k.mean(axis=0, keepdims=True)
    col = k.mean(axis=1, keepdims=True)
    return k - row - col + k.mean()


def _is_constant(x: np.ndarray) -> bool:
    return bool((x == x[0]).all())


def _resolve_bandwidth(x: np.ndarray, bandwidth) -> float:
    if bandwidth == "median":
        sigma = median_bandwidth(x)
        if sigma == 0.0:
            raise DegenerateDataError(
                "zero median pairwise distance; sample is duplicate-dominated"
            )
        return sigma
    sigma = float(bandwidth)
    if sigma <= 0:
        raise ValueError("bandwidth must be positive")
    return sigma


def hsic(x, y, bandwidth="median") -> float:
    """Biased HSIC between row-aligned samples x and y.

    A constant x or y annihilates the centered Gram matrix, so the result is
    exactly 0.0 without touching the bandwidth heuristic. Small negative
    rounding noise is floored at zero.
    """
    xm, ym = _as_matrix(x), _as_matrix(y)
    n = xm.shape[0]
    if ym.shape[0] != n:
        raise LengthMismatchError(
            f"x has {n} rows but y has {ym.shape[0]}"
        )
    if n < _MIN_SAMPLES:
        raise SampleSizeError(f"hsic needs at least {_MIN_SAMPLES} samples, got {n}")
    if _is_constant(xm) or _is_constant(ym):
        return 0.0
    kc = _center(_gram(xm, _resolve_bandwidth(xm, bandwidth)))
    l = _gram(ym, _resolve_bandwidth(ym, bandwidth))
    val = float((kc * l).sum()) / (n - 1) ** 2
    return max(val, 0.0)


@dataclass
class PermutationTest:
    statistic: float
    null: np.ndarray
    permutations: int
    seed: int
    p_value: float

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.null, q))


def hsic_permutation_test(
    x, y, permutations: int = 200, seed: int = 0, bandwidth="median"
) -> PermutationTest:
    """Permutation null for HSIC, shuffling the rows of y.

    Grams are computed once; each permutation reindexes the y-side Gram
    matrix. The p-value uses the add-one rule (1 + #{null >= stat}) /
    (permutations + 1).
    """
    xm, ym = _as_matrix(x), _as_matrix(y)
    n = xm.shape[0]
    if ym.shape[0] != n:
        raise LengthMismatchError(f"x has {n} rows but y has {ym.shape[0]}")
    if n < _MIN_SAMPLES:
        raise SampleSizeError(f"hsic needs at least {_MIN_SAMPLES} samples, got {n}")
    rng = np.random.default_rng(seed)
    scale = 1.0 / (n - 1) ** 2
    if _is_constant(xm) or _is_constant(ym):
        stat = 0.0
        null = np.zeros(permutations)
    else:
        kc = _center(_gram(xm, _resolve_bandwidth(xm, bandwidth)))
        l = _gram(ym, _resolve_bandwidth(ym, bandwidth))
        stat = max(float((kc * l).sum()) * scale, 0.0)
        null = np.empty(permutations)
        for b in range(permutations):
            perm = rng.permutation(n)
            null[b] = max(float((kc * l[np.ix_(perm, perm)]).sum()) * scale, 0.0)
    p = (1.0 + float((null >= stat).sum())) / (permutations + 1.0)
    return PermutationTest(
        statistic=stat, null=null, permutations=permutations, seed=seed, p_value=p
    )


@dataclass
class DependenceProfile:
    trace_id: str
    scores: np.ndarray
    mode: str
    bandwidth: float
    peaks: list[int] = field(default_factory=list)


def trajectory_profile_multi(
    trajectories: list[np.ndarray],
    answers,
    positions: int = 50,
    bandwidth="median",
    label: str = "cohort",
) -> DependenceProfile:
    """HSIC between hidden rows and answers at each relative position.

    Each trajectory contributes its nearest row to every relative position
    q / (positions - 1), so trajectories of different lengths align. The
    recorded bandwidth is the fixed override, or the median across positions
    of the per-position median bandwidths.
    """
    mats = [_as_matrix(t) for t in trajectories]
    if len(mats) < _MIN_SAMPLES:
        raise SampleSizeError(
            f"multi-sample profile needs at least {_MIN_SAMPLES} trajectories"
        )
    if any(m.shape[0] < 1 for m in mats):
        raise ValueError("every trajectory needs at least one row")
    ans = _as_matrix(answers)
    if ans.shape[0] != len(mats):
        raise LengthMismatchError("one answer vector per trajectory required")
    if positions < 1:
        raise ValueError("positions must be positive")
    scores = np.empty(positions)
    sigmas = []
    for q in range(positions):
        r = q / (positions - 1) if positions > 1 else 0.0
        rows = np.stack([m[round(r * (m.shape[0] - 1))] for m in mats])
        scores[q] = hsic(rows, ans, bandwidth)
        if bandwidth == "median" and not _is_constant(rows):
            sigmas.append(median_bandwidth(rows))
    if bandwidth == "median":
        rep = float(np.median(sigmas)) if sigmas else 1.0
    else:
        rep = float(bandwidth)
    return DependenceProfile(
        trace_id=label, scores=scores, mode=MODE_MULTI, bandwidth=rep
    )


def trajectory_profile_single(
    hidden, answer=None, bandwidth="median", label: str = ""
) -> DependenceProfile:
    """Distance-proxy profile for one trajectory against its answer embedding.

    score(t) = exp(-||h_t - answer||^2 / (2 sigma^2)) with sigma the median
    pairwise distance among trajectory rows. This is a proxy, not an HSIC
    estimate, and the profile mode says so. When every pairwise distance is
    zero the bandwidth falls back to 1.0, which keeps the all-rows-equal-
    answer case at score 1.0.
    """
    if isinstance(hidden, HiddenStates):
        rows = hidden.trajectory()
        if answer is None:
            answer = hidden.answer_vector()
        if not label:
            label = "trace"
    else:
        rows = _as_matrix(hidden)
    if answer is None:
        raise MissingAnswerError("single-trace proxy needs an answer embedding")
    rows = _as_matrix(rows)
    if rows.shape[0] < 2:
        raise SampleSizeError("proxy profile needs at least two trajectory rows")
    vec = np.asarray(answer, dtype=np.float64).reshape(-1)
    if vec.size != rows.shape[1]:
        raise LengthMismatchError("answer embedding dimension mismatch")
    if bandwidth == "median":
        sigma = median_bandwidth(rows)
        if sigma == 0.0:
            sigma = 1.0
    else:
        sigma = float(bandwidth)
        if sigma <= 0:
            raise ValueError("bandwidth must be positive")
    d2 = ((rows - vec[None, :]) ** 2).sum(axis=1)
    scores = np.exp(d2 / (-2.0 * sigma * sigma))
    return DependenceProfile(
        trace_id=label or "trace", scores=scores, mode=MODE_PROXY, bandwidth=sigma
    )


def detect_peaks(scores, z_threshold: float = 2.0) -> list[int]:
    """Positions whose z-score meets the threshold (>= semantics).

    Uses the population standard deviation; a flat profile has no peaks.
    """
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("scores must be a non-empty 1-d array")
    sd = float(arr.std())
    if sd == 0.0:
        return []
    z = (arr - arr.mean()) / sd
    return [int(i) for i in np.nonzero(z >= z_threshold)[0]]


@dataclass
class PeakAnnotation:
    position: int
    snippet: str
    is_epistemic_context: bool
    marker_counts: dict[str, int]


def annotate_peaks(
    profile: DependenceProfile,
    trace: Trace,
    lexicon: EpistemicLexicon = DEFAULT_LEXICON,
    window: int = 5,
) -> list[PeakAnnotation]:
    """Label each peak with the surrounding token text and whether any
    lexicon marker occurs within +/- window tokens."""
    n = len(trace.tokens)
    if len(profile.scores) != n:
        raise LengthMismatchError(
            f"profile has {len(profile.scores)} positions but trace has {n} tokens"
        )
    if window < 0:
        raise ValueError("window must be non-negative")
    out = []
    for pos in profile.peaks:
        if not (0 <= pos < n):
            raise ValueError(f"peak position {pos} out of range")
        lo = max(0, pos - window)
        hi = min(n, pos + window + 1)
        snippet = "".join(t.text for t in trace.tokens[lo:hi])
        counts = count_markers(snippet, lexicon)
        out.append(
            PeakAnnotation(
                position=pos,
                snippet=snippet,
                is_epistemic_context=any(v > 0 for v in counts.values()),
                marker_counts=counts,
            )
        )
    return out
