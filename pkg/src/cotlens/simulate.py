"""Monte Carlo simulators for belief-entropy dynamics.

Models a solver's uncertainty about a latent answer as a scalar entropy (or
an explicit belief distribution) and simulates two regimes: a drift regime
where externalized checks cut entropy by at least a fixed amount with some
probability, and a divergence regime where per-step information gain is
capped by a summable schedule, leaving an entropy floor no amount of extra
steps can break. All entropies are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ImpossibleObservationError, InconclusiveError

_DIST_TOL = 1e-9
_BLOCK = 1024  # trials per spawned child stream; fixed so trial i's draws
               # do not depend on the total trial count

PROCEDURAL_ONLY = "procedural-only"
PROCEDURAL_EPISTEMIC = "procedural+epistemic"

REDUCTION_EXACT = "exact"
REDUCTION_OVERSIZED = "oversized"


# ---------------------------------------------------------------------------
# belief states and channels


@dataclass
class BeliefState:
    """A probability distribution over candidate answers."""

    dist: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.dist, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("belief must be a non-empty 1-d distribution")
        if (arr < 0).any():
            raise ValueError("belief has negative mass")
        if abs(float(arr.sum()) - 1.0) > _DIST_TOL:
            raise ValueError(f"belief mass {float(arr.sum())} is not 1")
        self.dist = arr

    @classmethod
    def uniform(cls, size: int) -> "BeliefState":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def point_mass(cls, index: int, size: int) -> "BeliefState":
        arr = np.zeros(size)
        arr[index] = 1.0
        return cls(arr)


@dataclass
class DriftParams:
    """Parameters of the drift (externalized-check) regime.

    p is the per-step probability of a successful check, delta the entropy
    cut per success, epsilon the target entropy, h0 the starting entropy.
    p = 0 is allowed for policy comparisons; the hitting-time bound itself
    needs p > 0.
    """

    h0: float
    epsilon: float
    p: float
    delta: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValueError("p must lie in [0, 1]")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.h0 < self.epsilon:
            raise ValueError("h0 must be at least epsilon")


@dataclass
class DivergenceSchedule:
    """Per-step information-gain caps with strictly summable total.

    k is the 1-based step index where the capped regime begins; it is
    bookkeeping for reports, the dynamics depend only on eps.
    """

    residual_entropy: float
    eps: tuple[float, ...]
    k: int = 1

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        if len(eps) < 1:
            raise ValueError("schedule needs at least one step")
        if any(e < 0 for e in eps):
            raise ValueError("schedule entries must be non-negative")
        if self.residual_entropy <= 0:
            raise ValueError("residual entropy must be positive")
        if sum(eps) >= self.residual_entropy:
            raise ValueError("schedule total must stay strictly below the residual")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        self.eps = eps

    def floor(self) -> float:
        """residual - sum(eps), evaluated by the same left-to-right
        subtraction the simulator performs so the bound is exact in floats."""
        h = self.residual_entropy
        for e in self.eps:
            h -= e
        return h


@dataclass
class ObservationChannel:
    """Action-indexed likelihoods P(observation | answer, action).

    likelihood maps an action label to a (num_answers x num_outcomes) row-
    stochastic matrix.
    """

    outcomes: list
    likelihood: dict

    def __post_init__(self):
        clean = {}
        for action, mat in self.likelihood.items():
            arr = np.asarray(mat, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != len(self.outcomes):
                raise ValueError(
                    f"action {action!r}: likelihood must be (answers x outcomes)"
                )
            if (arr < 0).any():
                raise ValueError(f"action {action!r}: negative likelihood")
            if not np.allclose(arr.sum(axis=1), 1.0, atol=_DIST_TOL, rtol=0):
                raise ValueError(f"action {action!r}: rows must sum to 1")
            clean[action] = arr
        self.likelihood = clean

    def outcome_index(self, observation) -> int:
        if isinstance(observation, (int, np.integer)) and observation not in self.outcomes:
            idx = int(observation)
            if not (0 <= idx < len(self.outcomes)):
                raise ValueError(f"observation index {idx} out of range")
            return idx
        try:
            return self.outcomes.index(observation)
        except ValueError:
            raise ValueError(f"unknown observation {observation!r}") from None


# ---------------------------------------------------------------------------
# entropy primitives


def entropy(belief) -> float:
    """Shannon entropy in nats; 0 log 0 counts as 0."""
    if not isinstance(belief, BeliefState):
        belief = BeliefState(np.asarray(belief, dtype=np.float64))
    p = belief.dist
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def information_gain(prev, nxt) -> float:
    """Entropy drop from prev to nxt; negative when uncertainty grew."""
    return entropy(prev) - entropy(nxt)


def binary_entropy(x: float) -> float:
    if not (0.0 <= x <= 1.0):
        raise ValueError("binary entropy argument must lie in [0, 1]")
    if x in (0.0, 1.0):
        return 0.0
    return float(-x * math.log(x) - (1.0 - x) * math.log(1.0 - x))


def fano_bound(p_error: float, alphabet_size: int) -> float:
    """Fano upper bound on conditional entropy: h2(Pe) + Pe ln(|Y| - 1)."""
    if alphabet_size < 2:
        raise ValueError("alphabet size must be at least 2")
    if not (0.0 <= p_error <= 1.0):
        raise ValueError("error probability must lie in [0, 1]")
    return binary_entropy(p_error) + p_error * math.log(alphabet_size - 1)


# ---------------------------------------------------------------------------
# hitting-time simulation


def hitting_time_bound(params: DriftParams) -> float:
    """Analytic bound (h0 - epsilon) / (p * delta) on the mean hitting time."""
    if params.p == 0:
        raise ValueError("hitting-time bound requires p > 0")
    return (params.h0 - params.epsilon) / (params.p * params.delta)


@dataclass
class HittingTimeResult:
    mean_tau: float
    ci95: tuple[float, float]
    bound: float
    trials: int
    censored: int
    seed: int
    reduction: str
    max_steps: int
    mean_entropy: np.ndarray | None = None  # E[H_t] for t = 0..tracked steps


def _spawned_rngs(seed: int, trials: int) -> list[tuple[np.random.Generator, int]]:
    blocks = (trials + _BLOCK - 1) // _BLOCK
    children = np.random.SeedSequence(seed).spawn(blocks)
    out = []
    for b in range(blocks):
        size = min(_BLOCK, trials - b * _BLOCK)
        out.append((np.random.default_rng(children[b]), size))
    return out


def simulate_hitting_time(
    params: DriftParams,
    trials: int = 10_000,
    seed: int = 0,
    max_steps: int = 1_000_000,
    reduction: str = REDUCTION_EXACT,
    track_steps: int = 0,
) -> HittingTimeResult:
    """Monte Carlo estimate of the time for entropy to reach epsilon.

    Each trial starts at h0; while above epsilon, a step succeeds with
    probability p and cuts entropy by delta ("exact") or by a draw from
    delta * [1, 2) ("oversized"), floored at zero. Trials still above
    epsilon after max_steps are censored and excluded from the mean; a run
    where every trial is censored is inconclusive. track_steps > 0 records
    the mean entropy across trials at steps 0..track_steps (absorbed trials
    hold their final value).
    """
    if reduction not in (REDUCTION_EXACT, REDUCTION_OVERSIZED):
        raise ValueError(f"unknown reduction mode {reduction!r}")
    if params.p == 0:
        raise ValueError("simulate_hitting_time requires p > 0")
    if trials < 1:
        raise ValueError("trials must be positive")
    taus: list[np.ndarray] = []
    censored = 0
    track = None
    if track_steps > 0:
        track = np.zeros(track_steps + 1)
    total = 0
    for rng, size in _spawned_rngs(seed, trials):
        h = np.full(size, float(params.h0))
        tau = np.full(size, -1, dtype=np.int64)
        alive = h > params.epsilon
        tau[~alive] = 0
        if track is not None:
            track[0] += h.sum()
        step = 0
        while alive.any() and step < max_steps:
            step += 1
            # full-width draws keep trial i's stream independent of the
            # total trial count (the last block may be partial)
            hit = rng.random(_BLOCK)[:size] < params.p
            if reduction == REDUCTION_OVERSIZED:
                cut = params.delta * (1.0 + rng.random(_BLOCK)[:size])
            else:
                cut = params.delta
            idx = alive & hit
            h[idx] = np.maximum(0.0, h[idx] - (cut[idx] if np.ndim(cut) else cut))
            done = alive & (h <= params.epsilon)
            tau[done] = step
            alive &= ~done
            if track is not None and step <= track_steps:
                track[step] += h.sum()
        if track is not None and step < track_steps:
            # all trials in the block absorbed early; entropy holds steady
            for t in range(step + 1, track_steps + 1):
                track[t] += h.sum()
        censored += int(alive.sum())
        taus.append(tau[tau >= 0])
        total += size
    if censored == trials:
        raise InconclusiveError(
            f"all {trials} trials censored at max_steps={max_steps}"
        )
    all_tau = np.concatenate(taus).astype(np.float64)
    mean = float(all_tau.mean())
    if all_tau.size > 1:
        se = float(all_tau.std(ddof=1) / math.sqrt(all_tau.size))
    else:
        se = 0.0
    return HittingTimeResult(
        mean_tau=mean,
        ci95=(mean - 1.96 * se, mean + 1.96 * se),
        bound=hitting_time_bound(params),
        trials=trials,
        censored=censored,
        seed=seed,
        reduction=reduction,
        max_steps=max_steps,
        mean_entropy=None if track is None else track / trials,
    )


# ---------------------------------------------------------------------------
# stagnation simulation


@dataclass
class StagnationResult:
    final: np.ndarray
    floor: float
    min_final: float
    trials: int
    seed: int
    at_maximum: bool

    def success_fraction(self, epsilon: float) -> float:
        return float((self.final <= epsilon).mean())


def simulate_stagnation(
    schedule: DivergenceSchedule,
    trials: int = 10_000,
    seed: int = 0,
    at_maximum: bool = False,
) -> StagnationResult:
    """Entropy after consuming a capped information-gain schedule.

    Each step draws a gain uniformly from [0, eps_j] (or takes exactly eps_j
    with at_maximum=True, the tightness witness) and subtracts it. Because
    IEEE subtraction is monotone and the floor is evaluated by the identical
    fold, min(final) >= floor holds with no tolerance.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    finals = np.empty(trials)
    offset = 0
    for rng, size in _spawned_rngs(seed, trials):
        h = np.full(size, float(schedule.residual_entropy))
        for e in schedule.eps:
            if at_maximum:
                h -= e
            elif e > 0:
                h -= rng.uniform(0.0, e, _BLOCK)[:size]
        finals[offset : offset + size] = h
        offset += size
    return StagnationResult(
        final=finals,
        floor=schedule.floor(),
        min_final=float(finals.min()),
        trials=trials,
        seed=seed,
        at_maximum=at_maximum,
    )


# ---------------------------------------------------------------------------
# sufficiency checking


@dataclass
class StepSufficiency:
    entropy: float
    error_prob: float
    bound: float
    holds: bool
    is_map: bool


@dataclass
class SufficiencyReport:
    steps: list[StepSufficiency]
    map_violations: int
    estimator_violations: int


_FANO_TOL = 1e-12


def check_sufficiency(
    trajectory: Sequence[tuple[BeliefState, int, int]]
) -> SufficiencyReport:
    """Check H(belief) <= fano_bound(error prob, |Y|) along a trajectory.

    Each entry is (belief, predicted index, true index). The error
    probability is the belief's own mass off the prediction, so for the MAP
    estimator the inequality must hold everywhere; a violation under a
    non-MAP estimator is reported as estimator-dependent rather than as an
    inconsistency.
    """
    steps = []
    map_violations = 0
    estimator_violations = 0
    for belief, predicted, _true in trajectory:
        dist = belief.dist
        if not (0 <= predicted < dist.size):
            raise ValueError(f"predicted index {predicted} out of range")
        h = entropy(belief)
        p_err = float(1.0 - dist[predicted])
        bound = fano_bound(p_err, dist.size)
        holds = h <= bound + _FANO_TOL
        is_map = dist[predicted] >= dist.max() - _FANO_TOL
        if not holds:
            if is_map:
                map_violations += 1
            else:
                estimator_violations += 1
        steps.append(
            StepSufficiency(
                entropy=h, error_prob=p_err, bound=bound, holds=holds, is_map=is_map
            )
        )
    return SufficiencyReport(
        steps=steps,
        map_violations=map_violations,
        estimator_violations=estimator_violations,
    )


# ---------------------------------------------------------------------------
# Bayesian updates and information gain of actions


def bayes_update(
    belief: BeliefState, channel: ObservationChannel, action, observation
) -> BeliefState:
    """Posterior after observing one outcome; zero total mass is an error."""
    if action not in channel.likelihood:
        raise ValueError(f"unknown action {action!r}")
    col = channel.likelihood[action][:, channel.outcome_index(observation)]
    if col.size != belief.dist.size:
        raise ValueError("channel and belief disagree on answer count")
    post = belief.dist * col
    mass = float(post.sum())
    if mass <= 0.0:
        raise ImpossibleObservationError(
            f"observation {observation!r} has zero probability under the belief"
        )
    return BeliefState(post / mass)


_EIG_FLOOR = -1e-12


def expected_info_gain(
    belief: BeliefState, channel: ObservationChannel, action
) -> float:
    """Expected entropy drop from taking an action: the mutual information
    between the answer and the observation. Tiny negative rounding noise
    (above -1e-12) is clipped to zero."""
    if action not in channel.likelihood:
        raise ValueError(f"unknown action {action!r}")
    like = channel.likelihood[action]
    if like.shape[0] != belief.dist.size:
        raise ValueError("channel and belief disagree on answer count")
    prior_h = entropy(belief)
    p_obs = belief.dist @ like
    expected_posterior_h = 0.0
    for o, po in enumerate(p_obs):
        if po <= 0.0:
            continue
        post = belief.dist * like[:, o] / po
        nz = post[post > 0]
        expected_posterior_h += po * float(-(nz * np.log(nz)).sum())
    raw = prior_h - expected_posterior_h
    if _EIG_FLOOR <= raw < 0.0:
        return 0.0
    return float(raw)


def select_action(belief: BeliefState, channel: ObservationChannel, actions) -> int:
    """Index of the action with maximal expected information gain; ties go
    to the lowest index."""
    actions = list(actions)
    if not actions:
        raise ValueError("no actions to select from")
    gains = np.array([expected_info_gain(belief, channel, a) for a in actions])
    return int(np.argmax(gains))


# ---------------------------------------------------------------------------
# policy comparison


@dataclass
class PolicyResult:
    policy: str
    final: np.ndarray
    success_fraction: float
    mean_steps_to_success: float
    trials: int
    seed: int
    max_steps: int


def simulate_policy(
    policy: str,
    schedule: DivergenceSchedule,
    params: DriftParams,
    correction_threshold: float,
    trials: int = 10_000,
    seed: int = 0,
    max_steps: int | None = None,
) -> PolicyResult:
    """Compare a schedule-bound policy against one that can switch regimes.

    procedural-only consumes the divergence schedule and stops. The
    procedural+epistemic policy additionally externalizes its current
    entropy with probability p each step; when the externalized value
    exceeds correction_threshold the trial switches to the drift regime
    (probability-p cuts of delta) until it reaches params.epsilon or runs
    out of steps. With p = 0 no externalization ever happens and the random
    stream matches procedural-only draw for draw.
    """
    if policy not in (PROCEDURAL_ONLY, PROCEDURAL_EPISTEMIC):
        raise ValueError(f"unknown policy {policy!r}")
    if trials < 1:
        raise ValueError("trials must be positive")
    k = len(schedule.eps)
    if max_steps is None:
        if params.p > 0:
            budget = (schedule.residual_entropy / (params.p * params.delta)) * 4.0
            max_steps = k + int(math.ceil(budget)) + 16
        else:
            max_steps = k
    epistemic = policy == PROCEDURAL_EPISTEMIC and params.p > 0
    finals = np.empty(trials)
    steps_sum = 0.0
    steps_n = 0
    offset = 0
    for rng, size in _spawned_rngs(seed, trials):
        h = np.full(size, float(schedule.residual_entropy))
        drift = np.zeros(size, dtype=bool)
        done_step = np.full(size, -1, dtype=np.int64)
        active = h > params.epsilon
        done_step[~active] = 0
        any_drift = False
        for t in range(max_steps):
            if not active.any():
                break
            if t >= k and not any_drift and not epistemic:
                break  # schedule exhausted, nothing left to change
            if epistemic:
                externalize = rng.random(_BLOCK)[:size] < params.p
                switch = active & ~drift & externalize & (h > correction_threshold)
                drift |= switch
                any_drift = True
            if t < k:
                e = schedule.eps[t]
                if e > 0:
                    gains = rng.uniform(0.0, e, _BLOCK)[:size]
                else:
                    gains = np.zeros(size)
                proc = active & ~drift
                h[proc] -= gains[proc]
            if epistemic and any_drift:
                hit = rng.random(_BLOCK)[:size] < params.p
                cut = active & drift & hit
                h[cut] = np.maximum(0.0, h[cut] - params.delta)
            newly = active & (h <= params.epsilon)
            done_step[newly] = t + 1
            active &= ~newly
        finals[offset : offset + size] = h
        offset += size
        ok = done_step >= 0
        steps_sum += float(done_step[ok].sum())
        steps_n += int(ok.sum())
    success = float((finals <= params.epsilon).mean())
    mean_steps = steps_sum / steps_n if steps_n else math.nan
    return PolicyResult(
        policy=policy,
        final=finals,
        success_fraction=success,
        mean_steps_to_success=mean_steps,
        trials=trials,
        seed=seed,
        max_steps=max_steps,
    )
