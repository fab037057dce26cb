"""Acceptance gate: one test per shipping criterion.

Each test prints a single CRITERION line on success so a verbose run reads
as a checklist. Tolerances are stated inline next to each assertion.
"""

import math

import numpy as np
import pytest

from conftest import make_client, token
from stub_backend import token_id

from cotlens.alignment import ScoredText, build_report
from cotlens.dependence import hsic, hsic_permutation_test
from cotlens.distill import (
    EVALUATOR_TEMPLATE,
    SELF_DISTILL_TEMPLATE,
    SELF_PREFIX,
    TEACHER_HINDSIGHT_TEMPLATE,
    TEACHER_PREFIX,
    parse_verdict,
)
from cotlens.entropy import TokenRecord, token_entropy
from cotlens.harness import (
    INTERVENTION_SUPPRESS,
    GenerationParams,
    InterventionSpec,
    audit_markers,
    build_bias_map,
    extract_boxed,
    generate,
    inject_wait,
    score_run,
    temperature_policy_report,
)
from cotlens.lexicon import DEFAULT_MARKERS, count_markers
from cotlens.simulate import (
    REDUCTION_EXACT,
    REDUCTION_OVERSIZED,
    BeliefState,
    DivergenceSchedule,
    DriftParams,
    ObservationChannel,
    binary_entropy,
    check_sufficiency,
    expected_info_gain,
    fano_bound,
    hitting_time_bound,
    select_action,
    simulate_hitting_time,
    simulate_policy,
    simulate_stagnation,
)

GOLDEN = __file__.rsplit("/", 1)[0] + "/golden"


def sequential_cut_count(h0, epsilon, delta):
    h, m = float(h0), 0
    while h > epsilon:
        h = max(0.0, h - delta)
        m += 1
    return m


# -- 1: hitting-time bound ---------------------------------------------------


def test_criterion_01_hitting_time_respects_drift_bound():
    rng = np.random.default_rng(101)
    for _ in range(20):
        h0 = float(rng.uniform(1.0, 5.0))
        eps = float(h0 * rng.uniform(0.1, 0.9))
        p = float(rng.uniform(0.1, 1.0))
        delta = float((h0 - eps) * rng.uniform(0.1, 1.0))
        params = DriftParams(h0=h0, epsilon=eps, p=p, delta=delta)
        result = simulate_hitting_time(
            params,
            trials=10_000,
            seed=int(rng.integers(1 << 31)),
            reduction=REDUCTION_OVERSIZED,
        )
        assert result.censored == 0
        se = (result.ci95[1] - result.ci95[0]) / (2 * 1.96)
        assert result.mean_tau <= result.bound + 3.0 * se
        assert result.bound == pytest.approx(hitting_time_bound(params), rel=1e-12)
    # exact-size cuts: the mean is the success count over p, within 2%
    for h0, eps, p, delta in [
        (2.5, 0.5, 0.4, 0.2),
        (3.0, 0.4, 0.5, 0.35),
        (1.5, 0.25, 0.8, 0.5),
    ]:
        m = sequential_cut_count(h0, eps, delta)
        assert m == math.ceil(round((h0 - eps) / delta, 9))
        result = simulate_hitting_time(
            DriftParams(h0=h0, epsilon=eps, p=p, delta=delta),
            trials=10_000,
            seed=7,
            reduction=REDUCTION_EXACT,
        )
        assert abs(result.mean_tau - m / p) <= 0.02 * (m / p)
    assert 10 / 0.4 == 25.0  # the documented reference case is tight
    print("CRITERION 1 (hitting-time drift bound): PASS")


# -- 2: stagnation floor -----------------------------------------------------


def test_criterion_02_stagnation_floor_never_crossed():
    rng = np.random.default_rng(202)
    for _ in range(20):
        residual = float(rng.uniform(1.0, 3.0))
        length = int(rng.integers(1, 9))
        weights = rng.dirichlet(np.ones(length))
        total = residual * float(rng.uniform(0.3, 0.9))
        schedule = DivergenceSchedule(
            residual_entropy=residual, eps=tuple(weights * total)
        )
        result = simulate_stagnation(schedule, trials=10_000, seed=int(rng.integers(1 << 31)))
        assert result.min_final >= result.floor  # exact, no tolerance
        # a target below the floor is never reached
        target = 0.9 * result.floor
        params = DriftParams(
            h0=residual, epsilon=target, p=0.5, delta=0.5 * (residual - target)
        )
        policy = simulate_policy(
            "procedural-only", schedule, params, correction_threshold=1.0,
            trials=10_000, seed=3,
        )
        assert policy.success_fraction == 0.0
    print("CRITERION 2 (stagnation floor): PASS")


# -- 3: binary entropy and the prediction-error bound ------------------------


def h2_oracle(q):
    total = 0.0
    for part in (q, 1.0 - q):
        if part > 0.0:
            total -= part * math.log(part)
    return total


def test_criterion_03_error_bound_oracle_and_map_trajectories():
    for q in np.linspace(0.0, 1.0, 100):
        assert abs(binary_entropy(q) - h2_oracle(q)) <= 1e-9
        for size in (2, 3, 5, 8):
            direct = h2_oracle(q) + q * math.log(size - 1)
            assert abs(fano_bound(q, size) - direct) <= 1e-9
    rng = np.random.default_rng(303)
    violations = 0
    for _ in range(10_000):
        size = int(rng.integers(2, 9))
        dist = rng.dirichlet(np.ones(size) * rng.uniform(0.2, 3.0))
        belief = BeliefState(dist)
        predicted = int(np.argmax(dist))
        report = check_sufficiency([(belief, predicted, int(rng.integers(size)))])
        violations += report.map_violations + report.estimator_violations
    assert violations == 0
    print("CRITERION 3 (error-probability bound, 10^4 trajectories): PASS")


# -- 4: kernel dependence calibration ----------------------------------------


def test_criterion_04_dependence_score_calibration():
    rng = np.random.default_rng(404)
    x = rng.normal(size=(32, 3))
    assert hsic(x, np.ones((32, 2))) == 0.0  # constant side, exactly zero
    exceed_95 = 0
    for run in range(500):
        r = np.random.default_rng(10_000 + run)
        a = r.normal(size=(64, 4))
        b = r.normal(size=(64, 4))
        t = hsic_permutation_test(a, b, permutations=200, seed=run)
        if t.statistic > t.quantile(0.95):
            exceed_95 += 1
    rate = exceed_95 / 500.0
    assert 0.03 <= rate <= 0.07  # 5% +/- 2%
    exceed_99 = 0
    for run in range(200):
        r = np.random.default_rng(20_000 + run)
        a = r.normal(size=(64, 4))
        t = hsic_permutation_test(a, a.copy(), permutations=100, seed=run)
        if t.statistic > t.quantile(0.99):
            exceed_99 += 1
    assert exceed_99 >= 198  # >= 99% of dependent runs
    print(
        f"CRITERION 4 (dependence calibration, "
        f"null rate {rate:.3f}): PASS"
    )


# -- 5: token entropy oracle -------------------------------------------------


def test_criterion_05_token_entropy_matches_brute_force():
    rng = np.random.default_rng(505)
    for _ in range(1000):
        k = int(rng.integers(1, 9))
        probs = rng.dirichlet(np.ones(k)) * rng.uniform(0.3, 0.99)
        logprobs = np.sort(np.log(probs))[::-1]
        topk = [(f"alt{i}", float(lp)) for i, lp in enumerate(logprobs)]
        rec = TokenRecord(text="choice", logprob=float(logprobs[0]), topk=topk)
        h = token_entropy(rec)
        ps = list(np.exp(logprobs))
        tail = 1.0 - sum(ps)
        if tail > 0.0:
            ps.append(tail)
        brute = -sum(p * math.log(p) for p in ps if p > 0.0)
        assert abs(h - brute) <= 1e-9
        assert 0.0 <= h <= math.log(k + 1) + 1e-12
    print("CRITERION 5 (token entropy vs brute force, 1000 vectors): PASS")


# -- 6: marker counting oracle -----------------------------------------------


def scan_count(text, marker):
    """Letter-boundary substring scan, independent of the regex path."""
    lowered = text.lower()
    marker = marker.lower()
    count, start = 0, 0
    while True:
        i = lowered.find(marker, start)
        if i < 0:
            return count
        before = text[i - 1] if i > 0 else ""
        after = text[i + len(marker)] if i + len(marker) < len(text) else ""

        def is_letter(ch):
            return ch != "" and ch.isascii() and ch.isalpha()

        if not is_letter(before) and not is_letter(after):
            count += 1
        start = i + 1


def test_criterion_06_marker_counts_match_scan_oracle():
    rng = np.random.default_rng(606)
    suffixes = ("s", "ing", "ed", "ly")
    prefixes = ("un", "re", "a")
    punct = (",", ".", "?!", "(", ")", ":", "42", "$x$")
    for _ in range(1000):
        pieces = []
        for _ in range(int(rng.integers(3, 25))):
            m = DEFAULT_MARKERS[int(rng.integers(len(DEFAULT_MARKERS)))]
            kind = int(rng.integers(6))
            if kind == 0:
                w = m
            elif kind == 1:
                w = m.capitalize()
            elif kind == 2:
                w = m.upper()
            elif kind == 3:
                w = m + suffixes[int(rng.integers(len(suffixes)))]
            elif kind == 4:
                w = prefixes[int(rng.integers(len(prefixes)))] + m
            else:
                w = punct[int(rng.integers(len(punct)))]
            pieces.append(w)
            pieces.append(" " if rng.random() < 0.8 else "")
        text = "".join(pieces)
        got = count_markers(text)
        for marker in DEFAULT_MARKERS:
            assert got[marker] == scan_count(text, marker), (text, marker)
    excerpt = (
        "Wait, the interior angles of an octagon sum to 1080. Let me "
        "re-check the formula. wait, (8 - 2) * 180 is indeed 1080, so "
        "that part is correct."
    )
    counts = count_markers(excerpt)
    assert counts["wait"] >= 2
    assert counts["correct"] >= 1
    print("CRITERION 6 (marker counts vs scan oracle, 1000 texts): PASS")


# -- 7: alignment CDF and gap ------------------------------------------------


def test_criterion_07_alignment_cdf_properties_and_exact_gap():
    rng = np.random.default_rng(707)
    for _ in range(30):
        samples = []
        for i in range(int(rng.integers(1, 6))):
            toks = [
                token(f"w{i}{j}", logprob=float(-abs(rng.normal())))
                for j in range(int(rng.integers(1, 8)))
            ]
            samples.append(ScoredText(sample_id=f"s{i}", tokens=toks))
        report = build_report(samples)
        xs = [p[0] for p in report.cdf]
        fs = [p[1] for p in report.cdf]
        assert report.cdf[0] == (min(xs), 0.0)
        assert fs[-1] == 1.0
        assert xs[0] == xs[1]  # zero anchor shares x with the smallest value
        assert all(a < b for a, b in zip(xs[1:], xs[2:]))
        assert all(a <= b for a, b in zip(fs, fs[1:]))
        doubled = samples + [
            ScoredText(sample_id=s.sample_id + "-copy", tokens=s.tokens)
            for s in samples
        ]
        assert build_report(doubled).cdf == report.cdf
    samples = [ScoredText(sample_id="s0", tokens=[token("maybe", logprob=-9.0)])]
    for i in range(4):
        toks = [token(f"w{i}{j}", logprob=-0.875) for j in range(6)]
        samples.append(ScoredText(sample_id=f"s{i + 1}", tokens=toks))
    report = build_report(samples, classes={"hedge": {"maybe"}})
    assert report.all_token_mean == -1.2
    assert report.class_stats["hedge"].mean_logprob == -9.0
    assert report.gaps["hedge"] == 7.8  # exact in floats
    print("CRITERION 7 (alignment CDF properties, exact 7.8 gap): PASS")


# -- 8: generation harness end to end ----------------------------------------

OCTAGON_TRACE = (
    "The octagon has interior angle sum (8 - 2) * 180 = 1080. Each "
    "exterior angle is 45, so the count of right-angle pairs is 1 and the "
    "diagonal classes add 16; their sum is $1 + 16 = 17$. The answer is "
    "$\\boxed{17}$."
)

SPHERE_TRACE = (
    "The sphere fits the box when the radius is p/q in lowest terms. "
    "Squaring gives p = 657 and q = 64, and $p + q = 657 + 64 = 721$, "
    "so the result is $\\boxed{721}$."
)


def test_criterion_08_harness_against_stub_backend(stub):
    client = make_client(stub)
    # suppression: the banned surface never appears in 100 generations
    stub.route("octagon", "Wait, the sum. wait again, maybe so.")
    token_map = {v: token_id(v) for v in ("wait", "Wait", "WAIT")}
    spec = InterventionSpec(
        kind=INTERVENTION_SUPPRESS,
        suppress_bias=build_bias_map(["wait"], token_map),
    )
    suppressed = []
    for i in range(100):
        out = generate(
            client, "the octagon problem", GenerationParams(seed=i), spec,
            idempotency_key=f"sup:{i}",
        )
        suppressed.extend(out)
    assert len(suppressed) == 100
    assert all("wait" not in c.text.lower() for c in suppressed)
    assert audit_markers(suppressed, ["wait"]) == {"wait": 0}
    # injected marker lands before the boxed region in 100/100 runs
    stub.route("Wait", " - rechecking, $\\boxed{43}$.")
    stub.route("triangle", "The area is $\\boxed{9}$.")
    for i in range(100):
        r = inject_wait(client, "a triangle problem", GenerationParams(), seed=i)
        assert not r.fallback
        assert 0 <= r.text.find("Wait") < r.text.find("\\boxed{")
    # boxed-answer extraction on full worked traces
    assert extract_boxed(OCTAGON_TRACE) == "17"
    assert extract_boxed(SPHERE_TRACE) == "721"
    # hand-built scoring fixtures
    scores = score_run(["so $\\boxed{721}$.", "thus $\\boxed{720}$."], "721", k=2)
    assert scores.pass_at_1 == 1.0
    assert scores.acc_at_k == 0.5
    assert score_run(["$\\boxed{060}$"], "60", k=1).acc_at_k == 1.0
    assert score_run(["no box here"], "60", k=1).acc_at_k == 0.0
    # reported sampling setting: maximum across settings for base mode
    report = temperature_policy_report({"0.0": 50.0, "0.7": 70.0, "0.7/0.8": 80.0})
    assert report.score == 80.0
    assert report.setting == "0.7/0.8"
    print("CRITERION 8 (stub-backend harness end to end): PASS")


# -- 9: distillation templates and verdicts ----------------------------------


def test_criterion_09_templates_and_verdict_fixtures():
    for name, template in [
        ("teacher_hindsight.txt", TEACHER_HINDSIGHT_TEMPLATE),
        ("self_distill.txt", SELF_DISTILL_TEMPLATE),
        ("evaluator.txt", EVALUATOR_TEMPLATE),
    ]:
        with open(f"{GOLDEN}/{name}", "rb") as fh:
            assert fh.read() == template.encode("utf-8")
    assert "Do not express any uncertainty" in TEACHER_HINDSIGHT_TEMPLATE
    assert TEACHER_PREFIX == "Okay, so I"
    assert SELF_PREFIX == "To solve the problem,"
    good = parse_verdict("It checks out.\nThe solution is GOOD")
    assert (good.verdict, good.parsed) == ("GOOD", True)
    bad = parse_verdict("Step two is wrong. The solution is BAD")
    assert (bad.verdict, bad.parsed) == ("BAD", True)
    assert parse_verdict("Looks fine.").parsed is False
    print("CRITERION 9 (byte-exact templates, verdict fixtures): PASS")


# -- 10: observation-channel information gain --------------------------------


def joint_mi_oracle(prior, like):
    joint = prior[:, None] * like
    py = joint.sum(axis=1)
    po = joint.sum(axis=0)
    mi = 0.0
    for y in range(joint.shape[0]):
        for o in range(joint.shape[1]):
            if joint[y, o] > 0:
                mi += joint[y, o] * math.log(joint[y, o] / (py[y] * po[o]))
    return mi


def test_criterion_10_info_gain_oracle_and_action_choice():
    rng = np.random.default_rng(909)
    for _ in range(200):
        n, k = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        like = rng.dirichlet(np.ones(k), size=n)
        prior = rng.dirichlet(np.ones(n))
        channel = ObservationChannel(outcomes=list(range(k)), likelihood={"a": like})
        gain = expected_info_gain(BeliefState(prior), channel, "a")
        assert abs(gain - joint_mi_oracle(prior, like)) <= 1e-9
    flip = 0.1
    bsc = ObservationChannel(
        outcomes=[0, 1],
        likelihood={"ask": np.array([[1 - flip, flip], [flip, 1 - flip]])},
    )
    gain = expected_info_gain(BeliefState.uniform(2), bsc, "ask")
    closed = math.log(2) - (-flip * math.log(flip) - (1 - flip) * math.log(1 - flip))
    assert abs(gain - closed) <= 1e-9
    both = ObservationChannel(
        outcomes=[0, 1],
        likelihood={"idle": np.full((2, 2), 0.5), "look": np.eye(2)},
    )
    belief = BeliefState.uniform(2)
    assert select_action(belief, both, ["idle", "look"]) == 1
    assert select_action(belief, both, ["look", "idle"]) == 0
    noisy = ObservationChannel(
        outcomes=[0, 1],
        likelihood={
            "weak": np.array([[0.6, 0.4], [0.4, 0.6]]),
            "strong": np.array([[0.9, 0.1], [0.1, 0.9]]),
        },
    )
    assert select_action(belief, noisy, ["weak", "strong"]) == 1
    assert select_action(belief, noisy, ["strong", "weak"]) == 0
    print("CRITERION 10 (expected gain vs joint-table oracle): PASS")
