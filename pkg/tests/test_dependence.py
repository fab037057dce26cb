import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import make_trace, write_sidecar
from cotlens.dependence import (
    MODE_MULTI,
    MODE_PROXY,
    annotate_peaks,
    detect_peaks,
    hsic,
    hsic_permutation_test,
    median_bandwidth,
    trajectory_profile_multi,
    trajectory_profile_single,
)
from cotlens.errors import (
    DegenerateDataError,
    LengthMismatchError,
    MissingAnswerError,
    SampleSizeError,
)
from cotlens.traces import load_hidden_states


def hsic_oracle(x, y, sigma_x, sigma_y):
    """Direct trace(K H L H) / (n-1)^2 with explicit centering matrix."""
    x = np.atleast_2d(x.T).T
    y = np.atleast_2d(y.T).T
    n = x.shape[0]

    def gram(a, sigma):
        d2 = ((a[:, None, :] - a[None, :, :]) ** 2).sum(-1)
        return np.exp(-d2 / (2 * sigma**2))

    k, l = gram(x, sigma_x), gram(y, sigma_y)
    h = np.eye(n) - np.ones((n, n)) / n
    return np.trace(k @ h @ l @ h) / (n - 1) ** 2


def test_hsic_matches_explicit_matrix_oracle():
    rng = np.random.default_rng(0)
    for n, dx, dy in [(8, 1, 1), (12, 3, 2), (20, 5, 1)]:
        x = rng.normal(size=(n, dx))
        y = rng.normal(size=(n, dy))
        expected = hsic_oracle(x, y, 1.3, 1.3)
        assert_allclose(hsic(x, y, bandwidth=1.3), expected, rtol=1e-10)


def test_hsic_median_bandwidth_matches_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(16, 2))
    y = rng.normal(size=(16, 3))
    expected = hsic_oracle(x, y, median_bandwidth(x), median_bandwidth(y))
    assert_allclose(hsic(x, y), expected, rtol=1e-10)


def test_hsic_is_symmetric_and_nonnegative():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.normal(size=(10, 2))
        y = rng.normal(size=(10, 2))
        a, b = hsic(x, y), hsic(y, x)
        assert a >= 0.0
        assert_allclose(a, b, rtol=1e-9)


def test_hsic_translation_invariant():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(12, 2))
    y = rng.normal(size=(12, 1))
    assert_allclose(hsic(x + 100.0, y - 5.0, 1.0), hsic(x, y, 1.0), rtol=1e-8)


def test_constant_input_gives_exact_zero():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(10, 2))
    assert hsic(x, np.ones(10)) == 0.0
    assert hsic(np.full((10, 3), 7.0), x) == 0.0


def test_hsic_input_validation():
    rng = np.random.default_rng(5)
    with pytest.raises(LengthMismatchError):
        hsic(rng.normal(size=(8, 2)), rng.normal(size=(7, 2)))
    with pytest.raises(SampleSizeError):
        hsic(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
    with pytest.raises(ValueError):
        hsic(rng.normal(size=(8, 2)), rng.normal(size=(8, 2)), bandwidth=-1.0)
    x = np.zeros((6, 1))
    x[0] = 1.0  # not constant, but median distance is 0
    with pytest.raises(DegenerateDataError):
        hsic(x, rng.normal(size=(6, 1)))


def test_dependent_data_scores_higher_than_independent():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(40, 1))
    assert hsic(x, x**2) > 5 * hsic(x, rng.normal(size=(40, 1)))


# -- permutation test -------------------------------------------------------


def test_permutation_detects_dependence():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(30, 1))
    result = hsic_permutation_test(x, 2 * x + 0.01 * rng.normal(size=(30, 1)),
                                   permutations=199, seed=0)
    assert result.p_value <= 0.01
    assert result.statistic > result.quantile(0.99)


def test_permutation_null_is_calibrated_for_independent_data():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(25, 1))
    y = rng.normal(size=(25, 1))
    result = hsic_permutation_test(x, y, permutations=199, seed=1)
    assert result.p_value > 0.05


def test_permutation_addone_floor_and_reproducibility():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(20, 1))
    y = rng.normal(size=(20, 1))
    r1 = hsic_permutation_test(x, y, permutations=99, seed=5)
    r2 = hsic_permutation_test(x, y, permutations=99, seed=5)
    assert r1.p_value >= 1.0 / 100.0
    assert_allclose(r1.null, r2.null)
    assert r1.p_value == r2.p_value


def test_permutation_matches_naive_recompute():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(12, 2))
    y = rng.normal(size=(12, 1))
    result = hsic_permutation_test(x, y, permutations=20, seed=3, bandwidth=0.9)
    check = np.random.default_rng(3)
    for b in range(20):
        perm = check.permutation(12)
        assert_allclose(result.null[b], hsic(x, y[perm], bandwidth=0.9), rtol=1e-9)


def test_permutation_constant_input():
    result = hsic_permutation_test(np.ones(10), np.arange(10.0), permutations=50)
    assert result.statistic == 0.0
    assert result.p_value == 1.0


# -- profiles ---------------------------------------------------------------


def _late_dependence_data(rng, n=24, length=10, dim=2):
    answers = rng.normal(size=(n, dim))
    trajectories = []
    for i in range(n):
        rows = rng.normal(size=(length, dim))
        rows[length // 2:] = answers[i] + 0.05 * rng.normal(size=(length - length // 2, dim))
        trajectories.append(rows)
    return trajectories, answers


def test_multi_profile_shape_and_late_dependence():
    rng = np.random.default_rng(11)
    trajectories, answers = _late_dependence_data(rng)
    profile = trajectory_profile_multi(trajectories, answers, positions=10)
    assert profile.mode == MODE_MULTI
    assert profile.scores.shape == (10,)
    assert profile.scores[-1] > 3 * profile.scores[0]
    assert profile.bandwidth > 0


def test_multi_profile_aligns_different_lengths():
    rng = np.random.default_rng(12)
    trajectories, answers = _late_dependence_data(rng)
    ragged = [t[: 5 + i % 5] for i, t in enumerate(trajectories)]
    profile = trajectory_profile_multi(ragged, answers, positions=7)
    assert profile.scores.shape == (7,)


def test_multi_profile_validation():
    rng = np.random.default_rng(13)
    trajectories, answers = _late_dependence_data(rng, n=4)
    with pytest.raises(SampleSizeError):
        trajectory_profile_multi(trajectories[:3], answers[:3])
    with pytest.raises(LengthMismatchError):
        trajectory_profile_multi(trajectories, answers[:3])
    with pytest.raises(ValueError):
        trajectory_profile_multi(trajectories, answers, positions=0)


def test_multi_profile_fixed_bandwidth_recorded():
    rng = np.random.default_rng(14)
    trajectories, answers = _late_dependence_data(rng)
    profile = trajectory_profile_multi(trajectories, answers, bandwidth=2.5)
    assert profile.bandwidth == 2.5


def test_single_profile_converging_trajectory():
    answer = np.array([1.0, 1.0])
    rows = np.stack([answer + d for d in
                     [np.array([3.0, 0.0]), np.array([1.0, 1.0]),
                      np.array([0.5, 0.0]), np.array([0.0, 0.0])]])
    profile = trajectory_profile_single(rows, answer)
    assert profile.mode == MODE_PROXY
    assert profile.scores.shape == (4,)
    assert np.all(np.diff(profile.scores) > 0)
    assert_allclose(profile.scores[-1], 1.0)


def test_single_profile_from_hidden_states(tmp_path):
    rows = np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0], [1.0, 1.0]],
                    dtype=np.float32)
    meta = write_sidecar(tmp_path, "t1", rows, has_answer_row=True)
    hs = load_hidden_states(meta)
    profile = trajectory_profile_single(hs, label="t1")
    assert profile.trace_id == "t1"
    assert profile.scores.shape == (3,)  # answer row excluded
    assert profile.scores[-1] == pytest.approx(1.0)


def test_single_profile_validation():
    rows = np.zeros((3, 2))
    with pytest.raises(MissingAnswerError):
        trajectory_profile_single(rows)
    with pytest.raises(SampleSizeError):
        trajectory_profile_single(rows[:1], np.zeros(2))
    with pytest.raises(LengthMismatchError):
        trajectory_profile_single(rows, np.zeros(3))


def test_single_profile_degenerate_rows_fall_back_to_unit_bandwidth():
    rows = np.ones((4, 2))
    profile = trajectory_profile_single(rows, np.ones(2))
    assert profile.bandwidth == 1.0
    assert_allclose(profile.scores, np.ones(4))


# -- peaks ------------------------------------------------------------------


def test_detect_peaks_z_threshold_is_inclusive():
    scores = np.array([0.0, 0.0, 0.0, 0.0, 5.0])
    # mean 1, population std 2, so the last score sits at z = 2.0 exactly
    assert detect_peaks(scores, z_threshold=2.0) == [4]
    assert detect_peaks(scores, z_threshold=2.0 + 1e-9) == []


def test_detect_peaks_flat_profile_has_none():
    assert detect_peaks(np.ones(6)) == []


def test_detect_peaks_multiple():
    scores = np.array([0.0, 10.0, 0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    peaks = detect_peaks(scores, z_threshold=1.5)
    assert peaks == [1, 3]


def test_annotate_peaks_snippets_and_marker_flags():
    text = "step one fine . wait that seems wrong here . final answer ready ."
    trace = make_trace("t1", text)
    n = len(trace.tokens)
    scores = np.zeros(n)
    wait_idx = next(i for i, t in enumerate(trace.tokens) if "wait" in t.text)
    scores[wait_idx] = 10.0
    scores[n - 1] = 10.0
    profile = trajectory_profile_single(
        np.arange(2 * n, dtype=float).reshape(n, 2), np.zeros(2)
    )
    profile.scores = scores
    profile.peaks = detect_peaks(scores, z_threshold=1.0)
    annotations = annotate_peaks(profile, trace, window=2)
    assert [a.position for a in annotations] == profile.peaks
    by_pos = {a.position: a for a in annotations}
    assert by_pos[wait_idx].is_epistemic_context
    assert "wait" in by_pos[wait_idx].snippet
    assert not by_pos[n - 1].is_epistemic_context
    assert by_pos[n - 1].marker_counts["wait"] == 0


def test_annotate_peaks_length_mismatch():
    trace = make_trace("t1", "a b c")
    profile = trajectory_profile_single(np.zeros((4, 1)) + np.arange(4)[:, None],
                                        np.zeros(1))
    profile.peaks = [0]
    with pytest.raises(LengthMismatchError):
        annotate_peaks(profile, trace)
