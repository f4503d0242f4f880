from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from byzbench.aggregators import AggregatorSpec, aggregate_mean
from byzbench.errors import (
    DimensionMismatch,
    EmptySelection,
    InvalidSelectionSize,
    MissingReference,
)
from byzbench.filtering import (
    FilterParams,
    PassResult,
    ReferenceSpec,
    Segment,
    anomaly_scores,
    build_reference,
    filter_and_aggregate,
    intersect_passes,
    sample_segments,
    score_pass,
    select_clients,
    similarity_check,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
vectors = hnp.arrays(np.float64, st.integers(1, 12), elements=finite)


# ----------------------------------------------------------- similarity check


def test_similarity_identity():
    x = np.array([1.0, -2.0, 3.5])
    assert similarity_check(x, x) == 1.0


def test_similarity_single_coordinate():
    assert similarity_check(np.array([1.0]), np.array([3.0])) == pytest.approx(1 / 3, abs=1e-15)


def test_similarity_negation_is_one_third():
    rng = np.random.default_rng(4)
    for _ in range(20):
        x = rng.uniform(0.1, 5.0, size=8) * rng.choice([-1.0, 1.0], size=8)
        assert similarity_check(x, -x) == pytest.approx(1 / 3, abs=1e-12)


def test_similarity_zero_pair_counts_as_agreement():
    x = np.array([0.0, 2.0])
    assert similarity_check(x, x.copy()) == 1.0


def test_similarity_zero_reference_nonzero_candidate_scores_zero():
    assert similarity_check(np.array([0.0]), np.array([5.0])) == 0.0


@given(vectors)
def test_similarity_self_is_one_for_any_vector(x):
    assert similarity_check(x, x.copy()) == 1.0


@given(st.integers(1, 12).flatmap(lambda n: st.tuples(
    hnp.arrays(np.float64, n, elements=finite),
    hnp.arrays(np.float64, n, elements=finite),
)))
@settings(max_examples=200)
def test_similarity_bounded(pair):
    x, y = pair
    h = similarity_check(x, y)
    assert 0.0 <= h <= 1.0


def test_similarity_length_mismatch_rejected():
    with pytest.raises(DimensionMismatch):
        similarity_check(np.zeros(3), np.zeros(4))


# -------------------------------------------------------------- anomaly score


def _one_client_score(ref, client, rho, tau):
    seg = Segment(0, len(ref))
    return float(anomaly_scores(np.asarray(ref), np.asarray([client]), seg, rho, tau)[0])


def test_anomaly_score_penalty_disabled():
    # client equals reference with unit norm; zero penalty weight leaves the raw ratio
    ref = np.array([1.0, 0.0])
    assert _one_client_score(ref, ref, rho=0.0, tau=1.0) == 1.0


def test_anomaly_score_hand_value():
    # similarity 0.8 with client window norm 2: 0.8 - 10 * max(2, 0.05) = -19.2
    ref = np.array([0.0, 1.2])
    client = np.array([0.0, 2.0])
    assert similarity_check(ref, client) == pytest.approx(0.8, abs=1e-15)
    got = _one_client_score(ref, client, rho=10.0, tau=0.1)
    assert got == pytest.approx(-19.2, abs=1e-12)


def test_anomaly_score_zero_window_is_minus_inf():
    ref = np.array([1.0, 1.0])
    for rho in (0.0, 10.0):
        got = _one_client_score(ref, np.zeros(2), rho=rho, tau=0.1)
        assert got == -np.inf


def test_anomaly_score_penalizes_tiny_windows():
    ref = np.array([1e-6, 0.0])
    got = _one_client_score(ref, ref, rho=1.0, tau=0.1)
    assert got == pytest.approx(1.0 - 0.1 / 1e-6, rel=1e-12)


# ------------------------------------------------------------ segment sampling


def test_segments_full_window_when_model_is_small():
    rng = np.random.default_rng(0)
    for seg in sample_segments(10, 10, 5, rng):
        assert (seg.start, seg.length) == (0, 10)


def test_segments_longer_than_model_degrade_to_full_window():
    rng = np.random.default_rng(0)
    for seg in sample_segments(100, 150, 4, rng):
        assert (seg.start, seg.length) == (0, 100)


def test_segments_stay_in_bounds():
    rng = np.random.default_rng(1)
    for seg in sample_segments(100, 50, 200, rng):
        assert 0 <= seg.start <= 50
        assert seg.stop <= 100


def test_segments_deterministic_per_seed():
    a = sample_segments(1000, 50, 7, np.random.default_rng(42))
    b = sample_segments(1000, 50, 7, np.random.default_rng(42))
    assert a == b


def test_segments_reject_degenerate_arguments():
    rng = np.random.default_rng(0)
    for bad in [(0, 5, 1), (10, 0, 1), (10, 5, 0)]:
        with pytest.raises(InvalidSelectionSize):
            sample_segments(*bad, rng)


# -------------------------------------------------------------------- passes


def _whole_vector_pass(ref, uploads, keep, rho=0.0, tau=0.1):
    seg = Segment(0, len(ref))
    return score_pass(np.asarray(ref), np.asarray(uploads, dtype=np.float64), seg, keep, rho, tau)


def test_pass_keep_all_selects_everyone():
    ref = np.ones(3)
    uploads = [np.ones(3), -np.ones(3), 5 * np.ones(3)]
    res = _whole_vector_pass(ref, uploads, keep=3)
    assert res.selected == (0, 1, 2)


def test_pass_orders_by_score():
    ref = np.ones(4)
    uploads = [ref.copy(), -ref, 1.5 * ref]  # similarity 1, 1/3, 2/3
    res = _whole_vector_pass(ref, uploads, keep=2)
    assert res.selected == (0, 2)


def test_pass_ties_break_to_lower_ids():
    ref = np.ones(2)
    uploads = [ref.copy()] * 5
    res = _whole_vector_pass(ref, uploads, keep=3)
    assert res.selected == (0, 1, 2)


def test_pass_rejects_out_of_range_keep():
    ref = np.ones(2)
    uploads = [ref, ref]
    for keep in (0, 3):
        with pytest.raises(InvalidSelectionSize):
            _whole_vector_pass(ref, uploads, keep=keep)


def test_pass_selection_monotone_in_keep():
    rng = np.random.default_rng(8)
    ref = rng.normal(size=20)
    uploads = rng.normal(size=(9, 20))
    seg = Segment(3, 11)
    previous: set[int] = set()
    for keep in range(1, 10):
        res = score_pass(ref, uploads, seg, keep, 10.0, 0.1)
        current = set(res.selected)
        assert previous <= current
        previous = current


def test_pass_scale_covariance_power_of_two_is_bitwise():
    rng = np.random.default_rng(15)
    ref = rng.normal(size=30)
    uploads = rng.normal(size=(6, 30))
    seg = Segment(5, 20)
    base = anomaly_scores(ref, uploads, seg, 0.0, 0.1)
    scaled = anomaly_scores(4.0 * ref, 4.0 * uploads, seg, 0.0, 0.1)
    assert np.array_equal(base, scaled)


def test_pass_scale_covariance_general_scalar_keeps_selection():
    rng = np.random.default_rng(16)
    ref = rng.normal(size=30)
    uploads = rng.normal(size=(8, 30))
    seg = Segment(0, 30)
    a = score_pass(ref, uploads, seg, 4, 0.0, 0.1)
    b = score_pass(3.0 * ref, 3.0 * uploads, seg, 4, 0.0, 0.1)
    assert a.selected == b.selected


# ---------------------------------------------------------------- intersection


def _fake_pass(ids):
    return PassResult(Segment(0, 1), np.zeros(8), tuple(sorted(ids)))


def test_intersection_set_algebra():
    got = intersect_passes([_fake_pass({1, 2, 3}), _fake_pass({2, 3, 4}), _fake_pass({3, 4, 5})])
    assert got == frozenset({3})


def test_intersection_single_pass_is_identity():
    assert intersect_passes([_fake_pass({0, 4})]) == frozenset({0, 4})


def test_intersection_disjoint_passes_is_empty():
    assert intersect_passes([_fake_pass({0}), _fake_pass({1})]) == frozenset()


def test_intersection_requires_at_least_one_pass():
    with pytest.raises(EmptySelection):
        intersect_passes([])


def test_intersection_is_subset_of_each_pass():
    rng = np.random.default_rng(19)
    ref = rng.normal(size=40)
    uploads = rng.normal(size=(10, 40))
    params = FilterParams(passes=4, segment_len=12, keep=6)
    selected, passes = select_clients(ref, uploads, params, np.random.default_rng(3))
    for p in passes:
        assert selected <= frozenset(p.selected)


# ------------------------------------------------------------------ reference


def test_reference_trusted_singleton_is_that_upload():
    uploads = np.array([[1.0, 2.0], [5.0, 6.0], [9.0, 0.0]])
    spec = ReferenceSpec("trusted", trusted=(1,))
    got = build_reference(spec, np.array([0.2, 0.5, 0.3]), uploads)
    assert np.allclose(got, uploads[1], atol=1e-15)


def test_reference_trusted_renormalizes_weights():
    uploads = np.array([[0.0], [4.0], [100.0]])
    spec = ReferenceSpec("trusted", trusted=(0, 1))
    got = build_reference(spec, np.array([0.1, 0.3, 0.6]), uploads)
    assert np.allclose(got, [3.0], atol=1e-15)


def test_reference_base_aggregator_median():
    uploads = [np.array([1.0]), np.array([5.0]), np.array([3.0])]
    spec = ReferenceSpec("aggregator", base=AggregatorSpec("median"))
    got = build_reference(spec, np.full(3, 1 / 3), uploads)
    assert got[0] == 3.0


def test_reference_server_clean_passthrough():
    v = np.array([7.0, -1.0])
    spec = ReferenceSpec("server_clean")
    got = build_reference(spec, np.ones(2), np.zeros((2, 2)), clean_gradient=v)
    assert np.array_equal(got, v)


def test_reference_server_clean_requires_gradient():
    with pytest.raises(MissingReference):
        build_reference(ReferenceSpec("server_clean"), np.ones(1), np.ones((1, 2)))


def test_reference_spec_validation():
    with pytest.raises(ValueError):
        ReferenceSpec("bogus")
    with pytest.raises(ValueError):
        ReferenceSpec("aggregator")
    with pytest.raises(ValueError):
        ReferenceSpec("trusted", trusted=())


# ------------------------------------------------------------ filter pipeline


def test_filter_identical_honest_uploads_keeps_everyone():
    v = np.array([1.0, -2.0, 0.5, 3.0])
    uploads = np.tile(v, (5, 1))
    params = FilterParams(passes=3, segment_len=2, keep=5, penalty_weight=0.0)
    res = filter_and_aggregate(v, uploads, np.full(5, 0.2), params, np.random.default_rng(0))
    assert res.selected == frozenset(range(5))
    assert not res.empty_intersection
    assert np.allclose(res.aggregate, v, atol=1e-15)


def test_filter_excludes_sign_flip_attackers():
    rng = np.random.default_rng(77)
    honest = rng.normal(size=(3, 40))
    payload = -3.0 * honest.sum(axis=0)
    uploads = np.vstack([honest, payload, payload])
    reference = honest.mean(axis=0)
    params = FilterParams(passes=3, segment_len=10, keep=3, penalty_weight=0.0)
    selected, _ = select_clients(reference, uploads, params, np.random.default_rng(5))
    assert selected
    assert selected <= frozenset({0, 1, 2})


def test_filter_empty_intersection_falls_back_to_reference():
    # two clients each dominate one coordinate; one-wide windows over both
    # coordinates make the per-pass winners disagree
    reference = np.array([1.0, 1.0])
    uploads = np.array([[1.0, 100.0], [100.0, 1.0]])
    params = FilterParams(passes=4, segment_len=1, keep=1, penalty_weight=0.0)
    res = filter_and_aggregate(
        reference, uploads, np.array([0.5, 0.5]), params, np.random.default_rng(0)
    )
    starts = {p.segment.start for p in res.passes}
    assert starts == {0, 1}  # seed 0 draws both windows
    assert res.empty_intersection
    assert res.selected == frozenset()
    assert np.array_equal(res.aggregate, reference)


def test_filter_with_keep_all_matches_plain_mean_bitwise():
    rng = np.random.default_rng(44)
    uploads = rng.normal(size=(7, 25))
    weights = rng.uniform(0.1, 1.0, size=7)
    weights /= weights.sum()
    reference = uploads.mean(axis=0)
    params = FilterParams(passes=3, segment_len=6, keep=7, penalty_weight=0.0)
    res = filter_and_aggregate(reference, uploads, weights, params, np.random.default_rng(2))
    assert res.selected == frozenset(range(7))
    assert np.array_equal(res.aggregate, aggregate_mean(weights, uploads))


def test_filter_aggregates_survivors_with_renormalized_weights():
    reference = np.array([1.0, 1.0, 1.0])
    uploads = np.array([[1.0, 1.0, 1.0], [1.1, 0.9, 1.0], [-9.0, 9.0, -9.0]])
    weights = np.array([0.3, 0.3, 0.4])
    params = FilterParams(passes=2, segment_len=3, keep=2, penalty_weight=0.0)
    res = filter_and_aggregate(reference, uploads, weights, params, np.random.default_rng(0))
    assert res.selected == frozenset({0, 1})
    want = (0.3 * uploads[0] + 0.3 * uploads[1]) / 0.6
    assert np.allclose(res.aggregate, want, atol=1e-15)


def test_filter_requires_resolved_keep():
    params = FilterParams()  # keep defaults to None
    with pytest.raises(InvalidSelectionSize):
        select_clients(np.ones(4), np.ones((3, 4)), params, np.random.default_rng(0))


def test_filter_rejects_reference_shape_mismatch():
    params = FilterParams(keep=1)
    with pytest.raises(DimensionMismatch):
        filter_and_aggregate(np.ones(3), np.ones((2, 4)), np.ones(2), params, np.random.default_rng(0))


def test_filter_params_validation():
    with pytest.raises(ValueError):
        FilterParams(passes=0)
    with pytest.raises(ValueError):
        FilterParams(segment_len=0)
    with pytest.raises(InvalidSelectionSize):
        FilterParams(keep=0)
    with pytest.raises(ValueError):
        FilterParams(penalty_weight=-1.0)
    with pytest.raises(ValueError):
        FilterParams(norm_pivot=0.0)


def test_filter_timing_is_recorded():
    uploads = np.random.default_rng(1).normal(size=(4, 30))
    params = FilterParams(passes=2, segment_len=10, keep=2)
    res = filter_and_aggregate(uploads[0], uploads, np.full(4, 0.25), params, np.random.default_rng(0))
    assert res.select_seconds >= 0.0
