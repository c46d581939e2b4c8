import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roomsense import fusion, gmm, svm
from roomsense.dsp import AudioClip
from roomsense.errors import DataError
from roomsense.features import FeatureConfig, RecordingFeatures, extract
from roomsense.nmfd import NmfdConfig


def normal_1d(mean, var=1.0):
    return gmm.GaussianMixture(np.array([1.0]), np.array([[mean]]), np.array([[var]]), np.array([1e-6]))


DISTS = fusion.ScoreDistributions(normal_1d(1.0), normal_1d(-1.0))


def test_hybrid_score_examples():
    assert fusion.hybrid_score(3.7, -100.0, 1.0, 0.0).p == 3.7
    hs = fusion.hybrid_score(2.0, -2.0, 0.5, 0.0)
    assert hs.p == 0.0 and hs.p_shifted == 0.0
    hs = fusion.hybrid_score(1.0, 3.0, 0.25, 0.75)
    assert hs.p_shifted == hs.p - 0.75
    assert fusion.DEFAULT_ALPHA == 0.10


def test_hybrid_score_errors():
    with pytest.raises(DataError):
        fusion.hybrid_score(1.0, 1.0, 1.5, 0.0)
    with pytest.raises(DataError):
        fusion.hybrid_score(math.inf, 1.0, 0.5, 0.0)
    with pytest.raises(DataError):
        fusion.hybrid_score(1.0, math.nan, 0.5, 0.0)


@settings(max_examples=30, deadline=None)
@given(la=st.floats(-50, 50), lr=st.floats(-50, 50), alpha=st.floats(0, 1), h=st.floats(0.1, 10))
def test_hybrid_score_is_affine_in_each_input(la, lr, alpha, h):
    base = fusion.hybrid_score(la, lr, alpha, 0.0).p
    d_scene = (fusion.hybrid_score(la + h, lr, alpha, 0.0).p - base) / h
    d_rir = (fusion.hybrid_score(la, lr + h, alpha, 0.0).p - base) / h
    assert d_scene == pytest.approx(alpha, abs=1e-9)
    assert d_rir == pytest.approx(1 - alpha, abs=1e-9)


def test_score_distributions_recover_the_positive_mean():
    rng = np.random.default_rng(0)
    d = fusion.fit_score_distributions(rng.normal(2, 1, 1000), rng.normal(-2, 1, 1000), seed=0)
    assert d.pos.n_components == 4 and d.neg.n_components == 4
    assert abs(float(d.pos.mean()[0]) - 2.0) < 0.15
    assert abs(float(d.neg.mean()[0]) + 2.0) < 0.15


def test_identical_score_lists_give_identical_densities():
    s = np.random.default_rng(1).normal(size=200)
    d = fusion.fit_score_distributions(s, s, seed=3)
    probe = np.linspace(-4, 4, 17)
    np.testing.assert_array_equal(d.pos.log_pdf(probe), d.neg.log_pdf(probe))


def test_four_points_per_class_fit_without_collapse():
    d = fusion.fit_score_distributions([0.0, 1.0, 2.0, 3.0], [-3.0, -2.0, -1.0, 0.0], seed=0)
    d.pos.check()
    d.neg.check()
    with pytest.raises(DataError):
        fusion.fit_score_distributions([0.0, 1.0, 2.0], [0.0, 1.0, 2.0, 3.0])


def test_empty_ledger_confidence_is_the_prior():
    for omega in (0.25, 1.0, 4.0, 99.0):
        ledger = fusion.ConfidenceLedger.fresh(["a"], omega)
        assert fusion.confidence(ledger, "a") == 1.0 / (1.0 + omega)
    assert fusion.confidence(fusion.ConfidenceLedger.fresh(["a"]), "a") == 0.2


def test_likelihood_ratio_two_twice_with_omega_four():
    assert fusion.confidence_from_sums(2 * math.log(2.0), 0.0, 4.0) == pytest.approx(0.5, abs=1e-15)


def test_equal_densities_advance_both_sums_equally():
    same = fusion.ScoreDistributions(normal_1d(0.0), normal_1d(0.0))
    ledger = fusion.update(fusion.ConfidenceLedger.fresh(["a"]), "a", 0.3, same)
    e = ledger.entries["a"]
    assert e.n == 1 and e.sum_log_pos == e.sum_log_neg
    assert fusion.confidence(ledger, "a") == pytest.approx(0.2)


def _absorb(scores, labels=("a",)):
    ledger = fusion.ConfidenceLedger.fresh(labels)
    for s in scores:
        ledger = fusion.update(ledger, labels[0], float(s), DISTS)
    return ledger


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_update_order_is_irrelevant(seed):
    rng = np.random.default_rng(seed)
    scores = rng.normal(0, 2, 30)
    a = _absorb(scores).entries["a"]
    b = _absorb(rng.permutation(scores)).entries["a"]
    assert a.n == b.n == 30
    assert a.sum_log_pos == pytest.approx(b.sum_log_pos, abs=1e-12, rel=1e-12)
    assert a.sum_log_neg == pytest.approx(b.sum_log_neg, abs=1e-12, rel=1e-12)


def test_thirty_updates_match_the_batch_formula():
    scores = np.random.default_rng(4).normal(0.3, 1.0, 30)
    # P(p|C) / P(p|not C) for N(1,1) vs N(-1,1) is exp(2p): the batch posterior is
    # 1 / (1 + omega * exp(-2 sum p))
    oracle = 1.0 / (1.0 + 4.0 * math.exp(-2.0 * float(np.sum(scores))))
    assert fusion.confidence(_absorb(scores), "a") == pytest.approx(oracle, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(0, 10), omega=st.floats(0.1, 10))
def test_log_form_matches_the_literal_ratio(seed, n, omega):
    rng = np.random.default_rng(seed)
    dens_pos, dens_neg = rng.uniform(0.01, 1, n), rng.uniform(0.01, 1, n)
    literal = np.prod(dens_pos) / (np.prod(dens_pos) + omega * np.prod(dens_neg))
    got = fusion.confidence_from_sums(float(np.sum(np.log(dens_pos))), float(np.sum(np.log(dens_neg))), omega)
    assert got == pytest.approx(literal, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(gap=st.floats(-800, 800), step=st.floats(0, 50), omega=st.floats(0.01, 100))
def test_confidence_is_monotone_in_the_evidence_gap(gap, step, omega):
    lo = fusion.confidence_from_sums(gap, 0.0, omega)
    hi = fusion.confidence_from_sums(gap + step, 0.0, omega)
    assert 0.0 <= lo <= hi <= 1.0


def test_outlier_density_is_clamped():
    ledger = _absorb([1e6])
    e = ledger.entries["a"]
    assert e.sum_log_pos == fusion.LOG_DENSITY_FLOOR == e.sum_log_neg
    assert math.isfinite(fusion.confidence(ledger, "a"))


def test_updating_one_label_leaves_others_bitwise_unchanged():
    ledger = fusion.ConfidenceLedger.fresh(["a", "b", "c"])
    ledger = fusion.update(ledger, "b", 0.7, DISTS)
    before = {c: fusion.confidence(ledger, c) for c in "abc"}
    after_ledger = fusion.update(ledger, "a", -1.2, DISTS)
    assert after_ledger.entries["b"] is ledger.entries["b"]
    assert fusion.confidence(after_ledger, "b") == before["b"]
    assert fusion.confidence(after_ledger, "c") == before["c"]
    # the original ledger is not mutated
    assert ledger.entries["a"].n == 0


def test_ledger_errors():
    ledger = fusion.ConfidenceLedger.fresh(["a"])
    with pytest.raises(DataError):
        fusion.update(ledger, "zzz", 0.0, DISTS)
    with pytest.raises(DataError):
        fusion.confidence(ledger, "zzz")
    with pytest.raises(DataError):
        fusion.ConfidenceLedger.fresh(["a"], 0.0)


# -- end-to-end scoring with small hand-built detectors ---------------------------

FEATURE_CFG = FeatureConfig(nmfd=NmfdConfig(K=4, max_iters=10))


@pytest.fixture(scope="module")
def clip_and_feats():
    rng = np.random.default_rng(5)
    clip = AudioClip(rng.normal(0, 0.1, 16000), 16000)
    return clip, extract(clip, FEATURE_CFG)


def toy_detector(label, feats, seed, alpha=0.1, t_c=0.2):
    rng = np.random.default_rng(seed)
    d = feats.frames.shape[1]

    def mixture(shift):
        return gmm.GaussianMixture(np.array([0.5, 0.5]), rng.normal(shift, 1, (2, d)), rng.uniform(0.5, 2, (2, d)), np.full(d, 1e-6))

    dr = len(feats.rir)
    model = svm.SvmModel(rng.normal(size=(3, dr)), np.array([0.5, -0.2, -0.3]), 0.1, 0.01, 1.0,
                         np.zeros(dr), np.ones(dr), -1.3, 0.2)
    return fusion.RoomDetector(label, gmm.ScenePair(mixture(0.0), mixture(0.5)), model, alpha, t_c, DISTS)


def test_alpha_one_makes_the_response_branch_irrelevant(clip_and_feats):
    clip, feats = clip_and_feats
    det = toy_detector("a", feats, 0, alpha=1.0)
    other_svm = replace(det.rir, bias=50.0, platt_a=-7.0)
    ledger0 = fusion.ConfidenceLedger.fresh(["a"])
    l1, out1 = fusion.infer_recording([det], clip, ledger0, FEATURE_CFG, feats=feats)
    l2, out2 = fusion.infer_recording([replace(det, rir=other_svm)], clip, ledger0, FEATURE_CFG, feats=feats)
    assert out1 == out2
    # scene-only pipeline by hand
    la_in, la_out = gmm.sequence_score(det.scene, feats.frames)
    p_shift = (la_in - la_out) - det.t_c
    expected = fusion.confidence(fusion.update(ledger0, "a", p_shift, DISTS), "a")
    assert out1[0].p_shifted == p_shift and out1[0].confidence == expected


def test_identical_detectors_give_identical_confidences(clip_and_feats):
    clip, feats = clip_and_feats
    a = toy_detector("a", feats, 1)
    b = replace(a, label="b")
    ledger = fusion.ConfidenceLedger.fresh(["a", "b"])
    for _ in range(3):
        ledger, out = fusion.infer_recording([a, b], clip, ledger, FEATURE_CFG, feats=feats)
        assert out[0].confidence == out[1].confidence and out[0].p == out[1].p


def test_feature_extraction_is_shared_and_reused(clip_and_feats):
    clip, feats = clip_and_feats
    det = toy_detector("a", feats, 2)
    ledger = fusion.ConfidenceLedger.fresh(["a"])
    _, with_feats = fusion.infer_recording([det], clip, ledger, FEATURE_CFG, feats=feats)
    _, from_clip = fusion.infer_recording([det], clip, ledger, FEATURE_CFG)
    assert with_feats == from_clip


def test_a_failing_label_does_not_block_the_others(clip_and_feats):
    clip, feats = clip_and_feats
    good = toy_detector("good", feats, 3)
    bad = toy_detector("bad", feats, 4)
    dr = len(feats.rir) + 1
    broken_svm = replace(bad.rir, support_vectors=np.zeros((3, dr)), mean=np.zeros(dr), scale=np.ones(dr))
    bad = replace(bad, rir=broken_svm)
    ledger = fusion.ConfidenceLedger.fresh(["bad", "good"])
    ledger, out = fusion.infer_recording([bad, good], clip, ledger, FEATURE_CFG, feats=feats)
    assert out[0].error is not None and math.isnan(out[0].p)
    assert out[0].confidence == 0.2 and ledger.entries["bad"].n == 0
    assert out[1].error is None and ledger.entries["good"].n == 1


def test_unusable_clip_reports_every_label():
    det_feats = RecordingFeatures(np.zeros((3, 40)), np.zeros(80))
    det = toy_detector("a", det_feats, 5)
    ledger = fusion.ConfidenceLedger.fresh(["a"])
    short = AudioClip(np.zeros(100), 16000)
    new, out = fusion.infer_recording([det], short, ledger, FEATURE_CFG)
    assert new is ledger
    assert out[0].error and "too short" in out[0].error


def test_detector_validation(clip_and_feats):
    _, feats = clip_and_feats
    det = toy_detector("a", feats, 6)
    with pytest.raises(DataError):
        replace(det, alpha=-0.1)
    with pytest.raises(DataError):
        replace(det, omega=0.0)
    assert fusion.with_alpha(det, 0.7).alpha == 0.7
