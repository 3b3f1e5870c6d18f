import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri

from specsense.detectors import (
    DETECTORS,
    Decision,
    DetectorOutcome,
    EcPrior,
    Feature,
    FmdParams,
    NoiseMode,
    WhiteNoise,
    agm_statistic,
    calibrate_threshold_empirical,
    detector_statistic,
    ec_decide,
    ec_statistic,
    ec_statistic_from_cov,
    estimate_noise_variance,
    estimate_noise_variance_from_traces,
    fla_learn,
    fmd_decide,
    fmd_statistic,
    fmd_threshold,
    ftm_decide,
    ftm_statistic,
    h0_statistics,
    lagged_similarity,
    leading_feature,
    mme_decide,
    mme_statistic,
    q_function,
    q_inverse,
)
from specsense.errors import (
    DimensionMismatch,
    DomainError,
    SingularCovariance,
    TooFewSubSegments,
    TooFewTrials,
)
from specsense.frames import CovMatrix, SensingConfig, build_vectors, whole_segment_covariance
from specsense.matfunc import make_fn
from specsense.montecarlo import SignalSpec, add_awgn, generate_signal
from specsense.util import trial_rng

FULL = SensingConfig()
SMALL = SensingConfig(L=8, K=20, Nk=100)

# Frozen oracle: bisection of 0.5*erfc(t/sqrt2) = 0.01, then the closed-form
# threshold at L=32, K=166, Nk=600, sigma2=1. Recomputed independently below.
QINV_001 = 2.326347874040841
GAMMA_DEFAULT = 32.333587650897506


def _bisect_q(p):
    lo, hi = 0.0, 10.0
    for _ in range(100):
        mid = (lo + hi) / 2
        if 0.5 * math.erfc(mid / math.sqrt(2)) > p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


# -- Q function ----------------------------------------------------------------


def test_q_inverse_frozen_oracle():
    assert _bisect_q(0.01) == pytest.approx(QINV_001, abs=1e-12)
    assert q_inverse(0.01) == pytest.approx(QINV_001, abs=1e-12)
    assert q_inverse(0.5) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(p=st.floats(1e-12, 1 - 1e-12))
def test_q_inverse_matches_ndtri(p):
    assert q_inverse(p) == pytest.approx(-ndtri(p), abs=1e-9)
    assert q_function(q_inverse(p)) == pytest.approx(p, rel=1e-9, abs=1e-15)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 2.0])
def test_q_inverse_domain(p):
    with pytest.raises(DomainError):
        q_inverse(p)


# -- FMD pieces ------------------------------------------------------------------


def test_fmd_statistic_hand_examples():
    eye = CovMatrix(np.eye(32))
    assert fmd_statistic([eye] * 5) == pytest.approx(32.0)
    assert fmd_statistic([CovMatrix(np.eye(2)), CovMatrix(3 * np.eye(2))]) == pytest.approx(4.0)
    assert fmd_statistic([CovMatrix(np.diag([1.0, 4.0]))], make_fn("sqrt")) == pytest.approx(3.0)


def test_noise_variance_hand_examples():
    assert estimate_noise_variance_from_traces([5.0, 5.0, 5.0], 32, 600) == 0.0
    # var{31, 33} = 2 -> sqrt(600 * 2 / (2 * 32^2))
    assert estimate_noise_variance_from_traces([31.0, 33.0], 32, 600) == pytest.approx(
        math.sqrt(1200 / 2048), abs=1e-12
    )
    assert math.sqrt(1200 / 2048) == pytest.approx(0.7655, abs=5e-5)
    covs = [CovMatrix(np.diag([15.5, 15.5])), CovMatrix(np.diag([16.5, 16.5]))]
    assert estimate_noise_variance(covs, 32, 600) == pytest.approx(0.7655, abs=5e-5)
    with pytest.raises(TooFewSubSegments):
        estimate_noise_variance_from_traces([1.0], 32, 600)


def test_noise_variance_monte_carlo_median():
    n = FULL.samples_needed()
    est = []
    for i in range(100):
        tr = np.convolve(trial_rng("s2", i).standard_normal(n) ** 2, np.ones(32), "valid")
        est.append(estimate_noise_variance_from_traces(tr[: FULL.Ns].reshape(166, 600).mean(1), 32, 600))
    assert 0.97 <= np.median(est) <= 1.03


def _noise_only_estimates(n_runs):
    est = []
    for i in range(n_runs):
        x = trial_rng("s2-cover", i).standard_normal(FULL.samples_needed())
        est.append(fmd_decide(x, FULL).diagnostics["sigma2_hat"])
    return np.array(est)


def test_noise_variance_spread_matches_theory():
    # With K - 1 = 165 degrees of freedom the estimate has relative spread
    # about 1/sqrt(2 * 165) = 0.055, so [0.9, 1.1] covers roughly 93%.
    est = _noise_only_estimates(500)
    assert abs(est.std() - 1 / math.sqrt(330)) < 0.008
    assert 0.90 <= np.mean(np.abs(est - 1) <= 0.1) <= 0.96


@pytest.mark.xfail(strict=True, reason="95% coverage of [0.9, 1.1] exceeds what 165 degrees of freedom allow; see ledger")
def test_noise_variance_within_ten_percent_95():
    est = _noise_only_estimates(500)
    assert np.mean(np.abs(est - 1) <= 0.1) >= 0.95


def test_threshold_frozen_oracle():
    assert fmd_threshold(0.5, 10, 100, 32, 1.0) == pytest.approx(32.0, abs=1e-12)
    recomputed = (1 + _bisect_q(0.01) * math.sqrt(2 / (166 * 600))) * 32
    assert recomputed == pytest.approx(GAMMA_DEFAULT, rel=1e-13)
    assert fmd_threshold(0.01, 166, 600, 32, 1.0) == pytest.approx(GAMMA_DEFAULT, rel=1e-13)
    assert fmd_threshold(0.01, 166, 600, 32, 1.0) == pytest.approx(32.3336, abs=5e-5)


def test_threshold_domain():
    with pytest.raises(DomainError):
        fmd_threshold(0.0, 166, 600, 32, 1.0)
    with pytest.raises(DomainError):
        fmd_threshold(0.01, 166, 600, 32, -1.0)


def test_fmd_params_validation():
    with pytest.raises(DomainError):
        FmdParams(pfa_target=1.5)
    with pytest.raises(DomainError):
        FmdParams(noise_est_mode=NoiseMode.EXTERNAL)
    assert FmdParams(noise_est_mode="external", external_sigma2=2.0).noise_est_mode is NoiseMode.EXTERNAL


def test_outcome_decision_rule():
    assert DetectorOutcome("X", 2.0, 1.0).decision is Decision.PRESENT
    assert DetectorOutcome("X", 1.0, 1.0).decision is Decision.ABSENT
    assert not DetectorOutcome("X", 0.5, 1.0).present


def test_fmd_zero_stream_external():
    out = fmd_decide(np.zeros(FULL.samples_needed()), FULL, FmdParams(noise_est_mode="external", external_sigma2=1.0))
    assert out.statistic == 0.0 and out.threshold > 0 and not out.present


def test_fmd_identity_and_covariance_paths_agree():
    x = trial_rng("paths").standard_normal(SMALL.samples_needed())
    a = fmd_decide(x, SMALL)
    b = fmd_decide(x, SMALL, FmdParams(f=make_fn("power", p=1.0)))
    assert a.statistic == pytest.approx(b.statistic, rel=1e-12)
    assert a.threshold == pytest.approx(b.threshold, rel=1e-12)
    assert a.diagnostics["sigma2_hat"] == pytest.approx(b.diagnostics["sigma2_hat"], rel=1e-12)


def test_fmd_detects_strong_signal():
    spec = SignalSpec()
    params = FmdParams(noise_est_mode="external", external_sigma2=1.0)
    hits = 0
    for i in range(40):
        s = generate_signal(spec, FULL.samples_needed(), trial_rng("strong", i))
        hits += fmd_decide(add_awgn(s, 0.0, trial_rng("strong-n", i)), FULL, params).present
    assert hits == 40


def test_fmd_external_false_alarms_near_target():
    params = FmdParams(noise_est_mode="external", external_sigma2=1.0)
    hits = sum(fmd_decide(trial_rng("fa", i).standard_normal(FULL.samples_needed()), FULL, params).present
               for i in range(1000))
    # 99% binomial band around 10 hits out of 1000
    assert 3 <= hits <= 19


def test_fmd_from_data_false_alarms_far_above_target():
    # The sample-estimated noise variance has ~5% relative spread while the
    # threshold margin is ~1%, so the default mode cannot hold Pfa = 1%.
    hits = sum(fmd_decide(trial_rng("fa", i).standard_normal(FULL.samples_needed()), FULL).present
               for i in range(300))
    assert 0.35 <= hits / 300 <= 0.6


# -- MME / AGM ---------------------------------------------------------------------


@pytest.mark.parametrize("c", [0.01, 1.0, 7.5])
def test_white_spectrum_gives_one(c):
    R = c * np.eye(4)
    assert mme_statistic(R) == pytest.approx(1.0, abs=1e-12)
    assert agm_statistic(R) == pytest.approx(1.0, abs=1e-12)


def test_mme_agm_hand_examples():
    assert mme_statistic(np.diag([4.0, 1.0])) == pytest.approx(4.0, abs=1e-9)
    assert mme_statistic(np.array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(3.0, abs=1e-9)
    assert agm_statistic(np.diag([1.0, 4.0])) == pytest.approx(1.25, abs=1e-9)
    assert agm_statistic(np.diag([1.0, 1.0, 8.0])) == pytest.approx(10 / 6, abs=1e-9)


def test_singular_covariance_rejected():
    with pytest.raises(SingularCovariance):
        mme_statistic(np.diag([1.0, 0.0]))
    with pytest.raises(SingularCovariance):
        agm_statistic(np.zeros((3, 3)))


def test_mme_decide_diagnostics():
    x = trial_rng("mme").standard_normal(SMALL.samples_needed())
    out = mme_decide(x, SMALL, 1e9)
    assert out.statistic == pytest.approx(out.diagnostics["lambda_max"] / out.diagnostics["lambda_min"])
    assert not out.present


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(1e-3, 1e3))
def test_eigen_ratios_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((6, 12))
    R = G @ G.T / 12
    assert mme_statistic(c * R) == pytest.approx(mme_statistic(R), rel=1e-9)
    assert agm_statistic(c * R) == pytest.approx(agm_statistic(R), rel=1e-9)
    assert mme_statistic(R) >= agm_statistic(R) >= 1.0 - 1e-12


# -- FTM / FLA ---------------------------------------------------------------------


def test_lagged_similarity_examples():
    a = np.array([0.6, 0.8])
    assert lagged_similarity(a, a) == pytest.approx(1.0)
    assert lagged_similarity([1.0, 0.0], [0.6, 0.8]) == pytest.approx(0.8)
    e1, e4 = np.eye(5)[1], np.eye(5)[4]
    assert lagged_similarity(e1, e4) == pytest.approx(1.0)
    with pytest.raises(DimensionMismatch):
        lagged_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


def test_lagged_similarity_brute_force():
    rng = trial_rng("lag")
    a, b = rng.standard_normal(7), rng.standard_normal(7)
    brute = max(abs(sum(a[k] * b[(k + l) % 7] for k in range(7))) for l in range(7))
    assert lagged_similarity(a, b) == pytest.approx(brute, rel=1e-12)


def test_feature_normalisation_and_roundtrip(tmp_path):
    f = Feature([0.0, -3.0, 4.0])
    assert np.linalg.norm(f.vector) == pytest.approx(1.0)
    assert Feature([0.0, 3.0, -4.0]).vector.tolist() == f.vector.tolist()
    g = Feature.load(f.save(tmp_path / "feat.txt"))
    assert np.array_equal(g.vector, f.vector)
    with pytest.raises(DomainError):
        Feature([0.0, 0.0])


def test_fla_learns_correlated_source():
    cfg = SensingConfig(L=32, K=20, Nk=500)
    spec = SignalSpec(kind="ar1", ar_coeff=0.9)
    n = cfg.samples_needed()
    segs = [generate_signal(spec, n, trial_rng("fla", i)) for i in range(2)]
    learned = fla_learn(segs, cfg)
    assert learned is not None
    assert lagged_similarity(learned, leading_feature(segs[0], cfg)) >= 0.95
    assert ftm_statistic(whole_segment_covariance(segs[1], cfg), learned) == pytest.approx(1.0)
    replay = add_awgn(generate_signal(spec, n, trial_rng("fla", 9)), 10.0, trial_rng("fla-n", 9))
    assert ftm_decide(replay, cfg, learned, 0.5).statistic >= 0.9


def test_fla_rejects_white_noise():
    cfg = SensingConfig(L=32, K=20, Nk=500)
    n = cfg.samples_needed()
    learned = sum(
        fla_learn([trial_rng("wn", i, j).standard_normal(n) for j in range(2)], cfg) is not None for i in range(30)
    )
    assert learned <= 3


def test_fla_single_segment():
    with pytest.raises(DomainError):
        fla_learn([np.ones(100)], SMALL)


# -- EC ------------------------------------------------------------------------------


def test_ec_hand_examples():
    assert ec_statistic([[1.0, 2.0], [3.0, -1.0]], EcPrior(np.zeros((2, 2)), 1.0)) == 0.0
    assert ec_statistic([1.0, 1.0], EcPrior(np.eye(2), 1.0)) == pytest.approx(1.0, abs=1e-12)
    prior = EcPrior(np.diag([3.0, 0.0]), 1.0)
    assert np.allclose(prior.gain, np.diag([0.75, 0.0]))
    assert ec_statistic([2.0, 5.0], prior) == pytest.approx(3.0, abs=1e-9)
    with pytest.raises(DomainError):
        EcPrior(np.eye(2), 0.0)


def test_ec_vector_and_covariance_forms_agree():
    cfg = SensingConfig(L=6, K=4, Nk=50)
    rng = trial_rng("ec")
    G = rng.standard_normal((6, 6))
    prior = EcPrior(G @ G.T, 0.7)
    x = rng.standard_normal(cfg.samples_needed())
    direct = ec_statistic(build_vectors(x, cfg), prior)
    via_cov = ec_statistic_from_cov(whole_segment_covariance(x, cfg), prior)
    assert via_cov == pytest.approx(direct, rel=1e-10)
    assert ec_decide(x, cfg, prior, 0.0).statistic == pytest.approx(direct, rel=1e-10)


# -- dispatch and empirical calibration ------------------------------------------------


def test_detector_statistic_dispatch():
    x = trial_rng("dispatch").standard_normal(SMALL.samples_needed())
    R = whole_segment_covariance(x, SMALL)
    assert detector_statistic("MME", x, SMALL) == pytest.approx(mme_statistic(R))
    assert detector_statistic("FMD", x, SMALL) == pytest.approx(fmd_decide(x, SMALL).statistic)
    with pytest.raises(DomainError):
        detector_statistic("FTM", x, SMALL)
    with pytest.raises(DomainError):
        detector_statistic("EC", x, SMALL)
    with pytest.raises(DomainError):
        detector_statistic("XYZ", x, SMALL)
    assert set(DETECTORS) == {"FMD", "MME", "AGM", "FTM", "EC"}


def test_calibration_median_and_determinism():
    stats = h0_statistics("AGM", WhiteNoise(), SMALL, 100, seed=4)
    gamma = calibrate_threshold_empirical("AGM", WhiteNoise(), SMALL, 0.5, 100, seed=4)
    assert gamma == pytest.approx(np.median(stats))
    assert gamma == calibrate_threshold_empirical("AGM", WhiteNoise(), SMALL, 0.5, 100, seed=4)


def test_calibration_needs_tail_samples():
    with pytest.raises(TooFewTrials):
        calibrate_threshold_empirical("MME", WhiteNoise(), SMALL, 0.01, 4999)


def test_mme_threshold_approaches_one():
    gammas = [
        calibrate_threshold_empirical("MME", WhiteNoise(), SensingConfig(L=2, K=2, Nk=nk), 0.5, 100, seed=1)
        for nk in (50, 500, 5000)
    ]
    assert gammas[0] > gammas[1] > gammas[2] > 1.0
    assert gammas[2] < 1.05


def test_parallel_calibration_matches_serial():
    a = h0_statistics("MME", WhiteNoise(2.0), SMALL, 24, seed=3, workers=1)
    b = h0_statistics("MME", WhiteNoise(2.0), SMALL, 24, seed=3, workers=2)
    assert np.array_equal(a, b)
