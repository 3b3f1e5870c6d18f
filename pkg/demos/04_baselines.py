"""The four baseline detectors on one noisy segment."""
import numpy as np

from specsense.detectors import (
    EcPrior,
    WhiteNoise,
    agm_decide,
    calibrate_threshold_empirical,
    ec_decide,
    ftm_decide,
    mme_decide,
)
from specsense.frames import SensingConfig, whole_segment_covariance
from specsense.montecarlo import SignalSpec, add_awgn, generate_signal, learn_feature, noise_variance

cfg = SensingConfig(L=16, K=20, Nk=500)
spec = SignalSpec(kind="ar1", ar_coeff=0.9)
snr = -10.0
pfa = 0.05
n = cfg.samples_needed()

## Thresholds from noise-only simulation (1000 segments for pfa = 5%)
mme_g = calibrate_threshold_empirical("MME", WhiteNoise(), cfg, pfa, 1000, seed=1)
agm_g = calibrate_threshold_empirical("AGM", WhiteNoise(), cfg, pfa, 1000, seed=1)
print(f"MME threshold {mme_g:.4f}, AGM threshold {agm_g:.4f}")

## FTM learns a leading eigenvector from clean segments first
feature = learn_feature(spec, cfg, seed=0)
ftm_g = calibrate_threshold_empirical("FTM", WhiteNoise(), cfg, pfa, 1000, seed=1, learned=feature)

## EC knows the signal covariance and noise level in advance
ref = generate_signal(spec, n, 99)
prior = EcPrior(whole_segment_covariance(ref, cfg), noise_variance(snr))
ec_g = calibrate_threshold_empirical("EC", WhiteNoise(noise_variance(snr)), cfg, pfa, 1000, seed=1, prior=prior)

## One segment with the signal present
y = add_awgn(generate_signal(spec, n, 7), snr, 8)
for out in (
    mme_decide(y, cfg, mme_g),
    agm_decide(y, cfg, agm_g),
    ftm_decide(y, cfg, feature, ftm_g),
    ec_decide(y, cfg, prior, ec_g),
):
    print(f"{out.detector}: statistic {out.statistic:10.4f}  threshold {out.threshold:10.4f}  -> {out.decision.value}")

## And one with noise only
w = np.random.default_rng(5).standard_normal(n) * np.sqrt(noise_variance(snr))
print("noise only, MME:", mme_decide(w, cfg, mme_g).decision.value)
