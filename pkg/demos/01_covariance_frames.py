"""Sensing vectors, sub-segment covariances and the trace shortcut."""
import numpy as np

from specsense.frames import (
    SensingConfig,
    average_covariance,
    build_vectors,
    sub_segment_covariances,
    sub_segment_traces,
    whole_segment_covariance,
)

## A small frame geometry: vectors of length 8, 20 sub-segments of 100 vectors each
cfg = SensingConfig(L=8, K=20, Nk=100)
rng = np.random.default_rng(1)
x = rng.standard_normal(cfg.samples_needed())
print("samples needed:", cfg.samples_needed(), "vectors:", cfg.Ns)

## Vectors overlap with stride 1, so row i is x[i:i+L]
V = build_vectors(x, cfg)
print("vector matrix", V.shape, "first row equals x[:8]:", np.array_equal(V[0], x[:8]))

## One covariance per sub-segment, then their mean
covs = sub_segment_covariances(x, cfg)
avg = average_covariance(covs)
whole = whole_segment_covariance(x, cfg)
print("max |mean of sub-segment covs - whole-segment cov|:", np.abs(avg.entries - whole.entries).max())

## The trace of the mean equals the mean of the traces, and traces alone are cheap
t = sub_segment_traces(x, cfg)
print("Tr(mean) =", avg.trace, " mean(Tr) =", t.mean())

## White unit noise gives a covariance near the identity
print("diagonal:", np.round(np.diag(whole.entries), 3))
