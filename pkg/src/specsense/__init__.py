"""Function-of-matrix spectrum sensing and covariance-based baseline detectors."""
from .detectors import (
    DetectorOutcome,
    EcPrior,
    Feature,
    FmdParams,
    NoiseMode,
    agm_statistic,
    calibrate_threshold_empirical,
    ec_statistic,
    estimate_noise_variance,
    fla_learn,
    fmd_decide,
    fmd_statistic,
    fmd_threshold,
    ftm_decide,
    lagged_similarity,
    mme_statistic,
    q_function,
    q_inverse,
)
from .frames import (
    CovMatrix,
    SampleStream,
    SensingConfig,
    average_covariance,
    build_vectors,
    read_samples,
    sub_segment_covariance,
    sub_segment_covariances,
    whole_segment_covariance,
    write_samples,
)
from .matfunc import MonotoneFn, apply_fn, loewner_leq, make_fn, sym_eigen, trace_fn
from .montecarlo import SignalSpec, TrialPlan, add_awgn, generate_signal, run_cell, snr_at_pd, snr_sweep

__version__ = "0.1.0"
