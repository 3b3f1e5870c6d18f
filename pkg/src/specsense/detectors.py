"""Covariance-based spectrum-sensing detectors.

FMD
    ``rho = Tr f(mean_k R_{x,k})`` compared with the closed-form threshold
    ``gamma = (1 + Qinv(Pfa) * sqrt(2 / (K Nk))) * L * sigma2``.
MME
    ``lambda_max / lambda_min`` of the whole-segment covariance.
AGM
    arithmetic over geometric mean of that covariance's eigenvalues.
FTM
    max cyclic-lag correlation between a learned leading eigenvector and
    the leading eigenvector of the segment under test.
EC
    estimator-correlator ``sum_j x_j^T Rs (Rs + sigma2 I)^-1 x_j``.

Only FMD has an analytic threshold; the others are calibrated empirically
on noise-only trials (:func:`calibrate_threshold_empirical`).

Cost notes: every detector pays roughly ``L * Ns`` multiply-adds to form
its covariance. FMD adds ``K`` matrix additions and one matrix function
(free for the identity map, which reduces to a diagonal sum). MME, AGM and
FTM need an ``O(L^3)`` eigendecomposition.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DomainError,
    EmptyInput,
    SingularCovariance,
    TooFewSubSegments,
    TooFewTrials,
)
from .frames import (
    CovMatrix,
    SensingConfig,
    average_covariance,
    sub_segment_covariances,
    sub_segment_traces,
    whole_segment_covariance,
)
from .matfunc import IDENTITY, MonotoneFn, sym_eigen, trace_fn
from .util import parallel_map, trial_rng

DETECTORS = ("FMD", "MME", "AGM", "FTM", "EC")
DEFAULT_GAMMA_E = 0.85


class Decision(str, enum.Enum):
    PRESENT = "signal_present"
    ABSENT = "signal_absent"


class NoiseMode(str, enum.Enum):
    FROM_DATA = "from_data"
    EXTERNAL = "external"


@dataclass(frozen=True)
class DetectorOutcome:
    detector: str
    statistic: float
    threshold: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def decision(self) -> Decision:
        return Decision.PRESENT if self.statistic > self.threshold else Decision.ABSENT

    @property
    def present(self) -> bool:
        return self.decision is Decision.PRESENT


# ---------------------------------------------------------------------------
# Gaussian tail


def q_function(t: float) -> float:
    """Standard normal upper-tail probability ``Q(t)``."""
    return 0.5 * math.erfc(t / math.sqrt(2.0))


def q_inverse(p: float) -> float:
    """Invert ``Q`` by bisection on its erfc form.

    The bracket is halved until it is a few ulps wide, which keeps
    ``|Q(t) - p|`` far below 1e-12.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    if p > 0.5:
        # 1 - p is exact here, and the upper tail keeps full relative precision
        return -q_inverse(1.0 - p)
    lo, hi = -40.0, 40.0
    for _ in range(200):
        t = 0.5 * (lo + hi)
        if q_function(t) > p:
            lo = t
        else:
            hi = t
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(t)):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# FMD


@dataclass(frozen=True)
class FmdParams:
    f: MonotoneFn = IDENTITY
    pfa_target: float = 0.01
    noise_est_mode: NoiseMode = NoiseMode.FROM_DATA
    external_sigma2: float | None = None

    def __post_init__(self):
        if not 0.0 < self.pfa_target < 1.0:
            raise DomainError(f"pfa_target must lie in (0, 1), got {self.pfa_target}")
        object.__setattr__(self, "noise_est_mode", NoiseMode(self.noise_est_mode))
        if self.noise_est_mode is NoiseMode.EXTERNAL:
            if self.external_sigma2 is None or not self.external_sigma2 > 0:
                raise DomainError("external noise mode needs external_sigma2 > 0")


def fmd_statistic(sub_covs: Sequence[CovMatrix], f: MonotoneFn = IDENTITY) -> float:
    """``Tr f`` of the averaged sub-segment covariance."""
    return trace_fn(average_covariance(sub_covs), f)


def fmd_statistic_from_traces(traces) -> float:
    """Identity-map FMD statistic as the mean of per-sub-segment traces."""
    traces = np.asarray(traces, dtype=float)
    if traces.size == 0:
        raise EmptyInput("no sub-segment traces")
    return float(traces.mean())


def estimate_noise_variance_from_traces(traces, L: int, Nk: int) -> float:
    traces = np.asarray(traces, dtype=float)
    if traces.size < 2:
        raise TooFewSubSegments(f"need at least 2 sub-segments, got {traces.size}")
    var = float(np.var(traces, ddof=1))
    return math.sqrt(Nk * var / (2.0 * L * L))


def estimate_noise_variance(sub_covs: Sequence[CovMatrix], L: int, Nk: int) -> float:
    """Noise variance from the spread of sub-segment traces.

    Under noise only, ``Tr R_{x,k}`` is approximately normal with variance
    ``2 L^2 sigma^4 / Nk``, so ``sigma2 = sqrt(Nk * var(Tr) / (2 L^2))``
    using the unbiased (``K - 1``) sample variance.
    """
    return estimate_noise_variance_from_traces([c.trace for c in sub_covs], L, Nk)


def fmd_threshold(pfa: float, K: int, Nk: int, L: int, sigma2_hat: float) -> float:
    if not 0.0 < pfa < 1.0:
        raise DomainError(f"pfa must lie in (0, 1), got {pfa}")
    if sigma2_hat < 0:
        raise DomainError(f"noise variance must be >= 0, got {sigma2_hat}")
    return (1.0 + q_inverse(pfa) * math.sqrt(2.0 / (K * Nk))) * L * sigma2_hat


def fmd_decide(stream, cfg: SensingConfig, params: FmdParams = FmdParams(), start: int = 0) -> DetectorOutcome:
    """Run the full FMD test on one sensing segment.

    With the identity map the statistic comes straight from sub-segment
    traces; any other map forms the K covariances and averages them.
    """
    if params.f.is_identity:
        traces = sub_segment_traces(stream, cfg, start)
        rho = fmd_statistic_from_traces(traces)
    else:
        covs = sub_segment_covariances(stream, cfg, start)
        traces = np.array([c.trace for c in covs])
        rho = fmd_statistic(covs, params.f)
    sigma2_data = estimate_noise_variance_from_traces(traces, cfg.L, cfg.Nk)
    if params.noise_est_mode is NoiseMode.EXTERNAL:
        sigma2 = float(params.external_sigma2)
    else:
        sigma2 = sigma2_data
    gamma = fmd_threshold(params.pfa_target, cfg.K, cfg.Nk, cfg.L, sigma2)
    diagnostics = {
        "sigma2_hat": sigma2_data,
        "sigma2_used": sigma2,
        "rho1": float(traces.mean()),
        "K": cfg.K,
        "Nk": cfg.Nk,
        "L": cfg.L,
    }
    return DetectorOutcome("FMD", rho, gamma, diagnostics)


# ---------------------------------------------------------------------------
# eigenvalue baselines


def _positive_spectrum(R) -> np.ndarray:
    lam = sym_eigen(R).eigenvalues
    if lam[0] <= 0.0:
        raise SingularCovariance("covariance has a zero eigenvalue")
    return lam


def _mme(lam: np.ndarray) -> float:
    return float(lam[-1] / lam[0])


def _agm(lam: np.ndarray) -> float:
    return float(np.mean(lam) / math.exp(np.mean(np.log(lam))))


def mme_statistic(R) -> float:
    return _mme(_positive_spectrum(R))


def agm_statistic(R) -> float:
    """Arithmetic over geometric mean of the spectrum; the geometric mean is taken in the log domain."""
    return _agm(_positive_spectrum(R))


def _decide_eigen(name, fn, stream, cfg, threshold, start):
    lam = _positive_spectrum(whole_segment_covariance(stream, cfg, start))
    return DetectorOutcome(
        name, fn(lam), threshold, {"lambda_max": float(lam[-1]), "lambda_min": float(lam[0])}
    )


def mme_decide(stream, cfg: SensingConfig, threshold: float, start: int = 0) -> DetectorOutcome:
    return _decide_eigen("MME", _mme, stream, cfg, threshold, start)


def agm_decide(stream, cfg: SensingConfig, threshold: float, start: int = 0) -> DetectorOutcome:
    return _decide_eigen("AGM", _agm, stream, cfg, threshold, start)


# ---------------------------------------------------------------------------
# FTM / FLA


@dataclass(frozen=True)
class Feature:
    """Unit-norm leading eigenvector, sign fixed so the largest-magnitude entry is positive."""

    vector: np.ndarray

    def __post_init__(self):
        v = np.array(self.vector, dtype=np.float64, copy=True).ravel()
        norm = np.linalg.norm(v)
        if norm == 0 or not np.isfinite(norm):
            raise DomainError("feature vector must be finite and non-zero")
        v /= norm
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    def __len__(self):
        return self.vector.size

    def save(self, path) -> Path:
        path = Path(path)
        np.savetxt(path, self.vector, fmt="%.17g")
        return path

    @classmethod
    def load(cls, path) -> "Feature":
        return cls(np.loadtxt(path, dtype=np.float64, ndmin=1))


def _vec(a) -> np.ndarray:
    return a.vector if isinstance(a, Feature) else np.asarray(a, dtype=np.float64).ravel()


def lagged_similarity(a, b) -> float:
    """``max_l |sum_k a[k] b[(k + l) mod L]|`` over all ``L`` cyclic lags."""
    a, b = _vec(a), _vec(b)
    if a.size != b.size:
        raise DimensionMismatch(f"feature lengths differ: {a.size} vs {b.size}")
    n = a.size
    idx = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
    return float(np.max(np.abs(b[idx] @ a)))


def leading_feature(stream, cfg: SensingConfig, start: int = 0) -> Feature:
    return Feature(sym_eigen(whole_segment_covariance(stream, cfg, start)).leading)


def fla_learn(segments: Sequence, cfg: SensingConfig, gamma_e: float = DEFAULT_GAMMA_E) -> Feature | None:
    """Blind feature learning over consecutive segments.

    Returns the later segment's leading eigenvector for the first consecutive
    pair whose lagged similarity exceeds ``gamma_e``, or ``None`` when no
    pair qualifies.
    """
    segments = list(segments)
    if len(segments) < 2:
        raise DomainError("feature learning needs at least two segments")
    prev = leading_feature(segments[0], cfg)
    for seg in segments[1:]:
        cur = leading_feature(seg, cfg)
        if lagged_similarity(prev, cur) > gamma_e:
            return cur
        prev = cur
    return None


def ftm_statistic(R, learned: Feature) -> float:
    return lagged_similarity(learned, sym_eigen(R).leading)


def ftm_decide(stream, cfg: SensingConfig, learned: Feature, gamma_ftm: float, start: int = 0) -> DetectorOutcome:
    R = whole_segment_covariance(stream, cfg, start)
    return DetectorOutcome("FTM", ftm_statistic(R, learned), gamma_ftm)


# ---------------------------------------------------------------------------
# estimator-correlator


@dataclass(frozen=True)
class EcPrior:
    """Signal covariance and noise variance known in advance; caches ``Rs (Rs + sigma2 I)^-1``."""

    Rs: CovMatrix
    sigma2: float
    gain: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.Rs, CovMatrix):
            object.__setattr__(self, "Rs", CovMatrix(self.Rs))
        if not self.sigma2 > 0:
            raise DomainError(f"sigma2 must be > 0, got {self.sigma2}")
        rs = self.Rs.entries
        g = np.linalg.solve(rs + self.sigma2 * np.eye(rs.shape[0]), rs)
        g = 0.5 * (g + g.T)
        g.setflags(write=False)
        object.__setattr__(self, "gain", g)


def ec_statistic(vectors, prior: EcPrior) -> float:
    X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if X.shape[1] != prior.gain.shape[0]:
        raise DimensionMismatch(f"vector length {X.shape[1]} != prior dimension {prior.gain.shape[0]}")
    return float(np.sum((X @ prior.gain) * X))


def ec_statistic_from_cov(R: CovMatrix, prior: EcPrior) -> float:
    """Same quantity as :func:`ec_statistic` via ``n * Tr(G R)``."""
    if R.dim != prior.gain.shape[0]:
        raise DimensionMismatch(f"covariance dimension {R.dim} != prior dimension {prior.gain.shape[0]}")
    return float(R.n_vectors * np.sum(prior.gain * R.entries))


def ec_decide(stream, cfg: SensingConfig, prior: EcPrior, gamma_ec: float, start: int = 0) -> DetectorOutcome:
    R = whole_segment_covariance(stream, cfg, start)
    return DetectorOutcome("EC", ec_statistic_from_cov(R, prior), gamma_ec)


# ---------------------------------------------------------------------------
# generic dispatch and empirical calibration


@dataclass(frozen=True)
class WhiteNoise:
    sigma2: float = 1.0

    def generate(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(n) * math.sqrt(self.sigma2)


def detector_statistic(
    detector: str,
    stream,
    cfg: SensingConfig,
    *,
    f: MonotoneFn = IDENTITY,
    learned: Feature | None = None,
    prior: EcPrior | None = None,
) -> float:
    """Test statistic of ``detector`` on one segment."""
    if detector == "FMD":
        if f.is_identity:
            return fmd_statistic_from_traces(sub_segment_traces(stream, cfg))
        return fmd_statistic(sub_segment_covariances(stream, cfg), f)
    R = whole_segment_covariance(stream, cfg)
    if detector == "MME":
        return mme_statistic(R)
    if detector == "AGM":
        return agm_statistic(R)
    if detector == "FTM":
        if learned is None:
            raise DomainError("FTM needs a learned feature")
        return ftm_statistic(R, learned)
    if detector == "EC":
        if prior is None:
            raise DomainError("EC needs an EcPrior")
        return ec_statistic_from_cov(R, prior)
    raise DomainError(f"unknown detector {detector!r}; choose from {DETECTORS}")


def _h0_statistic(trial: int, detector, noise_model, cfg, seed, kwargs) -> float:
    rng = trial_rng(seed, "calibrate", detector, trial)
    x = noise_model.generate(cfg.samples_needed(), rng)
    return detector_statistic(detector, x, cfg, **kwargs)


def h0_statistics(
    detector: str,
    noise_model,
    cfg: SensingConfig,
    n_trials: int,
    seed: int = 0,
    workers: int = 1,
    **kwargs,
) -> np.ndarray:
    """Statistic of ``detector`` over ``n_trials`` independent noise-only segments."""
    fn = partial(
        _h0_statistic,
        detector=detector,
        noise_model=noise_model,
        cfg=cfg,
        seed=seed,
        kwargs=kwargs,
    )
    return np.array(parallel_map(fn, range(n_trials), workers))


def calibrate_threshold_empirical(
    detector: str,
    noise_model,
    cfg: SensingConfig,
    pfa: float,
    n_trials: int,
    seed: int = 0,
    workers: int = 1,
    **kwargs,
) -> float:
    """Empirical ``(1 - pfa)`` quantile of the noise-only statistic.

    Raises:
        TooFewTrials: fewer than ``50 / pfa`` trials, i.e. under 50 tail samples.
    """
    if not 0.0 < pfa < 1.0:
        raise DomainError(f"pfa must lie in (0, 1), got {pfa}")
    if n_trials < math.ceil(50.0 / pfa - 1e-9):
        raise TooFewTrials(f"need at least {math.ceil(50 / pfa)} trials for pfa={pfa}, got {n_trials}")
    stats = h0_statistics(detector, noise_model, cfg, n_trials, seed, workers, **kwargs)
    return float(np.quantile(stats, 1.0 - pfa))
