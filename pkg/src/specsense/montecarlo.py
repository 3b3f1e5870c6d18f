"""Monte Carlo detection experiments on synthetic or recorded sources.

Every trial draws its randomness from a seed derived from
``(master_seed, detector, snr, ns, hypothesis, trial_index)``, so a report
is a pure function of its :class:`TrialPlan` regardless of how trials are
scheduled across workers.

SNR is ``10 log10(Ps / Pn)``: sources are normalised to unit empirical
power, so the injected noise variance is ``10 ** (-snr_db / 10)``.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter, upfirdn
from scipy.stats import norm

from .detectors import (
    DEFAULT_GAMMA_E,
    DETECTORS,
    EcPrior,
    FmdParams,
    NoiseMode,
    WhiteNoise,
    calibrate_threshold_empirical,
    detector_statistic,
    fla_learn,
    fmd_decide,
)
from .errors import DomainError, NotBracketed, SpecSenseError
from .frames import Origin, SampleStream, SensingConfig, read_samples, whole_segment_covariance
from .matfunc import IDENTITY, MonotoneFn
from .util import derive_seed, parallel_map, trial_rng

CSV_HEADER = (
    "detector",
    "signal",
    "snr_db",
    "ns",
    "n_trials",
    "pd",
    "pd_lo",
    "pd_hi",
    "pfa_emp",
    "threshold",
    "mean_stat_h0",
    "mean_stat_h1",
    "failures",
)
FAILURE_BUDGET = 0.01
SCALE_INVARIANT = ("MME", "AGM", "FTM")


class CellFailed(SpecSenseError, RuntimeError):
    pass


# ---------------------------------------------------------------------------
# sources


@dataclass(frozen=True)
class SignalSpec:
    """Synthetic or recorded primary-user source, normalised to unit power.

    ``vsb_like`` is 8-level PAM upsampled by ``sps`` through a root-raised-cosine
    filter; ``pilot`` adds a constant to every symbol (1.25 mimics the ATSC pilot).
    ``ar1`` is a stationary first-order autoregression with coefficient ``ar_coeff``.
    ``file`` replays samples from ``path`` starting at a seed-dependent offset.
    """

    kind: str = "vsb_like"
    rolloff: float = 0.115
    sps: int = 2
    span: int = 16
    pilot: float = 0.0
    ar_coeff: float = 0.9
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("vsb_like", "ar1", "file"):
            raise DomainError(f"unknown signal kind {self.kind!r}")
        if self.kind == "ar1" and not -1.0 < self.ar_coeff < 1.0:
            raise DomainError(f"AR(1) coefficient must lie in (-1, 1), got {self.ar_coeff}")
        if self.kind == "vsb_like" and not (0.0 < self.rolloff <= 1.0 and self.sps >= 1):
            raise DomainError("vsb_like needs 0 < rolloff <= 1 and sps >= 1")
        if self.kind == "file" and not self.path:
            raise DomainError("file source needs a path")

    @property
    def label(self) -> str:
        return self.kind


def rrc_taps(rolloff: float, sps: int, span: int) -> np.ndarray:
    """Root-raised-cosine impulse response over ``2 * span`` symbols, unit energy."""
    t = np.arange(-span * sps, span * sps + 1) / sps
    b = rolloff
    h = np.empty_like(t)
    for i, ti in enumerate(t):
        if ti == 0.0:
            h[i] = 1.0 - b + 4 * b / np.pi
        elif b > 0 and abs(abs(ti) - 1.0 / (4 * b)) < 1e-12:
            h[i] = (b / np.sqrt(2)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
            )
        else:
            num = np.sin(np.pi * ti * (1 - b)) + 4 * b * ti * np.cos(np.pi * ti * (1 + b))
            den = np.pi * ti * (1 - (4 * b * ti) ** 2)
            h[i] = num / den
    return h / np.linalg.norm(h)


_PAM8 = np.array([-7.0, -5.0, -3.0, -1.0, 1.0, 3.0, 5.0, 7.0])


def _vsb_like(spec: SignalSpec, n: int, rng) -> np.ndarray:
    h = rrc_taps(spec.rolloff, spec.sps, spec.span)
    n_sym = (n + 2 * h.size) // spec.sps + 1
    symbols = _PAM8[rng.integers(0, 8, n_sym)] + spec.pilot
    y = upfirdn(h, symbols, up=spec.sps)
    return y[h.size : h.size + n]


def _ar1(spec: SignalSpec, n: int, rng) -> np.ndarray:
    a = spec.ar_coeff
    e = rng.standard_normal(n)
    x_prev = rng.standard_normal()
    y, _ = lfilter([math.sqrt(1 - a * a)], [1.0, -a], e, zi=[a * x_prev])
    return y


def _from_file(spec: SignalSpec, n: int, rng) -> np.ndarray:
    data = read_samples(spec.path).samples
    if data.size == 0:
        raise DomainError(f"{spec.path} holds no samples")
    offset = int(rng.integers(0, data.size))
    return np.take(data, np.arange(offset, offset + n), mode="wrap")


def generate_signal(spec: SignalSpec, n: int, seed) -> SampleStream:
    """``n`` clean source samples scaled to unit mean square. Deterministic in ``seed``."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else trial_rng("signal", seed)
    gen = {"vsb_like": _vsb_like, "ar1": _ar1, "file": _from_file}[spec.kind]
    x = gen(spec, n, rng)
    power = float(np.mean(x * x))
    if power == 0:
        raise DomainError("source produced an all-zero segment")
    return SampleStream(x / math.sqrt(power), Origin.SIGNAL_ONLY, label=spec.label)


def noise_variance(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def add_awgn(signal, snr_db: float, seed) -> SampleStream:
    """``s + w`` with ``w`` white Gaussian of variance ``10^(-snr_db/10)``."""
    s = signal.samples if isinstance(signal, SampleStream) else np.asarray(signal, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else trial_rng("awgn", seed)
    w = rng.standard_normal(s.size) * math.sqrt(noise_variance(snr_db))
    label = signal.label if isinstance(signal, SampleStream) else ""
    return SampleStream(s + w, Origin.SIGNAL_PLUS_NOISE, label=label)


# ---------------------------------------------------------------------------
# statistics helpers


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    z = float(norm.ppf(0.5 + confidence / 2))
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# trial plans and reports


@dataclass(frozen=True)
class TrialPlan:
    detectors: tuple
    signal: SignalSpec = SignalSpec()
    snr_grid: tuple = (-24.0, -20.0, -16.0)
    ns_grid: tuple = (99_600,)
    cfg: SensingConfig = SensingConfig()
    n_trials: int = 500
    pfa_target: float = 0.01
    master_seed: int = 0
    f: MonotoneFn = IDENTITY
    fmd_noise_mode: str = "external"
    gamma_e: float = DEFAULT_GAMMA_E
    calib_trials: int | None = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(self.detectors))
        object.__setattr__(self, "snr_grid", tuple(float(s) for s in self.snr_grid))
        object.__setattr__(self, "ns_grid", tuple(int(n) for n in self.ns_grid))
        if not self.detectors:
            raise DomainError("detector set is empty")
        unknown = set(self.detectors) - set(DETECTORS)
        if unknown:
            raise DomainError(f"unknown detectors {sorted(unknown)}")
        if not self.snr_grid or not self.ns_grid:
            raise DomainError("SNR and Ns grids must be non-empty")
        if self.n_trials < 100:
            raise DomainError(f"n_trials must be >= 100, got {self.n_trials}")
        if not 0 < self.pfa_target < 1:
            raise DomainError(f"pfa_target must lie in (0, 1), got {self.pfa_target}")
        NoiseMode(self.fmd_noise_mode)

    @property
    def n_calibration(self) -> int:
        return self.calib_trials or math.ceil(50.0 / self.pfa_target)


@dataclass(frozen=True)
class CellResult:
    detector: str
    signal: str
    snr_db: float
    ns: int
    n_trials: int
    pd: float
    pd_lo: float
    pd_hi: float
    pfa_emp: float
    threshold: float
    mean_stat_h0: float
    mean_stat_h1: float
    failures: int
    pfa_lo: float = 0.0
    pfa_hi: float = 1.0
    wall_clock: float = field(default=0.0, compare=False)

    def csv_row(self) -> list:
        return [getattr(self, k) for k in CSV_HEADER]


@dataclass
class TrialReport:
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def select(self, detector: str, ns: int | None = None) -> list[CellResult]:
        out = [r for r in self.rows if r.detector == detector and (ns is None or r.ns == ns)]
        return sorted(out, key=lambda r: r.snr_db)

    def row(self, detector: str, snr_db: float, ns: int) -> CellResult:
        for r in self.rows:
            if r.detector == detector and r.ns == ns and math.isclose(r.snr_db, snr_db):
                return r
        raise KeyError((detector, snr_db, ns))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([_fmt(v) for v in r.csv_row()])
        return path

    def to_long_csv(self, path) -> Path:
        """One ``(detector, signal, ns, snr_db, metric, value, lo, hi)`` line per estimate, for plotting."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["detector", "signal", "ns", "snr_db", "metric", "value", "lo", "hi"])
            for r in self.rows:
                w.writerow([r.detector, r.signal, r.ns, _fmt(r.snr_db), "pd", _fmt(r.pd), _fmt(r.pd_lo), _fmt(r.pd_hi)])
                w.writerow([r.detector, r.signal, r.ns, _fmt(r.snr_db), "pfa", _fmt(r.pfa_emp), _fmt(r.pfa_lo), _fmt(r.pfa_hi)])
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        payload = {
            "rows": [asdict(r) for r in self.rows],
            "errors": self.errors,
            "flags": self.flags,
        }
        path.write_text(json.dumps(payload, indent=2))
        return path

    @classmethod
    def from_csv(cls, path) -> "TrialReport":
        rows = []
        with Path(path).open() as fh:
            for rec in csv.DictReader(fh):
                rows.append(
                    CellResult(
                        detector=rec["detector"],
                        signal=rec["signal"],
                        snr_db=float(rec["snr_db"]),
                        ns=int(rec["ns"]),
                        n_trials=int(rec["n_trials"]),
                        pd=float(rec["pd"]),
                        pd_lo=float(rec["pd_lo"]),
                        pd_hi=float(rec["pd_hi"]),
                        pfa_emp=float(rec["pfa_emp"]),
                        threshold=float(rec["threshold"]),
                        mean_stat_h0=float(rec["mean_stat_h0"]),
                        mean_stat_h1=float(rec["mean_stat_h1"]),
                        failures=int(rec["failures"]),
                    )
                )
        return cls(rows)


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return v


# ---------------------------------------------------------------------------
# cells


@dataclass(frozen=True)
class _CellContext:
    detector: str
    spec: SignalSpec
    snr_db: float
    cfg: SensingConfig
    seed: int
    threshold: float | None
    fmd: FmdParams | None
    learned: object = None
    prior: EcPrior | None = None


def _trial(index: int, ctx: _CellContext, hypothesis: str):
    rng = trial_rng(ctx.seed, ctx.detector, ctx.snr_db, ctx.cfg.Ns, hypothesis, index)
    n = ctx.cfg.samples_needed()
    sigma2 = noise_variance(ctx.snr_db)
    try:
        w = rng.standard_normal(n) * math.sqrt(sigma2)
        if hypothesis == "H1":
            x = generate_signal(ctx.spec, n, rng).samples + w
        else:
            x = w
        if ctx.detector == "FMD":
            out = fmd_decide(x, ctx.cfg, ctx.fmd)
            return out.statistic, out.threshold
        stat = detector_statistic(ctx.detector, x, ctx.cfg, learned=ctx.learned, prior=ctx.prior)
        return stat, ctx.threshold
    except (SpecSenseError, ArithmeticError, np.linalg.LinAlgError):
        return None


def _fmd_params(plan_f, pfa, mode, sigma2) -> FmdParams:
    if NoiseMode(mode) is NoiseMode.EXTERNAL:
        return FmdParams(plan_f, pfa, NoiseMode.EXTERNAL, sigma2)
    return FmdParams(plan_f, pfa, NoiseMode.FROM_DATA)


def learn_feature(spec: SignalSpec, cfg: SensingConfig, seed, gamma_e: float = DEFAULT_GAMMA_E, n_segments: int = 4):
    """Blindly learn the FTM feature from consecutive clean source segments."""
    n = cfg.samples_needed()
    src = generate_signal(spec, n * n_segments, trial_rng(seed, "fla", cfg.Ns)).samples
    segments = [src[i * n : (i + 1) * n] for i in range(n_segments)]
    return fla_learn(segments, cfg, gamma_e)


def ec_prior(spec: SignalSpec, cfg: SensingConfig, snr_db: float, seed) -> EcPrior:
    """EC prior from a clean reference segment and the injected noise variance."""
    ref = generate_signal(spec, cfg.samples_needed(), trial_rng(seed, "ec-prior", cfg.Ns))
    return EcPrior(whole_segment_covariance(ref, cfg), noise_variance(snr_db))


def calibrate_cell_threshold(
    detector: str,
    cfg: SensingConfig,
    snr_db: float,
    pfa: float,
    n_calib: int,
    seed: int,
    workers: int = 1,
    learned=None,
    prior: EcPrior | None = None,
) -> float:
    """Empirical threshold for a baseline detector in one cell.

    MME, AGM and FTM are invariant to noise scaling, so they are calibrated
    at unit noise variance and the value is reused across SNRs.
    """
    sigma2 = 1.0 if detector in SCALE_INVARIANT else noise_variance(snr_db)
    key_snr = None if detector in SCALE_INVARIANT else snr_db
    return calibrate_threshold_empirical(
        detector,
        WhiteNoise(sigma2),
        cfg,
        pfa,
        n_calib,
        seed=derive_seed(seed, "calib", cfg.Ns, key_snr),
        workers=workers,
        learned=learned,
        prior=prior,
    )


def run_cell(
    detector: str,
    spec: SignalSpec,
    snr_db: float,
    ns: int,
    cfg: SensingConfig,
    n_trials: int,
    seed: int,
    pfa: float = 0.01,
    *,
    f: MonotoneFn = IDENTITY,
    fmd_noise_mode: str = "external",
    threshold: float | None = None,
    n_calib: int | None = None,
    gamma_e: float = DEFAULT_GAMMA_E,
    learned=None,
    workers: int = 1,
) -> CellResult:
    """Run ``n_trials`` H1 and ``n_trials`` H0 trials of one detector at one ``(snr, ns)``.

    FMD uses its closed-form threshold. Baselines use ``threshold`` when
    given, otherwise one calibrated on ``n_calib`` (default ``50 / pfa``)
    noise-only trials.

    Raises:
        CellFailed: more than 1% of trials failed numerically.
    """
    t0 = time.perf_counter()
    cell_cfg = cfg if ns == cfg.Ns else cfg.with_ns(ns)
    sigma2 = noise_variance(snr_db)
    fmd = prior = None
    if detector == "FMD":
        fmd = _fmd_params(f, pfa, fmd_noise_mode, sigma2)
    else:
        if detector == "EC":
            prior = ec_prior(spec, cell_cfg, snr_db, seed)
        if detector == "FTM" and learned is None:
            learned = learn_feature(spec, cell_cfg, seed, gamma_e)
            if learned is None:
                raise CellFailed(f"FTM feature not learned for {spec.label} at ns={ns}")
        if threshold is None:
            threshold = calibrate_cell_threshold(
                detector,
                cell_cfg,
                snr_db,
                pfa,
                n_calib or math.ceil(50.0 / pfa),
                seed,
                workers,
                learned=learned,
                prior=prior,
            )
    ctx = _CellContext(detector, spec, float(snr_db), cell_cfg, seed, threshold, fmd, learned, prior)
    h1 = parallel_map(partial(_trial, ctx=ctx, hypothesis="H1"), range(n_trials), workers)
    h0 = parallel_map(partial(_trial, ctx=ctx, hypothesis="H0"), range(n_trials), workers)
    ok1 = [r for r in h1 if r is not None]
    ok0 = [r for r in h0 if r is not None]
    failures = 2 * n_trials - len(ok1) - len(ok0)
    if failures > FAILURE_BUDGET * 2 * n_trials or not ok1 or not ok0:
        raise CellFailed(f"{detector} at {snr_db} dB, ns={ns}: {failures} failed trials")
    hits = sum(s > g for s, g in ok1)
    false_alarms = sum(s > g for s, g in ok0)
    pd_lo, pd_hi = wilson_interval(hits, len(ok1))
    pfa_lo, pfa_hi = wilson_interval(false_alarms, len(ok0))
    thresholds = [g for _, g in ok1 + ok0]
    return CellResult(
        detector=detector,
        signal=spec.label,
        snr_db=float(snr_db),
        ns=int(ns),
        n_trials=n_trials,
        pd=hits / len(ok1),
        pd_lo=pd_lo,
        pd_hi=pd_hi,
        pfa_emp=false_alarms / len(ok0),
        threshold=float(np.mean(thresholds)),
        mean_stat_h0=float(np.mean([s for s, _ in ok0])),
        mean_stat_h1=float(np.mean([s for s, _ in ok1])),
        failures=failures,
        pfa_lo=pfa_lo,
        pfa_hi=pfa_hi,
        wall_clock=time.perf_counter() - t0,
    )


def _monotonicity_flags(report: TrialReport) -> list[str]:
    flags = []
    for det in {r.detector for r in report.rows}:
        for ns in {r.ns for r in report.rows}:
            rows = report.select(det, ns)
            for a, b in zip(rows, rows[1:]):
                slack = 3 * max(a.pd_hi - a.pd_lo, b.pd_hi - b.pd_lo) / 2
                if a.pd - b.pd > slack:
                    flags.append(
                        f"{det} ns={ns}: Pd drops from {a.pd:.3f} at {a.snr_db} dB "
                        f"to {b.pd:.3f} at {b.snr_db} dB"
                    )
    return flags


def snr_sweep(plan: TrialPlan, progress=None) -> TrialReport:
    """Run every ``(detector, ns, snr)`` cell of ``plan``.

    Baseline thresholds are calibrated once per cell (once per ``ns`` for the
    scale-invariant detectors). Failed cells are recorded in
    ``report.errors``; Pd decreases beyond three Wilson half-widths are
    listed in ``report.flags``.
    """
    report = TrialReport()
    for det in plan.detectors:
        for ns in plan.ns_grid:
            cfg = plan.cfg if ns == plan.cfg.Ns else plan.cfg.with_ns(ns)
            learned = None
            shared = None
            try:
                if det == "FTM":
                    learned = learn_feature(plan.signal, cfg, plan.master_seed, plan.gamma_e)
                    if learned is None:
                        raise CellFailed(f"FTM feature not learned for {plan.signal.label} at ns={ns}")
                if det in SCALE_INVARIANT:
                    shared = calibrate_cell_threshold(
                        det, cfg, 0.0, plan.pfa_target, plan.n_calibration,
                        plan.master_seed, plan.workers, learned=learned,
                    )
            except SpecSenseError as exc:
                report.errors.append(f"{det} ns={ns}: {exc}")
                continue
            for snr in plan.snr_grid:
                try:
                    row = run_cell(
                        det, plan.signal, snr, ns, cfg, plan.n_trials, plan.master_seed,
                        plan.pfa_target, f=plan.f, fmd_noise_mode=plan.fmd_noise_mode,
                        threshold=shared, n_calib=plan.n_calibration, gamma_e=plan.gamma_e,
                        learned=learned, workers=plan.workers,
                    )
                except SpecSenseError as exc:
                    report.errors.append(f"{det} snr={snr} ns={ns}: {exc}")
                    continue
                report.rows.append(row)
                if progress is not None:
                    progress(row)
    report.flags = _monotonicity_flags(report)
    return report


def interpolate_snr(points: Sequence[tuple[float, float]], target_pd: float) -> float:
    """Linear interpolation of the SNR where Pd crosses ``target_pd``.

    ``points`` are ``(snr_db, pd)`` pairs; the first bracketing pair in
    increasing SNR is used.
    """
    pts = sorted(points)
    for (s0, p0), (s1, p1) in zip(pts, pts[1:]):
        if min(p0, p1) <= target_pd <= max(p0, p1):
            if p1 == p0:
                return s0
            return s0 + (target_pd - p0) * (s1 - s0) / (p1 - p0)
    if len(pts) == 1 and pts[0][1] == target_pd:
        return pts[0][0]
    raise NotBracketed(f"Pd={target_pd} not bracketed by {[p for _, p in pts]}")


def snr_at_pd(report: TrialReport, detector: str, ns: int, target_pd: float = 0.5) -> float:
    rows = report.select(detector, ns)
    if not rows:
        raise NotBracketed(f"no rows for {detector} at ns={ns}")
    return interpolate_snr([(r.snr_db, r.pd) for r in rows], target_pd)


def with_seed(plan: TrialPlan, seed: int) -> TrialPlan:
    return replace(plan, master_seed=seed)
