"""Property suites run by ``specsense selftest``.

Each check returns a :class:`CheckResult`; nothing here raises on a failed
property. ``inject_fault=True`` flips the sign of the Q-inverse term in the
FMD threshold, which the false-alarm check must catch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .detectors import (
    Feature,
    agm_statistic,
    fmd_decide,
    fmd_statistic,
    fmd_statistic_from_traces,
    fmd_threshold,
    ftm_statistic,
    mme_statistic,
)
from .frames import CovMatrix, SensingConfig, sub_segment_traces, whole_segment_covariance
from .matfunc import registered_fns, sym_eigen, trace_fn
from .util import trial_rng


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_psd(rng, L: int, rank: int | None = None, scale: float = 1.0) -> np.ndarray:
    r = L if rank is None else rank
    G = rng.standard_normal((L, r))
    return scale * (G @ G.T) / max(r, 1)


def random_loewner_pair(rng, L: int) -> tuple[np.ndarray, np.ndarray]:
    """PSD ``A`` and ``B = A + P`` with ``P`` PSD; ranks and scales vary widely."""
    scale = 10.0 ** rng.uniform(-3, 3)
    A = random_psd(rng, L, int(rng.integers(1, L + 1)), scale)
    P = random_psd(rng, L, int(rng.integers(1, L + 1)), scale * 10.0 ** rng.uniform(-4, 1))
    return A, A + P


def check_trace_monotonicity(n_pairs: int = 300, dims=(4, 16, 32), seed: int = 0) -> CheckResult:
    """``Tr f(A) <= Tr f(B)`` for random ``A <= B`` and every registered ``f``."""
    fns = registered_fns()
    worst = -math.inf
    violations = 0
    for i in range(n_pairs):
        rng = trial_rng(seed, "fact1", i)
        L = dims[i % len(dims)]
        A, B = random_loewner_pair(rng, L)
        ea, eb = sym_eigen(A), sym_eigen(B)
        for f in fns:
            ta, tb = trace_fn(A, f, ea), trace_fn(B, f, eb)
            excess = (ta - tb) / (1.0 + abs(tb))
            worst = max(worst, excess)
            violations += excess > 1e-9
    return CheckResult(
        "trace monotonicity (A <= B => Tr f(A) <= Tr f(B))",
        violations == 0,
        f"{n_pairs} pairs x {len(fns)} functions, {violations} violations, worst excess {worst:.2e}",
    )


def check_trace_average_commute(n_cases: int = 300, seed: int = 0) -> CheckResult:
    """Trace of the averaged covariance equals the average of traces."""
    worst = 0.0
    for i in range(n_cases):
        rng = trial_rng(seed, "commute", i)
        L = int(rng.integers(2, 33))
        K = int(rng.integers(2, 50))
        covs = [CovMatrix.from_gram(random_psd(rng, L, scale=10.0 ** rng.uniform(-3, 3)), 1) for _ in range(K)]
        a = fmd_statistic(covs)
        b = fmd_statistic_from_traces([c.trace for c in covs])
        worst = max(worst, abs(a - b) / max(abs(b), np.finfo(float).tiny))
    return CheckResult(
        "average-then-trace == trace-then-average",
        worst <= 1e-12,
        f"{n_cases} cases, worst relative gap {worst:.2e}",
    )


def check_scale_invariance(n_streams: int = 20, seed: int = 0) -> CheckResult:
    """FMD decisions and MME/AGM/FTM statistics under input scaling by 0.1 and 10."""
    cfg = SensingConfig(L=8, K=20, Nk=100)
    n = cfg.samples_needed()
    bad = []
    for i in range(n_streams):
        rng = trial_rng(seed, "scale", i)
        x = rng.standard_normal(n)
        if i % 2:
            x = x + 0.4 * np.convolve(rng.standard_normal(n), np.ones(4) / 2, mode="same")
        base = fmd_decide(x, cfg).decision
        R = whole_segment_covariance(x, cfg)
        feat = Feature(rng.standard_normal(cfg.L))
        ref = (mme_statistic(R), agm_statistic(R), ftm_statistic(R, feat))
        for c in (0.1, 10.0):
            xs = x * c
            if fmd_decide(xs, cfg).decision != base:
                bad.append(f"FMD decision stream {i} c={c}")
            Rs = whole_segment_covariance(xs, cfg)
            scaled = (mme_statistic(Rs), agm_statistic(Rs), ftm_statistic(Rs, feat))
            for name, r0, r1 in zip(("MME", "AGM", "FTM"), ref, scaled):
                if abs(r1 - r0) > 1e-9 * abs(r0):
                    bad.append(f"{name} stream {i} c={c}")
    return CheckResult(
        "scale invariance (FMD decision, MME/AGM/FTM statistics)",
        not bad,
        f"{n_streams} streams x 2 scales" + (f"; failures: {bad[:3]}" if bad else ""),
    )


def binomial_band(p: float, n: int, confidence: float = 0.99) -> tuple[float, float]:
    """Central binomial acceptance band for an empirical rate, as proportions."""
    tail = (1.0 - confidence) / 2
    return float(binom.ppf(tail, n, p) / n), float(binom.ppf(1 - tail, n, p) / n)


def check_false_alarm_rate(
    n_trials: int = 1000,
    cfg: SensingConfig = SensingConfig(),
    pfa: float = 0.01,
    seed: int = 0,
    inject_fault: bool = False,
) -> CheckResult:
    """Empirical FMD false-alarm rate at the closed-form threshold with known noise variance."""
    L, K, Nk = cfg.L, cfg.K, cfg.Nk
    gamma = fmd_threshold(pfa, K, Nk, L, 1.0)
    if inject_fault:
        gamma = 2 * L - gamma
    hits = 0
    for i in range(n_trials):
        rng = trial_rng(seed, "pfa", i)
        x = rng.standard_normal(cfg.samples_needed())
        hits += fmd_statistic_from_traces(sub_segment_traces(x, cfg)) > gamma
    lo, hi = binomial_band(pfa, n_trials)
    rate = hits / n_trials
    return CheckResult(
        "FMD false-alarm rate at closed-form threshold",
        bool(lo <= rate <= hi),
        f"{hits}/{n_trials} = {rate:.4f}, 99% band [{lo:.4f}, {hi:.4f}], gamma={gamma:.4f}",
    )


def run_all(seed: int = 0, quick: bool = False, inject_fault: bool = False) -> list[CheckResult]:
    scale = 4 if quick else 1
    return [
        check_trace_monotonicity(1000 // scale, seed=seed),
        check_trace_average_commute(1000 // scale, seed=seed),
        check_scale_invariance(100 // scale, seed=seed),
        check_false_alarm_rate(2000 // scale, seed=seed, inject_fault=inject_fault),
    ]


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}" for r in results]
    return "\n".join(lines)
