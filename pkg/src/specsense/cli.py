"""Command-line driver: ``specsense {calibrate,sense,sweep,selftest}``.

Configuration is a flat ``key=value`` file (``#`` starts a comment) given
with ``--config``. Any key can also be passed as ``--key value``. Precedence
from low to high: built-in defaults, config file, ``SPECSENSE_SEED`` (seed
only), command-line flags.

Exit status of ``sense``: 0 when no detector fires, 10 when any selected
detector reports a signal, above 10 on errors.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import selftest
from .detectors import (
    DETECTORS,
    EcPrior,
    Feature,
    FmdParams,
    NoiseMode,
    WhiteNoise,
    agm_decide,
    calibrate_threshold_empirical,
    ec_decide,
    fmd_decide,
    fmd_threshold,
    ftm_decide,
    mme_decide,
)
from .errors import ConfigError, InsufficientSamples, SpecSenseError
from .frames import SensingConfig, read_samples, whole_segment_covariance
from .matfunc import make_fn
from .montecarlo import SignalSpec, TrialPlan, generate_signal, learn_feature, snr_sweep
from .util import derive_seed, trial_rng

log = logging.getLogger("specsense")

EXIT_ABSENT = 0
EXIT_PRESENT = 10
EXIT_CONFIG = 11
EXIT_IO = 12
EXIT_RUNTIME = 13
EXIT_SELFTEST_FAILED = 1


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(float(v)) for v in text.split(",") if v.strip())


def _names(text: str) -> tuple:
    return tuple(v.strip().upper() for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(float(text))


def _opt_str(text: str):
    return None if text.strip().lower() in ("", "none") else text.strip()


@dataclass(frozen=True)
class Key:
    parse: Callable
    default: str
    help: str


SCHEMA: dict[str, Key] = {
    # frame geometry
    "L": Key(int, "32", "smoothing factor (vector length)"),
    "K": Key(int, "166", "sub-segments per segment"),
    "Nk": Key(int, "600", "vectors per sub-segment"),
    "fs": Key(float, "21524476", "sample rate, metadata only"),
    "vector_stride": Key(int, "1", "samples between vector starts"),
    # detectors
    "detectors": Key(_names, "FMD", "comma list from " + ",".join(DETECTORS)),
    "fn": Key(str, "identity", "FMD matrix function: identity, sqrt, power, log1p"),
    "p": Key(float, "1.0", "exponent for fn=power"),
    "pfa": Key(float, "0.01", "target probability of false alarm"),
    "noise_mode": Key(str, "from_data", "FMD noise variance: from_data or external"),
    "sigma2": Key(_opt_float, "none", "known noise variance (FMD external mode, EC prior, calibration)"),
    "gamma_e": Key(float, "0.85", "FTM feature-learning similarity threshold"),
    "thresholds": Key(str, "thresholds.txt", "threshold table written by calibrate, read by sense"),
    "feature": Key(_opt_str, "none", "FTM feature file (one float per line)"),
    # sources and sweeps
    "signal": Key(str, "vsb_like", "source: vsb_like, ar1, file"),
    "signal_path": Key(_opt_str, "none", "sample file for signal=file"),
    "rolloff": Key(float, "0.115", "vsb_like root-raised-cosine rolloff"),
    "sps": Key(int, "2", "vsb_like samples per symbol"),
    "span": Key(int, "16", "vsb_like filter half-span in symbols"),
    "pilot": Key(float, "0.0", "vsb_like DC offset added to symbols (1.25 mimics the ATSC pilot)"),
    "ar_coeff": Key(float, "0.9", "ar1 coefficient"),
    "snr_grid": Key(_floats, "-24,-22,-20,-18,-16", "comma list of SNRs in dB"),
    "ns_grid": Key(_ints, "99600", "comma list of segment sizes (vectors); K = ns // Nk"),
    "n_trials": Key(int, "500", "trials per hypothesis per cell"),
    "calib_trials": Key(_opt_int, "none", "noise-only trials for empirical thresholds (default 50/pfa)"),
    "fmd_noise_mode": Key(str, "external", "FMD noise variance in sweeps: external (injected value) or from_data"),
    "seed": Key(int, "0", "master seed"),
    "threads": Key(int, "1", "worker processes, 0 = one per CPU"),
    # I/O
    "input": Key(_opt_str, "none", "sample file for sense"),
    "input_format": Key(_opt_str, "none", "f32 or text; inferred from suffix when unset"),
    "output": Key(str, "report.csv", "sweep CSV report"),
    "json": Key(_opt_str, "none", "optional JSON mirror of the sweep report"),
    "long_csv": Key(_opt_str, "none", "optional long-format CSV for plotting"),
    # selftest
    "quick": Key(_bool, "false", "selftest with reduced trial counts"),
    "inject_fault": Key(_bool, "false", "selftest negative control: flip the threshold sign"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key=value`` lines into raw strings, with line-numbered errors."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {body!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            SCHEMA[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        raw[key] = (value, f"{source}:{lineno}")
    return raw


def resolve_config(config_path=None, flags: dict | None = None, environ=None) -> dict:
    """Merge defaults, config file, ``SPECSENSE_SEED`` and flags into typed values."""
    environ = os.environ if environ is None else environ
    raw = {k: (v.default, "default") for k, v in SCHEMA.items()}
    if config_path:
        path = Path(config_path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        raw.update(parse_config_text(text, str(path)))
    if environ.get("SPECSENSE_SEED"):
        raw["seed"] = (environ["SPECSENSE_SEED"], "env SPECSENSE_SEED")
    for key, value in (flags or {}).items():
        if value is not None:
            raw[key] = (value, f"--{key}")
    out = {}
    for key, (value, origin) in raw.items():
        try:
            out[key] = SCHEMA[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"{origin}: bad value for {key}: {exc}") from None
    if out["noise_mode"] not in ("from_data", "external"):
        raise ConfigError(f"noise_mode must be from_data or external, got {out['noise_mode']!r}")
    unknown = set(out["detectors"]) - set(DETECTORS)
    if unknown:
        raise ConfigError(f"unknown detectors {sorted(unknown)}")
    return out


def format_config(cfg: dict) -> str:
    def show(v):
        if isinstance(v, tuple):
            return ",".join(str(x) for x in v)
        return "none" if v is None else str(v)

    return "\n".join(f"{k}={show(cfg[k])}" for k in SCHEMA)


# ---------------------------------------------------------------------------
# builders


def sensing_config(c: dict) -> SensingConfig:
    try:
        return SensingConfig(L=c["L"], K=c["K"], Nk=c["Nk"], fs=c["fs"], vector_stride=c["vector_stride"])
    except SpecSenseError as exc:
        raise ConfigError(str(exc)) from None


def monotone_fn(c: dict):
    return make_fn(c["fn"], p=c["p"]) if c["fn"] == "power" else make_fn(c["fn"])


def signal_spec(c: dict) -> SignalSpec:
    return SignalSpec(
        kind=c["signal"],
        rolloff=c["rolloff"],
        sps=c["sps"],
        span=c["span"],
        pilot=c["pilot"],
        ar_coeff=c["ar_coeff"],
        path=c["signal_path"],
    )


def fmd_params(c: dict) -> FmdParams:
    if c["noise_mode"] == "external":
        if c["sigma2"] is None:
            raise ConfigError("noise_mode=external needs sigma2")
        return FmdParams(monotone_fn(c), c["pfa"], NoiseMode.EXTERNAL, c["sigma2"])
    return FmdParams(monotone_fn(c), c["pfa"], NoiseMode.FROM_DATA)


def ec_prior_from_config(c: dict, cfg: SensingConfig) -> EcPrior:
    if c["sigma2"] is None:
        raise ConfigError("EC needs sigma2 (noise variance prior)")
    ref = generate_signal(signal_spec(c), cfg.samples_needed(), trial_rng(c["seed"], "ec-prior", cfg.Ns))
    return EcPrior(whole_segment_covariance(ref, cfg), c["sigma2"])


def ftm_feature(c: dict, cfg: SensingConfig) -> Feature:
    if c["feature"] and Path(c["feature"]).exists():
        return Feature.load(c["feature"])
    learned = learn_feature(signal_spec(c), cfg, c["seed"], c["gamma_e"])
    if learned is None:
        raise SpecSenseError("FTM feature could not be learned from the configured source")
    if c["feature"]:
        learned.save(c["feature"])
    return learned


def read_threshold_table(path) -> dict:
    table = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 2:
            raise ConfigError(f"{path}:{lineno}: expected 'detector threshold'")
        table[parts[0].upper()] = float(parts[1])
    return table


def write_threshold_table(path, table: dict, header: str = "") -> Path:
    path = Path(path)
    lines = [f"# {line}" for line in header.splitlines()]
    lines += [f"{det} {value!r}" for det, value in table.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_calibrate(c: dict) -> int:
    cfg = sensing_config(c)
    sigma2 = c["sigma2"] if c["sigma2"] is not None else 1.0
    n_trials = c["calib_trials"] or math.ceil(50.0 / c["pfa"])
    table = {}
    for det in c["detectors"]:
        if det == "FMD":
            continue
        kwargs = {}
        if det == "FTM":
            kwargs["learned"] = ftm_feature(c, cfg)
        if det == "EC":
            kwargs["prior"] = ec_prior_from_config(c, cfg)
        t0 = time.perf_counter()
        table[det] = calibrate_threshold_empirical(
            det, WhiteNoise(sigma2), cfg, c["pfa"], n_trials,
            seed=derive_seed(c["seed"], "cli-calibrate"), workers=c["threads"], **kwargs,
        )
        log.info("calibrated %s over %d trials in %.1fs", det, n_trials, time.perf_counter() - t0)
    header = f"pfa={c['pfa']} L={cfg.L} K={cfg.K} Nk={cfg.Nk} sigma2={sigma2} trials={n_trials} seed={c['seed']}"
    write_threshold_table(c["thresholds"], table, header)
    gamma = fmd_threshold(c["pfa"], cfg.K, cfg.Nk, cfg.L, sigma2)
    print(f"FMD analytic threshold (sigma2={sigma2}): {gamma!r}")
    for det, value in table.items():
        print(f"{det} {value!r}")
    return 0


def cmd_sense(c: dict) -> int:
    if not c["input"]:
        raise ConfigError("sense needs input=<sample file>")
    cfg = sensing_config(c)
    try:
        stream = read_samples(c["input"], c["input_format"])
    except (OSError, ValueError) as exc:
        print(f"error reading {c['input']}: {exc}", file=sys.stderr)
        return EXIT_IO
    baselines = [d for d in c["detectors"] if d != "FMD"]
    table = read_threshold_table(c["thresholds"]) if baselines else {}
    present = False
    for det in c["detectors"]:
        if det == "FMD":
            out = fmd_decide(stream, cfg, fmd_params(c))
        else:
            if det not in table:
                raise ConfigError(f"no threshold for {det} in {c['thresholds']}; run calibrate first")
            gamma = table[det]
            if det == "MME":
                out = mme_decide(stream, cfg, gamma)
            elif det == "AGM":
                out = agm_decide(stream, cfg, gamma)
            elif det == "FTM":
                out = ftm_decide(stream, cfg, ftm_feature(c, cfg), gamma)
            else:
                out = ec_decide(stream, cfg, ec_prior_from_config(c, cfg), gamma)
        present |= out.present
        diag = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in out.diagnostics.items())
        print(f"{out.detector}: statistic={out.statistic:.8g} threshold={out.threshold:.8g} decision={out.decision.value} {diag}".rstrip())
    return EXIT_PRESENT if present else EXIT_ABSENT


def cmd_sweep(c: dict) -> int:
    plan = TrialPlan(
        detectors=c["detectors"],
        signal=signal_spec(c),
        snr_grid=c["snr_grid"],
        ns_grid=c["ns_grid"],
        cfg=sensing_config(c),
        n_trials=c["n_trials"],
        pfa_target=c["pfa"],
        master_seed=c["seed"],
        f=monotone_fn(c),
        fmd_noise_mode=c["fmd_noise_mode"],
        gamma_e=c["gamma_e"],
        calib_trials=c["calib_trials"],
        workers=c["threads"],
    )

    def progress(row):
        log.info("%s snr=%g ns=%d pd=%.3f pfa=%.3f (%.1fs)", row.detector, row.snr_db, row.ns, row.pd, row.pfa_emp, row.wall_clock)

    report = snr_sweep(plan, progress)
    report.to_csv(c["output"])
    if c["json"]:
        report.to_json(c["json"])
    if c["long_csv"]:
        report.to_long_csv(c["long_csv"])
    print(f"wrote {len(report.rows)} rows to {c['output']}")
    for flag in report.flags:
        print(f"warning: {flag}")
    for err in report.errors:
        print(f"error: {err}", file=sys.stderr)
    return EXIT_RUNTIME if report.errors else 0


def cmd_selftest(c: dict) -> int:
    results = selftest.run_all(seed=c["seed"], quick=c["quick"], inject_fault=c["inject_fault"])
    print(selftest.format_table(results))
    ok = all(r.passed for r in results)
    print("selftest: " + ("all properties pass" if ok else "FAILED"))
    return 0 if ok else EXIT_SELFTEST_FAILED


COMMANDS = {
    "calibrate": cmd_calibrate,
    "sense": cmd_sense,
    "sweep": cmd_sweep,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="specsense", description="Covariance-based spectrum sensing toolkit")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    for key, spec in SCHEMA.items():
        parser.add_argument(f"--{key}", dest=key, default=None, metavar="VALUE", help=f"{spec.help} [{spec.default}]")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    flags = {k: getattr(args, k) for k in SCHEMA}
    try:
        config = resolve_config(args.config, flags)
        log.info("resolved config for %s:\n%s", args.command, format_config(config))
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientSamples as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SpecSenseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
