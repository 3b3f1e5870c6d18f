import subprocess
import sys
import time

import numpy as np
import pytest

from specsense.cli import (
    EXIT_ABSENT,
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_PRESENT,
    main,
    parse_config_text,
    read_threshold_table,
    resolve_config,
)
from specsense.detectors import fmd_threshold
from specsense.errors import ConfigError
from specsense.frames import SampleStream, SensingConfig, write_samples
from specsense.montecarlo import SignalSpec, TrialReport, add_awgn, generate_signal

SMALL_CONF = """\
# reduced geometry for quick runs
L = 8
K = 20
Nk = 100   # vectors per sub-segment
detectors = FMD,MME,AGM
calib_trials = 5000
seed = 3
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("SPECSENSE_SEED", raising=False)
    (tmp_path / "run.conf").write_text(SMALL_CONF)
    return tmp_path


# -- configuration -----------------------------------------------------------


def test_config_parsing_and_precedence(workdir, monkeypatch):
    cfg = resolve_config("run.conf", {"K": "30"}, environ={})
    assert (cfg["L"], cfg["K"], cfg["Nk"]) == (8, 30, 100)
    assert cfg["detectors"] == ("FMD", "MME", "AGM")
    assert resolve_config("run.conf", {}, environ={"SPECSENSE_SEED": "11"})["seed"] == 11
    assert resolve_config("run.conf", {"seed": "5"}, environ={"SPECSENSE_SEED": "11"})["seed"] == 5


def test_default_geometry_config_accepted_verbatim():
    cfg = resolve_config(None, {"L": "32", "K": "166", "Nk": "600", "pfa": "0.01"}, environ={})
    assert (cfg["L"], cfg["K"], cfg["Nk"], cfg["pfa"]) == (32, 166, 600, 0.01)


@pytest.mark.parametrize(
    "text, line",
    [("L = 8\nbogus\n", 2), ("# c\n\nfoo = 1\n", 3), ("K = ten\n", 1)],
)
def test_config_errors_name_the_line(text, line):
    with pytest.raises(ConfigError, match=f"conf:{line}:"):
        parse_config_text(text, "x.conf")


def test_bad_detector_and_missing_file():
    with pytest.raises(ConfigError):
        resolve_config(None, {"detectors": "FMD,XYZ"}, environ={})
    with pytest.raises(ConfigError):
        resolve_config("/nonexistent.conf", {}, environ={})


def test_config_error_exit_code(workdir, capsys):
    (workdir / "bad.conf").write_text("L = 8\nnot a pair\n")
    assert main(["sense", "--config", "bad.conf"]) == EXIT_CONFIG
    assert "bad.conf:2" in capsys.readouterr().err
    assert main(["frobnicate"]) == EXIT_CONFIG


def test_resolved_config_is_logged(workdir, caplog):
    caplog.set_level("INFO", logger="specsense")
    main(["selftest", "--config", "run.conf", "--quick", "true", "--seed", "4"])
    text = caplog.text
    assert "L=8" in text and "seed=4" in text and "quick=True" in text


# -- calibrate / sense ---------------------------------------------------------


def test_calibrate_then_sense(workdir, capsys):
    assert main(["calibrate", "--config", "run.conf"]) == 0
    out = capsys.readouterr().out
    gamma = fmd_threshold(0.01, 20, 100, 8, 1.0)
    assert f"{gamma!r}" in out
    table = read_threshold_table("thresholds.txt")
    assert set(table) == {"MME", "AGM"} and table["MME"] > table["AGM"] > 1.0
    # reproducible
    assert main(["calibrate", "--config", "run.conf", "--thresholds", "again.txt"]) == 0
    assert read_threshold_table("again.txt") == table

    cfg = SensingConfig(L=8, K=20, Nk=100)
    n = cfg.samples_needed()
    write_samples("zeros.f32", np.zeros(n))
    write_samples("sig.txt", add_awgn(generate_signal(SignalSpec(), n, 5), 0.0, 6))
    code = main(["sense", "--config", "run.conf", "--detectors", "FMD", "--input", "zeros.f32",
                 "--noise_mode", "external", "--sigma2", "1"])
    assert code == EXIT_ABSENT
    assert main(["sense", "--config", "run.conf", "--input", "sig.txt"]) == EXIT_PRESENT
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("MME: ") and "signal_present" in line for line in lines)


def test_sense_error_codes(workdir):
    with open("short.f32", "wb") as fh:
        fh.write(b"\x00" * 6)
    assert main(["sense", "--detectors", "FMD", "--input", "short.f32"]) == EXIT_IO
    write_samples("few.f32", np.ones(100))
    assert main(["sense", "--detectors", "FMD", "--input", "few.f32"]) == EXIT_IO
    assert main(["sense", "--detectors", "FMD", "--input", "missing.f32"]) == EXIT_IO
    assert main(["sense", "--detectors", "FMD"]) == EXIT_CONFIG


def test_sense_baseline_without_threshold_table(workdir):
    write_samples("x.f32", SampleStream(np.random.default_rng(0).standard_normal(2007)))
    code = main(["sense", "--config", "run.conf", "--input", "x.f32", "--thresholds", "none.txt"])
    assert code > 10


def test_full_size_zero_file_absent(workdir):
    write_samples("z.f32", np.zeros(100_000))
    assert main(["sense", "--detectors", "FMD", "--input", "z.f32", "--noise_mode", "external", "--sigma2", "1"]) == 0


# -- sweep / selftest ------------------------------------------------------------


def test_tiny_sweep_is_fast(workdir):
    t0 = time.perf_counter()
    code = main(["sweep", "--L", "8", "--K", "10", "--Nk", "50", "--snr_grid=-10,0", "--ns_grid", "500",
                 "--n_trials", "100", "--pfa", "0.1", "--json", "r.json", "--long_csv", "l.csv"])
    assert code == 0
    assert time.perf_counter() - t0 < 10
    report = TrialReport.from_csv("report.csv")
    assert len(report.rows) == 2
    assert (workdir / "r.json").exists() and (workdir / "l.csv").exists()


def test_selftest_quick_and_fault(workdir, capsys):
    assert main(["selftest", "--quick", "1"]) == 0
    first = capsys.readouterr().out
    assert main(["selftest", "--quick", "1"]) == 0
    assert capsys.readouterr().out == first
    assert main(["selftest", "--quick", "1", "--inject_fault", "1"]) != 0
    assert "FAIL  FMD false-alarm" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "specsense", "--help"], capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == 0 and "calibrate" in res.stdout
