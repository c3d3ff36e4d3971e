"""Command-line interface: subcommands, flags, exit codes, outputs."""

import json
import subprocess
import sys
from dataclasses import replace

import pytest

from fransonsim import ScanPlan, phase_grid, preset, save_config
from fransonsim.cli import main


def run_cli(*argv):
    """Invoke the CLI in-process; argparse usage errors surface as
    SystemExit(2) just like real invocation."""
    try:
        return main(list(argv))
    except SystemExit as exc:  # argparse's own exits
        return exc.code


@pytest.fixture()
def small_config(tmp_path):
    cfg = replace(preset("ideal").config, acquisition_time_s=0.05,
                  master_seed=7)
    path = tmp_path / "small.json"
    save_config(cfg, path)
    return str(path)


@pytest.fixture()
def quick_scenario(tmp_path):
    s = preset("ideal")
    s = replace(s, name="quick",
                plan=ScanPlan(settings=phase_grid(6),
                              acquisition_s_per_point=0.02))
    path = tmp_path / "quick.json"
    save_config(s, path)
    return str(path)


# ---------------------------------------------------------------------------
# budget
# ---------------------------------------------------------------------------

def test_budget_preset(capsys):
    assert run_cli("budget", "--preset", "back-to-back") == 0
    out = capsys.readouterr().out
    assert "0.8358" in out
    assert "VIOLATES" in out
    assert "loss ledger" in out
    assert "15 dB" in out


def test_budget_writes_report(tmp_path, capsys):
    assert run_cli("budget", "--preset", "ideal",
                   "--out-dir", str(tmp_path)) == 0
    doc = json.load(open(tmp_path / "ideal_budget.json"))
    assert doc["bell"]["violates"] is True
    assert len(doc["config_hash"]) == 12


def test_budget_requires_one_source(small_config, capsys):
    assert run_cli("budget") == 2
    assert run_cli("budget", small_config, "--preset", "ideal") == 2
    assert "not both" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_simulate_writes_histogram_and_report(small_config, tmp_path,
                                              capsys):
    out = tmp_path / "out"
    assert run_cli("simulate", small_config, "--out-dir", str(out)) == 0
    doc = json.load(open(out / "small_sim_report.json"))
    assert doc["measured"]["central_window_counts"] > 0
    assert doc["master_seed"] == 7
    hist_lines = open(out / "small_hist.csv").read().splitlines()
    assert hist_lines[0].startswith("# config_hash=")
    assert hist_lines[1] == "center_ps,counts"
    # measured central rate should sit near the closed-form prediction
    measured = doc["measured"]["central_window_hz"]
    predicted = doc["predicted"]["central_at_config_phase_hz"]
    assert measured == pytest.approx(predicted, rel=0.1)


def test_simulate_is_deterministic(small_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("simulate", small_config, "--out-dir", str(a)) == 0
    assert run_cli("simulate", small_config, "--out-dir", str(b)) == 0
    assert (a / "small_sim_report.json").read_bytes() == \
        (b / "small_sim_report.json").read_bytes()
    assert (a / "small_hist.csv").read_bytes() == \
        (b / "small_hist.csv").read_bytes()


def test_simulate_seed_changes_counts(small_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli("simulate", small_config, "--out-dir", str(a))
    run_cli("simulate", small_config, "--seed", "8", "--out-dir", str(b))
    da = json.load(open(a / "small_sim_report.json"))
    db = json.load(open(b / "small_sim_report.json"))
    assert da["measured"]["central_window_counts"] != \
        db["measured"]["central_window_counts"]
    assert db["master_seed"] == 8


def test_dump_clicks_round_trip_through_histogram(small_config, tmp_path,
                                                  capsys):
    out = tmp_path / "out"
    assert run_cli("simulate", small_config, "--out-dir", str(out),
                   "--dump-clicks") == 0
    report = json.load(open(out / "small_sim_report.json"))
    capsys.readouterr()
    assert run_cli("histogram", str(out / "small_signal_clicks.txt"),
                   str(out / "small_idler_clicks.txt"),
                   "--window-ps", "60", "--out-dir", str(out)) == 0
    text = capsys.readouterr().out
    central = report["measured"]["central_window_counts"]
    assert f"window 60 ps at 0: {central} counts" in text
    assert (out / "histogram_hist.csv").exists()


# ---------------------------------------------------------------------------
# fringe
# ---------------------------------------------------------------------------

def test_fringe_scenario_file(quick_scenario, tmp_path, capsys):
    out = tmp_path / "out"
    assert run_cli("fringe", quick_scenario, "--out-dir", str(out)) == 0
    stdout = capsys.readouterr().out
    assert "VIOLATES" in stdout
    doc = json.load(open(out / "quick_report.json"))
    assert doc["fit"]["visibility"] == pytest.approx(1.0, abs=0.01)
    assert (out / "quick_scan.csv").exists()


def test_fringe_overrides(quick_scenario, tmp_path):
    out = tmp_path / "out"
    assert run_cli("fringe", quick_scenario, "--out-dir", str(out),
                   "--points", "5", "--acquisition-s", "0.01",
                   "--seed", "11") == 0
    doc = json.load(open(out / "quick_report.json"))
    assert len(doc["points"]) == 5
    assert doc["acquisition_s_per_point"] == 0.01
    assert doc["master_seed"] == 11


def test_fringe_bare_config_gets_default_plan(small_config, tmp_path):
    out = tmp_path / "out"
    assert run_cli("fringe", small_config, "--out-dir", str(out),
                   "--points", "5", "--acquisition-s", "0.01") == 0
    doc = json.load(open(out / "small_report.json"))
    assert len(doc["points"]) == 5


def test_fringe_degenerate_fit_exits_3(tmp_path, capsys):
    s = preset("ideal")
    s = replace(s, name="starved",
                plan=ScanPlan(settings=phase_grid(5),
                              acquisition_s_per_point=2e-7))
    path = tmp_path / "starved.json"
    save_config(s, path)
    assert run_cli("fringe", str(path), "--out-dir", str(tmp_path)) == 3
    assert "DEGENERATE" in capsys.readouterr().out
    # outputs still written so the run can be inspected
    assert (tmp_path / "starved_report.json").exists()


def test_fringe_runs_sweep_scenarios(tmp_path, capsys):
    assert run_cli("fringe", "--preset", "window-sweep",
                   "--out-dir", str(tmp_path)) == 0
    assert "best window by s_value: 100 ps" in capsys.readouterr().out
    assert (tmp_path / "window-sweep_windows.csv").exists()


def test_fringe_json_format_writes_report_only(quick_scenario, tmp_path):
    out = tmp_path / "out"
    assert run_cli("fringe", quick_scenario, "--out-dir", str(out),
                   "--format", "json") == 0
    assert (out / "quick_report.json").exists()
    assert not (out / "quick_scan.csv").exists()


# ---------------------------------------------------------------------------
# optimize-window
# ---------------------------------------------------------------------------

def test_optimize_window_table(capsys):
    assert run_cli("optimize-window", "--preset", "window-sweep",
                   "--grid", "60:10:140") == 0
    out = capsys.readouterr().out
    assert "best window by s_value: 100 ps" in out


def test_optimize_window_comma_grid(capsys):
    assert run_cli("optimize-window", "--preset", "window-sweep",
                   "--grid", "60,100", "--objective", "s_value") == 0
    assert "100" in capsys.readouterr().out


def test_optimize_window_bad_grid(capsys):
    assert run_cli("optimize-window", "--preset", "window-sweep",
                   "--grid", "banana") == 2
    assert run_cli("optimize-window", "--preset", "window-sweep",
                   "--grid", "100:10:60") == 2


# ---------------------------------------------------------------------------
# exit codes and plumbing
# ---------------------------------------------------------------------------

def test_parse_error_exits_2(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text("{bad json")
    assert run_cli("budget", str(p)) == 2
    err = capsys.readouterr().err
    assert ":1:" in err  # line:column diagnostics


def test_validation_error_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"analyzer_signal": {"delay_ps": 1.0},
                             "analyzer_idler": {"delay_ps": 1.0}}))
    assert run_cli("budget", str(p)) == 2
    assert "Franson" in capsys.readouterr().err


def test_missing_file_exits_2(capsys):
    assert run_cli("budget", "no_such_file.json") == 2
    assert "no_such_file.json" in capsys.readouterr().err


def test_unknown_preset_is_usage_error(capsys):
    assert run_cli("budget", "--preset", "bogus") == 2


def test_unknown_subcommand_is_usage_error():
    assert run_cli("transmogrify") == 2


def test_unwritable_out_dir_names_path(small_config, tmp_path, capsys):
    blocker = tmp_path / "file.txt"
    blocker.write_text("in the way")
    target = blocker / "sub"  # a path under a regular file
    code = run_cli("simulate", small_config, "--out-dir", str(target))
    assert code == 1
    assert "file.txt" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "fransonsim", "budget", "--preset",
         "ideal"],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert "predicted V" in proc.stdout
