from pathlib import Path

import pytest

from gpmhe.cli import main

SHORT = str(Path(__file__).parent / "fixtures" / "short.ini")


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_then_estimate(tmp_path, capsys):
    code, out, _ = run(["simulate", "--config", SHORT, "--seed", "7", "--out",
                        str(tmp_path / "sim")], capsys)
    assert code == 0 and "150 rows" in out
    code, _, _ = run(["train-gp", "--config", SHORT, "--log", str(tmp_path / "sim/flight.csv"),
                      "--out", str(tmp_path / "gp")], capsys)
    assert code == 0 and (tmp_path / "gp/gp_model.json").exists()
    code, out, _ = run(["estimate", "--config", SHORT, "--log", str(tmp_path / "sim/flight.csv"),
                        "--truth", str(tmp_path / "sim/truth.csv"), "--gp",
                        str(tmp_path / "gp/gp_model.json"), "--out", str(tmp_path / "est")],
                       capsys)
    assert code == 0 and "GP-MHE" in out
    assert (tmp_path / "est/metrics.csv").exists()


def test_compare_payload_and_sweep(tmp_path, capsys):
    code, out, _ = run(["compare", "--config", SHORT, "--estimators", "k,d",
                        "--out", str(tmp_path / "c")], capsys)
    assert code == 0 and "K-MHE" in out and "GP-MHE" not in out
    code, out, _ = run(["payload", "--config", SHORT, "--estimators", "d",
                        "--out", str(tmp_path / "p")], capsys)
    assert code == 0 and "settling window" in out
    assert (tmp_path / "p/mass_trace.csv").exists()
    code, out, _ = run(["sweep", "--config", SHORT, "--estimators", "k", "--nodes", "5,10",
                        "--out", str(tmp_path / "s")], capsys)
    assert code == 0 and "N=10" in out


@pytest.mark.parametrize("args,kind", [
    (["frobnicate"], "CliError"),
    (["compare", "--noise-level", "5"], "CliError"),
    (["simulate", "--seed", "-1"], "CliError"),
    (["estimate", "--log", "/nonexistent.csv"], "FileNotFoundError"),
    (["compare", "--config", "/nonexistent.ini"], "ConfigError"),
    (["sweep", "--nodes", "a,b"], "CliError"),
])
def test_errors_are_one_machine_readable_line(args, kind, capsys):
    code, _, err = run(args, capsys)
    assert code != 0
    lines = err.strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith(f"error={kind} message=\"")


def test_gp_estimate_needs_model(tmp_path, capsys):
    run(["simulate", "--config", SHORT, "--out", str(tmp_path)], capsys)
    code, _, err = run(["estimate", "--log", str(tmp_path / "flight.csv")], capsys)
    assert code == 2 and "--gp" in err
