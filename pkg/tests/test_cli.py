import json
import subprocess
import sys

import pytest

from projtractor.cli import COMMANDS, build_parser, main

FIELDS = {"check", "anchor", "geometry", "rank", "value", "relation", "bound", "passed", "seed", "error", "details"}


def records(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_commands_listed():
    for cmd in ("verify-identities", "flat-check", "prolong-residual", "holonomy-dim", "geodesic-drift", "full-suite"):
        assert cmd in COMMANDS


def test_verify_identities_passes(tmp_path, capsys):
    report = tmp_path / "r.jsonl"
    assert main(["verify-identities", "--geometry", "flat2", "--points", "5", "--report", str(report)]) == 0
    recs = records(report)
    assert len(recs) == 12
    for r in recs:
        assert set(r) == FIELDS
        assert r["passed"] and r["value"] < 1e-10 and r["seed"] == 0
    assert "12/12 checks passed" in capsys.readouterr().err


def test_stdout_report(capsys):
    assert main(["rank1-agreement", "--points", "4"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 1 and json.loads(out[0])["check"] == "rank1.classical_agreement"


def test_failure_exit_code(tmp_path):
    # an impossibly small tolerance turns passing checks into failures
    report = tmp_path / "r.jsonl"
    code = main(["verify-identities", "--geometry", "liouville", "--points", "3", "--tol-scale", "1e-12",
                 "--report", str(report)])
    assert code == 1
    assert not all(r["passed"] for r in records(report))


@pytest.mark.parametrize(
    "argv",
    [
        ["holonomy-dim", "--loops", "4"],
        ["holonomy-dim", "--steps", "15"],
        ["verify-identities", "--geometry", "nowhere"],
        ["verify-identities", "--tol-scale", "0"],
        ["verify-identities", "--points", "0"],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == 2
    assert "error:" in capsys.readouterr().err


def test_argparse_errors():
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 2


def test_bad_config_file(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('name = "b"\ndimension = 2\nmetric = [["1", "x"], ["0", "1"]]\n')
    assert main(["verify-identities", "--geometry", str(bad)]) == 2


def test_config_file_geometry(tmp_path):
    good = tmp_path / "warped.toml"
    good.write_text('name = "warped"\ndimension = 2\nmetric = [["1 + x^2", "0"], ["0", "1"]]\n')
    report = tmp_path / "r.jsonl"
    assert main(["verify-identities", "--geometry", str(good), "--points", "3", "--report", str(report)]) == 0
    assert {r["geometry"] for r in records(report)} == {"warped"}


def test_holonomy_dim_flat2_rank2(tmp_path):
    report = tmp_path / "r.jsonl"
    assert main(["holonomy-dim", "--geometry", "flat2", "--rank", "2", "--report", str(report)]) == 0
    (rec,) = records(report)
    assert rec["value"] == 6 and rec["details"]["fiber_dimension"] == 6


def test_prolong_residual_liouville(tmp_path):
    report = tmp_path / "r.jsonl"
    assert main(["prolong-residual", "--geometry", "liouville", "--rank", "2", "--report", str(report)]) == 0
    res = [r for r in records(report) if r["check"] == "prolongation.residual"]
    assert len(res) == 2 and all(r["value"] < 1e-8 for r in res)


def test_reports_are_deterministic(tmp_path):
    paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
    for p in paths:
        assert main(["holonomy-dim", "--geometry", "sphere2", "--rank", "1", "--seed", "7", "--report", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    for p in paths:
        main(["prolong-residual", "--points", "5", "--seed", "3", "--report", str(p)])
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_help_documents_defaults():
    text = build_parser().format_help()
    for flag in ("--geometry", "--rank", "--points", "--loops", "--steps", "--seed", "--jet-order", "--report",
                 "--tol-scale"):
        assert flag in text


def test_console_script_module():
    proc = subprocess.run([sys.executable, "-m", "projtractor.cli", "flat-check", "--rank", "1", "--points", "4"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "checks passed" in proc.stderr
