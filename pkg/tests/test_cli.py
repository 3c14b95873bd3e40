import json
import subprocess
import sys
from pathlib import Path

import pytest

from gridkeysim import cli

ROOT = Path(__file__).resolve().parents[1]
FEEDER = ROOT / "scenarios" / "feeder.json"
GOLDEN = Path(__file__).parent / "golden" / "attack_verdicts.tsv"


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_run_feeder_exits_zero(tmp_path, capsys):
    assert run("run", FEEDER, "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "exit_status=0" in out and "collector_secrets=0" in out
    for name in ("events.log", "metrics.txt", "report.txt"):
        assert (tmp_path / name).read_text()


def test_run_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("run", FEEDER, "--seed", "5", "--out", a) == 0
    assert run("run", FEEDER, "--seed", "5", "--out", b) == 0
    for name in ("events.log", "metrics.txt", "report.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_env_fallback(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GRIDKEYSIM_SEED", "17")
    run("run", FEEDER)
    assert "seed=17" in capsys.readouterr().out


def test_lock_backend_override(capsys):
    assert run("run", FEEDER, "--backend", "lock") == 0
    assert "backend=lock" in capsys.readouterr().out


def test_unknown_backend_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        run("run", FEEDER, "--backend", "rsa")
    assert exc.value.code == 2


def test_failed_assertion_exits_one(tmp_path, capsys):
    doc = json.loads(FEEDER.read_text())
    doc["events"][1]["expect"]["delivered"] = ["M1"]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    assert run("run", p, "--out", tmp_path / "o") == 1
    assert "ASSERTION_FAILED" in capsys.readouterr().err
    assert "failure=" in (tmp_path / "o" / "report.txt").read_text()


def test_parse_error_exits_two_with_line(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text('{\n "topology": {},\n "events": [\n  {"op": "enroll",}\n ]\n}\n')
    assert run("run", p) == 2
    assert "PARSE_ERROR line 4" in capsys.readouterr().err


def test_missing_file_exits_two(tmp_path):
    assert run("run", tmp_path / "nope.json") == 2


def test_attack_suite_matches_golden(tmp_path, capsys):
    assert run("attack", "--out", tmp_path, "--golden", GOLDEN) == 0
    assert capsys.readouterr().out.splitlines() == GOLDEN.read_text().splitlines()
    assert len((tmp_path / "reports.jsonl").read_text().splitlines()) == len(GOLDEN.read_text().splitlines())


def test_attack_golden_mismatch_exits_one(tmp_path, capsys):
    bad = tmp_path / "golden.tsv"
    bad.write_text(GOLDEN.read_text().replace("BLOCKED", "SUCCEEDED", 1))
    assert run("attack", "--golden", bad) == 1


def test_attack_single_scenario_and_modes(capsys):
    assert run("attack", "--suite", "replay", "--mode", "counters=off") == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "replay\tcounters=off\tSUCCEEDED"


def test_attack_contradictory_modes(capsys):
    assert run("attack", "--suite", "replay", "--mode", "counters=on", "--mode", "counters=off") == 2
    assert "contradictory" in capsys.readouterr().err


def test_attack_unknown_scenario():
    assert run("attack", "--suite", "teleport") == 2


def test_attack_mode_no_scenario_takes_it():
    assert run("attack", "--suite", "dos", "--mode", "counters=on") == 2


def test_bench_reports_fit(capsys):
    assert run("bench", "--sizes", "8,64,128") == 0
    out = capsys.readouterr().out.splitlines()
    rows = [l.split("\t") for l in out[1:4]]
    assert [int(r[1]) for r in rows] == [16 * (n + 1) + 26 for n in (8, 64, 128)]
    r2 = float(next(l for l in out if l.startswith("r2_pubinfo=")).split("=")[1])
    assert r2 >= 0.999


def test_bench_lock_and_bad_sizes(capsys):
    assert run("bench", "--sizes", "4,16", "--backend", "lock") == 0
    assert run("bench", "--sizes", "4,x") == 2
    assert run("bench", "--sizes", "0") == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gridkeysim.cli", "attack", "--suite", "dos"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.splitlines() == ["dos\tthrottle=off\tSUCCEEDED", "dos\tthrottle=on\tBLOCKED"]
