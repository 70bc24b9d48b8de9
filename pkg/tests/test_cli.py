import csv
import json
import subprocess
import sys

import pytest

from conftest import CORPUS
from qplus import csp as C
from qplus.cli import CSV_COLUMNS, main

TRIANGLE = next(p for p in CORPUS if p.name.startswith("14_"))


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture()
def planted(tmp_path, capsys):
    inst, wit = tmp_path / "inst.json", tmp_path / "wit.json"
    code, _, _ = run(["gen", "--kind", "planted-satisfiable", "--N", 4, "--R", 6, "--q", 2, "--sigma", 2,
                      "--seed", 1, "--out", inst, "--witness-out", wit], capsys)
    assert code == 0
    return inst, wit


def test_gen_writes_canonical_instance(planted):
    inst, wit = planted
    csp = C.parse_instance(inst.read_text())
    assert inst.read_bytes() == C.serialize_instance(csp)
    a = json.loads(wit.read_text())
    assert C.count_unsatisfied(csp, a) == 0


def test_verify_reports_p_yes(planted, capsys):
    inst, wit = planted
    code, out, _ = run(["verify", "--instance", inst, "--assignment", wit], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["payload"]["matches_P_yes"] is True
    assert set(doc) >= {"manifest", "payload", "payload_sha256"}


def test_protocol_run_csv(tmp_path, capsys):
    out_csv = tmp_path / "rows.csv"
    code, out, _ = run(["protocol", "run", "--instance", TRIANGLE, "--delta", "auto", "--format", "csv",
                        "--csv", out_csv], capsys)
    assert code == 0
    rows = list(csv.DictReader(out_csv.read_text().splitlines()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[0]["delta"] == "2/3"
    assert all(rows[0][f"case{c}_pass"] in ("true", "") for c in (1, 2, 3, 4))
    assert out.splitlines()[0].split(",") == list(CSV_COLUMNS)


def test_reports_are_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert run(["protocol", "sound", "--instance", TRIANGLE, "--delta", "2/3", "--mode", "demo",
                    "--report", path], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert "timing_seconds" not in json.loads(a.read_text())


def test_timing_flag(capsys):
    code, out, _ = run(["expander", "--kind", "small", "--n", 30, "--d", 8, "--timing"], capsys)
    assert code == 0 and "timing_seconds" in json.loads(out)


def test_not_sound_is_precondition_failure(planted, capsys):
    inst, _ = planted
    assert run(["protocol", "sound", "--instance", inst], capsys)[0] == 1


def test_missing_file(capsys):
    code, _, err = run(["verify", "--instance", "/nonexistent.json", "--assignment", "[0]"], capsys)
    assert code == 1 and err


def test_bad_usage(capsys):
    assert run(["gen"], capsys)[0] == 1
    assert run(["nope"], capsys)[0] == 1


def test_guard_exceeded(capsys, monkeypatch):
    monkeypatch.setenv("QPLUS_GUARD_DIM", "4")
    code, _, _ = run(["attack", "--instance", TRIANGLE, "--method", "exact"], capsys)
    assert code == 3


def test_attack_both_methods(capsys):
    code, out, _ = run(["attack", "--instance", TRIANGLE, "--delta", "2/3", "--method", "both",
                        "--restarts", 8], capsys)
    assert code == 0
    assert "exact" in json.loads(out)["payload"]


def test_audit_and_corrupted_audit(capsys):
    code, out, err = run(["audit", "--samples", 50], capsys)
    assert code == 0 and json.loads(out)["payload"]["all_passed"]
    assert err.count("PASS") == 6
    code, _, err = run(["audit", "--samples", 50, "--corrupt-operator"], capsys)
    assert code == 2 and "FAIL preserv" in err


def test_regularize_output(tmp_path, capsys):
    out = tmp_path / "reg.json"
    assert run(["regularize", "--instance", TRIANGLE, "--out", out], capsys)[0] == 0
    doc = json.loads(out.read_text())
    assert len(doc["consistency_edges"]) == 24


def test_expander_cayley(capsys):
    code, out, _ = run(["expander", "--kind", "cayley", "--p", 19], capsys)
    payload = json.loads(out)["payload"]
    assert code == 0 and payload["vertices"] == 6840 and payload["cheeger_lower_bound"] >= 2
    assert payload["reconstruction_exact"] is True


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "qplus", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "protocol" in r.stdout


def test_attack_on_dumped_total_operator(tmp_path, capsys):
    op = tmp_path / "op.json"
    assert run(["verify", "--instance", TRIANGLE, "--assignment", "[0,1,0]", "--delta", "2/3",
                "--dump-operator", op], capsys)[0] == 0
    code, out, _ = run(["attack", "--operator", op, "--method", "both", "--restarts", 8], capsys)
    assert code == 0
    assert json.loads(out)["payload"]["agreement"]["within_1e-7"] is True
