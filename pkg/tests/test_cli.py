import json
import os
import subprocess
import sys

import jsonschema
import pytest

from markov_comparison.cli import main
from markov_comparison.runner import EXIT_INCONCLUSIVE, EXIT_INVALID, EXIT_OK, run_scenario
from markov_comparison.scenario import SCHEMA, demo_scenario, parse_scenario

from oracles import DEMO_GE_X, DEMO_GE_Y

REPORT_FILES = {"report.json", "linking_curve.csv", "residuals.csv", "generator_convergence.csv", "montecarlo.csv"}


def _write(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _quick_demo(**overrides):
    doc = demo_scenario()
    doc["montecarlo"]["paths"] = 20_000
    doc["grid"]["steps"] = 128
    doc.update(overrides)
    return doc


def _jump_doc():
    zero = {"kind": "constant", "Q": [[0.0, 0.0], [0.0, 0.0]], "horizon": 2.0}
    return {
        "version": "v1",
        "name": "pure jumps",
        "states": {"n": 2, "order": "total"},
        "specX": {"rates": zero, "initial": [1.0, 0.0],
                  "jumps": {"times": [1.0, 2.0], "kernels": [[[0.5, 0.5], [0.0, 1.0]]] * 2}},
        "specY": {"rates": zero, "initial": [1.0, 0.0],
                  "jumps": {"times": [1.0, 2.0], "kernels": [[[0.7, 0.3], [0.0, 1.0]]] * 2}},
        "functions": [{"name": "up", "values": [0.0, 1.0]}],
        "t": [2.0],
        "theorems": ["theorem10"],
        "grid": {"steps": 16},
        "montecarlo": {"enabled": True, "paths": 20_000},
        "seed": 5,
    }


def test_demo_is_valid_scenario():
    doc = demo_scenario()
    jsonschema.validate(doc, SCHEMA)
    sc = parse_scenario(doc)
    assert sc.times == [1.0] and sc.montecarlo.enabled


def test_demo_run_certifies_and_writes_reports(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", _write(tmp_path, _quick_demo()), "--out", str(out)])
    assert code == EXIT_OK
    assert set(os.listdir(out)) == REPORT_FILES
    report = json.loads((out / "report.json").read_text())
    assert report["summary"]["certified"] == 4
    for c in report["comparisons"]:
        assert c["verdict"] == "certified_ge"
        assert c["oracle_x"] == pytest.approx(DEMO_GE_X, abs=1e-9)
        assert c["oracle_y"] == pytest.approx(DEMO_GE_Y, abs=1e-9)
    assert report["montecarlo"]["passed"]
    assert "certified_ge" in capsys.readouterr().out


def test_identical_processes_exit_zero(tmp_path):
    doc = _quick_demo()
    doc["specY"] = doc["specX"]
    doc["theorems"] = ["theorem4", "theorem7", "theorem8", "theorem9", "theorem10"]
    out = tmp_path / "out"
    assert main(["run", _write(tmp_path, doc), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert {c["verdict"] for c in report["comparisons"]} == {"certified_eq"}


def test_pure_jump_scenario(tmp_path):
    out = tmp_path / "out"
    assert main(["run", _write(tmp_path, _jump_doc()), "--out", str(out)]) == EXIT_OK
    (c,) = json.loads((out / "report.json").read_text())["comparisons"]
    assert c["verdict"] == "certified_ge"
    assert c["oracle_x"] == pytest.approx(0.75, abs=1e-12)
    assert c["oracle_y"] == pytest.approx(0.51, abs=1e-12)


def test_inconclusive_exit_code(tmp_path):
    doc = _quick_demo(theorems=["theorem10"])
    doc["montecarlo"]["enabled"] = False
    assert main(["run", _write(tmp_path, doc), "--out", str(tmp_path / "o")]) == EXIT_INCONCLUSIVE


def test_bad_row_sum_names_pointer(tmp_path, capsys):
    doc = _quick_demo()
    doc["specX"]["rates"]["Q"][0][0] = -1.5
    assert main(["run", _write(tmp_path, doc), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "/specX/rates/Q/0" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_schema_errors_name_pointers(tmp_path, capsys):
    doc = _quick_demo(version="v0")
    del doc["specX"]["rates"]["Q"]
    assert main(["run", _write(tmp_path, doc)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "/version" in err and "/specX/rates" in err


@pytest.mark.parametrize("content", [None, "{not json"])
def test_unreadable_scenario(tmp_path, capsys, content):
    path = tmp_path / "s.json"
    if content is not None:
        path.write_text(content)
    assert main(["run", str(path)]) == EXIT_INVALID
    assert capsys.readouterr().err.startswith("error:")


def test_report_is_byte_stable_across_workers(tmp_path):
    path = _write(tmp_path, _quick_demo())
    texts = []
    for workers in (1, 3):
        out = tmp_path / f"w{workers}"
        assert main(["run", path, "--out", str(out), "--workers", str(workers)]) == EXIT_OK
        texts.append({name: (out / name).read_bytes() for name in REPORT_FILES})
    assert texts[0] == texts[1]


def test_overrides_change_report(tmp_path):
    out = tmp_path / "o"
    main(["run", _write(tmp_path, _quick_demo()), "--out", str(out), "--grid-steps", "64", "--seed", "9",
          "--paths", "5000"])
    report = json.loads((out / "report.json").read_text())
    assert report["grid_steps"] == 64 and report["seed"] == 9
    assert report["montecarlo"]["paths"] == 5000


def test_atomic_write_leaves_no_temporaries(tmp_path):
    result = run_scenario(parse_scenario(_quick_demo()))
    result.write(str(tmp_path))
    result.write(str(tmp_path))
    assert set(os.listdir(tmp_path)) == REPORT_FILES


def test_schema_and_demo_commands(capsys):
    assert main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    jsonschema.Draft202012Validator.check_schema(schema)
    assert main(["demo"]) == 0
    jsonschema.validate(json.loads(capsys.readouterr().out), schema)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "markov_comparison", "schema"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["$schema"]
