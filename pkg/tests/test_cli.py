import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from stablemr.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

GOLDEN = Path(__file__).parent / "golden"

BOUNDS = {
    "constraint": {"variant": "low_rank", "n1": 4, "n2": 4, "r": 1},
    "ensemble": {"model": "unstructured", "dist": "uniform", "n1": 4, "n2": 4, "R": 1.0},
    "query": {"kind": "uniform_on_cone"},
    "grid": {"m": [15, 16, 17, 18], "delta": [1e-4], "eps": [0.5]},
}
SIMULATE = {
    "constraint": {"variant": "sym_low_rank", "n": 2, "r": 1},
    "ensemble": {"model": "sym_rank1", "dist": "uniform", "n1": 2, "n2": 2, "R": 1.0, "m": 2},
    "query": {"kind": "uniform_on_cone", "delta": 0.02, "eps": 0.2},
    "search": {"restarts": 4, "max_iters": 100},
    "grid": {"m": [2, 3]},
    "trials": 6,
    "seed": 5,
}
RECOVER = {
    "constraint": {"variant": "low_rank", "n1": 3, "n2": 3, "r": 1},
    "ensemble": {"model": "unstructured", "dist": "gaussian", "n1": 3, "n2": 3, "sigma": 1.0, "m": 24},
    "seed": 3,
}


def _write(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return str(p)


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _run(tmp_path, command, doc, *extra):
    out = tmp_path / "out"
    code = main([command, "--config", _write(tmp_path, doc), "--out", str(out), *extra])
    return code, out


def _golden(name):
    return (GOLDEN / f"{name}_header.csv").read_bytes()


def test_bounds_thresholds_and_golden_header(tmp_path):
    code, out = _run(tmp_path, "bounds", BOUNDS)
    assert code == EXIT_OK
    raw = (out / "bounds.csv").read_bytes()
    assert raw.startswith(_golden("bounds"))
    rows = _rows(out / "bounds.csv")
    valid = {int(r["m"]): r["valid"] == "true" for r in rows}
    # first valid m is the tabulated threshold 2 (n1 + n2) r + 1
    assert valid == {15: False, 16: False, 17: True, 18: True}
    assert "sample complexity" in rows[0]["violations"]


def test_bounds_empty_grid_is_header_only(tmp_path):
    doc = dict(BOUNDS, grid={"m": [], "delta": [1e-4], "eps": [0.5]})
    code, out = _run(tmp_path, "bounds", doc)
    assert code == EXIT_OK
    assert (out / "bounds.csv").read_bytes() == _golden("bounds")


def test_unknown_variant_exits_2(tmp_path, capsys):
    doc = dict(BOUNDS, constraint={"variant": "banded", "n1": 4, "n2": 4})
    code, _ = _run(tmp_path, "bounds", doc)
    assert code == EXIT_CONFIG
    assert "variant" in capsys.readouterr().err


@pytest.mark.parametrize("patch,field", [
    ({"colour": "red"}, "colour"),
    ({"query": {"kind": "uniform_on_cone", "dleta": 0.1}}, "query.dleta"),
    ({"ensemble": {"model": "rank2", "dist": "uniform", "n1": 2, "n2": 2}}, "ensemble.model"),
    ({"seed": -1}, "seed"),
])
def test_config_errors_name_the_field(tmp_path, capsys, patch, field):
    code, _ = _run(tmp_path, "bounds", BOUNDS | patch)
    assert code == EXIT_CONFIG
    assert field in capsys.readouterr().err


def test_missing_section_exits_2(tmp_path, capsys):
    doc = {k: v for k, v in BOUNDS.items() if k != "query"}
    code, _ = _run(tmp_path, "bounds", doc)
    assert code == EXIT_CONFIG
    assert "query" in capsys.readouterr().err


def test_concentration_rows(tmp_path):
    doc = {"concentration": {"model": "unstructured", "dist": "uniform", "n1": 1, "n2": 2, "params": 1.0},
           "grid": {"delta": [0.1], "eps": [1.0]}, "trials": 100_000, "seed": 1}
    code, out = _run(tmp_path, "concentration", doc)
    assert code == EXIT_OK
    assert (out / "concentration.csv").read_bytes().startswith(_golden("concentration"))
    (row,) = _rows(out / "concentration.csv")
    assert float(row["bound"]) == pytest.approx(0.12732, abs=1e-5)
    # the exact value 0.12711 sits only 2e-4 under the bound, so dominance is checked with the CI
    assert float(row["ci_lower"]) <= 0.12711 <= float(row["ci_upper"])
    assert row["pass"] == "true"


def test_concentration_bound_only_and_row_errors(tmp_path):
    doc = {"concentration": {"model": "rank1", "dist": "gaussian", "n1": 2, "n2": 2, "params": [1.0, 1.0], "E": 1.0},
           "grid": {"delta": [0.05], "eps": [0.5, 2.0]}}
    code, out = _run(tmp_path, "concentration", doc)
    assert code == EXIT_OK
    ok, bad = _rows(out / "concentration.csv")
    assert ok["bound"] and not ok["estimate"] and not ok["error"]
    assert "eps <= E" in bad["error"] and not bad["bound"]


def _records(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines()]


def _strip(recs):
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in recs]


def test_simulate_outputs_and_thread_invariance(tmp_path):
    code, out = _run(tmp_path, "simulate", SIMULATE, "--threads", "1")
    assert code == EXIT_OK
    assert (out / "summary.csv").read_bytes().startswith(_golden("summary"))
    rows = _rows(out / "summary.csv")
    assert [int(r["m"]) for r in rows] == [2, 3]
    for r in rows:
        assert 0 <= float(r["ci_lower"]) <= float(r["rate"]) <= float(r["ci_upper"]) <= 1
        assert r["p_fail"]
    first = _records(out / "records.jsonl")
    assert len(first) == 12 and all(list(r)[-1] == "wall_time" for r in first)
    out4 = tmp_path / "out4"
    code = main(["simulate", "--config", _write(tmp_path, SIMULATE), "--out", str(out4), "--threads", "4"])
    assert code == EXIT_OK
    assert _strip(_records(out4 / "records.jsonl")) == _strip(first)


def test_simulate_resume_skips_done_trials(tmp_path):
    code, out = _run(tmp_path, "simulate", SIMULATE)
    assert code == EXIT_OK
    full = _records(out / "records.jsonl")
    path = out / "records.jsonl"
    # keep the first three records and a torn fourth line
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:3]) + "\n" + lines[3][:20])
    code = main(["simulate", "--config", _write(tmp_path, SIMULATE), "--out", str(out), "--resume"])
    assert code == EXIT_OK
    again = _records(path)
    assert _strip(again) == _strip(full)
    # the kept records were not rerun
    assert [r["wall_time"] for r in again[:3]] == [r["wall_time"] for r in full[:3]]


def test_simulate_seed_flag_overrides(tmp_path):
    _, a = _run(tmp_path, "simulate", SIMULATE, "--seed", "9", "--trials", "2")
    recs = _records(a / "records.jsonl")
    assert len(recs) == 4 and all(r["seed"][0] == 9 for r in recs)


def test_recover_noiseless(tmp_path):
    code, out = _run(tmp_path, "recover", RECOVER)
    assert code == EXIT_OK
    assert (out / "recover.csv").read_bytes().startswith(_golden("recover"))
    doc = json.loads((out / "estimate.json").read_text())
    assert doc["rel_error"] <= 1e-6


def test_recover_zero_data(tmp_path):
    code, out = _run(tmp_path, "recover", RECOVER | {"recover": {"y": [0.0] * 24}})
    assert code == EXIT_OK
    assert np.all(np.array(json.loads((out / "estimate.json").read_text())["estimate"]) == 0)


def test_recover_dimension_mismatch_exits_2(tmp_path, capsys):
    code, _ = _run(tmp_path, "recover", RECOVER | {"recover": {"y": [0.0] * 5}})
    assert code == EXIT_CONFIG
    assert "recover.y" in capsys.readouterr().err


def test_runtime_failure_exits_1(tmp_path, capsys):
    # the grid oracle has no parametrisation for 3x3 rank-2 differences
    doc = {
        "constraint": {"variant": "low_rank", "n1": 3, "n2": 3, "r": 1},
        "ensemble": {"model": "unstructured", "dist": "uniform", "n1": 3, "n2": 3, "R": 1.0, "m": 4},
        "query": {"kind": "uniform_on_ball", "delta": 0.01, "eps": 0.5},
        "detector": "brute_force", "trials": 1,
    }
    code, _ = _run(tmp_path, "simulate", doc)
    assert code == EXIT_RUNTIME
    assert capsys.readouterr().err.startswith("error:")


def test_unparseable_config_exits_2(tmp_path):
    cfg = tmp_path / "broken.yaml"
    cfg.write_text("constraint: [unterminated", encoding="utf-8")
    assert main(["bounds", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_threads_from_environment(tmp_path, monkeypatch):
    from stablemr.cli import _default_threads
    monkeypatch.setenv("STABLEMR_THREADS", "3")
    assert _default_threads() == 3
    code, out = _run(tmp_path, "simulate", SIMULATE, "--trials", "2")
    assert code == EXIT_OK
    monkeypatch.delenv("STABLEMR_THREADS")
    plain = tmp_path / "plain"
    assert main(["simulate", "--config", _write(tmp_path, SIMULATE), "--out", str(plain), "--trials", "2"]) == EXIT_OK
    assert _strip(_records(out / "records.jsonl")) == _strip(_records(plain / "records.jsonl"))


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, BOUNDS)
    proc = subprocess.run([sys.executable, "-m", "stablemr", "bounds", "--config", cfg, "--out", str(tmp_path)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "bounds.csv").exists()
