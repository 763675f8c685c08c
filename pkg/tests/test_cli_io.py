from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slcurv import cli_io
from slcurv.cli_io import ProblemSpec, build, export_fields, parse_problem, read_fields, run_cli, write_problem
from slcurv.errors import ParseError, ValidationError
from slcurv.solver import continuity_solve


def golden_dict(data_dir):
    return json.loads((data_dir / "manufactured_c1_33.json").read_text())


def test_golden_spec_parses(data_dir):
    spec = parse_problem(data_dir / "manufactured_c1_33.json")
    assert spec.version == cli_io.VERSION
    assert spec.grid == {"nx": 33, "ny": 33}
    assert spec.delta == "auto"
    assert spec.h == {"manufactured": {"c": 1.0, "family": "radial"}}


def test_negative_delta(data_dir):
    with pytest.raises(ValidationError, match="delta"):
        parse_problem(data_dir / "negative_delta.json")


def test_h_out_of_range(data_dir):
    with pytest.raises(ValidationError, match=r"h\.table\.values\[12\]"):
        parse_problem(data_dir / "h_out_of_range.json")


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{ not json")
    with pytest.raises(ParseError):
        parse_problem(p)
    with pytest.raises(ParseError):
        parse_problem(tmp_path / "missing.json")


@pytest.mark.parametrize(
    "patch, where",
    [
        ({"version": "slcurv-problem/9"}, "version"),
        ({"grid": {"nx": 4, "ny": 9}}, "grid.nx"),
        ({"a_param": -1.0}, "a_param"),
        ({"solver": {"bogus": 1.0}}, "solver.bogus"),
        ({"phi": {"table": {"shape": [3, 3], "values": [0.0] * 9}}}, "phi.table"),
        ({"extra": 1}, "unknown"),
    ],
)
def test_validation_names_location(data_dir, patch, where):
    d = golden_dict(data_dir)
    d.update(patch)
    with pytest.raises(ValidationError, match=where.replace(".", r"\.")):
        cli_io.spec_from_dict(d)


table_specs = st.builds(
    lambda nx, ny, hval, delta, a, seed, tol: ProblemSpec(
        n=2,
        domain={"xmin": -1.0, "xmax": 1.5, "ymin": 0.0, "ymax": 2.0},
        grid={"nx": nx, "ny": ny},
        delta=delta,
        a_param=a,
        h={"table": {"shape": [nx, ny], "values": [hval] * (nx * ny)}},
        phi={"constant": 0.25},
        solver={"tol_residual": tol},
        seed=seed,
    ),
    st.integers(5, 8),
    st.integers(5, 8),
    st.floats(0.6, 3.0),
    st.one_of(st.just("auto"), st.floats(0.01, 0.5)),
    st.one_of(st.just("auto"), st.floats(0.1, 100.0)),
    st.integers(0, 2**31),
    st.floats(1e-12, 1e-6),
)


@given(table_specs)
def test_round_trip(tmp_path_factory, spec):
    path = tmp_path_factory.mktemp("rt") / "spec.json"
    write_problem(spec, path)
    assert parse_problem(path) == spec


def test_export_layout_and_reload(tmp_path):
    spec = ProblemSpec(
        n=2,
        domain={"xmin": -1.0, "xmax": 1.0, "ymin": -1.0, "ymax": 1.0},
        grid={"nx": 17, "ny": 17},
        delta="auto",
        a_param=5.0,
        h={"manufactured": {"family": "radial", "c": 1.0}},
        phi={"manufactured": {}},
    )
    setup = build(spec)
    u, _ = continuity_solve(setup.problem, setup.config, setup.params)
    path = tmp_path / "f.csv"
    export_fields(u, setup.problem, setup.params, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "x,y,u,ux,uy,kappa1,kappa2,F,residual"
    assert len(lines) == 1 + 15 * 15
    cols = read_fields(path)
    assert cols["u"].tobytes() == u.values[1:-1, 1:-1].ravel().tobytes()
    assert np.all(cols["kappa1"] >= cols["kappa2"])
    assert np.all(np.isfinite(np.column_stack(list(cols.values()))))
    # row-major: y varies fastest
    assert cols["y"][1] > cols["y"][0] and cols["x"][1] == cols["x"][0]
    path2 = tmp_path / "g.csv"
    export_fields(u, setup.problem, setup.params, path2)
    assert path2.read_bytes() == raw


def test_cli_solve_golden(data_dir, tmp_path):
    out = tmp_path / "fields.csv"
    rep = tmp_path / "report.json"
    assert run_cli(["solve", str(data_dir / "manufactured_c1_33.json"), "--out", str(out), "--report", str(rep)]) == 0
    report = json.loads(rep.read_text())
    assert report["solve_report"]["accepted"] is True
    assert len(out.read_text().splitlines()) == 1 + 31 * 31


def test_cli_input_errors(data_dir, capsys):
    assert run_cli(["solve", str(data_dir / "h_out_of_range.json")]) == 2
    assert "input error" in capsys.readouterr().err
    assert run_cli(["solve", str(data_dir / "negative_delta.json")]) == 2
    assert run_cli(["no-such-command"]) == 2
    assert run_cli(["calibrate-A", "--delta", "abc"]) == 2


def test_cli_verify_cone(tmp_path):
    out = tmp_path / "vc.json"
    assert run_cli(["verify-cone", "--n", "2", "--delta", "0.1", "--samples", "100000", "--seed", "7", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report[0]["property_violations"] == [0, 0, 0, 0]
    assert report[0]["convexity_violations"] == 0


def test_cli_small_commands(tmp_path):
    cal = tmp_path / "cal.json"
    assert run_cli(["calibrate-A", "--n", "3", "--delta", "0.1", "--out", str(cal)]) == 0
    assert math.isfinite(json.loads(cal.read_text())["a_param"])
    lin = tmp_path / "lin.json"
    assert run_cli(["check-linearization", "--n", "2", "--samples", "20", "--out", str(lin)]) == 0
    assert json.loads(lin.read_text())["worst_relative_error"] <= 1e-5


def test_cli_convergence_sphere(tmp_path):
    out = tmp_path / "conv.csv"
    assert run_cli(["convergence-study", "--family", "sphere", "--grids", "17,33,65", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "nodes,h,max_error,order"
    assert len(rows) == 4


def test_cli_compare_principle(data_dir, tmp_path):
    out = tmp_path / "cmp.json"
    assert run_cli(["compare-principle", str(data_dir / "manufactured_c1_33.json"), "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["upper_ok"] and res["lower_ok"]


def test_cli_exports_deterministic(data_dir, tmp_path):
    outs = []
    for k in range(2):
        f = tmp_path / f"f{k}.csv"
        r = tmp_path / f"r{k}.json"
        run_cli(["solve", str(data_dir / "manufactured_c1_33.json"), "--out", str(f), "--report", str(r)])
        outs.append((f.read_bytes(), r.read_bytes()))
    assert outs[0] == outs[1]
