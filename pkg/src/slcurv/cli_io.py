"""Problem files, field/report exports and the ``slcurv`` command line.

Problem files are JSON objects tagged ``"version": "slcurv-problem/1"``.
The domain is an axis-aligned box; node tables are row-major flat arrays
over the ``(nx, ny)`` node grid with a declared ``shape``.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import cone, harness
from .errors import HomotopyStalled, ParseError, PhaseOutOfRange, SlcurvError, ValidationError
from .geometry import OperatorParams
from .grid import Grid2D, GridField
from .linearize import admissible_point, fd_validate
from .solver import Problem, SolverConfig, continuity_solve, evaluate

log = logging.getLogger(__name__)

VERSION = "slcurv-problem/1"
FIELD_COLUMNS = ("x", "y", "u", "ux", "uy", "kappa1", "kappa2", "F", "residual")
SANDWICH_FACTOR = 10.0
ORDER_RANGE = (1.7, 2.3)
LINEARIZATION_TOL = 1e-5


@dataclass
class ProblemSpec:
    n: int
    domain: dict
    grid: dict
    delta: Any  # float or "auto"
    a_param: Any  # float or "auto"
    h: dict
    phi: dict
    subsolution: Optional[dict] = None
    solver: dict = field(default_factory=dict)
    seed: int = 0
    version: str = VERSION

    def to_dict(self):
        return asdict(self)


def _fail(where, message):
    raise ValidationError(f"{where}: {message}")


def _number(value, where, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        _fail(where, f"expected a finite number, got {value!r}")
    if positive and not value > 0:
        _fail(where, f"must be positive, got {value!r}")
    return float(value)


def _table(src, where, shape):
    if not isinstance(src, dict) or "shape" not in src or "values" not in src:
        _fail(where, "table needs 'shape' and 'values'")
    if list(src["shape"]) != list(shape):
        _fail(where, f"declared shape {src['shape']} does not match grid {list(shape)}")
    values = src["values"]
    if not isinstance(values, list) or len(values) != shape[0] * shape[1]:
        _fail(where, f"expected {shape[0] * shape[1]} values")
    arr = np.empty(len(values))
    for k, v in enumerate(values):
        arr[k] = _number(v, f"{where}.values[{k}]")
    return arr.reshape(shape)


def _manufactured_args(src, where):
    fam = src.get("family", "radial")
    if fam == "radial":
        return {"family": "radial", "c": _number(src.get("c", 1.0), f"{where}.c", positive=True)}
    if fam == "sphere":
        return {"family": "sphere",
                "radius": _number(src.get("radius", 2.0), f"{where}.radius", positive=True)}
    _fail(f"{where}.family", f"unknown family {fam!r}")


def validate_spec(spec: ProblemSpec):
    """Check every invariant; raises ValidationError naming the first failure."""
    if spec.version != VERSION:
        _fail("version", f"unrecognised version {spec.version!r}, expected {VERSION!r}")
    if spec.n not in (2, 3) or isinstance(spec.n, bool):
        _fail("n", f"must be 2 or 3, got {spec.n!r}")
    for key in ("xmin", "xmax", "ymin", "ymax"):
        if key not in spec.domain:
            _fail(f"domain.{key}", "missing")
        _number(spec.domain[key], f"domain.{key}")
    if not (spec.domain["xmax"] > spec.domain["xmin"] and spec.domain["ymax"] > spec.domain["ymin"]):
        _fail("domain", "box must have xmax > xmin and ymax > ymin")
    for key in ("nx", "ny"):
        v = spec.grid.get(key)
        if not isinstance(v, int) or isinstance(v, bool) or v < 5:
            _fail(f"grid.{key}", f"must be an integer >= 5, got {v!r}")
    if spec.delta != "auto":
        d = _number(spec.delta, "delta")
        if not 0.0 < d < math.pi / 2:
            _fail("delta", f"phase margin delta={d!r} must lie in (0, pi/2)")
    if spec.a_param != "auto":
        _number(spec.a_param, "a_param", positive=True)
    if not isinstance(spec.seed, int) or isinstance(spec.seed, bool):
        _fail("seed", f"must be an integer, got {spec.seed!r}")
    known = {f.name for f in fields(SolverConfig)}
    for key, value in spec.solver.items():
        if key not in known:
            _fail(f"solver.{key}", "unknown setting")
        _number(value, f"solver.{key}", positive=True)
    try:
        SolverConfig(**spec.solver)
    except ValidationError as exc:
        _fail("solver", str(exc))

    shape = (spec.grid["nx"], spec.grid["ny"])
    if set(spec.h) == {"manufactured"}:
        _manufactured_args(spec.h["manufactured"], "h.manufactured")
    elif set(spec.h) == {"table"}:
        h = _table(spec.h["table"], "h.table", shape)
        lo = (spec.n - 2) * math.pi / 2 + (0.0 if spec.delta == "auto" else spec.delta)
        hi = spec.n * math.pi / 2
        flat = h.ravel()
        # with delta "auto" the margin is derived from min h, so only h > sigma0 is needed
        ok_lo = flat > lo if spec.delta == "auto" else flat >= lo
        bad = np.flatnonzero(~(ok_lo & (flat < hi)))
        if bad.size:
            k = int(bad[0])
            _fail(f"h.table.values[{k}]",
                  f"h={float(flat[k])!r} outside the admissible phase range [{lo!r}, {hi!r})")
    else:
        _fail("h", "expected exactly one of 'manufactured' or 'table'")

    if set(spec.phi) == {"manufactured"}:
        if "manufactured" not in spec.h:
            _fail("phi.manufactured", "requires a manufactured h")
    elif set(spec.phi) == {"constant"}:
        _number(spec.phi["constant"], "phi.constant")
    elif set(spec.phi) == {"table"}:
        _table(spec.phi["table"], "phi.table", shape)
    else:
        _fail("phi", "expected exactly one of 'manufactured', 'constant' or 'table'")

    if spec.subsolution is not None:
        if set(spec.subsolution) == {"manufactured"}:
            if "manufactured" not in spec.h:
                _fail("subsolution.manufactured", "requires a manufactured h")
        elif set(spec.subsolution) == {"table"}:
            _table(spec.subsolution["table"], "subsolution.table", shape)
        else:
            _fail("subsolution", "expected 'manufactured' or 'table'")
    return spec


def spec_from_dict(data) -> ProblemSpec:
    if not isinstance(data, dict):
        raise ParseError("problem file must hold a JSON object")
    names = {f.name for f in fields(ProblemSpec)}
    unknown = set(data) - names
    if unknown:
        raise ValidationError(f"unknown top-level key(s): {sorted(unknown)}")
    missing = {"n", "domain", "grid", "delta", "a_param", "h", "phi", "version"} - set(data)
    if missing:
        raise ValidationError(f"missing key(s): {sorted(missing)}")
    for key in ("domain", "grid", "h", "phi"):
        if not isinstance(data[key], dict):
            raise ValidationError(f"{key}: expected an object")
    spec = ProblemSpec(**{k: data[k] for k in data})
    spec.solver = dict(spec.solver or {})
    return validate_spec(spec)


def parse_problem(path) -> ProblemSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return spec_from_dict(data)


def write_problem(spec: ProblemSpec, path):
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass
class Setup:
    problem: Problem
    params: OperatorParams
    config: SolverConfig
    manufactured: Optional[harness.ManufacturedProblem] = None
    calibration: Optional[cone.CalibrationResult] = None


def build(spec: ProblemSpec, tol=None) -> Setup:
    """Turn a validated spec into solver inputs (grid solves need n = 2)."""
    if spec.n != 2:
        raise ValidationError("n: grid solves are two-dimensional (n = 2)")
    d = spec.domain
    grid = Grid2D(d["xmin"], d["xmax"], d["ymin"], d["ymax"], spec.grid["nx"], spec.grid["ny"])
    shape = grid.shape
    mp = None
    if "manufactured" in spec.h:
        mp = harness.manufactured(grid, **_manufactured_args(spec.h["manufactured"], "h"))
        h = mp.h_field.values
    else:
        h = _table(spec.h["table"], "h.table", shape)
    if "manufactured" in spec.phi:
        phi = mp.phi
    elif "constant" in spec.phi:
        phi = np.full(shape, float(spec.phi["constant"]))
    else:
        phi = _table(spec.phi["table"], "phi.table", shape)
    sub = None
    if spec.subsolution is not None:
        sub = mp.u_star.values if "manufactured" in spec.subsolution else _table(
            spec.subsolution["table"], "subsolution.table", shape)

    sigma0 = (spec.n - 2) * math.pi / 2
    delta = (float(np.min(h)) - sigma0) / 2 if spec.delta == "auto" else float(spec.delta)
    if not 0.0 < delta < math.pi / 2:
        raise ValidationError(f"delta: derived margin {delta!r} outside (0, pi/2)")
    calibration = None
    if spec.a_param == "auto":
        calibration = cone.calibrate_A(spec.n, delta, 1000, spec.seed)
        a_param = calibration.a_param
    else:
        a_param = float(spec.a_param)
    params = OperatorParams(spec.n, delta, a_param)
    overrides = dict(spec.solver)
    if tol is not None:
        overrides["tol_residual"] = tol
    config = SolverConfig(**overrides)
    problem = Problem(grid, h, phi, delta, sub)
    try:
        problem.validate(params)
    except PhaseOutOfRange as exc:
        raise ValidationError(f"h: {exc}") from exc
    return Setup(problem, params, config, mp, calibration)


def _fmt(v):
    return format(float(v), ".17g")


def export_fields(u: GridField, problem: Problem, params: OperatorParams, path, t=1.0):
    """CSV of interior nodes, row-major, 17 significant digits, LF endings."""
    state = evaluate(u, problem, t, params)
    X, Y = problem.grid.mesh()
    cols = [
        X[1:-1, 1:-1].ravel(),
        Y[1:-1, 1:-1].ravel(),
        u.values[1:-1, 1:-1].ravel(),
        state.grad[:, 0],
        state.grad[:, 1],
        state.geom.kappa[:, 0],
        state.geom.kappa[:, 1],
        state.phase,
        state.residual,
    ]
    lines = [",".join(FIELD_COLUMNS)]
    for row in zip(*cols):
        lines.append(",".join(_fmt(v) for v in row))
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise SlcurvError(f"cannot write {path}: {exc}") from exc


def read_fields(path):
    """Load an export back into a dict of column arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.array([[float(v) for v in line.split(",")] for line in fh if line.strip()])
    return {name: data[:, k] for k, name in enumerate(header)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj


def dump_json(obj, path=None):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from exc


# subcommands ---------------------------------------------------------------


def cmd_solve(args):
    setup = build(parse_problem(args.problem), tol=args.tol)
    try:
        u, report = continuity_solve(setup.problem, setup.config, setup.params)
        ok = True
    except HomotopyStalled as exc:
        u, report, ok = exc.u, exc.report, False
    payload = {
        "solve_report": report,
        "params": {"n": setup.params.n, "delta": setup.params.delta, "a_param": setup.params.a_param},
        "calibration": setup.calibration,
    }
    if setup.manufactured is not None and ok:
        payload["max_error_vs_manufactured"] = float(
            np.max(np.abs(u.values - setup.manufactured.u_star.values)))
    dump_json(payload, args.report)
    if args.out and u is not None:
        export_fields(u, setup.problem, setup.params, args.out)
    return 0 if ok else 1


def cmd_verify_cone(args):
    cases = harness.lemma_suites(args.n, _float_list(args.delta), args.samples, args.seed)
    payload = [
        {
            "n": c.n,
            "delta": c.delta,
            "samples": c.samples,
            "property_violations": c.violations,
            "convexity_violations": c.convexity_violations,
            "calibrated_a": c.calibration.a_param,
            "extremes": c.extremes,
            "passed": c.passed,
        }
        for c in cases
    ]
    dump_json(payload, args.out)
    return 0 if all(c.passed for c in cases) else 1


def cmd_calibrate(args):
    deltas = _float_list(args.delta)
    if len(deltas) != 1:
        raise ValidationError("calibrate-A takes a single --delta")
    result = cone.calibrate_A(args.n, deltas[0], args.samples, args.seed)
    dump_json(result, args.out)
    return 0


def cmd_check_linearization(args):
    deltas = _float_list(args.delta)
    if len(deltas) != 1:
        raise ValidationError("check-linearization takes a single --delta")
    a_param = args.a or cone.calibrate_A(args.n, deltas[0], 1000, args.seed).a_param
    params = OperatorParams(args.n, deltas[0], a_param)
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for k in range(args.samples):
        geom = admissible_point(args.n, params, rng)
        worst = max(worst, fd_validate(geom, params, trials=10, seed=[args.seed, k]))
    ok = worst <= LINEARIZATION_TOL
    dump_json({"points": args.samples, "a_param": a_param, "worst_relative_error": worst,
               "tolerance": LINEARIZATION_TOL, "passed": ok}, args.out)
    return 0 if ok else 1


def cmd_convergence(args):
    grids = _int_list(args.grids)
    a_param = args.a
    if a_param is None:
        mp = harness.manufactured(Grid2D.square(grids[0]), args.family, c=args.c, radius=args.radius)
        a_param = cone.calibrate_A(2, mp.delta_used / 2, 1000, args.seed).a_param
    config = SolverConfig(tol_residual=args.tol) if args.tol else SolverConfig()
    study = harness.convergence_study(args.c, grids, config, a_param, family=args.family,
                                      radius=args.radius)
    lines = ["nodes,h,max_error,order"]
    for r in study.rows:
        lines.append(",".join([str(r.nodes), _fmt(r.h), _fmt(r.max_error),
                               "" if r.order is None else _fmt(r.order)]))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write(text)
    sys.stdout.write(text)
    errors = [r.max_error for r in study.rows]
    ok = all(ORDER_RANGE[0] <= p <= ORDER_RANGE[1] for p in study.orders) and errors[-1] < errors[0]
    return 0 if ok else 1


def sandwich_check(u, problem: Problem):
    """Node-wise comparison against the harmonic extension and optional subsolution."""
    grid = problem.grid
    ubar = harness.harmonic_extension(problem.phi, grid).values
    slack = SANDWICH_FACTOR * max(grid.hx, grid.hy) ** 2 * float(np.max(np.abs(u.values)))
    upper = float(np.max(u.values - ubar))
    out = {"slack": slack, "max_u_minus_ubar": upper, "upper_ok": upper <= slack}
    if problem.subsolution is not None:
        lower = float(np.max(problem.subsolution - u.values))
        out.update({"max_sub_minus_u": lower, "lower_ok": lower <= slack})
    out["passed"] = out["upper_ok"] and out.get("lower_ok", True)
    return out


def cmd_compare(args):
    setup = build(parse_problem(args.problem), tol=args.tol)
    try:
        u, _ = continuity_solve(setup.problem, setup.config, setup.params)
    except HomotopyStalled as exc:
        dump_json({"passed": False, "failure": str(exc)}, args.out)
        return 1
    result = sandwich_check(u, setup.problem)
    dump_json(result, args.out)
    return 0 if result["passed"] else 1


def make_parser():
    parser = argparse.ArgumentParser(prog="slcurv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="continuation solve of a problem file")
    p.add_argument("problem")
    p.add_argument("--out", help="field export (CSV)")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify-cone", help="structural-property suite over sampled curvatures")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--delta", default="0.1", help="one value or a comma-separated list")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_cone)

    p = sub.add_parser("calibrate-A", help="smallest sampled-concave exponent A")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--delta", default="0.1")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("check-linearization", help="analytic vs finite-difference derivatives")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--delta", default="0.1")
    p.add_argument("--samples", type=int, default=100, help="number of random points")
    p.add_argument("--a", type=float, help="exponent A (default: calibrated)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_check_linearization)

    p = sub.add_parser("convergence-study", help="manufactured-solution refinement study")
    p.add_argument("--grids", default="17,33,65")
    p.add_argument("--family", choices=("radial", "sphere"), default="radial")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--a", type=float, help="exponent A (default: calibrated)")
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("compare-principle", help="sandwich check against the harmonic extension")
    p.add_argument("problem")
    p.add_argument("--tol", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def run_cli(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except SlcurvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())
