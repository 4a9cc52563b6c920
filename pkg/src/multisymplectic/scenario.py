"""Scenario configuration and task runners behind the command line tool.

A scenario is one JSON document validated against :data:`CONFIG_SCHEMA`
(unknown keys are rejected).  Each task writes deterministic CSV files and
a ``summary.json`` into the output directory.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

from . import field_solver as fs
from .algebra import exterior_derivative
from .dedonder_weyl import SingularityError, build_hamiltonian_nvector, defining_relation_residual, random_gauge
from .expr import ExprError, PotentialExpr, parse_potential, potential_from_expr
from .hamilton_jacobi import (
    DomainBox,
    HJPotential,
    PhaseSection,
    SectionJacobian,
    check_theorem2_conditions,
    foliation_integrability_check,
    geometric_form_check,
    hj_residual,
    section_from_potential,
    translate_fiber,
)
from .phase_space import ChartPoint, build_omega, nondegeneracy_check, omega_form, theta_field
from .theories import BUILTIN_THEORIES, Theory, get_theory, scalar_theory

TASKS = ("algebra-check", "verify-xh", "integrate", "hj-check", "foliation-check")

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_expr_list = {"type": "array", "items": {"type": "string"}, "minItems": 1}

CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["theory"],
    "properties": {
        "task": {"enum": list(TASKS)},
        "theory": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "params": {"type": "object", "additionalProperties": _num},
                "potential": {"type": "string"},
                "n": _pos_int,
                "N": _pos_int,
                "signature": {"type": "array", "items": {"enum": [1, -1, 1.0, -1.0]}},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["T"],
            "properties": {
                "Nx": {"type": "integer", "minimum": 8},
                "length": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "dt_over_dx": {"type": "number", "exclusiveMinimum": 0},
                "T": {"type": "number", "minimum": 0},
                "cfl": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "enforce_cfl": {"type": "boolean"},
                "sample_every": _pos_int,
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["plane_wave", "standing_wave", "gaussian", "zero", "point"]},
                "amplitude": _num,
                "mode": {"type": "integer"},
                "width": {"type": "number", "exclusiveMinimum": 0},
                "mass": {"type": "number", "minimum": 0},
                "q0": _num,
                "p0": _num,
            },
        },
        "samples": _pos_int,
        "gauges": _pos_int,
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "hj": {
            "type": "object",
            "additionalProperties": False,
            "required": ["domain"],
            "properties": {
                "S": _expr_list,
                "T": {"type": "array", "items": _expr_list, "minItems": 1},
                "T0": {"type": "string"},
                "fiber_shift": _expr_list,
                "require": {"type": "array", "items": {"enum": ["T1", "T2", "T3", "T4"]}},
                "domain": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["lower", "upper"],
                    "properties": {
                        "lower": {"type": "array", "items": _num},
                        "upper": {"type": "array", "items": _num},
                        "points": _pos_int,
                    },
                },
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid scenario configuration; reported before any computation."""


@dataclass
class ScenarioConfig:
    task: str
    theory: Theory
    raw: dict
    seed: int = 0
    samples: int = 100
    gauges: int = 10
    output: Path = Path("out")
    tolerance: float | None = None
    grid: dict | None = None
    initial: dict = field(default_factory=dict)
    hj: dict | None = None


@dataclass
class ScenarioResult:
    status: int
    summary: dict
    artifacts: list[Path]


# -- configuration -----------------------------------------------------------

def _build_theory(spec: dict) -> Theory:
    name = spec.get("name")
    params = dict(spec.get("params", {}))
    if "potential" in spec:
        n = spec.get("n")
        N = spec.get("N", 1)
        if n is None:
            raise ConfigError("theory.n is required with a custom potential")
        expr = parse_potential(spec["potential"], n, N)
        pot = potential_from_expr(expr, n, N)
        return scalar_theory(name or "custom", n, N, pot, spec.get("signature"), params)
    if name is None:
        raise ConfigError("theory needs either a built-in name or a potential expression")
    if name not in BUILTIN_THEORIES:
        raise ConfigError(f"unknown theory {name!r}; built-ins are {sorted(BUILTIN_THEORIES)}")
    extra = set(spec) - {"name", "params"}
    if extra:
        raise ConfigError(f"theory keys {sorted(extra)} only apply to custom potentials")
    try:
        return get_theory(name, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name!r}: {exc}") from None


def load_config(
    raw: dict | str | Path,
    task: str | None = None,
    seed: int | None = None,
    output: str | Path | None = None,
) -> ScenarioConfig:
    """Validate a scenario and resolve the theory; command line values win over the file."""
    if isinstance(raw, (str, Path)):
        try:
            raw = json.loads(Path(raw).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None

    cfg_task = raw.get("task")
    if task is not None and cfg_task is not None and task != cfg_task:
        raise ConfigError(f"command line task {task!r} differs from config task {cfg_task!r}")
    task = task or cfg_task
    if task not in TASKS:
        raise ConfigError(f"task must be one of {list(TASKS)}")
    try:
        theory = _build_theory(raw["theory"])
    except ExprError as exc:
        raise ConfigError(f"theory.potential: {exc}") from None

    n, N = theory.spec.n, theory.spec.N
    if task == "integrate":
        if "grid" not in raw:
            raise ConfigError("integrate requires a grid section")
        if N != 1 or n not in (1, 2):
            raise ConfigError("integrate supports a single field with n = 1 (mechanics) or n = 2")
        g = raw["grid"]
        if n == 2 and "Nx" not in g:
            raise ConfigError("grid.Nx is required for field runs")
        if n == 1 and "dt" not in g:
            raise ConfigError("grid.dt is required for mechanics runs")
        _make_grid(theory, g)
        kind = raw.get("initial", {}).get("kind")
        if n == 1 and kind not in (None, "point"):
            raise ConfigError("mechanics runs take initial.kind = 'point' with q0, p0")
        if n == 2 and kind == "point":
            raise ConfigError("field runs take initial.kind plane_wave, standing_wave, gaussian or zero")
    if task in ("hj-check", "foliation-check"):
        hj = raw.get("hj")
        if hj is None or not ("S" in hj or "T" in hj):
            raise ConfigError(f"{task} requires hj.S (potential) or hj.T with hj.T0 (section)")
        if "S" in hj and ("T" in hj or "T0" in hj):
            raise ConfigError("give either hj.S or hj.T/hj.T0, not both")
        if "T" in hj and "T0" not in hj:
            raise ConfigError("hj.T requires hj.T0")
        dom = hj["domain"]
        if len(dom["lower"]) != n + N or len(dom["upper"]) != n + N:
            raise ConfigError(f"hj.domain bounds need {n + N} entries (x1..x{n}, q1..q{N})")

    return ScenarioConfig(
        task=task,
        theory=theory,
        raw=raw,
        seed=int(raw.get("seed", 0) if seed is None else seed),
        samples=int(raw.get("samples", 100)),
        gauges=int(raw.get("gauges", 10)),
        output=Path(output if output is not None else raw.get("output", "out")),
        tolerance=raw.get("tolerance"),
        grid=raw.get("grid"),
        initial=dict(raw.get("initial", {})),
        hj=raw.get("hj"),
    )


# -- helpers -----------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _write_rows(path: Path, header: list[str], rows: list[list]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in r])
    return path


def _check(value: float, tol: float, below: bool = True) -> dict:
    ok = bool(value < tol) if below else bool(value > tol)
    return {"value": float(value), "threshold": tol, "condition": "<" if below else ">", "passed": ok}


# -- tasks -------------------------------------------------------------------

def _task_algebra(cfg: ScenarioConfig, rng: np.random.Generator):
    spec = cfg.theory.spec
    theta = theta_field(spec)
    omega = build_omega(spec)
    rows = []
    worst_exact = worst_fd = 0.0
    for s in range(cfg.samples):
        pt = ChartPoint.random(spec, rng, scale=2.0)
        c = pt.to_array()
        target = omega(c)
        exact = (target + exterior_derivative(theta, c, analytic=True)).max_abs()
        fd = (target + exterior_derivative(theta, c, analytic=False)).max_abs()
        worst_exact = max(worst_exact, exact)
        worst_fd = max(worst_fd, fd)
        rows.append([s, float(exact), float(fd)])
    nd = nondegeneracy_check(spec, rng=rng)
    broken = nondegeneracy_check(spec, rng=rng, omega=omega_form(spec, include_p_term=False))
    checks = {
        "omega_minus_dtheta_exact": _check(worst_exact, 1e-15),
        "omega_minus_dtheta_fd": _check(worst_fd, 1e-8),
        "nondegenerate_rank_deficit": _check(float(nd.dim - nd.rank), 0.5),
        "without_dp_term_rank_deficit": _check(float(broken.dim - broken.rank), 0.5, below=False),
    }
    path = _write_rows(cfg.output / "algebra.csv", ["sample", "residual_exact", "residual_fd"], rows)
    return checks, [path], {"rank": nd.rank, "dim": nd.dim, "min_singular_value": nd.min_singular_value}


def _task_verify_xh(cfg: ScenarioConfig, rng: np.random.Generator):
    th = cfg.theory
    spec = th.spec
    H = th.hamiltonian
    omega = omega_form(spec)
    tol = cfg.tolerance or 1e-8
    rows = []
    worst = 0.0
    worst_neg = math.inf
    for s in range(cfg.samples):
        pt = ChartPoint.random(spec, rng, scale=2.0)
        neg = defining_relation_residual(H, build_hamiltonian_nvector(H, pt), pt, include_p=False, omega=omega).residual
        worst_neg = min(worst_neg, neg)
        for g in range(cfg.gauges):
            X = build_hamiltonian_nvector(H, pt, random_gauge(spec, rng))
            r = defining_relation_residual(H, X, pt, include_p=True, omega=omega).residual
            worst = max(worst, r)
            rows.append([s, g, *map(float, pt.to_array()), float(r)])
    header = ["sample", "gauge", *spec.labels, "residual"]
    path = _write_rows(cfg.output / "defining_relation.csv", header, rows)
    checks = {
        "defining_relation": _check(worst, tol),
        "without_minus_p_term": _check(worst_neg, 0.5, below=False),
    }
    return checks, [path], {}


def _initial_state(cfg: ScenarioConfig, grid: fs.GridSpec) -> tuple[fs.FieldState, Callable | None]:
    ini = cfg.initial
    th = cfg.theory
    if grid.mechanics:
        if ini.get("kind", "point") != "point":
            raise ConfigError("mechanics runs take initial.kind = 'point' with q0, p0")
        q0, p0 = float(ini.get("q0", 1.0)), float(ini.get("p0", 0.0))
        exact = None
        if th.name == "oscillator":
            w = float(th.params.get("omega", 1.0))

            def exact(t):
                return q0 * math.cos(w * t) + p0 / w * math.sin(w * t)

        return fs.FieldState(0.0, [q0], [p0]), exact
    kind = ini.get("kind", "plane_wave")
    amp = float(ini.get("amplitude", 0.1))
    k = 2.0 * math.pi * int(ini.get("mode", 1)) / grid.length
    mass = float(ini.get("mass", th.params.get("mass", math.sqrt(th.params.get("coupling", 1.0)))))
    x = grid.nodes
    exact = None
    if kind in ("plane_wave", "standing_wave"):
        fn = fs.plane_wave if kind == "plane_wave" else fs.standing_wave
        phi, pi0 = fn(amp, k, mass, x, 0.0)
        if th.name == "free_scalar":

            def exact(t):
                return fn(amp, k, mass, x, t)[0]

    elif kind == "gaussian":
        width = float(ini.get("width", 0.5))
        centre = grid.x0 + 0.5 * grid.length
        phi = amp * np.exp(-0.5 * ((x - centre) / width) ** 2)
        pi0 = np.zeros_like(x)
    elif kind == "zero":
        phi = np.zeros_like(x)
        pi0 = np.zeros_like(x)
    else:
        raise ConfigError("field runs take initial.kind plane_wave, standing_wave, gaussian or zero")
    return fs.FieldState(0.0, phi, pi0), exact


def _make_grid(theory: Theory, g: dict) -> fs.GridSpec:
    try:
        if theory.spec.n == 1:
            return fs.GridSpec.for_mechanics(float(g["dt"]), float(g["T"]))
        Nx = int(g["Nx"])
        dx = float(g.get("length", 2.0 * math.pi)) / Nx
        dt = float(g["dt"]) if "dt" in g else float(g.get("dt_over_dx", 0.5)) * dx
        return fs.GridSpec(
            Nx=Nx,
            dx=dx,
            dt=dt,
            T=float(g["T"]),
            cfl=float(g.get("cfl", 1.0)),
            enforce_cfl=bool(g.get("enforce_cfl", True)),
        )
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None


def _task_integrate(cfg: ScenarioConfig, rng: np.random.Generator):
    grid = _make_grid(cfg.theory, cfg.grid or {})
    s0, exact = _initial_state(cfg, grid)
    traj = fs.evolve(cfg.theory.hamiltonian, s0, grid, sample_every=(cfg.grid or {}).get("sample_every"))
    path = cfg.output / "trajectory.csv"
    traj.write_csv(path)
    tol = cfg.tolerance or 1e-6
    checks = {"energy_drift": _check(traj.energy_drift(), tol)}
    extra: dict[str, Any] = {"steps": grid.steps, "dt": traj.dt, "samples": len(traj.times)}
    if exact is not None:
        err = max(float(np.max(np.abs(np.asarray(exact(t)) - phi))) for t, phi in zip(traj.times, traj.phi))
        scale = max(1.0, float(np.max(np.abs(traj.phi[0]))))
        checks["exact_solution_error"] = _check(err / scale, 1e-3)
    return checks, [path], extra


def _section_from_config(cfg: ScenarioConfig):
    """(H, section, potential or None) from the hj block, fiber shift applied."""
    hj = cfg.hj or {}
    th = cfg.theory
    n, N = th.spec.n, th.spec.N
    xs = [f"x{m + 1}" for m in range(n)]
    qs = [f"q{i + 1}" for i in range(N)]
    H = th.hamiltonian

    def parse_all(items, what):
        try:
            return [parse_potential(s, n, N) for s in items]
        except ExprError as exc:
            raise ConfigError(f"hj.{what}: {exc}") from None

    def ev(e: PotentialExpr, x, q) -> float:
        return float(e.evaluate_at(x, q))

    S = None
    if "S" in hj:
        if len(hj["S"]) != n:
            raise ConfigError(f"hj.S needs {n} expressions")
        Se = parse_all(hj["S"], "S")
        d1 = [[e.derivative(v) for v in xs + qs] for e in Se]
        d2 = [[[a.derivative(v) for v in xs + qs] for a in row] for row in d1]

        def svals(x, q):
            return np.array([ev(e, x, q) for e in Se])

        def sgrad(x, q):
            g = np.array([[ev(a, x, q) for a in row] for row in d1])
            return g[:, :n], g[:, n:]

        def shess(x, q):
            h = np.array([[[ev(b, x, q) for b in r2] for r2 in r1] for r1 in d2])
            return h[:, :n, :n], h[:, :n, n:], h[:, n:, n:]

        S = HJPotential(n, N, svals, sgrad, shess, name="config")
        T = section_from_potential(S)
    else:
        rowsT = hj["T"]
        if len(rowsT) != n or any(len(r) != N for r in rowsT):
            raise ConfigError(f"hj.T must be {n} rows of {N} expressions")
        Te = [parse_all(r, "T") for r in rowsT]
        T0e = parse_all([hj["T0"]], "T0")[0]
        dTe = [[[e.derivative(v) for v in xs + qs] for e in r] for r in Te]
        dT0e = [T0e.derivative(v) for v in xs + qs]

        def tm(x, q):
            return np.array([[ev(e, x, q) for e in r] for r in Te])

        def t0(x, q):
            return ev(T0e, x, q)

        def jac(x, q):
            dt = np.array([[[ev(d, x, q) for d in e] for e in r] for r in dTe])
            d0 = np.array([ev(d, x, q) for d in dT0e])
            return SectionJacobian(dt[..., :n], dt[..., n:], d0[:n], d0[n:])

        T = PhaseSection(n, N, tm, t0, jac, name="config")

    if "fiber_shift" in hj:
        if len(hj["fiber_shift"]) != N:
            raise ConfigError(f"hj.fiber_shift needs {N} expressions in x")
        fe = parse_all(hj["fiber_shift"], "fiber_shift")
        if any(v.startswith("q") for e in fe for v in e.variables()):
            raise ConfigError("hj.fiber_shift may only depend on x")
        dfe = [[e.derivative(v) for v in xs] for e in fe]
        ddfe = [[[d.derivative(v) for v in xs] for d in r] for r in dfe]
        zq = np.zeros(N)

        def f(x):
            return np.array([ev(e, x, zq) for e in fe])

        def df(x):
            return np.array([[ev(d, x, zq) for d in r] for r in dfe])

        def ddf(x):
            return np.array([[[ev(d, x, zq) for d in r2] for r2 in r1] for r1 in ddfe])

        H, T = translate_fiber(H, T, f, df, ddf)
        S = None
    return H, T, S


def _domain(cfg: ScenarioConfig) -> DomainBox:
    d = cfg.hj["domain"]
    spec = cfg.theory.spec
    try:
        return DomainBox(tuple(d["lower"]), tuple(d["upper"]), spec.n, spec.N, int(d.get("points", 5)))
    except ValueError as exc:
        raise ConfigError(f"hj.domain: {exc}") from None


def _task_hj(cfg: ScenarioConfig, rng: np.random.Generator):
    H, T, S = _section_from_config(cfg)
    box = _domain(cfg)
    pts = box.lattice()
    tol = cfg.tolerance or 1e-6
    report = check_theorem2_conditions(H, T, pts)
    path = cfg.output / "conditions.csv"
    report.write_csv(path)
    artifacts = [path]
    checks = {}
    for c in cfg.hj.get("require", ["T1", "T2", "T3"]):
        checks[c] = _check(report.max[c], tol)
    extra: dict[str, Any] = {"max_residuals": report.max}
    if S is not None:
        hjr = [hj_residual(H, S, p) for p in pts]
        rows = [[*map(float, p.x), *map(float, p.q), float(r)] for p, r in zip(pts, hjr)]
        spec = cfg.theory.spec
        header = [f"x{m + 1}" for m in range(spec.n)] + [f"q{i + 1}" for i in range(spec.N)] + ["residual"]
        artifacts.append(_write_rows(cfg.output / "hj_residual.csv", header, rows))
        checks["hj_residual"] = _check(float(np.max(np.abs(hjr))), 1e-10)
    pick = sorted(rng.choice(len(pts), size=min(len(pts), 20), replace=False))
    geo = geometric_form_check(H, T, [pts[i] for i in pick], S=S)
    checks["geometric_equivalence"] = {"value": geo.mapping_error, "passed": geo.equivalent(tol)}
    extra["geometric"] = {"dT": geo.dT, "dhT": geo.dhT, "theta_dS": geo.theta_dS}
    return checks, artifacts, extra


def _task_foliation(cfg: ScenarioConfig, rng: np.random.Generator):
    H, T, _S = _section_from_config(cfg)
    pts = _domain(cfg).lattice()
    tol = cfg.tolerance or 1e-6
    fol = foliation_integrability_check(H, T, pts)
    report = check_theorem2_conditions(H, T, pts)
    rows = [[*map(float, p.x), *map(float, p.q), float(r)] for p, r in zip(pts, fol.per_sample)]
    spec = cfg.theory.spec
    header = [f"x{m + 1}" for m in range(spec.n)] + [f"q{i + 1}" for i in range(spec.N)] + ["out_of_span"]
    path = _write_rows(cfg.output / "foliation.csv", header, rows)
    checks = {"frobenius_out_of_span": _check(fol.max_out_of_span, tol)}
    return checks, [path], {"max_residuals": report.max}


_RUNNERS = {
    "algebra-check": _task_algebra,
    "verify-xh": _task_verify_xh,
    "integrate": _task_integrate,
    "hj-check": _task_hj,
    "foliation-check": _task_foliation,
}


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Run one task; returns the exit status, the summary and written files."""
    cfg.output.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    summary: dict[str, Any] = {
        "task": cfg.task,
        "theory": cfg.theory.name,
        "n": cfg.theory.spec.n,
        "N": cfg.theory.spec.N,
        "seed": cfg.seed,
    }
    start = time.perf_counter()
    artifacts: list[Path] = []
    try:
        checks, artifacts, extra = _RUNNERS[cfg.task](cfg, rng)
        status = EXIT_PASS if all(c["passed"] for c in checks.values()) else EXIT_FAIL
        summary.update(checks=checks, details=extra)
    except ConfigError as exc:
        status = EXIT_CONFIG
        summary["error"] = {"module": "scenario", "type": "ConfigError", "message": str(exc)}
    except fs.DivergenceError as exc:
        status = EXIT_DIVERGENCE
        summary["error"] = {"module": "field_solver", "type": "DivergenceError", "message": str(exc), "t": exc.t}
    except (SingularityError, ArithmeticError) as exc:
        status = EXIT_FAIL
        summary["error"] = {"module": _provenance(exc), "type": type(exc).__name__, "message": str(exc)}
    summary["passed"] = status == EXIT_PASS
    summary["status"] = status
    summary["runtime_s"] = time.perf_counter() - start
    spath = cfg.output / "summary.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")
    return ScenarioResult(status, summary, artifacts + [spath])


def _provenance(exc: BaseException) -> str:
    tb = exc.__traceback__
    module = "multisymplectic"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("multisymplectic."):
            module = name.split(".", 1)[1]
        tb = tb.tb_next
    return module
