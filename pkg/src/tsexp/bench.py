"""Benchmark harness: error-vs-h and error-vs-eps sweeps, CSV output, slope fits.

A study runs a grid of (method, eps, h) combinations against cached
fine references (one per problem/eps), records relative endpoint errors
and wall time, and emits a deterministic CSV plus a machine-readable
summary with fitted log-log slopes.
"""

from __future__ import annotations

import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from tsexp.integrators import Trajectory, check_order_conditions, get_tableau, solve
from tsexp.problems import get_problem
from tsexp.reference import ReferenceSolution, boris_solve, gauss4_solve, reference_solution

DEFAULT_H_LIST = tuple(2.0**-k for k in range(1, 7))
DEFAULT_EPS_2D = tuple(2.0**-k for k in range(1, 7))
DEFAULT_EPS_3D = tuple(2.0**-k for k in range(3, 9))
DEFAULT_REF_TOL = 1e-10

COMPARATORS = ("boris", "gauss4")

CSV_HEADER = "method,h,eps,ntau,err_x,err_v,err_combined,wall_seconds,status"

MAX_TOTAL_STEPS = 10**7


@dataclass
class StudyConfig:
    """Sweep description; defaults mirror the benchmark figures' grids."""

    problem: str = "paper-2d"
    methods: tuple[str, ...] = ("eo2", "io2", "eo4", "io4")
    h_list: tuple[float, ...] = DEFAULT_H_LIST
    eps_list: tuple[float, ...] | None = None
    n_tau: int = 64
    t_end: float = 1.0
    init_order: int | None = None
    ref_tol: float = DEFAULT_REF_TOL
    out: str | None = None
    jobs: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.h_list = tuple(float(h) for h in self.h_list)
        if self.eps_list is not None:
            self.eps_list = tuple(float(e) for e in self.eps_list)
        if not self.methods:
            raise ValueError("method list must be non-empty")
        if not self.h_list:
            raise ValueError("h list must be non-empty")
        if self.eps_list is not None and not self.eps_list:
            raise ValueError("eps list must be non-empty")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        longest = self.t_end / min(self.h_list)
        if longest > MAX_TOTAL_STEPS:
            raise ValueError(f"t_end/min(h) = {longest:.3g} exceeds the {MAX_TOTAL_STEPS:.0e} step guard")

    def resolved_eps_list(self, dim: int) -> tuple[float, ...]:
        if self.eps_list is not None:
            return self.eps_list
        return DEFAULT_EPS_2D if dim == 2 else DEFAULT_EPS_3D


@dataclass
class ConvergenceRecord:
    method: str
    h: float
    eps: float
    n_tau: int
    err_x: float
    err_v: float
    err_combined: float
    wall_seconds: float
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class StudyResult:
    config: StudyConfig
    records: list[ConvergenceRecord]
    references: dict[float, ReferenceSolution]
    reference_errors: dict[float, str] = field(default_factory=dict)

    def floor_for(self, record: ConvergenceRecord, err_field: str) -> float | None:
        ref = self.references.get(record.eps)
        return None if ref is None else ref.rel_floor(err_field)


def _sanitize(message: str) -> str:
    return " ".join(message.replace(",", ";").split())


def _run_one(problem, method: str, h: float, n_tau: int, t_end: float, init_order) -> Trajectory:
    if method == "boris":
        return boris_solve(problem, h, t_end)
    if method == "gauss4":
        return gauss4_solve(problem, h, t_end)
    return solve(problem, method, h, n_tau=n_tau, t_end=t_end, init_order=init_order)


def run_convergence(
    config: StudyConfig,
    references: dict[float, ReferenceSolution] | None = None,
) -> StudyResult:
    """Execute the study grid and collect one record per (method, eps, h).

    References are computed once per eps (or reused from the supplied
    cache) before the grid runs; individual run failures become error rows
    and the study continues.  Output ordering follows the configured lists
    regardless of the parallelism degree.
    """
    base = get_problem(config.problem)
    eps_list = config.resolved_eps_list(base.dim)
    refs: dict[float, ReferenceSolution] = dict(references) if references else {}
    ref_errors: dict[float, str] = {}
    for eps in eps_list:
        if eps in refs:
            continue
        try:
            refs[eps] = reference_solution(base.with_eps(eps), config.t_end, config.ref_tol)
        except Exception as exc:
            ref_errors[eps] = _sanitize(f"reference failed: {exc}")

    tasks = [(m, eps, h) for m in config.methods for eps in eps_list for h in config.h_list]

    def execute(task: tuple[str, float, float]) -> ConvergenceRecord:
        method, eps, h = task
        if eps in ref_errors:
            return ConvergenceRecord(method, h, eps, config.n_tau, np.nan, np.nan, np.nan, 0.0, ref_errors[eps])
        ref = refs[eps]
        problem = base.with_eps(eps)
        start = time.perf_counter()
        try:
            traj = _run_one(problem, method, h, config.n_tau, config.t_end, config.init_order)
        except Exception as exc:
            wall = time.perf_counter() - start
            return ConvergenceRecord(
                method, h, eps, config.n_tau, np.nan, np.nan, np.nan, wall,
                _sanitize(f"{type(exc).__name__}: {exc}"),
            )
        wall = time.perf_counter() - start
        err_x = float(np.linalg.norm(traj.x_end - ref.x) / np.linalg.norm(ref.x))
        err_v = float(np.linalg.norm(traj.v_end - ref.v) / np.linalg.norm(ref.v))
        return ConvergenceRecord(method, h, eps, config.n_tau, err_x, err_v, err_x + err_v, wall)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(execute, tasks))
    else:
        results = [execute(t) for t in tasks]
    by_key = {(r.method, r.eps, r.h): r for r in results}
    ordered = [by_key[t[0], t[1], t[2]] for t in tasks]
    return StudyResult(config=config, records=ordered, references=refs, reference_errors=ref_errors)


def records_to_csv(records: Sequence[ConvergenceRecord]) -> str:
    """Serialize records with shortest round-trip floats and fixed ordering."""
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in records:
        buf.write(
            f"{r.method},{r.h!r},{r.eps!r},{r.n_tau},{r.err_x!r},{r.err_v!r},"
            f"{r.err_combined!r},{r.wall_seconds!r},{r.status}\n"
        )
    return buf.getvalue()


def write_csv(records: Sequence[ConvergenceRecord], path: str | Path) -> None:
    Path(path).write_text(records_to_csv(records))


def read_csv(path: str | Path) -> list[ConvergenceRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected CSV header in {path}")
    out = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        method, h, eps, ntau, ex, ev, ec, wall = parts[:8]
        status = ",".join(parts[8:])
        out.append(
            ConvergenceRecord(
                method, float(h), float(eps), int(ntau), float(ex), float(ev), float(ec), float(wall), status
            )
        )
    return out


@dataclass
class OrderFit:
    """Least-squares slope of log2(err) against log2(h) or log2(eps)."""

    slope: float
    intercept: float
    n_points: int
    conclusive: bool

    def __bool__(self) -> bool:  # pragma: no cover
        return self.conclusive


def fit_order(
    records: Sequence[ConvergenceRecord],
    x_field: str = "h",
    err_field: str = "err_x",
    floor: float | None = None,
    floor_lookup=None,
) -> OrderFit:
    """Fit the convergence slope over usable records.

    Records with error status are skipped; so are points whose error sits
    at the reference-accuracy floor (err < floor, or per-record floors via
    floor_lookup).  Fewer than 3 usable points yields an inconclusive fit.
    """
    xs, ys = [], []
    for r in records:
        if not r.ok:
            continue
        err = getattr(r, err_field)
        if not np.isfinite(err) or err <= 0.0:
            continue
        local_floor = floor
        if floor_lookup is not None:
            lf = floor_lookup(r)
            if lf is not None:
                local_floor = lf if local_floor is None else max(local_floor, lf)
        if local_floor is not None and err < local_floor:
            continue
        xs.append(getattr(r, x_field))
        ys.append(err)
    if len(xs) < 3:
        return OrderFit(slope=np.nan, intercept=np.nan, n_points=len(xs), conclusive=False)
    lx = np.log2(np.asarray(xs))
    ly = np.log2(np.asarray(ys))
    coeffs, *_ = np.linalg.lstsq(np.vstack([lx, np.ones_like(lx)]).T, ly, rcond=None)
    return OrderFit(slope=float(coeffs[0]), intercept=float(coeffs[1]), n_points=len(xs), conclusive=True)


def study_summary(result: StudyResult) -> dict:
    """Machine-readable summary: reference quality plus fitted slopes."""
    cfg = result.config
    base = get_problem(cfg.problem)
    eps_list = cfg.resolved_eps_list(base.dim)
    summary: dict = {
        "problem": cfg.problem,
        "t_end": cfg.t_end,
        "n_tau": cfg.n_tau,
        "methods": list(cfg.methods),
        "h_list": list(cfg.h_list),
        "eps_list": list(eps_list),
        "references": {
            repr(eps): {
                "estimated_accuracy": ref.estimated_accuracy,
                "x_accuracy": ref.x_accuracy,
                "v_accuracy": ref.v_accuracy,
                "steps_used": ref.steps_used,
            }
            for eps, ref in result.references.items()
        },
        "reference_errors": {repr(eps): msg for eps, msg in result.reference_errors.items()},
        "slopes_vs_h": {},
        "slopes_vs_eps": {},
    }
    for method in cfg.methods:
        rows = [r for r in result.records if r.method == method]
        if len(cfg.h_list) >= 3:
            per_eps = {}
            for eps in eps_list:
                sub = [r for r in rows if r.eps == eps]
                fit = fit_order(sub, "h", "err_x", floor_lookup=lambda r: result.floor_for(r, "err_x"))
                per_eps[repr(eps)] = {"slope": fit.slope, "n_points": fit.n_points, "conclusive": fit.conclusive}
            summary["slopes_vs_h"][method] = per_eps
        if len(eps_list) >= 3:
            per_h = {}
            for h in cfg.h_list:
                sub = [r for r in rows if r.h == h]
                fit = fit_order(sub, "eps", "err_x", floor_lookup=lambda r: result.floor_for(r, "err_x"))
                per_h[repr(h)] = {"slope": fit.slope, "n_points": fit.n_points, "conclusive": fit.conclusive}
            summary["slopes_vs_eps"][method] = per_h
    return summary


def run_single(
    problem_name: str,
    method: str,
    h: float,
    eps: float | None = None,
    n_tau: int = 64,
    t_end: float = 1.0,
    init_order: int | None = None,
) -> Trajectory:
    """One solve with a full trajectory for plotting or debugging."""
    problem = get_problem(problem_name, eps)
    return _run_one(problem, method, h, n_tau, t_end, init_order)


def trajectory_to_csv(traj: Trajectory) -> str:
    d = traj.x.shape[1]
    header = "t," + ",".join(f"x{i + 1}" for i in range(d)) + "," + ",".join(f"v{i + 1}" for i in range(d))
    lines = [header]
    for i in range(traj.t.size):
        row = [repr(float(traj.t[i]))]
        row += [repr(float(c)) for c in traj.x[i]]
        row += [repr(float(c)) for c in traj.v[i]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def report_order_conditions(method: str) -> str:
    """Human-readable stiff-order-condition report for a named tableau."""
    return check_order_conditions(get_tableau(method)).to_text()


def write_summary(result: StudyResult, csv_path: str | Path) -> Path:
    path = Path(str(csv_path) + ".summary.json")
    path.write_text(json.dumps(study_summary(result), indent=2, default=float) + "\n")
    return path
