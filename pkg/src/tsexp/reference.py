"""Comparator and oracle integrators on the original stiff system.

These deliberately share no code path with the two-scale schemes: Boris
(rotation-kick splitting with the exact magnetic rotation), the two-stage
Gauss collocation method of order four, and a step-doubling reference
generator built on the latter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from tsexp.integrators import Trajectory, snap_step_count
from tsexp.phi import rot2, rot3
from tsexp.problems import Problem2D, Problem3D

_SQRT3 = math.sqrt(3.0)
GAUSS_C = (0.5 - _SQRT3 / 6.0, 0.5 + _SQRT3 / 6.0)
GAUSS_A = np.array([[0.25, 0.25 - _SQRT3 / 6.0], [0.25 + _SQRT3 / 6.0, 0.25]])
GAUSS_B = np.array([0.5, 0.5])

STAGE_TOL = 1e-13
_FIXED_MAX = 40
_NEWTON_MAX = 25


def _ode_rhs_batch(problem: Problem2D | Problem3D) -> Callable[[np.ndarray], np.ndarray]:
    """Batched right-hand side of the original system: (2d, k) -> (2d, k)."""
    if isinstance(problem, Problem2D):
        b, e, eps = problem.b, problem.e, problem.eps

        def f2(y: np.ndarray) -> np.ndarray:
            x, v = y[:2], y[2:]
            omega = b(x) / eps
            acc = np.stack([omega * v[1], -omega * v[0]]) + e(x)
            return np.vstack([v, acc])

        return f2

    bvec, e, eps = problem.bvec, problem.e, problem.eps

    def f3(y: np.ndarray) -> np.ndarray:
        x, v = y[:3], y[3:]
        bb = np.asarray(bvec(eps * x), dtype=float) / eps
        cross = np.stack(
            [
                v[1] * bb[2] - v[2] * bb[1],
                v[2] * bb[0] - v[0] * bb[2],
                v[0] * bb[1] - v[1] * bb[0],
            ]
        )
        return np.vstack([v, cross + e(x)])

    return f3


def boris_solve(problem: Problem2D | Problem3D, h: float, t_end: float) -> Trajectory:
    """Leapfrog rotation-kick pusher with half-step electric kicks.

    The magnetic rotation uses the exact local rotation angle, so with
    E = 0 the speed is preserved to rounding.
    """
    n_steps, h = snap_step_count(t_end, h)
    eps = problem.eps
    planar = isinstance(problem, Problem2D)
    x = problem.x0.copy()
    v = problem.v0.copy()
    times = [0.0]
    xs, vs = [x.copy()], [v.copy()]
    for n in range(n_steps):
        xm = x + 0.5 * h * v
        ef = np.asarray(problem.e(xm), dtype=float)
        vk = v + 0.5 * h * ef
        if planar:
            vr = rot2(h * float(problem.b(xm)) / eps).phi0 @ vk
        else:
            bb = np.asarray(problem.bvec(eps * xm), dtype=float) / eps
            norm = float(np.linalg.norm(bb))
            vr = rot3(bb / norm, h * norm).matrix @ vk
        v = vr + 0.5 * h * ef
        x = xm + 0.5 * h * v
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise FloatingPointError(f"Boris produced non-finite values at step {n + 1}")
        times.append((n + 1) * h)
        xs.append(x.copy())
        vs.append(v.copy())
    return Trajectory(t=np.array(times), x=np.array(xs), v=np.array(vs))


def gauss4_step(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, h: float) -> np.ndarray:
    """One step of two-stage Gauss collocation on y' = f(y).

    f must accept stacked columns (d, k).  Stage derivatives are solved by
    fixed-point iteration; when that fails to contract (h large relative to
    the stiffness) a Newton iteration with a finite-difference Jacobian
    takes over, seeded freshly from f at the step's start value.
    """
    y_new, _ = _gauss4_step_mode(f, np.asarray(y, dtype=float), h, newton_first=False)
    return y_new


def _gauss4_step_mode(f, y: np.ndarray, h: float, newton_first: bool) -> tuple[np.ndarray, bool]:
    def stage_values(k: np.ndarray) -> np.ndarray:
        return y[:, None] + h * (k @ GAUSS_A.T)

    used_newton = True
    if newton_first:
        k = _newton_stages(f, y, h)
    else:
        k = f(np.repeat(y[:, None], 2, axis=1))
        converged = False
        prev_gap = math.inf
        for _ in range(_FIXED_MAX):
            k_new = f(stage_values(k))
            gap = float(np.max(np.abs(k_new - k)))
            k = k_new
            if gap <= STAGE_TOL * max(1.0, float(np.max(np.abs(k)))):
                converged = True
                break
            if gap > 2.0 * prev_gap and gap > 1.0:
                break
            prev_gap = gap
        if converged:
            used_newton = False
        else:
            k = _newton_stages(f, y, h)
    return y + h * (k @ GAUSS_B), used_newton


def _newton_stages(f, y: np.ndarray, h: float) -> np.ndarray:
    d = y.size

    def residual(kflat: np.ndarray) -> np.ndarray:
        k = kflat.reshape(d, 2, order="F")
        return (k - f(y[:, None] + h * (k @ GAUSS_A.T))).ravel(order="F")

    kflat = np.repeat(f(np.repeat(y[:, None], 2, axis=1))[:, :1], 2, axis=1).ravel(order="F")
    m = kflat.size
    for it in range(_NEWTON_MAX):
        g = residual(kflat)
        if np.max(np.abs(g)) <= STAGE_TOL * max(1.0, float(np.max(np.abs(kflat)))):
            return kflat.reshape(d, 2, order="F")
        delta = 1e-7 * max(1.0, float(np.max(np.abs(kflat))))
        jac = np.empty((m, m))
        for col in range(m):
            pert = kflat.copy()
            pert[col] += delta
            jac[:, col] = (residual(pert) - g) / delta
        try:
            stepv = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(f"Gauss stage Newton system singular: {exc}") from exc
        kflat = kflat + stepv
    raise RuntimeError(
        f"Gauss stage solve did not converge (last residual {np.max(np.abs(residual(kflat))):.3e}); "
        "h is too large relative to eps"
    )


def _gauss4_run(problem, h: float, t_end: float, record: bool) -> Trajectory:
    n_steps, h = snap_step_count(t_end, h)
    f = _ode_rhs_batch(problem)
    y = np.concatenate([problem.x0, problem.v0])
    d = problem.x0.size
    times = [0.0]
    xs, vs = [y[:d].copy()], [y[d:].copy()]
    newton_mode = False
    for n in range(n_steps):
        y, newton_mode = _gauss4_step_mode(f, y, h, newton_first=newton_mode)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"Gauss solve produced non-finite values at step {n + 1}")
        if record:
            times.append((n + 1) * h)
            xs.append(y[:d].copy())
            vs.append(y[d:].copy())
    if not record:
        times = [0.0, n_steps * h]
        xs = [problem.x0.copy(), y[:d].copy()]
        vs = [problem.v0.copy(), y[d:].copy()]
    return Trajectory(t=np.array(times), x=np.array(xs), v=np.array(vs))


def gauss4_solve(problem: Problem2D | Problem3D, h: float, t_end: float) -> Trajectory:
    """Two-stage Gauss collocation (order 4) applied to the original system."""
    return _gauss4_run(problem, h, t_end, record=True)


@dataclass
class ReferenceSolution:
    """Step-doubling-validated endpoint state of the original system.

    estimated_accuracy is the observed gap between the last two rounds;
    x_accuracy and v_accuracy are the per-component step-doubling error
    estimates of the returned (finer) solution, i.e. the component gaps
    scaled by 1/(2^4 - 1) for the order-4 integrator underneath.  These
    drive the tolerance-floor filtering of convergence fits.
    """

    t_end: float
    x: np.ndarray
    v: np.ndarray
    estimated_accuracy: float
    steps_used: int
    x_accuracy: float = 0.0
    v_accuracy: float = 0.0

    def rel_floor(self, err_field: str, safety: float = 10.0) -> float:
        """Relative-error floor below which a measured error is reference noise."""
        fx = safety * self.x_accuracy / max(float(np.linalg.norm(self.x)), 1e-300)
        fv = safety * self.v_accuracy / max(float(np.linalg.norm(self.v)), 1e-300)
        return {"err_x": fx, "err_v": fv, "err_combined": fx + fv}[err_field]


MAX_HALVINGS = 4
_RICHARDSON = 2.0**4 - 1.0


def reference_solution(problem: Problem2D | Problem3D, t_end: float, tol: float) -> ReferenceSolution:
    """Fine-step Gauss reference with step-doubling self-validation.

    Starts at h = min(eps/200, 1e-3 * t_end), halves until two successive
    solutions agree within tol (at most MAX_HALVINGS halvings), and reports
    the finer endpoint with the observed gap as the accuracy estimate.
    """
    if tol < 1e-12:
        raise ValueError(f"reference tolerance must be >= 1e-12, got {tol}")
    if t_end == 0.0:
        return ReferenceSolution(0.0, problem.x0.copy(), problem.v0.copy(), 0.0, 0)
    h = min(problem.eps / 200.0, 1e-3 * t_end)
    h = t_end / math.ceil(t_end / h)
    coarse = _gauss4_run(problem, h, t_end, record=False)
    steps = round(t_end / h)
    gap = math.inf
    for _ in range(MAX_HALVINGS):
        h *= 0.5
        fine = _gauss4_run(problem, h, t_end, record=False)
        steps += round(t_end / h)
        gap_x = float(np.linalg.norm(fine.x_end - coarse.x_end))
        gap_v = float(np.linalg.norm(fine.v_end - coarse.v_end))
        gap = gap_x + gap_v
        if gap <= tol:
            return ReferenceSolution(
                t_end,
                fine.x_end,
                fine.v_end,
                gap,
                steps,
                x_accuracy=gap_x / _RICHARDSON,
                v_accuracy=gap_v / _RICHARDSON,
            )
        coarse = fine
    raise RuntimeError(f"reference generator failed to reach tol={tol:.1e}; achieved gap {gap:.3e}")
