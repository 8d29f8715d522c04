"""Charged-particle problems: fields, initial data, stiffness, and remainders.

A 2D problem carries a scalar magnetic intensity b(x) and electric field
E(x) for

    x' = v,   v' = (b(x)/eps) J v + E(x),       J = [[0, 1], [-1, 0]],

a 3D problem carries the maximal-ordering field b(eps*x) (so the full
field is b(eps*x)/eps) and E(x) for

    x' = v,   v' = v x B(x)/eps + E(x) with B = b(eps*x).

Field callables must be pure and vectorized: they accept positions of
shape (d,) or (d, n) and return matching shapes.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from tsexp.phi import cross_matrix

J2 = np.array([[0.0, 1.0], [-1.0, 0.0]])

# Radius around the x3-axis below which the built-in 3D potential 1/r is
# considered blown up; trajectories entering it abort with a diagnostic.
AXIS_GUARD_RADIUS = 1e-6

# Lower bound used by runtime checks of |b| along computed trajectories.
MIN_FIELD_STRENGTH = 1e-8


class TrajectoryDomainError(RuntimeError):
    """A computed trajectory left the domain where the fields are valid."""


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    return eps


@dataclass(frozen=True)
class Problem2D:
    """Planar problem: scalar intensity b, field E, initial state, stiffness eps."""

    b: Callable[[np.ndarray], np.ndarray]
    e: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    v0: np.ndarray
    eps: float
    name: str = "custom-2d"

    def __post_init__(self):
        _check_eps(self.eps)
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "v0", np.asarray(self.v0, dtype=float))

    dim = 2

    def with_eps(self, eps: float) -> "Problem2D":
        return replace(self, eps=eps)


@dataclass(frozen=True)
class Problem3D:
    """Maximal-ordering 3D problem: bvec(y) evaluated at y = eps*x."""

    bvec: Callable[[np.ndarray], np.ndarray]
    e: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    v0: np.ndarray
    eps: float
    name: str = "custom-3d"

    def __post_init__(self):
        _check_eps(self.eps)
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "v0", np.asarray(self.v0, dtype=float))

    dim = 3

    def with_eps(self, eps: float) -> "Problem3D":
        return replace(self, eps=eps)

    def field_at(self, x: np.ndarray) -> np.ndarray:
        """The full magnetic field bvec(eps*x)/eps at position x."""
        return self.bvec(self.eps * np.asarray(x, dtype=float)) / self.eps


Problem = Problem2D | Problem3D


@dataclass(frozen=True)
class Frame2D:
    """Rescaling frame: b0 = b(x0) (may be negative) and eps_tilde = eps/b0."""

    b0: float
    eps_tilde: float


@dataclass(frozen=True)
class Frame3D:
    """Rescaling frame: skew field matrix at eps*x0, its axis/norm, eps_tilde = eps/|b0|."""

    bhat0: np.ndarray
    axis: np.ndarray
    b0norm: float
    eps_tilde: float


def frame_2d(problem: Problem2D) -> Frame2D:
    b0 = float(problem.b(problem.x0))
    if abs(b0) < MIN_FIELD_STRENGTH:
        raise TrajectoryDomainError(f"|b(x0)| = {abs(b0):.3e} is below the field-strength floor")
    return Frame2D(b0=b0, eps_tilde=problem.eps / b0)


def frame_3d(problem: Problem3D) -> Frame3D:
    bv = np.asarray(problem.bvec(problem.eps * problem.x0), dtype=float)
    b0norm = float(np.linalg.norm(bv))
    if b0norm < MIN_FIELD_STRENGTH:
        raise TrajectoryDomainError(f"|b(eps*x0)| = {b0norm:.3e} is below the field-strength floor")
    axis = bv / b0norm
    return Frame3D(bhat0=cross_matrix(bv), axis=axis, b0norm=b0norm, eps_tilde=problem.eps / b0norm)


def remainder_2d(frame: Frame2D, problem: Problem2D, q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Nonlinear remainder ((b(q) - b0)/(eps_tilde*b0)) J p + eps_tilde*E(q).

    Accepts single points (shape (2,)) or node batches (shape (2, n)).
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    coeff = (problem.b(q) - frame.b0) / (frame.eps_tilde * frame.b0)
    jp = np.stack([p[1], -p[0]])
    return coeff * jp + frame.eps_tilde * np.asarray(problem.e(q), dtype=float)


def remainder_3d(frame: Frame3D, problem: Problem3D, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Nonlinear remainder ((Bhat(eps*x) - Bhat0)/eps) v + E(x); O(1) under maximal ordering."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    db = (np.asarray(problem.bvec(problem.eps * x), dtype=float) - _column(frame_bvec(frame), x)) / problem.eps
    # (v x db) component-wise; db plays the role of the field difference.
    cross = np.stack(
        [
            v[1] * db[2] - v[2] * db[1],
            v[2] * db[0] - v[0] * db[2],
            v[0] * db[1] - v[1] * db[0],
        ]
    )
    return cross + np.asarray(problem.e(x), dtype=float)


def frame_bvec(frame: Frame3D) -> np.ndarray:
    """Recover the constant field vector b(eps*x0) from the frame's skew matrix."""
    return frame.b0norm * frame.axis


def _column(vec: np.ndarray, like: np.ndarray) -> np.ndarray:
    if like.ndim == 2:
        return vec[:, None]
    return vec


# ---------------------------------------------------------------------------
# Built-in test problems
# ---------------------------------------------------------------------------


def builtin_2d(eps: float = 0.25) -> Problem2D:
    """Planar single-particle benchmark with trigonometric b and E."""

    def b(x):
        return 1.0 + np.sin(x[0]) * np.sin(x[1])

    def e(x):
        return np.stack([np.cos(x[0] / 2.0) * np.sin(x[1]) / 2.0, np.sin(x[0] / 2.0) * np.cos(x[1])])

    return Problem2D(b=b, e=e, x0=np.array([0.1, 0.1]), v0=np.array([0.2, 0.1]), eps=eps, name="paper-2d")


def builtin_3d(eps: float = 0.125) -> Problem3D:
    """3D benchmark: strong unit field along e_z plus the O(eps) part (-x1, 0, x3).

    E = -grad(1/sqrt(x1^2 + x2^2)), singular on the x3-axis; evaluation
    aborts if a trajectory comes within AXIS_GUARD_RADIUS of it.
    """

    def bvec(y):
        ones = np.ones_like(np.asarray(y[0], dtype=float))
        return np.stack([-y[0], 0.0 * ones, 1.0 + y[2]])

    def e(x):
        r2 = x[0] ** 2 + x[1] ** 2
        if np.min(r2) < AXIS_GUARD_RADIUS**2:
            raise TrajectoryDomainError(
                f"trajectory entered r = {float(np.sqrt(np.min(r2))):.3e} of the singular x3-axis"
            )
        r3 = r2**1.5
        return np.stack([x[0] / r3, x[1] / r3, 0.0 * np.asarray(x[2], dtype=float)])

    return Problem3D(
        bvec=bvec,
        e=e,
        x0=np.array([1.0 / 3.0, 0.25, 0.5]),
        v0=np.array([0.4, 2.0 / 3.0, 1.0]),
        eps=eps,
        name="paper-3d",
    )


# ---------------------------------------------------------------------------
# Registry and config-file problems
# ---------------------------------------------------------------------------

_REGISTRY: dict[str, Callable[[float], Problem]] = {}


def register_problem(name: str, factory: Callable[[float], Problem]) -> None:
    """Register a factory eps -> Problem under a CLI-selectable name."""
    _REGISTRY[name] = factory


def get_problem(name: str, eps: float | None = None) -> Problem:
    """Look up a problem by registered name or load it from a definition file."""
    if name in _REGISTRY:
        prob = _REGISTRY[name](eps) if eps is not None else _REGISTRY[name](None)
    elif Path(name).is_file():
        prob = load_problem_file(name)
        if eps is not None:
            prob = prob.with_eps(eps)
    else:
        known = ", ".join(sorted(_REGISTRY))
        raise KeyError(f"unknown problem {name!r}; known: {known} (or a definition file path)")
    return prob


register_problem("paper-2d", lambda eps: builtin_2d() if eps is None else builtin_2d(eps))
register_problem("paper-3d", lambda eps: builtin_3d() if eps is None else builtin_3d(eps))


_ALLOWED_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
_ALLOWED_CONSTS = {"pi": math.pi, "e": math.e}


def compile_expression(expr: str, variables: tuple[str, ...]):
    """Compile a small arithmetic expression over the given variable names.

    Vocabulary: + - * / ** unary +-, numbers, pi, e, and the functions
    sin cos tan exp log sqrt abs.  Anything else is rejected.
    """
    tree = ast.parse(expr, mode="eval")
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Constant, ast.BinOp, ast.UnaryOp, ast.Load)):
            continue
        if isinstance(node, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)):
            continue
        if isinstance(node, ast.Name):
            if node.id in variables or node.id in _ALLOWED_CONSTS or node.id in _ALLOWED_FUNCS:
                continue
            raise ValueError(f"unknown name {node.id!r} in expression {expr!r}")
        if isinstance(node, ast.Call):
            if isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_FUNCS and not node.keywords:
                continue
            raise ValueError(f"only calls to {sorted(_ALLOWED_FUNCS)} are allowed in {expr!r}")
        raise ValueError(f"disallowed syntax {type(node).__name__} in expression {expr!r}")
    code = compile(tree, "<problem-expression>", "eval")
    namespace = {"__builtins__": {}} | _ALLOWED_FUNCS | _ALLOWED_CONSTS

    def fn(*args):
        local = dict(zip(variables, args))
        return eval(code, namespace, local)

    return fn


def _parse_vector(text: str) -> np.ndarray:
    return np.array([float(tok) for tok in text.replace(",", " ").split()])


def parse_kv_file(path: str | Path) -> dict[str, str]:
    """Flat 'key = value' file with #-comments; later keys override earlier ones."""
    out: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def load_problem_file(path: str | Path) -> Problem:
    """Build a problem from a flat definition file.

    2D keys: dim=2, b, e1, e2 (expressions in x1, x2), x0, v0, eps, name.
    3D keys: dim=3, b1, b2, b3 (expressions in y1, y2, y3 with y = eps*x),
    e1, e2, e3 (expressions in x1, x2, x3), x0, v0, eps, name.
    """
    kv = parse_kv_file(path)
    dim = int(kv.get("dim", "2"))
    eps = float(kv.get("eps", "0.25"))
    name = kv.get("name", Path(path).stem)
    x0 = _parse_vector(kv["x0"])
    v0 = _parse_vector(kv["v0"])
    if dim == 2:
        b_fn = compile_expression(kv["b"], ("x1", "x2"))
        e_fns = [compile_expression(kv[key], ("x1", "x2")) for key in ("e1", "e2")]

        def b(x):
            return b_fn(x[0], x[1])

        def e(x):
            return np.stack([np.broadcast_to(f(x[0], x[1]), np.shape(x[0])) for f in e_fns])

        return Problem2D(b=b, e=e, x0=x0, v0=v0, eps=eps, name=name)
    if dim == 3:
        b_fns = [compile_expression(kv[key], ("y1", "y2", "y3")) for key in ("b1", "b2", "b3")]
        e_fns = [compile_expression(kv[key], ("x1", "x2", "x3")) for key in ("e1", "e2", "e3")]

        def bvec(y):
            return np.stack([np.broadcast_to(f(y[0], y[1], y[2]), np.shape(y[0])) for f in b_fns])

        def e3(x):
            return np.stack([np.broadcast_to(f(x[0], x[1], x[2]), np.shape(x[0])) for f in e_fns])

        return Problem3D(bvec=bvec, e=e3, x0=x0, v0=v0, eps=eps, name=name)
    raise ValueError(f"dim must be 2 or 3, got {dim}")


def check_field_strength(problem: Problem, x: np.ndarray) -> None:
    """Runtime guard: |b| along a computed trajectory must stay away from zero."""
    if isinstance(problem, Problem2D):
        strength = abs(float(problem.b(np.asarray(x, dtype=float))))
    else:
        strength = float(np.linalg.norm(problem.bvec(problem.eps * np.asarray(x, dtype=float))))
    if strength < MIN_FIELD_STRENGTH:
        raise TrajectoryDomainError(f"|b| = {strength:.3e} fell below {MIN_FIELD_STRENGTH} along the trajectory")
