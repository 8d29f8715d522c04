"""Two-scale exponential integrators: tableaus, stepper, solver, order-condition checks.

The semi-discrete and fully discrete schemes coincide once tau is sampled
on the grid, so a single stepper serves both: stage fields propagate with
the phi_0 shift, operator-valued weights act as Fourier multipliers, and
the nonlinearity is evaluated node-wise.  Four tableaus are provided: one
implicit and one explicit method of order two (io2, eo2) and of order
four (io4, eo4), plus the io2 variant with its printed stage weight.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from tsexp.phi import phi_values
from tsexp.problems import Problem2D, Problem3D, check_field_strength, frame_2d, frame_3d
from tsexp.taugrid import (
    DEFAULT_N_TAU,
    MultiplierSpec,
    TauField,
    ZERO_MULTIPLIER,
    multiplier_table,
    phi_multiplier,
)
from tsexp.twoscale import (
    TwoScaleRHS,
    TwoScaleState,
    initial_average,
    make_rhs,
    prepare_initial,
    reconstruct,
)

FIXED_POINT_TOL = 1e-13
FIXED_POINT_MAX_ITER = 100
CONSTRUCTION_TOL = 1e-12

# Sup-norm growth factor beyond which a run is considered blown up.
GROWTH_LIMIT = 10.0

_PHI0 = phi_multiplier(0)


@dataclass(frozen=True)
class Tableau:
    """Operator-valued tableau: nodes c, stage weights abar, update weights bbar.

    abar[i][j] and bbar[j] are MultiplierSpec combinations of phi_k; the
    explicit flag must match strict lower-triangularity of abar.
    """

    name: str
    order: int
    c: tuple[float, ...]
    abar: tuple[tuple[MultiplierSpec, ...], ...]
    bbar: tuple[MultiplierSpec, ...]
    explicit: bool
    min_init_order: int

    @property
    def stages(self) -> int:
        return len(self.c)


def psi_weight(tab: Tableau, j: int, z: np.ndarray) -> np.ndarray:
    """psi_j(z) = phi_j(z) - sum_k bbar_k(z) c_k^(j-1)/(j-1)!."""
    z = np.asarray(z, dtype=complex)
    acc = phi_values(j, z).astype(complex)
    for ck, bk in zip(tab.c, tab.bbar):
        if not bk.is_zero:
            acc = acc - np.asarray(bk(z)) * ck ** (j - 1) / math.factorial(j - 1)
    return acc


def psi_stage(tab: Tableau, j: int, i: int, z: np.ndarray) -> np.ndarray:
    """psi_{j,i}(z) = phi_j(c_i z) c_i^j - sum_k abar_{ik}(z) c_k^(j-1)/(j-1)!."""
    z = np.asarray(z, dtype=complex)
    ci = tab.c[i]
    acc = phi_values(j, ci * z) * ci**j
    for ck, aik in zip(tab.c, tab.abar[i]):
        if not aik.is_zero:
            acc = acc - np.asarray(aik(z)) * ck ** (j - 1) / math.factorial(j - 1)
    return acc


def _condition_rows(tab: Tableau, z: np.ndarray, weak: bool = False):
    """Named residuals for the stiff order conditions, grouped by order.

    With weak=True the update weights are frozen at z = 0 in all rows that
    carry them; the single-stage rows of order two are then combined with
    those frozen weights, which is the form the accuracy statement uses.
    """
    s = tab.stages
    bz = [np.asarray(b(z)) if not b.is_zero else np.zeros(np.shape(z)) for b in tab.bbar]
    b0 = [b.at_zero for b in tab.bbar]
    bw = b0 if weak else bz
    rows: list[tuple[str, int, np.ndarray]] = []
    tag = " (weak)" if weak else ""

    rows.append((f"psi_1{tag}", 1, psi_weight(tab, 1, z)))

    rows.append((f"psi_2{tag}", 2, psi_weight(tab, 2, z)))
    if weak:
        acc = sum(bw[i] * psi_stage(tab, 1, i, z) for i in range(s))
        rows.append((f"sum_i b_i(0) psi_1i{tag}", 2, np.asarray(acc)))
    else:
        for i in range(s):
            rows.append((f"psi_1,{i + 1}", 2, psi_stage(tab, 1, i, z)))

    rows.append((f"psi_3{tag}", 3, psi_weight(tab, 3, z)))
    acc = sum(bw[i] * psi_stage(tab, 2, i, z) for i in range(s))
    rows.append((f"sum_i b_i psi_2i{tag}", 3, np.asarray(acc)))

    rows.append((f"psi_4{tag}", 4, psi_weight(tab, 4, z)))
    acc = sum(bw[i] * psi_stage(tab, 3, i, z) for i in range(s))
    rows.append((f"sum_i b_i psi_3i{tag}", 4, np.asarray(acc)))
    acc = 0.0
    for i in range(s):
        arow = sum(np.asarray(a(z)) for a in tab.abar[i] if not a.is_zero)
        acc = acc + bw[i] * arow * psi_stage(tab, 2, i, z)
    rows.append((f"sum_i b_i (sum_j a_ij) psi_2i{tag}", 4, np.asarray(acc)))
    acc = sum(bw[i] * tab.c[i] * psi_stage(tab, 2, i, z) for i in range(s))
    rows.append((f"sum_i b_i c_i psi_2i{tag}", 4, np.asarray(acc)))
    return rows


DEFAULT_Z_SAMPLES = (0.0 + 0.0j,) + tuple(1j * 2.0**m for m in range(-3, 7))


@dataclass
class OrderConditionReport:
    """Residual magnitudes of the stiff order conditions at sampled arguments."""

    tableau: str
    declared_order: int
    z_samples: tuple[complex, ...]
    residuals: dict[str, np.ndarray]
    orders: dict[str, int]
    weak_residuals: dict[str, np.ndarray]
    strong_below_order_ok: bool
    psi_r_at_zero: float
    weak_order_r_ok: bool

    def max_residual(self, name: str) -> float:
        return float(np.max(self.residuals[name]))

    def to_text(self) -> str:
        lines = [
            f"stiff order conditions for {self.tableau} (declared order {self.declared_order})",
            f"z samples: 0 and i*2^m for m = -3..6",
            f"{'condition':38s} {'order':>5s} {'max |residual|':>15s}",
        ]
        for name, res in self.residuals.items():
            lines.append(f"{name:38s} {self.orders[name]:5d} {float(np.max(res)):15.3e}")
        lines.append("weak forms (update weights frozen at z = 0):")
        for name, res in self.weak_residuals.items():
            lines.append(f"{name:38s} {self.orders[name]:5d} {float(np.max(res)):15.3e}")
        r = self.declared_order
        lines.append(
            f"conditions of order <= {r - 1} identically satisfied: "
            f"{'yes' if self.strong_below_order_ok else 'NO'}"
        )
        lines.append(f"|psi_{r}(0)| = {self.psi_r_at_zero:.3e}")
        lines.append(f"order-{r} conditions in weak form: {'yes' if self.weak_order_r_ok else 'NO'}")
        return "\n".join(lines)


def check_order_conditions(tab: Tableau, z_samples: Sequence[complex] | None = None) -> OrderConditionReport:
    """Evaluate every Table-row residual at the samples and classify the tableau."""
    zs = np.asarray(z_samples if z_samples is not None else DEFAULT_Z_SAMPLES, dtype=complex)
    strong = _condition_rows(tab, zs, weak=False)
    weak = _condition_rows(tab, zs, weak=True)
    residuals = {name: np.abs(res) for name, _, res in strong}
    orders = {name: order for name, order, _ in strong}
    # The first condition of order r is required at z = 0 only (reported as
    # psi_r_at_zero); the weakened requirement covers the composite sums.
    weak_residuals = {
        name: np.abs(res) for name, order, res in weak if order == tab.order and name.startswith("sum_")
    }
    for name, order, _ in weak:
        orders.setdefault(name, order)

    r = tab.order
    strong_ok = all(
        float(np.max(np.abs(res))) <= CONSTRUCTION_TOL for name, order, res in strong if order <= r - 1
    )
    psi_r0 = float(abs(psi_weight(tab, r, np.array([0.0 + 0.0j]))[0]))
    weak_ok = all(float(np.max(v)) <= CONSTRUCTION_TOL for v in weak_residuals.values())
    return OrderConditionReport(
        tableau=tab.name,
        declared_order=r,
        z_samples=tuple(zs.tolist()),
        residuals=residuals,
        orders=orders,
        weak_residuals=weak_residuals,
        strong_below_order_ok=strong_ok,
        psi_r_at_zero=psi_r0,
        weak_order_r_ok=weak_ok,
    )


def _validate_tableau(tab: Tableau, require_weak_at_zero: bool = True) -> None:
    if tab.explicit != all(
        tab.abar[i][j].is_zero for i in range(tab.stages) for j in range(i, tab.stages)
    ):
        raise ValueError(f"{tab.name}: explicit flag disagrees with abar sparsity")
    z0 = np.array([0.0 + 0.0j])
    for j in range(1, tab.order + 1):
        res = abs(psi_weight(tab, j, z0)[0])
        if res > CONSTRUCTION_TOL:
            raise ValueError(f"{tab.name}: psi_{j}(0) = {res:.3e} violates the classical conditions")
    if require_weak_at_zero:
        for name, order, res in _condition_rows(tab, z0, weak=True):
            if order <= tab.order and float(np.max(np.abs(res))) > CONSTRUCTION_TOL:
                raise ValueError(f"{tab.name}: weak condition {name} at z=0 residual {np.max(np.abs(res)):.3e}")


def _validate_strong_identities(tab: Tableau) -> None:
    """Loud construction check for order-4 tableaus: order <= 3 rows vanish in z."""
    report = check_order_conditions(tab)
    bad = [
        (name, report.max_residual(name))
        for name, order in report.orders.items()
        if name in report.residuals and order <= tab.order - 1 and report.max_residual(name) > CONSTRUCTION_TOL
    ]
    if bad:
        raise ValueError(f"{tab.name}: order-condition identities violated: {bad}")
    if report.psi_r_at_zero > CONSTRUCTION_TOL:
        raise ValueError(f"{tab.name}: psi_{tab.order}(0) = {report.psi_r_at_zero:.3e}")


def tableau_io2(literal: bool = False) -> Tableau:
    """One-stage implicit order-2 tableau (exponential midpoint).

    The default stage weight is c1*phi_1(c1 z), which makes the stage
    consistency row vanish identically.  literal=True keeps the plain
    phi_1(c1 z) weight instead; its stage row is then nonzero, which the
    order-condition report shows rather than asserts.
    """
    c1 = 0.5
    a11 = phi_multiplier(1, gamma=c1) if literal else phi_multiplier(1, gamma=c1, alpha=c1)
    tab = Tableau(
        name="io2-literal" if literal else "io2",
        order=2,
        c=(c1,),
        abar=((a11,),),
        bbar=(phi_multiplier(1),),
        explicit=False,
        min_init_order=2,
    )
    _validate_tableau(tab, require_weak_at_zero=not literal)
    return tab


def tableau_eo2() -> Tableau:
    """Two-stage explicit order-2 predictor-corrector.

    Stage one passes the step's start values into the nonlinearity; the
    midpoint stage uses the io2 stage weight, and the final update applies
    phi_1 to the stage value.
    """
    tab = Tableau(
        name="eo2",
        order=2,
        c=(0.0, 0.5),
        abar=(
            (ZERO_MULTIPLIER, ZERO_MULTIPLIER),
            (phi_multiplier(1, gamma=0.5, alpha=0.5), ZERO_MULTIPLIER),
        ),
        bbar=(ZERO_MULTIPLIER, phi_multiplier(1)),
        explicit=True,
        min_init_order=2,
    )
    _validate_tableau(tab)
    return tab


def tableau_io4() -> Tableau:
    """Three-stage implicit order-4 tableau with nodes (1, 1/2, 0).

    The third stage carries no weights (pure propagation).  The last term
    of the (2,3) entry uses the half-node argument phi_3(c2 z); with the
    full-argument variant the stage consistency row psi_{1,2} fails away
    from z = 0, which the construction check rejects.
    """
    phi1, phi2, phi3 = (phi_multiplier(k) for k in (1, 2, 3))
    phi1h, phi2h, phi3h = (phi_multiplier(k, gamma=0.5) for k in (1, 2, 3))
    b1 = 4.0 * phi3 + (-1.0) * phi2
    b2 = 4.0 * phi2 + (-8.0) * phi3
    b3 = phi1 + (-3.0) * phi2 + 4.0 * phi3
    a21 = (-0.25) * phi2h + 0.5 * phi3h
    a22 = phi2h + (-1.0) * phi3h
    a23 = 0.5 * phi1h + (-0.75) * phi2h + 0.5 * phi3h
    zero = ZERO_MULTIPLIER
    tab = Tableau(
        name="io4",
        order=4,
        c=(1.0, 0.5, 0.0),
        abar=((b1, b2, b3), (a21, a22, a23), (zero, zero, zero)),
        bbar=(b1, b2, b3),
        explicit=False,
        min_init_order=4,
    )
    _validate_tableau(tab)
    _validate_strong_identities(tab)
    return tab


def tableau_eo4() -> Tableau:
    """Five-stage explicit order-4 tableau with nodes (0, 1/2, 1/2, 1, 1/2).

    Two stage entries are repaired relative to their commonly mistyped
    forms: a52 carries phi_2(c4 z)/4 (a half factor there breaks the weak
    order-4 row at z = 0) and a54 = phi_2(c5 z)/4 - a52 (which makes the
    order-3 composite row vanish).  The construction check fails loudly if
    either identity is violated.
    """
    phi1, phi2, phi3 = (phi_multiplier(k) for k in (1, 2, 3))
    phi1h, phi2h, phi3h = (phi_multiplier(k, gamma=0.5) for k in (1, 2, 3))
    zero = ZERO_MULTIPLIER
    a21 = 0.5 * phi1h
    a31 = 0.5 * phi1h + (-1.0) * phi2h
    a32 = phi2h
    a41 = phi1 + (-2.0) * phi2
    a42 = phi2
    a43 = phi2
    a52 = 0.5 * phi2h + (-1.0) * phi3 + 0.25 * phi2 + (-0.5) * phi3h
    a53 = a52
    a54 = 0.25 * phi2h + (-1.0) * a52
    a51 = 0.5 * phi1h + (-2.0) * a52 + (-1.0) * a54
    b1 = phi1 + (-3.0) * phi2 + 4.0 * phi3
    b4 = (-1.0) * phi2 + 4.0 * phi3
    b5 = 4.0 * phi2 + (-8.0) * phi3
    tab = Tableau(
        name="eo4",
        order=4,
        c=(0.0, 0.5, 0.5, 1.0, 0.5),
        abar=(
            (zero, zero, zero, zero, zero),
            (a21, zero, zero, zero, zero),
            (a31, a32, zero, zero, zero),
            (a41, a42, a43, zero, zero),
            (a51, a52, a53, a54, zero),
        ),
        bbar=(b1, zero, zero, b4, b5),
        explicit=True,
        min_init_order=4,
    )
    _validate_tableau(tab)
    _validate_strong_identities(tab)
    return tab


_TABLEAUS: dict[str, Callable[[], Tableau]] = {
    "io2": tableau_io2,
    "io2-literal": lambda: tableau_io2(literal=True),
    "eo2": tableau_eo2,
    "io4": tableau_io4,
    "eo4": tableau_eo4,
}
_TABLEAU_CACHE: dict[str, Tableau] = {}


def get_tableau(name: str) -> Tableau:
    key = name.lower()
    if key not in _TABLEAUS:
        raise KeyError(f"unknown method {name!r}; known: {sorted(_TABLEAUS)}")
    if key not in _TABLEAU_CACHE:
        _TABLEAU_CACHE[key] = _TABLEAUS[key]()
    return _TABLEAU_CACHE[key]


def method_names() -> tuple[str, ...]:
    return tuple(sorted(_TABLEAUS))


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


@lru_cache(maxsize=128)
def _compiled_tables(tab: Tableau, h: float, eps_tilde: float, n_tau: int):
    """Per-mode multiplier tables; constant along a run, so cached."""
    sigma = h / eps_tilde
    props = tuple(multiplier_table(_PHI0, ci * sigma, n_tau) for ci in tab.c)
    prop_full = multiplier_table(_PHI0, sigma, n_tau)
    a_tabs = tuple(
        tuple(None if a.is_zero else multiplier_table(a, sigma, n_tau) for a in row) for row in tab.abar
    )
    b_tabs = tuple(None if b.is_zero else multiplier_table(b, sigma, n_tau) for b in tab.bbar)
    return props, prop_full, a_tabs, b_tabs


class FixedPointError(RuntimeError):
    """The implicit stage iteration failed to contract (step size too large)."""


def _advance(
    tab: Tableau,
    rhs: TwoScaleRHS,
    values: np.ndarray,
    h: float,
    eps_tilde: float,
    on_stages: Callable[[list[np.ndarray]], None] | None = None,
) -> np.ndarray:
    props, prop_full, a_tabs, b_tabs = _compiled_tables(tab, h, eps_tilde, rhs.n_tau)
    s = tab.stages
    uhat = np.fft.fft(values, axis=1)

    ghats: list[np.ndarray | None] = [None] * s
    if tab.explicit:
        for i in range(s):
            shat = props[i] * uhat
            for j in range(i):
                if a_tabs[i][j] is not None:
                    shat = shat + h * (a_tabs[i][j] * ghats[j])
            svals = np.fft.ifft(shat, axis=1).real
            if on_stages is not None:
                on_stages([svals])
            ghats[i] = np.fft.fft(rhs.apply(svals), axis=1)
    else:
        g0 = np.fft.fft(rhs.apply(values), axis=1)
        stage_vals = []
        for i in range(s):
            shat = props[i] * uhat
            for j in range(s):
                if a_tabs[i][j] is not None:
                    shat = shat + h * (a_tabs[i][j] * g0)
            stage_vals.append(np.fft.ifft(shat, axis=1).real)
        gap = math.inf
        for _ in range(FIXED_POINT_MAX_ITER):
            for j in range(s):
                ghats[j] = np.fft.fft(rhs.apply(stage_vals[j]), axis=1)
            gap = 0.0
            new_vals = []
            for i in range(s):
                shat = props[i] * uhat
                for j in range(s):
                    if a_tabs[i][j] is not None:
                        shat = shat + h * (a_tabs[i][j] * ghats[j])
                nv = np.fft.ifft(shat, axis=1).real
                gap = max(gap, float(np.max(np.abs(nv - stage_vals[i]))))
                new_vals.append(nv)
            stage_vals = new_vals
            if gap < FIXED_POINT_TOL:
                break
        else:
            raise FixedPointError(
                f"stage iteration did not reach {FIXED_POINT_TOL} in "
                f"{FIXED_POINT_MAX_ITER} iterations (last gap {gap:.3e}); h may be too large"
            )
        if on_stages is not None:
            on_stages(stage_vals)
        for j in range(s):
            ghats[j] = np.fft.fft(rhs.apply(stage_vals[j]), axis=1)

    out = prop_full * uhat
    for j in range(s):
        if b_tabs[j] is not None:
            out = out + h * (b_tabs[j] * ghats[j])
    new_values = np.fft.ifft(out, axis=1).real
    if not np.all(np.isfinite(new_values)):
        bad = int(np.argwhere(~np.all(np.isfinite(new_values), axis=0))[0][0])
        raise FloatingPointError(f"non-finite field values at tau node {bad}")
    return new_values


def step(tab: Tableau, rhs: TwoScaleRHS, state: TwoScaleState, h: float, eps_tilde: float) -> TwoScaleState:
    """One integrator step of size h (h < 0 runs the scheme backwards)."""
    if h == 0.0:
        raise ValueError("step size must be nonzero")
    new_values = _advance(tab, rhs, state.stacked(), h, eps_tilde)
    dim = rhs.dim
    return TwoScaleState(t=state.t + h, xfield=TauField(new_values[:dim]), vfield=TauField(new_values[dim:]))


@dataclass
class Trajectory:
    """Discrete trajectory: times, positions (n+1, d), velocities (n+1, d)."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    final_state: TwoScaleState | None = None

    @property
    def x_end(self) -> np.ndarray:
        return self.x[-1]

    @property
    def v_end(self) -> np.ndarray:
        return self.v[-1]


def snap_step_count(t_end: float, h: float) -> tuple[int, float]:
    """Round t_end/h to an integer step count, warning when it is not one."""
    if h <= 0.0:
        raise ValueError("step size must be positive")
    if t_end == 0.0:
        return 0, h
    n = max(1, round(t_end / h))
    if abs(n * h - t_end) > 1e-9 * max(1.0, abs(t_end)):
        warnings.warn(f"t_end/h = {t_end / h:.6g} is not an integer; using {n} steps of {t_end / n:.6g}")
    return n, t_end / n


def solve(
    problem: Problem2D | Problem3D,
    method: str | Tableau,
    h: float,
    n_tau: int = DEFAULT_N_TAU,
    t_end: float = 1.0,
    init_order: int | None = None,
    corrector_level_offset: int = 0,
) -> Trajectory:
    """Integrate a charged-particle problem with a two-scale exponential method.

    Builds the rescaling frame and two-scale right-hand side, prepares
    initial data of the tableau's required order (overridable), advances
    the periodic fields, and reconstructs physical (x, v) at every step.
    """
    tab = get_tableau(method) if isinstance(method, str) else method
    frame = frame_2d(problem) if isinstance(problem, Problem2D) else frame_3d(problem)
    rhs = make_rhs(problem, frame, n_tau)
    order = tab.min_init_order if init_order is None else init_order
    state = prepare_initial(
        rhs,
        initial_average(problem, frame),
        frame.eps_tilde,
        order,
        corrector_level_offset=corrector_level_offset,
    )

    n_steps, h = snap_step_count(t_end, h)
    dim = rhs.dim
    vel_scale = abs(frame.eps_tilde) if rhs.kind == "2d" else 1.0
    values = state.stacked()

    def field_norms(vals: np.ndarray) -> float:
        return max(float(np.max(np.abs(vals[:dim]))), float(np.max(np.abs(vals[dim:]))) / vel_scale)

    bound = GROWTH_LIMIT * max(field_norms(values), 1.0)

    def monitor(stage_vals: list[np.ndarray]) -> None:
        for sv in stage_vals:
            if field_norms(sv) > bound:
                raise RuntimeError(
                    f"two-scale stage fields exceeded {GROWTH_LIMIT}x their initial size; "
                    "the step size is too large for a stable run"
                )

    times = [0.0]
    x0, v0 = reconstruct(state, frame)
    xs, vs = [x0], [v0]
    for n in range(n_steps):
        values = _advance(tab, rhs, values, h, frame.eps_tilde, on_stages=monitor)
        monitor([values])
        state = TwoScaleState(t=(n + 1) * h, xfield=TauField(values[:dim]), vfield=TauField(values[dim:]))
        x, v = reconstruct(state, frame)
        check_field_strength(problem, x)
        times.append(state.t)
        xs.append(x)
        vs.append(v)
    return Trajectory(t=np.array(times), x=np.array(xs), v=np.array(vs), final_state=state)
