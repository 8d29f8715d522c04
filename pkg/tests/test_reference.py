import math

import numpy as np
import pytest

from tsexp.phi import rot2
from tsexp.problems import Problem2D, builtin_2d, builtin_3d
from tsexp.reference import (
    GAUSS_B,
    _gauss4_run,
    boris_solve,
    gauss4_solve,
    gauss4_step,
    reference_solution,
)


def uniform_field_problem(eps=0.25, b0=1.0, e0=(0.0, 0.0)):
    e0 = np.asarray(e0, dtype=float)
    return Problem2D(
        b=lambda x: b0 * np.ones_like(np.asarray(x[0], dtype=float)),
        e=lambda x: np.stack(
            [e0[0] * np.ones_like(np.asarray(x[0], dtype=float)), e0[1] * np.ones_like(np.asarray(x[0], dtype=float))]
        ),
        x0=np.array([0.2, -0.1]),
        v0=np.array([0.3, 0.4]),
        eps=eps,
        name="uniform",
    )


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def fit_slope(hs, errs):
    lx, ly = np.log2(np.array(hs)), np.log2(np.array(errs))
    return np.polyfit(lx, ly, 1)[0]


def test_boris_preserves_speed_without_electric_field():
    p = uniform_field_problem()
    traj = boris_solve(p, 2.0**-5, 1.0)
    speeds = np.linalg.norm(traj.v, axis=1)
    np.testing.assert_allclose(speeds, speeds[0], rtol=1e-14)


def test_boris_second_order(ref_cache):
    p = builtin_2d(0.5)
    ref = ref_cache(p, 1e-10)
    hs = [2.0**-k for k in range(4, 8)]
    errs = [rel_err(boris_solve(p, h, 1.0).x_end, ref.x) for h in hs]
    assert 1.7 < fit_slope(hs, errs) < 2.3


def test_boris_degrades_with_stronger_field(ref_cache):
    h = 2.0**-3
    e_weak = rel_err(boris_solve(builtin_2d(0.5), h, 1.0).x_end, ref_cache(builtin_2d(0.5), 1e-10).x)
    e_strong = rel_err(
        boris_solve(builtin_2d(2.0**-6), h, 1.0).x_end, ref_cache(builtin_2d(2.0**-6), 1e-10).x
    )
    assert e_strong > e_weak


def test_gauss_step_matches_pade_on_linear_problem():
    for lam, h in ((-2.0, 0.7), (1.3, 0.4)):
        f = lambda y: lam * y
        y1 = gauss4_step(f, np.array([1.0]), h)
        z = lam * h
        expected = (1.0 + z / 2.0 + z**2 / 12.0) / (1.0 - z / 2.0 + z**2 / 12.0)
        assert abs(y1[0] - expected) < 1e-12


def test_gauss_fourth_order(ref_cache):
    p = builtin_2d(0.5)
    ref = ref_cache(p, 1e-12)
    hs = [2.0**-k for k in range(3, 7)]
    errs = [rel_err(gauss4_solve(p, h, 1.0).x_end, ref.x) for h in hs]
    assert 3.6 < fit_slope(hs, errs) < 4.4


def test_gauss_conserves_speed_in_uniform_field():
    p = uniform_field_problem(eps=0.125)
    traj = gauss4_solve(p, 2.0**-5, 1.0)
    speeds = np.linalg.norm(traj.v, axis=1)
    np.testing.assert_allclose(speeds, speeds[0], atol=1e-12)


def test_step_doubling_gap_shrinks_sixteenfold():
    p = builtin_2d(0.25)
    h = 2.0**-7
    ends = [_gauss4_run(p, h / 2**i, 1.0, record=False) for i in range(3)]
    g1 = np.linalg.norm(ends[1].x_end - ends[0].x_end) + np.linalg.norm(ends[1].v_end - ends[0].v_end)
    g2 = np.linalg.norm(ends[2].x_end - ends[1].x_end) + np.linalg.norm(ends[2].v_end - ends[1].v_end)
    assert 10.0 < g1 / g2 < 22.0


def test_reference_meets_tolerance_quickly():
    p = builtin_2d(0.5)
    ref = reference_solution(p, 1.0, 1e-10)
    assert ref.estimated_accuracy <= 1e-10
    # initial run plus at most two halvings
    h0 = min(p.eps / 200.0, 1e-3)
    base_steps = round(1.0 / (1.0 / math.ceil(1.0 / h0)))
    assert ref.steps_used <= base_steps * (1 + 2 + 4)


def test_reference_reproduces_circular_motion():
    p = uniform_field_problem(eps=0.25)
    ref = reference_solution(p, 1.0, 1e-10)
    s = 1.0 / p.eps
    r = rot2(s)
    v_exact = r.phi0 @ p.v0
    x_exact = p.x0 + (r.sphi1 / s) @ p.v0
    assert np.linalg.norm(ref.x - x_exact) < 1e-10
    assert np.linalg.norm(ref.v - v_exact) < 1e-10


def test_reference_3d(ref_cache):
    ref = ref_cache(builtin_3d(2.0**-4), 1e-9)
    assert ref.estimated_accuracy <= 1e-9
    assert ref.x_accuracy <= ref.estimated_accuracy
    assert ref.v_accuracy <= ref.estimated_accuracy


def test_reference_rejects_too_tight_tolerance():
    with pytest.raises(ValueError):
        reference_solution(builtin_2d(0.5), 1.0, 1e-13)


def test_reference_zero_time():
    p = builtin_2d(0.5)
    ref = reference_solution(p, 0.0, 1e-10)
    np.testing.assert_allclose(ref.x, p.x0)
    assert ref.steps_used == 0


def test_gauss_weights_sum_to_one():
    assert abs(float(np.sum(GAUSS_B)) - 1.0) < 1e-15
