import math

import numpy as np
import pytest

from tsexp.problems import (
    Problem2D,
    TrajectoryDomainError,
    builtin_2d,
    builtin_3d,
    check_field_strength,
    compile_expression,
    frame_2d,
    frame_3d,
    get_problem,
    load_problem_file,
    register_problem,
    remainder_2d,
    remainder_3d,
)
from tsexp.reference import boris_solve, gauss4_solve


def test_builtin_2d_fields():
    p = builtin_2d(0.25)
    assert abs(float(p.b(np.array([0.0, 0.0]))) - 1.0) < 1e-15
    assert abs(float(p.b(np.array([math.pi / 2, math.pi / 2]))) - 2.0) < 1e-12
    np.testing.assert_allclose(p.e(np.array([0.0, 0.0])), [0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(p.x0, [0.1, 0.1])
    np.testing.assert_allclose(p.v0, [0.2, 0.1])


def test_builtin_3d_fields():
    p = builtin_3d(0.25)
    np.testing.assert_allclose(p.e(np.array([1.0, 0.0, 1.0])), [1.0, 0.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(p.e(np.array([0.0, 1.0, 5.0])), [0.0, 1.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(p.field_at(np.zeros(3)), [0.0, 0.0, 4.0], atol=1e-14)


def test_builtin_3d_axis_guard():
    p = builtin_3d(0.25)
    with pytest.raises(TrajectoryDomainError):
        p.e(np.array([1e-9, 0.0, 0.3]))


def test_eps_validation():
    with pytest.raises(ValueError):
        builtin_2d(0.0)
    with pytest.raises(ValueError):
        builtin_2d(1.5)


def test_frames():
    p2 = builtin_2d(0.25)
    fr2 = frame_2d(p2)
    assert abs(fr2.eps_tilde * fr2.b0 - p2.eps) < 1e-16
    p3 = builtin_3d(0.125)
    fr3 = frame_3d(p3)
    np.testing.assert_allclose(fr3.bhat0, -fr3.bhat0.T, atol=1e-15)
    np.testing.assert_allclose(fr3.bhat0 @ fr3.axis, np.zeros(3), atol=1e-15)
    assert abs(np.linalg.norm(fr3.axis) - 1.0) < 1e-14
    assert abs(fr3.eps_tilde * fr3.b0norm - p3.eps) < 1e-16


def test_signed_frame():
    p = Problem2D(
        b=lambda x: -1.5 * np.ones_like(np.asarray(x[0], dtype=float)),
        e=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        x0=np.zeros(2),
        v0=np.ones(2),
        eps=0.5,
    )
    fr = frame_2d(p)
    assert fr.b0 == -1.5
    assert fr.eps_tilde < 0.0


def test_remainder_2d_reductions():
    p = builtin_2d(0.25)
    fr = frame_2d(p)
    out = remainder_2d(fr, p, p.x0, np.array([0.3, -0.7]))
    np.testing.assert_allclose(out, fr.eps_tilde * np.asarray(p.e(p.x0)), atol=1e-15)
    q = np.array([0.4, -0.2])
    out = remainder_2d(fr, p, q, np.zeros(2))
    np.testing.assert_allclose(out, fr.eps_tilde * np.asarray(p.e(q)), atol=1e-15)


def test_remainder_2d_hand_evaluation():
    # Direct transcription with scalar math at a nearby displaced point.
    p = builtin_2d(0.25)
    fr = frame_2d(p)
    q = np.array([0.11, 0.1])
    pp = np.array([0.03, -0.01])
    b0 = 1.0 + math.sin(0.1) * math.sin(0.1)
    eps_tilde = 0.25 / b0
    bq = 1.0 + math.sin(0.11) * math.sin(0.1)
    coeff = (bq - b0) / (eps_tilde * b0)
    e_q = np.array([math.cos(0.055) * math.sin(0.1) / 2.0, math.sin(0.055) * math.cos(0.1)])
    expected = coeff * np.array([pp[1], -pp[0]]) + eps_tilde * e_q
    np.testing.assert_allclose(remainder_2d(fr, p, q, pp), expected, atol=1e-15)


def test_remainder_3d_reductions():
    p = builtin_3d(0.125)
    fr = frame_3d(p)
    np.testing.assert_allclose(
        remainder_3d(fr, p, p.x0, np.array([0.1, 0.2, 0.3])), np.asarray(p.e(p.x0)), atol=1e-14
    )
    x = np.array([0.5, 0.3, 0.2])
    np.testing.assert_allclose(remainder_3d(fr, p, x, np.zeros(3)), np.asarray(p.e(x)), atol=1e-14)


def test_remainder_3d_bounded_in_eps():
    x = builtin_3d(0.125).x0 + np.array([0.1, 0.0, 0.0])
    v = builtin_3d(0.125).v0
    norms = []
    for eps in (1.0 / 8.0, 1.0 / 64.0):
        p = builtin_3d(eps)
        norms.append(np.linalg.norm(remainder_3d(frame_3d(p), p, x, v)))
    assert norms[0] < 4.0 * norms[1] + 4.0
    assert norms[1] < 4.0 * norms[0] + 4.0


def test_remainder_3d_uniform_along_trajectories():
    # Maximal ordering: sup ||F|| along a trajectory varies by < 4x over eps.
    sups = []
    for k in range(3, 9):
        p = builtin_3d(2.0**-k)
        fr = frame_3d(p)
        traj = boris_solve(p, p.eps / 50.0, 1.0)
        vals = [np.linalg.norm(remainder_3d(fr, p, x, v)) for x, v in zip(traj.x[::10], traj.v[::10])]
        sups.append(max(vals))
    assert max(sups) / min(sups) < 4.0


def test_field_drift_scales_with_eps(ref_cache):
    # |b(q(t)) - b(q(0))| stays O(eps) along reference trajectories, with a
    # stable ratio under halving.
    drifts = []
    for k in range(2, 6):
        p = builtin_2d(2.0**-k)
        traj = gauss4_solve(p, p.eps / 100.0, 1.0)
        b0 = float(p.b(p.x0))
        drift = max(abs(float(p.b(x)) - b0) for x in traj.x)
        drifts.append(drift / (p.eps / b0))
    for a, b in zip(drifts, drifts[1:]):
        assert a / b < 4.0 and b / a < 4.0


def test_bounded_positions_and_scaled_velocity(ref_cache):
    # sup_t (|q| + |p/eps|) stays bounded uniformly as eps shrinks.
    bounds = []
    for k in (2, 4, 6):
        p = builtin_2d(2.0**-k)
        traj = gauss4_solve(p, p.eps / 100.0, 1.0)
        sup = max(np.linalg.norm(x) + np.linalg.norm(v) for x, v in zip(traj.x, traj.v))
        bounds.append(sup)
    assert max(bounds) < 4.0 * min(bounds)


def test_field_strength_guard():
    p = Problem2D(
        b=lambda x: np.asarray(x[0], dtype=float),
        e=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        x0=np.array([1.0, 0.0]),
        v0=np.array([0.0, 1.0]),
        eps=0.5,
    )
    check_field_strength(p, np.array([1.0, 0.0]))
    with pytest.raises(TrajectoryDomainError):
        check_field_strength(p, np.array([0.0, 0.0]))
    with pytest.raises(TrajectoryDomainError):
        frame_2d(Problem2D(p.b, p.e, np.zeros(2), p.v0, 0.5))


def test_registry():
    assert get_problem("paper-2d").name == "paper-2d"
    assert get_problem("paper-3d", eps=0.25).eps == 0.25
    with pytest.raises(KeyError):
        get_problem("no-such-problem")
    register_problem("constant-b", lambda eps: builtin_2d(0.5 if eps is None else eps))
    assert get_problem("constant-b", eps=0.125).eps == 0.125


def test_expression_compiler():
    fn = compile_expression("1 + sin(x1)*sin(x2)", ("x1", "x2"))
    assert abs(fn(0.3, 0.4) - (1 + math.sin(0.3) * math.sin(0.4))) < 1e-15
    arr = fn(np.array([0.1, 0.2]), np.array([0.3, 0.4]))
    assert arr.shape == (2,)
    with pytest.raises(ValueError):
        compile_expression("__import__('os')", ("x1",))
    with pytest.raises(ValueError):
        compile_expression("x1.real", ("x1",))
    with pytest.raises(ValueError):
        compile_expression("unknown_fn(x1)", ("x1",))


def test_problem_file_round_trip(tmp_path):
    cfg = tmp_path / "custom.problem"
    cfg.write_text(
        """
        # planar benchmark clone
        dim = 2
        eps = 0.25
        b = 1 + sin(x1)*sin(x2)
        e1 = cos(x1/2)*sin(x2)/2
        e2 = sin(x1/2)*cos(x2)
        x0 = 0.1, 0.1
        v0 = 0.2, 0.1
        """
    )
    p = load_problem_file(cfg)
    ref = builtin_2d(0.25)
    pts = np.array([[0.1, 0.5, -1.2], [0.1, -0.3, 2.0]])
    np.testing.assert_allclose(p.b(pts), ref.b(pts), atol=1e-14)
    np.testing.assert_allclose(p.e(pts), ref.e(pts), atol=1e-14)
    assert get_problem(str(cfg), eps=0.125).eps == 0.125


def test_problem_file_3d(tmp_path):
    cfg = tmp_path / "three.problem"
    cfg.write_text(
        """
        dim = 3
        eps = 0.125
        b1 = -y1
        b2 = 0*y1
        b3 = 1 + y3
        e1 = x1 / sqrt(x1*x1 + x2*x2)**3
        e2 = x2 / sqrt(x1*x1 + x2*x2)**3
        e3 = 0*x3
        x0 = 0.3333333333333333, 0.25, 0.5
        v0 = 0.4, 0.6666666666666666, 1.0
        """
    )
    p = load_problem_file(cfg)
    ref = builtin_3d(0.125)
    x = np.array([0.4, -0.3, 0.7])
    np.testing.assert_allclose(p.bvec(0.125 * x), ref.bvec(0.125 * x), atol=1e-14)
    np.testing.assert_allclose(p.e(x), ref.e(x), atol=1e-14)
