import math

import numpy as np
import pytest

from tsexp.problems import Problem2D, Problem3D, builtin_2d, builtin_3d, frame_2d, frame_3d, remainder_2d
from tsexp.taugrid import TauField, average, evaluate_at, linv, nodes
from tsexp.twoscale import (
    TwoScaleState,
    initial_average,
    make_rhs,
    prepare_initial,
    reconstruct_2d,
    reconstruct_3d,
    rhs_2d,
    rhs_3d,
)
from tsexp.integrators import solve, step, get_tableau


def planar_pair(eps=0.125):
    """Matching 2D problem and its 3D embedding with a unit vertical field."""

    def e2(x):
        return np.stack([0.3 * np.cos(x[1]), 0.2 * np.sin(x[0])])

    def e3(x):
        z = np.zeros_like(np.asarray(x[2], dtype=float))
        return np.stack([0.3 * np.cos(x[1]), 0.2 * np.sin(x[0]), z])

    def bv(y):
        o = np.ones_like(np.asarray(y[0], dtype=float))
        return np.stack([0.0 * o, 0.0 * o, o])

    p2 = Problem2D(
        b=lambda x: np.ones_like(np.asarray(x[0], dtype=float)),
        e=e2,
        x0=np.array([0.1, 0.2]),
        v0=np.array([0.2, -0.1]),
        eps=eps,
        name="plane",
    )
    p3 = Problem3D(
        bvec=bv,
        e=e3,
        x0=np.array([0.1, 0.2, 0.0]),
        v0=np.array([0.2, -0.1, 0.0]),
        eps=eps,
        name="embedded",
    )
    return p2, p3


def test_rhs_2d_zero_angle_node():
    p = builtin_2d(0.25)
    fr = frame_2d(p)
    rhs = rhs_2d(fr, p, 64)
    x = np.array([0.2, -0.1])
    v = np.array([0.05, 0.02])
    u = np.concatenate([x, v])
    out = rhs.eval_node(0, u)
    f = remainder_2d(fr, p, x, v)
    np.testing.assert_allclose(out[:2], [0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(out[2:], f, atol=1e-15)


def test_rhs_2d_zero_velocity_field():
    p = builtin_2d(0.25)
    fr = frame_2d(p)
    n = 64
    rhs = rhs_2d(fr, p, n)
    u = np.concatenate([p.x0, np.zeros(2)])
    out = rhs.apply(np.repeat(u[:, None], n, axis=1))
    e0 = fr.eps_tilde * np.asarray(p.e(p.x0))
    for l, tau in enumerate(nodes(n)):
        s, c = math.sin(-tau), math.cos(-tau)
        sphi1_neg = np.array([[s, 1.0 - c], [c - 1.0, s]])
        phi0_neg = np.array([[c, s], [-s, c]])
        np.testing.assert_allclose(out[:2, l], sphi1_neg @ e0, atol=1e-14)
        np.testing.assert_allclose(out[2:, l], phi0_neg @ e0, atol=1e-14)


def test_rhs_2d_half_turn_hand_composition():
    # At tau = pi the three matrix factors have entries 0, +-1, +-2 only.
    p = builtin_2d(0.25)
    fr = frame_2d(p)
    n = 64
    rhs = rhs_2d(fr, p, n)
    x = p.x0.copy()
    v = np.array([0.01, 0.0])
    u = np.concatenate([x, v])
    out = rhs.eval_node(n // 2, u)
    q = x + np.array([[0.0, 2.0], [-2.0, 0.0]]) @ v
    pv = -v
    f = remainder_2d(fr, p, q, pv)
    np.testing.assert_allclose(out[:2], np.array([[0.0, 2.0], [-2.0, 0.0]]) @ f, atol=1e-14)
    np.testing.assert_allclose(out[2:], -f, atol=1e-14)


def test_rhs_nodewise_independence():
    p = builtin_2d(0.25)
    rhs = make_rhs(p, frame_2d(p), 32)
    rng = np.random.RandomState(5)
    vals = 0.1 * rng.standard_normal((4, 32))
    full = rhs.apply(vals)
    for l in (0, 7, 19):
        np.testing.assert_allclose(full[:, l], rhs.eval_node(l, vals[:, l]), atol=1e-14)


def test_rhs_3d_reductions():
    p = builtin_3d(0.125)
    fr = frame_3d(p)
    rhs = rhs_3d(fr, p, 64)
    w = np.array([0.1, -0.2, 0.3])
    u = np.concatenate([p.x0, w])
    out = rhs.eval_node(0, u)
    np.testing.assert_allclose(out[:3], w, atol=1e-15)
    np.testing.assert_allclose(out[3:], np.asarray(p.e(p.x0)), atol=1e-14)
    u0 = np.concatenate([p.x0, np.zeros(3)])
    out0 = rhs.apply(np.repeat(u0[:, None], 64, axis=1))
    np.testing.assert_allclose(out0[:3], 0.0, atol=1e-15)


def test_planar_embedding_matches_2d():
    p2, p3 = planar_pair()
    t2 = solve(p2, "eo4", h=2.0**-5, t_end=1.0)
    t3 = solve(p3, "eo4", h=2.0**-5, t_end=1.0)
    assert np.linalg.norm(t3.x_end[:2] - t2.x_end) < 1e-10
    assert np.linalg.norm(t3.v_end[:2] - t2.v_end) < 1e-10
    assert abs(t3.x_end[2]) < 1e-14 and abs(t3.v_end[2]) < 1e-14


def test_prepare_order_zero_and_cap():
    p = builtin_2d(0.25)
    fr = frame_2d(p)
    rhs = make_rhs(p, fr, 32)
    u0 = initial_average(p, fr)
    st = prepare_initial(rhs, u0, fr.eps_tilde, 0)
    np.testing.assert_allclose(st.stacked(), u0[:, None] * np.ones((1, 32)), atol=1e-15)
    with pytest.raises(ValueError):
        prepare_initial(rhs, u0, fr.eps_tilde, 5)


def test_prepare_first_order_transcription():
    # j = 1 must equal the one-line assembly built from the public grid ops.
    p = builtin_2d(0.25)
    fr = frame_2d(p)
    n = 64
    rhs = make_rhs(p, fr, n)
    u0 = initial_average(p, fr)
    st = prepare_initial(rhs, u0, fr.eps_tilde, 1)
    f0 = TauField(rhs.apply(np.repeat(u0[:, None], n, axis=1)))
    mean_free = TauField(f0.values - average(f0)[:, None])
    corr = linv(mean_free)
    expected = u0[:, None] + fr.eps_tilde * (corr.values - evaluate_at(corr, 0.0)[:, None])
    np.testing.assert_allclose(st.stacked(), expected, atol=1e-13)


def test_prepare_corrections_vanish_linearly():
    p = builtin_2d(0.25)
    fr = frame_2d(p)
    rhs = make_rhs(p, fr, 64)
    u0 = initial_average(p, fr)
    sizes = []
    for et in (1e-2, 1e-3, 1e-4):
        st = prepare_initial(rhs, u0, et, 2)
        sizes.append(np.max(np.abs(st.stacked() - u0[:, None])))
    slopes = [math.log10(sizes[i] / sizes[i + 1]) for i in range(2)]
    for s in slopes:
        assert 0.9 < s < 1.1


def test_prepared_velocity_field_scales_with_eps():
    ratios = []
    for k in range(1, 7):
        p = builtin_2d(2.0**-k)
        fr = frame_2d(p)
        rhs = make_rhs(p, fr, 64)
        st = prepare_initial(rhs, initial_average(p, fr), fr.eps_tilde, 2)
        ratios.append(np.max(np.abs(st.vfield.values)) / abs(fr.eps_tilde))
    assert max(ratios) / min(ratios) < 4.0


def test_well_prepared_slow_time_derivative():
    # With j >= 1 data, one tiny step moves the fields away from pure
    # transport at rate O(eps); the normalized rate is stable under halving.
    from tsexp.taugrid import apply_multiplier, phi_multiplier

    rates = []
    h = 1e-3
    for k in (2, 3, 4, 5):
        p = builtin_2d(2.0**-k)
        fr = frame_2d(p)
        rhs = make_rhs(p, fr, 64)
        st = prepare_initial(rhs, initial_average(p, fr), fr.eps_tilde, 2)
        st1 = step(get_tableau("eo2"), rhs, st, h, fr.eps_tilde)
        free_x = apply_multiplier(phi_multiplier(0), h / fr.eps_tilde, st.xfield)
        rate = np.max(np.abs(st1.xfield.values - free_x.values)) / h
        rates.append(rate / abs(fr.eps_tilde))
    for a, b in zip(rates, rates[1:]):
        assert a / b < 4.0 and b / a < 4.0


def test_reconstruct_round_trip_2d():
    for eps in (0.5, 0.125):
        p = builtin_2d(eps)
        fr = frame_2d(p)
        rhs = make_rhs(p, fr, 64)
        st = prepare_initial(rhs, initial_average(p, fr), fr.eps_tilde, 4)
        x, v = reconstruct_2d(st, fr)
        assert np.linalg.norm(x - p.x0) < 1e-10
        assert np.linalg.norm(v - p.v0) < 1e-10


def test_reconstruct_round_trip_3d():
    p = builtin_3d(0.125)
    fr = frame_3d(p)
    rhs = make_rhs(p, fr, 64)
    st = prepare_initial(rhs, initial_average(p, fr), fr.eps_tilde, 4)
    x, v = reconstruct_3d(st, fr)
    assert np.linalg.norm(x - p.x0) < 1e-10
    assert np.linalg.norm(v - p.v0) < 1e-10


def test_reconstruct_special_cases():
    p = builtin_2d(0.25)
    fr = frame_2d(p)
    n = 32
    xf = TauField(np.stack([np.cos(nodes(n)), np.sin(nodes(n))]))
    zero_v = TauField(np.zeros((2, n)))
    st = TwoScaleState(t=0.37, xfield=xf, vfield=zero_v)
    x, v = reconstruct_2d(st, fr)
    tau_star = (0.37 / fr.eps_tilde) % (2 * math.pi)
    np.testing.assert_allclose(x, evaluate_at(xf, tau_star), atol=1e-14)
    np.testing.assert_allclose(v, [0.0, 0.0], atol=1e-14)

    vf = TauField(np.stack([0.2 + 0.1 * np.cos(nodes(n)), 0.1 * np.sin(nodes(n))]))
    st0 = TwoScaleState(t=0.0, xfield=xf, vfield=vf)
    x0, v0 = reconstruct_2d(st0, fr)
    np.testing.assert_allclose(x0, xf.values[:, 0], atol=1e-13)
    np.testing.assert_allclose(v0, vf.values[:, 0] / fr.eps_tilde, atol=1e-13)


def test_reconstruct_3d_full_turn():
    p = builtin_3d(0.125)
    fr = frame_3d(p)
    n = 32
    xf = TauField(np.zeros((3, n)))
    wf = TauField(np.stack([0.3 * np.ones(n), 0.1 * np.cos(nodes(n)), -0.2 * np.ones(n)]))
    st = TwoScaleState(t=2 * math.pi * fr.eps_tilde, xfield=xf, vfield=wf)
    _, v = reconstruct_3d(st, fr)
    np.testing.assert_allclose(v, wf.values[:, 0], atol=1e-12)


def test_diagonal_consistency_with_reference(ref_cache):
    # A fine two-scale solve on the diagonal matches the stiff-system oracle.
    p = builtin_2d(0.25)
    ref = ref_cache(p, 1e-10)
    traj = solve(p, "eo2", h=2.0**-7, t_end=1.0)
    assert np.linalg.norm(traj.x_end - ref.x) < 1e-6
    assert np.linalg.norm(traj.v_end - ref.v) < 1e-6
