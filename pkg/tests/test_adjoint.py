import math

import numpy as np
import pytest

import ddnn.adjoint as adjoint_mod
from ddnn.adjoint import (
    GRAD_SIGN,
    AdjointTrajectory,
    adjoint_rhs,
    backward_pass,
    finite_diff_grad,
    interpolate_many,
    solve_field,
)
from ddnn.errors import MaxStepsExceeded, NonFiniteGradient, ObservationNotOnKnot, QueryBeyondTrajectory
from ddnn.field import DelayField, DelayFieldSpec, init_params, unpack
from ddnn.gradcheck import ToyLoss, gradcheck, relative_errors, toy_spec
from ddnn.solver import HistorySpec, SolverConfig, interpolate

from oracles import heun_unroll_grad, node_adjoint_grad


def rel(a, b):
    return np.max(np.abs(np.asarray(a) - b)) / np.max(np.abs(b))


def toy_problem(mode="convex", seed=0, h=1e-2):
    spec = toy_spec(mode)
    theta = init_params(spec, seed)
    loss = ToyLoss(spec, h)
    traj, value, dldz = loss._forward(theta)
    return spec, theta, loss, traj, value, dldz


# -- finite_diff_grad -------------------------------------------------------


def test_fd_constant_is_zero():
    assert not finite_diff_grad(lambda th: 3.0, np.ones(4)).any()


def test_fd_quadratic_is_exact():
    theta = np.array([0.5, -1.25, 2.0])
    np.testing.assert_allclose(finite_diff_grad(lambda th: th @ th / 2, theta), theta, rtol=1e-9)


def test_fd_sine():
    g = finite_diff_grad(lambda th: math.sin(th[0]), np.array([0.3]), 1e-6)
    assert abs(g[0] - math.cos(0.3)) < 1e-8


def test_fd_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda th: 0.0, np.ones(1), 0.0)


# -- AdjointTrajectory / adjoint_rhs ----------------------------------------


def test_adjoint_trajectory_zero_beyond_end():
    adj = AdjointTrajectory(2.0, np.array([1.0, -1.0]))
    assert not adj.query(2.5).any()
    assert not adj.query(2.0, "above").any()
    assert adj.query(2.0, "below").tolist() == [1.0, -1.0]


def test_adjoint_trajectory_one_sided_and_linear():
    adj = AdjointTrajectory(2.0, np.array([2.0]))
    adj.append(1.0, np.array([4.0]), np.array([10.0]))
    assert adj.query(1.0, "above").tolist() == [4.0]
    assert adj.query(1.0, "below").tolist() == [10.0]
    assert adj.query(1.5).tolist() == [3.0]
    with pytest.raises(ValueError):
        adj.append(1.5, np.zeros(1), np.zeros(1))


def test_advanced_term_vanishes_near_final_time():
    spec, theta, _, traj, _, _ = toy_problem()
    field = DelayField(spec, theta)
    T = traj.t_last
    adj = AdjointTrajectory(T, np.array([0.3, -0.7]))
    t = T - 0.5 * spec.tau
    alpha = np.array([1.0, 2.0])
    z, v = interpolate(traj, t), interpolate(traj, t - spec.tau)
    wz, _ = field.vjp_inputs(field.forward(t, z, v)[1], alpha)
    np.testing.assert_array_equal(adjoint_rhs(t, alpha, adj, traj, field), -wz)


def test_bias_only_field_keeps_costate_constant_between_jumps():
    spec = DelayFieldSpec(2, 3, "convex", tau=0.7)
    theta = np.zeros(spec.n_params)
    theta[slice(*spec.offsets["b2"])] = [0.5, -0.25]
    traj = solve_field(DelayField(spec, theta), HistorySpec([1.0, 1.0]), 0.0, 2.0, [1.0], fixed_h=0.1)
    grads = np.array([[1.0, 2.0], [3.0, -1.0]])
    _, adj = backward_pass(traj, [1.0, 2.0], grads, spec, theta, fixed_h=0.1, return_adjoint=True)
    for t, a in zip(adj.times, adj.below):
        expected = -grads[1] if t > 1.0 else -grads[1] - grads[0]
        np.testing.assert_array_equal(a, expected)


def test_scalar_linear_field_matches_closed_form():
    # f = w z: the costate obeys alpha' = -w alpha, so alpha(t) = alpha(T) exp(w (T - t))
    w = -0.8
    spec = DelayFieldSpec(1, 1, "convex", lam=1.0, tau=0.5, activation="identity")
    theta = np.array([1.0, 0.0, w, 0.0])
    field = DelayField(spec, theta)
    cfg = SolverConfig(rtol=1e-10, atol=1e-10)
    traj = solve_field(field, HistorySpec([1.0]), 0.0, 2.0, cfg=cfg)
    _, adj = backward_pass(traj, [2.0], [[1.0]], spec, theta, cfg, return_adjoint=True)
    expected = -np.exp(w * (2.0 - adj.times))
    np.testing.assert_allclose(np.ravel(adj.below), expected, rtol=1e-7)


# -- backward_pass ----------------------------------------------------------


def test_zero_loss_gradient_gives_zero():
    spec, theta, _, traj, _, dldz = toy_problem()
    res, adj = backward_pass(traj, [0.8, 4.0], np.zeros((2, 2)), spec, theta, fixed_h=1e-2, return_adjoint=True)
    assert not res.grad_theta.any()
    assert not np.any(adj.above) and not np.any(adj.below)


def test_grad_sign_is_pinned():
    assert GRAD_SIGN == -1.0


@pytest.mark.parametrize("mode", ["convex", "concat"])
def test_gradient_matches_finite_differences(mode):
    r = gradcheck(mode, seed=3, h=1e-2)
    assert r.max_rel < 1e-3


@pytest.mark.slow
@pytest.mark.parametrize("mode", ["convex", "concat"])
def test_gradcheck_twenty_seeds_median_decreases_with_step(mode):
    medians = []
    for h in (1e-2, 1e-3, 1e-4):
        rs = [gradcheck(mode, seed, h) for seed in range(20)]
        if h == 1e-3:
            assert max(r.max_rel for r in rs) < 1e-3
        medians.append(np.median([r.max_rel for r in rs]))
    assert medians[0] > medians[1] > medians[2]


def test_flipped_sign_would_fail_finite_differences(monkeypatch):
    spec, theta, loss, traj, _, dldz = toy_problem()
    fd = finite_diff_grad(loss, theta)
    monkeypatch.setattr(adjoint_mod, "GRAD_SIGN", 1.0)
    flipped = backward_pass(traj, loss.obs, dldz, spec, theta, fixed_h=loss.h).grad_theta
    assert relative_errors(flipped, fd).max() > 1.0


@pytest.mark.parametrize("mode", ["convex", "concat"])
def test_adaptive_gradient_matches_finite_differences(mode):
    spec = toy_spec(mode)
    theta = init_params(spec, 1)
    fd = finite_diff_grad(ToyLoss(spec, 1e-3), theta)
    loss = ToyLoss(spec, None)
    cfg = SolverConfig(rtol=1e-7, atol=1e-7)
    traj = solve_field(DelayField(spec, theta), loss.history, 0.0, 4.0, loss.obs, cfg)
    resid = interpolate_many(traj, loss.obs) - loss.target
    g = backward_pass(traj, loss.obs, 2 * resid / resid.size, spec, theta, cfg).grad_theta
    assert relative_errors(g, fd).max() < 1e-4


def _lambda_one_setup(seed=3):
    spec = DelayFieldSpec(2, 8, "convex", lam=1.0, tau=1.0)
    theta = init_params(spec, seed)
    target = np.array([0.2, 0.4])
    return spec, theta, np.array([0.5, -0.3]), (lambda z: z - target)


def test_lambda_one_matches_heun_unroll_backprop():
    spec, theta, z0, dl = _lambda_one_setup()
    h = 1e-2
    traj = solve_field(DelayField(spec, theta), HistorySpec(z0), 0.0, 2.0, fixed_h=h)
    g = backward_pass(traj, [2.0], [dl(traj.z_last)], spec, theta, fixed_h=h).grad_theta
    ref = heun_unroll_grad(*unpack(spec, theta), z0, 2.0, h, dl)
    assert rel(g, ref) < 1e-3


def test_lambda_one_matches_plain_node_adjoint():
    spec, theta, z0, dl = _lambda_one_setup(4)
    h = 1e-3
    traj = solve_field(DelayField(spec, theta), HistorySpec(z0), 0.0, 2.0, fixed_h=h)
    g = backward_pass(traj, [2.0], [dl(traj.z_last)], spec, theta, fixed_h=h).grad_theta
    ref = node_adjoint_grad(*unpack(spec, theta), z0, 2.0, h, dl)
    assert rel(g, ref) < 1e-6


def test_split_observation_gives_identical_result():
    spec, theta, loss, traj, _, dldz = toy_problem()
    one = backward_pass(traj, loss.obs, dldz, spec, theta, fixed_h=loss.h)
    obs2 = np.concatenate([loss.obs, loss.obs[2:3]])
    g2 = np.concatenate([dldz, dldz[2:3] / 2])
    g2[2] = dldz[2] / 2
    two = backward_pass(traj, obs2, g2, spec, theta, fixed_h=loss.h)
    assert np.array_equal(one.grad_theta, two.grad_theta)
    assert one.n_backward_steps == two.n_backward_steps


def test_observation_off_knot_raises():
    spec, theta, _, traj, _, _ = toy_problem()
    with pytest.raises(ObservationNotOnKnot):
        backward_pass(traj, [0.8001], [[1.0, 1.0]], spec, theta, fixed_h=1e-2)


@pytest.mark.filterwarnings("ignore:invalid value")
def test_non_finite_gradient_raises():
    spec, theta, loss, traj, _, dldz = toy_problem()
    dldz = dldz.copy()
    dldz[0, 0] = np.inf
    with pytest.raises(NonFiniteGradient):
        backward_pass(traj, loss.obs, dldz, spec, theta, fixed_h=loss.h)


def test_backward_max_steps():
    spec, theta, loss, traj, _, dldz = toy_problem()
    with pytest.raises(MaxStepsExceeded):
        backward_pass(traj, loss.obs, dldz, spec, theta, SolverConfig(max_steps=3))


def test_backward_never_resolves_forward(monkeypatch):
    spec, theta, loss, traj, _, dldz = toy_problem()

    def forbidden(*args, **kwargs):
        raise AssertionError("backward pass must reuse checkpoints")

    monkeypatch.setattr(adjoint_mod, "solve_dde", forbidden)
    monkeypatch.setattr(adjoint_mod, "solve_field", forbidden)
    for accelerate in (True, False):
        res = backward_pass(traj, loss.obs, dldz, spec, theta, fixed_h=loss.h, accelerate=accelerate)
        # knots: the forward grid plus the observation times shifted by one delay
        assert res.n_backward_steps <= len(traj) + len(loss.obs) + 2


@pytest.mark.parametrize("mode", ["convex", "concat"])
@pytest.mark.parametrize("include_time", [False, True])
def test_compiled_backward_matches_reference(mode, include_time):
    spec = DelayFieldSpec(2, 6, mode, lam=0.7, tau=0.9, include_time=include_time)
    theta = init_params(spec, 2)
    obs = np.array([0.5, 1.0, 1.45, 2.0])
    hist = HistorySpec(np.array([[0.3, -0.1], [1.0, 0.5], [-0.4, 0.2]]))
    grads = np.random.default_rng(0).normal(size=(4, 3, 2))
    out = []
    for accelerate in (True, False):
        traj = solve_field(DelayField(spec, theta), hist, 0.0, 2.0, obs, fixed_h=0.03, accelerate=accelerate)
        out.append((traj, backward_pass(traj, obs, grads, spec, theta, fixed_h=0.03, accelerate=accelerate)))
    (t1, r1), (t2, r2) = out
    np.testing.assert_array_equal(t1.times, t2.times)
    np.testing.assert_allclose(t1.states, t2.states, rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(r1.grad_theta, r2.grad_theta, rtol=1e-11, atol=1e-13)
    assert r1.n_backward_steps == r2.n_backward_steps


def test_interpolate_many_matches_scalar_interpolate():
    spec, theta, _, traj, _, _ = toy_problem()
    qs = np.array([-1.0, 0.0, 0.013, 0.8, 2.2222, 4.0])
    many = interpolate_many(traj, qs)
    for q, row in zip(qs, many):
        np.testing.assert_array_equal(row, interpolate(traj, q))
    with pytest.raises(QueryBeyondTrajectory):
        interpolate_many(traj, [4.5])
