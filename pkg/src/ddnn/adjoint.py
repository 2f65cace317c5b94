"""Parameter gradients of the neural delay field by the adjoint DDE.

The costate alpha(t) = -dL/dz(t) obeys an advanced-delay equation, solved
backwards from the final time with the same Heun/Euler pair as the forward
solve:

    d alpha/dt = -alpha(t)^T f_z(t) - alpha(t + tau)^T f_v(t + tau),
    alpha(t) = 0 for t > T.

Each observation time contributes a jump ``alpha <- alpha - dL/dz(t_obs)``.
Forward states needed by the Jacobians are never recomputed by re-solving:
they are read from the checkpointed forward trajectory by interpolation.
The parameter gradient is the trapezoid quadrature of ``alpha^T f_theta``
over the accepted backward knots, times ``GRAD_SIGN``.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ddnn import kernels
from ddnn.errors import (
    MaxStepsExceeded,
    NonFiniteGradient,
    NonFiniteState,
    ObservationNotOnKnot,
    QueryBeyondTrajectory,
    StepUnderflow,
)
from ddnn.field import Combine, DelayField, DelayFieldSpec
from ddnn.solver import (
    HistorySpec,
    SolverConfig,
    Trajectory,
    _targets,
    adapt_step,
    interpolate,
    solve_dde,
)

# alpha carries the negated loss sensitivity, so int alpha^T f_theta dt is -dL/dtheta.
# Pinned against central finite differences in the test suite.
GRAD_SIGN = -1.0


@dataclass
class GradResult:
    grad_theta: np.ndarray
    loss: float
    n_backward_steps: int


class AdjointTrajectory:
    """Costate knots recorded from ``T`` down to ``t0``.

    Each knot keeps both one-sided limits: ``below`` (the value for times
    just under the knot, i.e. after an observation jump has been applied)
    and ``above``. Between knots the costate is linear; beyond ``T`` it is 0.
    """

    def __init__(self, t_end: float, alpha_end: np.ndarray):
        self.t_end = float(t_end)
        zero = np.zeros_like(alpha_end)
        self._neg_t = [-self.t_end]  # ascending keys for bisection
        self.above = [zero]
        self.below = [alpha_end]
        self._zero = zero

    def append(self, t: float, above: np.ndarray, below: np.ndarray) -> None:
        if not -t > self._neg_t[-1]:
            raise ValueError("adjoint knots must be recorded in decreasing time")
        self._neg_t.append(-t)
        self.above.append(above)
        self.below.append(below)

    @property
    def times(self) -> np.ndarray:
        return -np.array(self._neg_t)

    def __len__(self) -> int:
        return len(self._neg_t)

    def query(self, s: float, side: str = "below") -> np.ndarray:
        if s > self.t_end or (s == self.t_end and side == "above"):
            return self._zero
        keys = self._neg_t
        j = bisect_left(keys, -s)  # first knot with time <= s
        if j == len(keys):
            raise ValueError(f"costate not yet available at t={s}")
        if keys[j] == -s:
            return self.below[j] if side == "below" else self.above[j]
        t_lo, t_hi = -keys[j], -keys[j - 1]
        lo, hi = self.above[j], self.below[j - 1]
        return lo + (hi - lo) * ((s - t_lo) / (t_hi - t_lo))


class _Checkpoints:
    """Field activation records at forward states read back from the trajectory."""

    def __init__(self, fwd: Trajectory, field: DelayField):
        self.fwd = fwd
        self.field = field
        self.tau = field.tau
        self._memo: dict[float, object] = {}

    def at(self, s: float):
        cache = self._memo.get(s)
        if cache is None:
            z = interpolate(self.fwd, s)
            v = interpolate(self.fwd, s - self.tau)
            cache = self.field.forward(s, z, v)[1]
            self._memo[s] = cache
        return cache


def adjoint_rhs(
    t: float,
    alpha: np.ndarray,
    adj: AdjointTrajectory,
    fwd: Trajectory,
    field: DelayField,
    side: str = "below",
    _ckpt: _Checkpoints | None = None,
) -> np.ndarray:
    """d alpha/dt at ``t``; ``side`` picks the one-sided limit of alpha(t + tau)."""
    ckpt = _ckpt or _Checkpoints(fwd, field)
    wz, _ = field.vjp_inputs(ckpt.at(t), alpha)
    out = -wz
    s = t + field.tau
    if s < adj.t_end or (s == adj.t_end and side == "below"):
        adv = adj.query(s, side)
        # f_v at t + tau is the sensitivity of f(t+tau) to its delayed input z(t)
        _, wv = field.vjp_inputs(ckpt.at(s), adv)
        out = out - wv
    return out


def _backward_targets(t0: float, t_end: float, tau: float, obs_times: np.ndarray) -> np.ndarray:
    # jumps at observations, their kinks one delay earlier, then t0
    cand = np.concatenate([obs_times, obs_times - tau, [t_end, t_end - tau]])
    cand = np.unique(cand[(cand > t0) & (cand < t_end)])[::-1]
    return np.concatenate([cand, [t0]])


def _jumps(obs_times: np.ndarray, loss_grads: np.ndarray):
    """Unique observation times (descending) and summed jumps ``-dL/dz``."""
    times, inverse = np.unique(obs_times, return_inverse=True)
    vals = np.zeros((len(times),) + loss_grads.shape[1:])
    np.add.at(vals, inverse, -loss_grads)
    return times[::-1].copy(), vals[::-1].copy()


def _check_observations(fwd: Trajectory, obs_times: np.ndarray) -> None:
    tk = fwd.times
    idx = np.minimum(np.searchsorted(tk, obs_times), len(tk) - 1)
    bad = tk[idx] != obs_times
    if np.any(bad):
        raise ObservationNotOnKnot(f"observation time {obs_times[bad][0]} is not a forward knot")


def theta_quadrature(field: DelayField, fwd: Trajectory, times, above, below) -> np.ndarray:
    """Trapezoid rule for int alpha^T f_theta dt over descending costate knots.

    The costate may jump at a knot, so each knot weighs its ``above`` value by
    half the step above it and its ``below`` value by half the step below.
    """
    times = np.asarray(times, dtype=float)
    above = np.asarray(above, dtype=float)
    below = np.asarray(below, dtype=float)
    steps = times[:-1] - times[1:]
    h_up = np.concatenate([[0.0], steps])
    h_down = np.concatenate([steps, [0.0]])
    bshape = (-1,) + (1,) * (above.ndim - 1)
    weights = 0.5 * (h_up.reshape(bshape) * above + h_down.reshape(bshape) * below)
    z = interpolate_many(fwd, times)
    v = interpolate_many(fwd, times - field.tau)
    tcol = times.reshape((-1,) + (1,) * (z.ndim - 2))
    _, cache = field.forward(tcol, z, v)
    return field.vjp_theta(cache, weights)


def interpolate_many(fwd: Trajectory, times) -> np.ndarray:
    """Vectorised ``interpolate`` over an array of query times."""
    tk = fwd.times
    zk = fwd.states
    times = np.asarray(times, dtype=float)
    j = np.searchsorted(tk, times, side="left")
    if np.any(j == len(tk)):
        raise QueryBeyondTrajectory(f"query beyond last knot {tk[-1]}")
    jc = np.clip(j, 1, len(tk) - 1)
    t_lo, t_hi = tk[jc - 1], tk[jc]
    w = ((times - t_lo) / (t_hi - t_lo)).reshape((-1,) + (1,) * (zk.ndim - 1))
    out = zk[jc - 1] + (zk[jc] - zk[jc - 1]) * w
    exact = tk[j] == times
    out[exact] = zk[j[exact]]
    out[times <= fwd.t0] = fwd.history.value
    return out


def backward_pass(
    fwd: Trajectory,
    obs_times: Sequence[float],
    loss_grads,
    spec: DelayFieldSpec,
    theta,
    cfg: SolverConfig | None = None,
    fixed_h: float | None = None,
    loss: float = float("nan"),
    return_adjoint: bool = False,
    accelerate: bool = True,
):
    """Gradient of the loss with respect to ``theta``.

    ``loss_grads[k]`` is dL/dz at ``obs_times[k]``; every observation time
    must be a knot of ``fwd``. The backward integration reuses the forward
    step controller (or a fixed step ``fixed_h``), is capped at ``tau`` and
    lands exactly on observation times and on observation times minus tau.
    """
    cfg = cfg or SolverConfig()
    field = DelayField(spec, theta)
    tau = field.tau
    z_end = fwd.z_last
    obs_times = np.asarray(obs_times, dtype=float).reshape(-1)
    loss_grads = np.asarray(loss_grads, dtype=float).reshape((len(obs_times),) + z_end.shape)
    _check_observations(fwd, obs_times)
    t0, t_end = fwd.t0, fwd.t_last
    jump_t, jump_v = _jumps(obs_times, loss_grads)
    alpha_end = np.zeros_like(z_end)
    if len(jump_t) and jump_t[0] == t_end:
        alpha_end = jump_v[0]
        jump_t, jump_v = jump_t[1:], jump_v[1:]
    targets = _backward_targets(t0, t_end, tau, obs_times)
    if accelerate and not return_adjoint and _accelerated(spec, fixed_h):
        times, above, below = _fixed_backward_compiled(
            field, fwd, targets, jump_t, jump_v, alpha_end, min(float(fixed_h), tau)
        )
        return _finish(field, fwd, times, above, below, loss, None, return_adjoint)

    jumps = dict(zip(jump_t.tolist(), jump_v))
    adj = AdjointTrajectory(t_end, alpha_end)
    ckpt = _Checkpoints(fwd, field)

    h = min(fixed_h, tau) if fixed_h is not None else min(cfg.h_init, cfg.h_max, tau)
    t = t_end
    steps = 0
    for target in targets.tolist():
        while t > target:
            steps += 1
            if steps > cfg.max_steps:
                raise MaxStepsExceeded(f"adjoint exceeded {cfg.max_steps} steps at t={t}")
            gap = t - target
            landing = gap <= h * (1.0 + 1e-9) and gap <= tau
            h_try = gap if landing else h
            assert h_try <= tau
            a = adj.below[-1]
            k1 = adjoint_rhs(t, a, adj, fwd, field, "below", ckpt)
            k2 = adjoint_rhs(t - h_try, a - h_try * k1, adj, fwd, field, "above", ckpt)
            a_new = a - h_try * (0.5 * k1 + 0.5 * k2)
            if fixed_h is None:
                err = 0.5 * h_try * (k2 - k1)
                accept, h_next = adapt_step(err, a, a_new, h_try, cfg)
                h_next = min(h_next, tau)
                if not accept:
                    if h_try <= cfg.h_min:
                        raise StepUnderflow(f"adjoint tolerance unattainable at t={t}")
                    h = h_next
                    continue
                if h_try >= h:
                    h = h_next
            t = target if landing else t - h_try
            jump = jumps.get(t)
            adj.append(t, a_new, a_new if jump is None else a_new + jump)

    return _finish(field, fwd, adj.times, adj.above, adj.below, loss, adj, return_adjoint)


def _fixed_backward_compiled(field, fwd, targets, jump_t, jump_v, alpha_end, h):
    spec = field.spec
    shape = alpha_end.shape
    bshape = _as_batch(alpha_end).shape
    times, above, below = kernels.fixed_backward(
        field.W1, field.b1, field.W2, field.b2,
        spec.combine is Combine.CONCAT, spec.lam, spec.include_time, spec.tau,
        fwd.t0, _as_batch(fwd.history.value), fwd.times,
        fwd.states.reshape((len(fwd),) + bshape),
        targets, jump_t, jump_v.reshape((len(jump_t),) + bshape), _as_batch(alpha_end), h,
    )
    n = len(times)
    return times, above.reshape((n,) + shape), below.reshape((n,) + shape)


def _finish(field, fwd, times, above, below, loss, adj, return_adjoint):
    q = theta_quadrature(field, fwd, times, above, below)
    # the history is theta-independent (z_theta = 0 on [t0 - tau, t0]), so the
    # second integral of the gradient formula vanishes identically
    history_term = np.zeros_like(q)
    grad = GRAD_SIGN * q - history_term
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("adjoint produced a non-finite gradient")
    result = GradResult(grad, loss, len(times) - 1)
    return (result, adj) if return_adjoint else result


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], theta, eps: float = 1e-5) -> np.ndarray:
    """Central differences ``(L(theta + eps e_j) - L(theta - eps e_j)) / (2 eps)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    theta = np.array(theta, dtype=float)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        orig = theta[j]
        theta[j] = orig + eps
        up = loss_fn(theta.copy())
        theta[j] = orig - eps
        down = loss_fn(theta.copy())
        theta[j] = orig
        grad[j] = (up - down) / (2.0 * eps)
    return grad


def _accelerated(spec: DelayFieldSpec, fixed_h) -> bool:
    return fixed_h is not None and spec.activation == "tanh"


def _as_batch(x: np.ndarray) -> np.ndarray:
    return x.reshape(1, -1) if x.ndim == 1 else x


def solve_field(
    field: DelayField,
    history: HistorySpec,
    t0: float,
    t_end: float,
    mandatory_times: Sequence[float] = (),
    cfg: SolverConfig | None = None,
    fixed_h: float | None = None,
    accelerate: bool = True,
) -> Trajectory:
    """Forward solve of the neural DDE, compiled in fixed-step mode."""
    if not (accelerate and _accelerated(field.spec, fixed_h)):
        return solve_dde(field, history, t0, t_end, cfg, mandatory_times, fixed_h)
    if not t_end > t0:
        raise ValueError(f"t_end={t_end} must exceed t0={t0}")
    if not fixed_h > 0:
        raise ValueError("fixed_h must be positive")
    spec = field.spec
    targets = np.array(_targets(t0, t_end, mandatory_times))
    z0 = history.value
    tf, zf = kernels.fixed_forward(
        field.W1, field.b1, field.W2, field.b2,
        spec.combine is Combine.CONCAT, spec.lam, spec.include_time, spec.tau,
        float(t0), _as_batch(z0), targets, min(float(fixed_h), spec.tau),
    )
    zf = zf.reshape((len(tf),) + z0.shape)
    if not np.all(np.isfinite(zf)):
        raise NonFiniteState("non-finite state in forward solve")
    traj = Trajectory.from_arrays(t0, history, tf, zf)
    traj.n_rhs_evals = 2 * (len(tf) - 1)
    return traj
