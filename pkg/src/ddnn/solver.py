"""Explicit integrators for constant-delay differential equations.

    dz/dt = g(t, z(t), z(t - tau)),  t > t0
    z(t)  = phi(t),                  t <= t0

The adaptive integrator is the embedded Euler/Heun pair (RK12). Past states
needed by the delayed argument are served by linear interpolation between the
accepted knots of the trajectory being built. Steps are capped at ``tau`` so
the delayed stage argument ``t + c*h - tau`` never lies beyond the last knot.

A classical fixed-step RK4 integrator over the same history machinery is
provided as an accuracy reference.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol

import numpy as np

from ddnn.errors import (
    MaxStepsExceeded,
    NonFiniteState,
    QueryBeyondTrajectory,
    StepExceedsDelay,
    StepUnderflow,
)

# growth/shrink clamp of the step controller
FACTOR_MIN = 0.2
FACTOR_MAX = 5.0


class DelayRHS(Protocol):
    """Right-hand side g(t, z, v) with v = z(t - tau)."""

    tau: float

    def eval(self, t: float, z: np.ndarray, v: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class FunctionRHS:
    """Adapts a plain callable ``func(t, z, v)`` to the DelayRHS interface."""

    func: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"delay must be positive, got {self.tau}")

    def eval(self, t, z, v):
        return self.func(t, z, v)


@dataclass(frozen=True)
class HistorySpec:
    """Constant history phi(t) = value for all t <= t0."""

    value: np.ndarray

    def __post_init__(self):
        value = np.array(self.value, dtype=float)
        if value.ndim == 0:
            value = value.reshape(1)
        if not np.all(np.isfinite(value)):
            raise NonFiniteState("history value must be finite")
        value.setflags(write=False)
        object.__setattr__(self, "value", value)

    def __call__(self, t: float) -> np.ndarray:
        return self.value


@dataclass(frozen=True)
class SolverConfig:
    rtol: float = 1e-6
    atol: float = 1e-6
    h_init: float = 1e-2
    h_min: float = 1e-10
    h_max: float = math.inf  # the solver additionally caps every step at tau
    safety: float = 0.9
    max_steps: int = 200_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if not (0 < self.h_min <= self.h_init <= self.h_max):
            raise ValueError("need 0 < h_min <= h_init <= h_max")
        if not (0 < self.safety <= 1):
            raise ValueError("safety must lie in (0, 1]")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")


class Trajectory:
    """Accepted knots ``(t_i, z_i)`` of a solve plus the history they extend.

    Queries at or before ``t0`` return the history, queries inside the knot
    range interpolate linearly. Knots are append-only; once a solve returns,
    the trajectory is treated as immutable.
    """

    def __init__(self, t0: float, history: HistorySpec):
        self.t0 = float(t0)
        self.history = history
        self._t: list[float] = [self.t0]
        self._z: list[np.ndarray] = [history(self.t0)]
        self.n_accepted = 0
        self.n_rejected = 0
        self.n_rhs_evals = 0
        self._arrays = None

    @classmethod
    def from_arrays(cls, t0: float, history: HistorySpec, times, states) -> "Trajectory":
        """Wrap knots produced elsewhere (first knot must be ``(t0, history)``)."""
        traj = cls(t0, history)
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        if times[0] != traj.t0 or np.any(np.diff(times) <= 0):
            raise ValueError("knot times must start at t0 and strictly increase")
        states = states.copy()
        states[0] = history(t0)
        traj._t = times.tolist()
        traj._z = list(states)
        traj._arrays = (times.copy(), states)  # already stacked; skip the rebuild on first access
        traj.n_accepted = len(times) - 1
        return traj

    def append(self, t: float, z: np.ndarray) -> None:
        if not t > self._t[-1]:
            raise ValueError(f"knot time {t} not after {self._t[-1]}")
        self._t.append(t)
        self._z.append(z)

    def __len__(self) -> int:
        return len(self._t)

    def __call__(self, t: float) -> np.ndarray:
        return interpolate(self, t)

    @property
    def times(self) -> np.ndarray:
        cached = self._arrays
        if cached is None or len(cached[0]) != len(self._t):
            self._arrays = cached = (np.array(self._t), np.stack(self._z))
        return cached[0]

    @property
    def states(self) -> np.ndarray:
        self.times
        return self._arrays[1]

    @property
    def t_last(self) -> float:
        return self._t[-1]

    @property
    def z_last(self) -> np.ndarray:
        return self._z[-1]

    def knot_index(self, t: float) -> int:
        """Index of the knot at exactly ``t``, or -1."""
        i = bisect_left(self._t, t)
        if i < len(self._t) and self._t[i] == t:
            return i
        return -1


def interpolate(traj: Trajectory, t: float) -> np.ndarray:
    if t <= traj.t0:
        return traj.history(t)
    ts = traj._t
    if t > ts[-1]:
        raise QueryBeyondTrajectory(f"t={t} beyond last knot {ts[-1]}")
    i = bisect_left(ts, t)
    zs = traj._z
    tk = ts[i]
    if tk == t:
        return zs[i]
    ti = ts[i - 1]
    zi = zs[i - 1]
    return zi + (zs[i] - zi) * ((t - ti) / (tk - ti))


def rk12_step(rhs: DelayRHS, traj: Trajectory, t: float, h: float):
    """One Heun step with embedded Euler error estimate from the last knot.

    Returns ``(z_new, err)`` with ``err = h/2 * (k2 - k1)``; ``traj`` is
    not modified.
    """
    if h > rhs.tau:
        raise StepExceedsDelay(f"step {h} exceeds delay {rhs.tau}")
    z = traj.z_last
    k1 = rhs.eval(t, z, interpolate(traj, t - rhs.tau))
    # with h == tau the delayed point is t itself; rounding must not push it past t
    k2 = rhs.eval(t + h, z + h * k1, interpolate(traj, min(t + h - rhs.tau, t)))
    z_new = z + h * (0.5 * k1 + 0.5 * k2)
    err = -0.5 * h * k1 + 0.5 * h * k2
    return z_new, err


def error_norm(err, z_old, z_new, rtol: float, atol: float) -> float:
    scale = atol + rtol * np.maximum(np.abs(z_old), np.abs(z_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def adapt_step(err, z_old, z_new, h: float, cfg: SolverConfig) -> tuple[bool, float]:
    """Accept/reject decision and next step size for the order-1 error estimate."""
    e = error_norm(err, z_old, z_new, cfg.rtol, cfg.atol)
    if e == 0.0:
        factor = FACTOR_MAX
    else:
        factor = min(FACTOR_MAX, max(FACTOR_MIN, cfg.safety * e ** -0.5))
    h_next = min(cfg.h_max, max(cfg.h_min, h * factor))
    return e <= 1.0, h_next


def _targets(t0: float, t_end: float, mandatory_times: Iterable[float]) -> list[float]:
    times = np.asarray(list(mandatory_times) if not isinstance(mandatory_times, np.ndarray) else mandatory_times, dtype=float)
    targets = np.unique(np.concatenate([times.reshape(-1), [float(t_end)]]))
    if targets[0] <= t0 or targets[-1] > t_end:
        raise ValueError("mandatory times must lie in (t0, t_end]")
    return targets.tolist()


def solve_dde(
    rhs: DelayRHS,
    history: HistorySpec,
    t0: float,
    t_end: float,
    cfg: SolverConfig | None = None,
    mandatory_times: Iterable[float] = (),
    fixed_h: float | None = None,
) -> Trajectory:
    """Integrate from ``t0`` to ``t_end`` with RK12.

    Every entry of ``mandatory_times`` (and ``t_end``) becomes a knot exactly,
    by truncating the step that would pass it. With ``fixed_h`` set the
    controller is bypassed and every step of size ``min(fixed_h, tau)`` is
    accepted.
    """
    if not t_end > t0:
        raise ValueError(f"t_end={t_end} must exceed t0={t0}")
    cfg = cfg or SolverConfig()
    tau = rhs.tau
    targets = _targets(t0, t_end, mandatory_times)
    traj = Trajectory(t0, history)
    if fixed_h is not None:
        if not fixed_h > 0:
            raise ValueError("fixed_h must be positive")
        h = min(fixed_h, tau)
    else:
        h = min(cfg.h_init, cfg.h_max, tau)
    t = float(t0)
    steps = 0
    for target in targets:
        while t < target:
            steps += 1
            if steps > cfg.max_steps:
                raise MaxStepsExceeded(f"exceeded {cfg.max_steps} steps at t={t}")
            gap = target - t
            # land on the target when within a hair of it to avoid a sliver step
            landing = gap <= h * (1.0 + 1e-9) and gap <= tau
            h_try = gap if landing else h
            assert h_try <= tau
            z_old = traj.z_last
            z_new, err = rk12_step(rhs, traj, t, h_try)
            traj.n_rhs_evals += 2
            if fixed_h is not None:
                accept = True
            else:
                accept, h_next = adapt_step(err, z_old, z_new, h_try, cfg)
                h_next = min(h_next, tau)
            if not accept:
                traj.n_rejected += 1
                if h_try <= cfg.h_min:
                    raise StepUnderflow(f"tolerance unattainable at t={t} with h={h_try}")
                h = h_next
                continue
            if not np.all(np.isfinite(z_new)):
                raise NonFiniteState(f"non-finite state at t={t + h_try}")
            t = target if landing else t + h_try
            traj.append(t, z_new)
            traj.n_accepted += 1
            # a truncated landing step says little about the natural step size
            if fixed_h is None and h_try >= h:
                h = h_next
    return traj


def solve_fixed_rk4(
    rhs: DelayRHS,
    history: HistorySpec,
    t0: float,
    t_end: float,
    h: float,
    max_steps: int = 10_000_000,
) -> Trajectory:
    """Classical RK4 on the uniform grid ``linspace(t0, t_end, n + 1)``.

    ``n = ceil((t_end - t0)/h)`` (exact quotients are not rounded up), so the
    realised step never exceeds ``h``. Delayed stage arguments are served by
    linear interpolation on the knots computed so far.
    """
    if not t_end > t0:
        raise ValueError(f"t_end={t_end} must exceed t0={t0}")
    if h > rhs.tau:
        raise StepExceedsDelay(f"step {h} exceeds delay {rhs.tau}")
    span = t_end - t0
    n = round(span / h)
    if abs(n * h - span) > 1e-9 * span:
        n = math.ceil(span / h)
    if n > max_steps:
        raise MaxStepsExceeded(f"{n} steps requested, limit {max_steps}")
    dt = span / n
    grid = t0 + span * (np.arange(n + 1) / n)
    grid[-1] = t_end
    tau = rhs.tau
    traj = Trajectory(t0, history)
    f = rhs.eval
    z = traj.z_last
    zs = traj._z
    phi = history(t0)

    def delayed(s: float) -> np.ndarray:
        # uniform grid: bracket by index arithmetic instead of bisection
        if s <= t0:
            return phi
        p = (s - t0) / dt
        i = int(p)
        w = p - i
        if w == 0.0 or i + 1 >= len(zs):
            return zs[min(i, len(zs) - 1)]
        zi = zs[i]
        return zi + (zs[i + 1] - zi) * w

    v_end = delayed(t0 - tau)
    for k in range(n):
        t = float(grid[k])
        t1 = float(grid[k + 1])
        hk = t1 - t
        half = 0.5 * hk
        tm = t + half
        v_mid = delayed(tm - tau)
        k1 = f(t, z, v_end)
        k2 = f(tm, z + half * k1, v_mid)
        k3 = f(tm, z + half * k2, v_mid)
        v_end = delayed(t1 - tau)
        k4 = f(t1, z + hk * k3, v_end)
        z = z + (hk / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        zs.append(z)
    traj._t = grid.tolist()
    if not np.all(np.isfinite(traj.states)):
        raise NonFiniteState("non-finite state in fixed-step RK4 solve")
    traj.n_accepted = n
    traj.n_rhs_evals = 4 * n
    return traj
