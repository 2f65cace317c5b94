"""Adjoint-versus-finite-difference check on a small toy delay network.

The network follows the toy setup (d = 2, tau = 2.5, lambda = 0.75 when
convex) with a narrower hidden layer so central differences stay cheap. The
loss is the trajectory MSE against the true toy system at five observation
times on [0, 4], solved and back-propagated with the same fixed step.

The reported error for one seed is ``|g_j - fd_j| / max_k |fd_k|``
summarised by its maximum and median over components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ddnn.adjoint import backward_pass, finite_diff_grad, interpolate_many, solve_field
from ddnn.datagen import TOY_HISTORY, TOY_TAU, toy_truth
from ddnn.field import DelayField, DelayFieldSpec, init_params
from ddnn.solver import HistorySpec

OBS_TIMES = (0.8, 1.6, 2.4, 3.2, 4.0)
HIDDEN = 10
FD_EPS = 1e-5


@dataclass(frozen=True)
class GradcheckResult:
    mode: str
    seed: int
    h: float
    max_rel: float
    median_rel: float


def toy_spec(mode: str, hidden_dim: int = HIDDEN) -> DelayFieldSpec:
    if mode not in ("concat", "convex"):
        raise ValueError(f"unknown mode {mode!r}")
    return DelayFieldSpec(2, hidden_dim, combine=mode, lam=0.75, tau=TOY_TAU)


class ToyLoss:
    """``theta -> MSE`` over the observation times, plus its adjoint gradient."""

    def __init__(self, spec: DelayFieldSpec, h: float, obs_times=OBS_TIMES):
        self.spec = spec
        self.h = h
        self.obs = np.asarray(obs_times, dtype=float)
        self.target = toy_truth(self.obs)
        self.history = HistorySpec(TOY_HISTORY)

    def _forward(self, theta):
        traj = solve_field(
            DelayField(self.spec, theta), self.history, 0.0, float(self.obs[-1]), self.obs,
            fixed_h=self.h,
        )
        resid = interpolate_many(traj, self.obs) - self.target
        return traj, float(np.mean(resid * resid)), 2.0 * resid / resid.size

    def __call__(self, theta) -> float:
        return self._forward(theta)[1]

    def grad(self, theta) -> np.ndarray:
        traj, loss, dldz = self._forward(theta)
        return backward_pass(traj, self.obs, dldz, self.spec, theta, fixed_h=self.h, loss=loss).grad_theta


def relative_errors(g, fd) -> np.ndarray:
    scale = np.max(np.abs(fd))
    return np.abs(np.asarray(g) - fd) / (scale if scale > 0 else 1.0)


def gradcheck(mode: str, seed: int, h: float = 1e-3, hidden_dim: int = HIDDEN) -> GradcheckResult:
    spec = toy_spec(mode, hidden_dim)
    theta = init_params(spec, seed)
    loss = ToyLoss(spec, h)
    rel = relative_errors(loss.grad(theta), finite_diff_grad(loss, theta, FD_EPS))
    return GradcheckResult(mode, seed, h, float(rel.max()), float(np.median(rel)))
