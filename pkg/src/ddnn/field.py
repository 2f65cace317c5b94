"""Neural delay field f(t, z(t), z(t - tau); theta).

A two-layer MLP applied to a combination of the current and delayed state:

    u     = z || v                      (concat)
          = lam * z + (1 - lam) * v     (convex)
    u     = [u, t]                      (when include_time)
    dz/dt = W2 @ act(W1 @ u + b1) + b2

Parameters live in one flat vector laid out as (W1, b1, W2, b2), matrices
row-major. All state arguments may carry leading batch axes ``(..., d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ddnn.errors import DimensionMismatch, NonFiniteOutput, StaleCache
from ddnn.rng import Xoshiro256


class Combine(str, Enum):
    CONCAT = "concat"
    CONVEX = "convex"


ACTIVATIONS = ("tanh", "identity")


@dataclass(frozen=True)
class DelayFieldSpec:
    state_dim: int
    hidden_dim: int
    combine: Combine = Combine.CONVEX
    lam: float = 0.75
    tau: float = 1.0
    include_time: bool = False
    activation: str = "tanh"  # "identity" exists for hand-checkable tests

    def __post_init__(self):
        object.__setattr__(self, "combine", Combine(self.combine))
        if self.state_dim < 1 or self.hidden_dim < 1:
            raise ValueError("state_dim and hidden_dim must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def combined_width(self) -> int:
        d = self.state_dim
        return 2 * d if self.combine is Combine.CONCAT else d

    @property
    def in_width(self) -> int:
        return self.combined_width + int(self.include_time)

    @property
    def offsets(self) -> dict[str, tuple[int, int]]:
        """``name -> (start, stop)`` slices of the flat parameter vector."""
        H, d, n_in = self.hidden_dim, self.state_dim, self.in_width
        sizes = [("W1", H * n_in), ("b1", H), ("W2", d * H), ("b2", d)]
        out, pos = {}, 0
        for name, size in sizes:
            out[name] = (pos, pos + size)
            pos += size
        return out

    @property
    def n_params(self) -> int:
        H, d = self.hidden_dim, self.state_dim
        return H * self.in_width + H + d * H + d


def unpack(spec: DelayFieldSpec, theta: np.ndarray):
    """Views ``(W1, b1, W2, b2)`` into ``theta``; no copies."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_params,):
        raise DimensionMismatch(f"theta has shape {theta.shape}, expected ({spec.n_params},)")
    off = spec.offsets
    H, d = spec.hidden_dim, spec.state_dim
    W1 = theta[slice(*off["W1"])].reshape(H, spec.in_width)
    b1 = theta[slice(*off["b1"])]
    W2 = theta[slice(*off["W2"])].reshape(d, H)
    b2 = theta[slice(*off["b2"])]
    return W1, b1, W2, b2


def pack(W1, b1, W2, b2) -> np.ndarray:
    return np.concatenate([np.ravel(W1), np.ravel(b1), np.ravel(W2), np.ravel(b2)]).astype(float)


def combine(spec: DelayFieldSpec, z, v) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    d = spec.state_dim
    if z.shape[-1:] != (d,) or v.shape[-1:] != (d,):
        raise DimensionMismatch(f"expected trailing dimension {d}, got {z.shape} and {v.shape}")
    if spec.combine is Combine.CONCAT:
        z, v = np.broadcast_arrays(z, v)
        return np.concatenate([z, v], axis=-1)
    return spec.lam * z + (1.0 - spec.lam) * v


@dataclass
class FieldCache:
    """Activation record of one (possibly batched) evaluation."""

    theta: np.ndarray
    u: np.ndarray
    act: np.ndarray


class DelayField:
    """The neural right-hand side bound to a parameter vector.

    Satisfies the solver's DelayRHS interface (``tau`` and ``eval``).
    """

    def __init__(self, spec: DelayFieldSpec, theta: np.ndarray):
        self.spec = spec
        self.theta = np.asarray(theta, dtype=float)
        self.W1, self.b1, self.W2, self.b2 = unpack(spec, self.theta)
        self.tau = spec.tau
        self._identity = spec.activation == "identity"

    def _input(self, t, z, v) -> np.ndarray:
        u = combine(self.spec, z, v)
        if self.spec.include_time:
            tcol = np.broadcast_to(np.asarray(t, dtype=float), u.shape[:-1])[..., None]
            u = np.concatenate([u, tcol], axis=-1)
        return u

    def forward(self, t, z, v) -> tuple[np.ndarray, FieldCache]:
        u = self._input(t, z, v)
        pre = u @ self.W1.T + self.b1
        act = pre if self._identity else np.tanh(pre)
        out = act @ self.W2.T + self.b2
        return out, FieldCache(self.theta, u, act)

    def eval(self, t, z, v) -> np.ndarray:
        return self.forward(t, z, v)[0]

    def _check(self, cache: FieldCache) -> None:
        if cache.theta is not self.theta and not np.array_equal(cache.theta, self.theta):
            raise StaleCache("cache was produced with different parameters")

    def _grad_pre(self, cache: FieldCache, a) -> np.ndarray:
        g_act = np.asarray(a, dtype=float) @ self.W2
        return g_act if self._identity else g_act * (1.0 - cache.act * cache.act)

    def vjp_inputs(self, cache: FieldCache, a) -> tuple[np.ndarray, np.ndarray]:
        """``(a^T df/dz, a^T df/dv)``."""
        self._check(cache)
        g_u = self._grad_pre(cache, a) @ self.W1
        d = self.spec.state_dim
        if self.spec.combine is Combine.CONCAT:
            return g_u[..., :d], g_u[..., d : 2 * d]
        g = g_u[..., :d]
        return self.spec.lam * g, (1.0 - self.spec.lam) * g

    def vjp_theta(self, cache: FieldCache, a) -> np.ndarray:
        """``a^T df/dtheta``, summed over any leading batch axes."""
        self._check(cache)
        a = np.asarray(a, dtype=float)
        g_pre = self._grad_pre(cache, a)
        H, n_in, d = self.spec.hidden_dim, self.spec.in_width, self.spec.state_dim
        gp = g_pre.reshape(-1, H)
        u = cache.u.reshape(-1, n_in)
        act = cache.act.reshape(-1, H)
        a2 = a.reshape(-1, d)
        return pack(gp.T @ u, gp.sum(axis=0), a2.T @ act, a2.sum(axis=0))


@dataclass
class VjpTriple:
    wrt_z: np.ndarray
    wrt_v: np.ndarray
    wrt_theta: np.ndarray


def field_eval(spec: DelayFieldSpec, theta, t, z, v) -> tuple[np.ndarray, FieldCache]:
    out, cache = DelayField(spec, theta).forward(t, z, v)
    if not np.all(np.isfinite(out)):
        raise NonFiniteOutput("field produced non-finite output")
    return out, cache


def field_vjp(spec: DelayFieldSpec, theta, cache: FieldCache, a) -> VjpTriple:
    field = DelayField(spec, theta)
    wz, wv = field.vjp_inputs(cache, a)
    return VjpTriple(wz, wv, field.vjp_theta(cache, a))


def init_params(spec: DelayFieldSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases, drawn from xoshiro256** in layout order."""
    rng = Xoshiro256(seed)
    H, d, n_in = spec.hidden_dim, spec.state_dim, spec.in_width
    s1 = math.sqrt(6.0 / (n_in + H))
    s2 = math.sqrt(6.0 / (H + d))
    W1 = rng.uniform(-s1, s1, H * n_in)
    W2 = rng.uniform(-s2, s2, d * H)
    return pack(W1, np.zeros(H), W2, np.zeros(d))
