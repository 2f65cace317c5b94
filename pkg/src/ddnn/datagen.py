"""Ground-truth systems and datasets.

Trajectories come from the fixed-step RK4 reference integrator at h = 1e-4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ddnn.errors import EmptySplit
from ddnn.rng import Xoshiro256
from ddnn.solver import FunctionRHS, HistorySpec, solve_fixed_rk4

REFERENCE_H = 1e-4

# z(t - 2.5) enters as a row vector multiplied on the right: v @ TOY_A
TOY_A = np.array([[-0.1, 3.2], [-3.2, -0.1]])
TOY_TAU = 2.5
TOY_HISTORY = (-0.2, 0.1)
TOY_T_END = 10.0
TOY_SPLIT = (6.0, 8.0)

SPLITS = ("train", "val", "test")


@dataclass
class LabeledSeries:
    times: np.ndarray
    values: np.ndarray  # (n, d)
    tags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must strictly increase")

    def subset(self, tag: str) -> "LabeledSeries":
        mask = np.array([g == tag for g in self.tags], dtype=bool)
        return LabeledSeries(self.times[mask], self.values[mask], [tag] * int(mask.sum()))

    def counts(self) -> tuple[int, ...]:
        return tuple(sum(1 for g in self.tags if g == s) for s in SPLITS)


@dataclass
class ClassificationSet:
    points: np.ndarray  # (n, 2)
    labels: np.ndarray  # (n,) of {0, 1}


def delay_logistic_rhs(a: float) -> FunctionRHS:
    return FunctionRHS(lambda t, z, v: a * z * (1.0 - v), 1.0)


def toy_rhs() -> FunctionRHS:
    return FunctionRHS(lambda t, z, v: 0.75 * z + 0.25 * (v @ TOY_A), TOY_TAU)


def _sample(traj, t_end: float, n: int) -> LabeledSeries:
    times = np.linspace(0.0, t_end, n)
    values = np.array([traj(t) for t in times])
    return LabeledSeries(times, values)


@lru_cache(maxsize=8)
def _logistic_traj(a: float, t_end: float):
    return solve_fixed_rk4(delay_logistic_rhs(a), HistorySpec([0.1]), 0.0, t_end, REFERENCE_H)


@lru_cache(maxsize=2)
def _toy_traj():
    return solve_fixed_rk4(toy_rhs(), HistorySpec(TOY_HISTORY), 0.0, TOY_T_END, REFERENCE_H)


def gen_delay_logistic(a: float, t_end: float, n: int) -> LabeledSeries:
    """``dz/dt = a z(t) (1 - z(t - 1))`` with z = 0.1 for t <= 0, n uniform samples."""
    if not a > 0 or n < 2:
        raise ValueError("need a > 0 and n >= 2")
    return _sample(_logistic_traj(float(a), float(t_end)), t_end, n)


def gen_toy_linear_dde(n: int = 1000) -> LabeledSeries:
    """The 2-D linear delay system on [0, 10], split train/val/test at 6 and 8."""
    if n < 10:
        raise ValueError("need n >= 10")
    series = _sample(_toy_traj(), TOY_T_END, n)
    return split_series(series, TOY_SPLIT)


def toy_truth(times) -> np.ndarray:
    """Reference toy-system states at arbitrary times in [0, 10] (linear dense output)."""
    traj = _toy_traj()
    return np.array([traj(float(t)) for t in np.asarray(times, dtype=float)])


def split_series(series: LabeledSeries, boundaries: tuple[float, float]) -> LabeledSeries:
    """Tag samples by time: ``t <= t_a`` train, ``t_a < t <= t_b`` val, rest test."""
    t_a, t_b = boundaries
    if not (series.times[0] < t_a < t_b < series.times[-1]):
        raise ValueError("boundaries must satisfy t0 < t_a < t_b < t_end")
    tags = ["train" if t <= t_a else "val" if t <= t_b else "test" for t in series.times]
    out = LabeledSeries(series.times, series.values, tags)
    counts = out.counts()
    if min(counts) == 0:
        raise EmptySplit(f"split sizes {dict(zip(SPLITS, counts))}")
    return out


def gen_two_circles(n: int, seed: int, noise: float = 0.1) -> ClassificationSet:
    """Half the points near radius 1 (label 0), half near radius 2 (label 1)."""
    if n % 2:
        raise ValueError("n must be even")
    rng = Xoshiro256(seed)
    half = n // 2
    angles = np.array([2.0 * math.pi * rng.random() for _ in range(n)])
    radii = np.concatenate([np.full(half, 1.0), np.full(half, 2.0)])
    if noise > 0:
        radii = radii + noise * rng.normal(n)
    points = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    labels = np.concatenate([np.zeros(half, dtype=int), np.ones(half, dtype=int)])
    return ClassificationSet(points, labels)
