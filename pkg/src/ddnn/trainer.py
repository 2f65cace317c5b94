"""Losses, Adam, and the training loops built on the adjoint gradient."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ddnn.adjoint import backward_pass, interpolate_many, solve_field
from ddnn.datagen import ClassificationSet, LabeledSeries
from ddnn.errors import DDNNError, TimeMismatch
from ddnn.field import DelayField, DelayFieldSpec, init_params
from ddnn.solver import HistorySpec, SolverConfig


# -- losses -------------------------------------------------------------------


def trajectory_mse(pred_times, pred, target: LabeledSeries):
    """Mean squared error over observations and components, with dL/dz per observation."""
    pred = np.asarray(pred, dtype=float)
    pred_times = np.asarray(pred_times, dtype=float)
    if pred_times.shape != target.times.shape or np.any(pred_times != target.times):
        raise TimeMismatch("prediction times differ from target times")
    resid = pred - target.values
    n = resid.size
    return float(np.sum(resid * resid) / n), 2.0 * resid / n


def cross_entropy(logits, label: int):
    """Softmax cross-entropy with log-sum-exp; returns ``(loss, dL/dlogits)``."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - np.max(logits)
    log_z = math.log(np.sum(np.exp(shifted)))
    p = np.exp(shifted - log_z)
    grad = p.copy()
    grad[label] -= 1.0
    return float(log_z - shifted[label]), grad


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over rows; gradient already divided by the batch size."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    loss = float(np.mean(log_z - shifted[rows, labels]))
    grad = np.exp(shifted - log_z[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / len(labels)


# -- optimiser ----------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(theta, grad, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    t = state.step_count + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta, AdamState(m, v, t)


# -- configuration and reports ------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "toy"  # "toy" or "two_circles"
    combine: str = "convex"
    hidden_dim: int = 50
    state_dim: int = 2
    lam: float = 0.75
    taus: tuple[float, ...] = (2.5,)
    include_time: bool = False
    epochs: int = 2000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    mode: str = "fixed"  # "fixed" or "adaptive"
    fixed_h: float = 0.05
    solver: SolverConfig = field(default_factory=SolverConfig)
    loss: str = "trajectory_mse"  # or "cross_entropy"
    n_samples: int = 1000
    n_points: int = 400
    t_end: float = 1.0  # integration horizon of the classifier

    def __post_init__(self):
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not self.taus or any(not t > 0 for t in self.taus):
            raise ValueError("delay candidates must be positive")
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.loss not in ("trajectory_mse", "cross_entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def field_spec(self, tau: float | None = None) -> DelayFieldSpec:
        return DelayFieldSpec(
            state_dim=self.state_dim,
            hidden_dim=self.hidden_dim,
            combine=self.combine,
            lam=self.lam,
            tau=self.taus[0] if tau is None else tau,
            include_time=self.include_time,
        )

    @property
    def step(self) -> float | None:
        return self.fixed_h if self.mode == "fixed" else None

    def with_tau(self, tau: float) -> "RunConfig":
        return replace(self, taus=(tau,))

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "solver":
                value = {g.name: getattr(value, g.name) for g in fields(value)}
            elif f.name == "taus":
                value = list(value)
            out[f.name] = value
        return out


@dataclass
class FitReport:
    train_losses: list[float]
    final_train_loss: float
    val_loss: float
    test_loss: float
    wall_seconds: float
    theta: np.ndarray
    tau: float
    diverged: bool = False
    train_accuracy: float | None = None

    def summary(self) -> dict:
        """Deterministic content (everything except wall-clock time and theta)."""
        out = {
            "tau": self.tau,
            "epochs_run": len(self.train_losses),
            "diverged": self.diverged,
            "train_losses": self.train_losses,
            "final_train_mse": self.final_train_loss,
            "final_val_mse": self.val_loss,
            "final_test_mse": self.test_loss,
        }
        if self.train_accuracy is not None:
            out["train_accuracy"] = self.train_accuracy
        return out


# -- trajectory fitting -------------------------------------------------------


class TrajectoryProblem:
    """Full-batch trajectory fit on the training range of a split series."""

    def __init__(self, cfg: RunConfig, data: LabeledSeries, tau: float):
        if min(data.counts()) == 0:
            raise ValueError("series needs train, val and test samples")
        self.cfg = cfg
        self.spec = cfg.field_spec(tau)
        self.data = data
        train = data.subset("train")
        self.t0 = float(data.times[0])
        self.history = HistorySpec(train.values[0])
        keep = data.times > self.t0
        self.train = _drop_first(train)
        self.later = LabeledSeries(data.times[keep], data.values[keep], [g for g, k in zip(data.tags, keep) if k])

    def _solve(self, theta, obs: LabeledSeries):
        field = DelayField(self.spec, theta)
        return solve_field(
            field, self.history, self.t0, float(obs.times[-1]), obs.times,
            self.cfg.solver, self.cfg.step,
        )

    def loss_and_grad(self, theta):
        traj = self._solve(theta, self.train)
        pred = interpolate_many(traj, self.train.times)
        loss, dldz = trajectory_mse(self.train.times, pred, self.train)
        res = backward_pass(
            traj, self.train.times, dldz, self.spec, theta, self.cfg.solver, self.cfg.step, loss
        )
        return loss, res.grad_theta

    def loss(self, theta) -> float:
        traj = self._solve(theta, self.train)
        pred = interpolate_many(traj, self.train.times)
        return trajectory_mse(self.train.times, pred, self.train)[0]

    def evaluate(self, theta) -> tuple[dict[str, float], object]:
        """MSE per split from one solve across the whole series (extrapolation)."""
        traj = self._solve(theta, self.later)
        out = {}
        for tag in ("train", "val", "test"):
            sub = self.later.subset(tag)
            pred = interpolate_many(traj, sub.times)
            out[tag] = trajectory_mse(sub.times, pred, sub)[0]
        return out, traj


def _drop_first(series: LabeledSeries) -> LabeledSeries:
    return LabeledSeries(series.times[1:], series.values[1:], series.tags[1:])


def _finite(x: float) -> bool:
    return math.isfinite(x)


def train_trajectory(cfg: RunConfig, data: LabeledSeries, tau: float | None = None) -> FitReport:
    """Fit the delay field to the training range, then extrapolate over val/test."""
    tau = cfg.taus[0] if tau is None else tau
    start = time.perf_counter()
    problem = TrajectoryProblem(cfg, data, tau)
    theta = init_params(problem.spec, cfg.seed)
    state = AdamState.zeros(theta.size)
    losses: list[float] = []
    diverged = False
    for _ in range(cfg.epochs):
        try:
            loss, grad = problem.loss_and_grad(theta)
        except DDNNError:
            loss, grad = math.inf, None
        if not _finite(loss) or grad is None or not np.all(np.isfinite(grad)):
            losses.append(math.inf)
            diverged = True
            break
        losses.append(loss)
        theta, state = adam_step(theta, grad, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    if diverged or not np.all(np.isfinite(theta)):
        split = {"train": math.inf, "val": math.inf, "test": math.inf}
        diverged = True
    else:
        try:
            split, _ = problem.evaluate(theta)
        except DDNNError:
            split = {"train": math.inf, "val": math.inf, "test": math.inf}
        if not all(_finite(v) for v in split.values()):
            split = {k: (v if _finite(v) else math.inf) for k, v in split.items()}
            diverged = True
    return FitReport(
        train_losses=losses,
        final_train_loss=split["train"],
        val_loss=split["val"],
        test_loss=split["test"],
        wall_seconds=time.perf_counter() - start,
        theta=theta,
        tau=tau,
        diverged=diverged,
    )


# -- delay sweep --------------------------------------------------------------


@dataclass
class SweepResult:
    rows: list[tuple[float, float, float]]  # (tau, val_mse, test_mse), sorted by tau
    best_tau: float
    reports: list[FitReport]


def _sweep_job(args):
    cfg, data, tau = args
    return train_trajectory(cfg, data, tau)


def delay_sweep(cfg: RunConfig, data: LabeledSeries, parallel: int = 1) -> SweepResult:
    """Train one model per delay candidate; pick the lowest validation MSE."""
    if len(cfg.taus) < 2:
        raise ValueError("a sweep needs at least two delay candidates")
    jobs = [(cfg, data, tau) for tau in cfg.taus]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            reports = list(pool.map(_sweep_job, jobs))
    else:
        reports = [_sweep_job(job) for job in jobs]
    reports.sort(key=lambda r: r.tau)
    rows = [(r.tau, r.val_loss, r.test_loss) for r in reports]
    best = min(rows, key=lambda row: (row[1], row[0]))
    return SweepResult(rows, best[0], reports)


# -- classification -----------------------------------------------------------


class ClassifierProblem:
    """Delay block over [0, t_end] followed by a linear readout, trained jointly.

    Inputs are zero-padded to ``state_dim``; the readout parameters
    ``(W_r, b_r)`` are appended to the field parameters.
    """

    n_classes = 2

    def __init__(self, cfg: RunConfig, data: ClassificationSet, tau: float):
        self.cfg = cfg
        self.spec = cfg.field_spec(tau)
        d = self.spec.state_dim
        if data.points.shape[1] > d:
            raise ValueError("state_dim smaller than the input dimension")
        z0 = np.zeros((len(data.labels), d))
        z0[:, : data.points.shape[1]] = data.points
        self.history = HistorySpec(z0)
        self.labels = np.asarray(data.labels, dtype=int)
        self.n_field = self.spec.n_params

    def split(self, theta):
        d, c = self.spec.state_dim, self.n_classes
        head = theta[self.n_field :]
        return theta[: self.n_field], head[: c * d].reshape(c, d), head[c * d :]

    def init(self, seed: int) -> np.ndarray:
        head = np.zeros(self.n_classes * (self.spec.state_dim + 1))
        return np.concatenate([init_params(self.spec, seed), head])

    def _forward(self, theta):
        th, W_r, b_r = self.split(theta)
        traj = solve_field(
            DelayField(self.spec, th), self.history, 0.0, self.cfg.t_end, (),
            self.cfg.solver, self.cfg.step,
        )
        z_end = traj.z_last
        return traj, z_end, z_end @ W_r.T + b_r

    def loss_and_grad(self, theta):
        th, W_r, b_r = self.split(theta)
        traj, z_end, logits = self._forward(theta)
        loss, g_logits = cross_entropy_batch(logits, self.labels)
        dldz = g_logits @ W_r
        res = backward_pass(
            traj, [self.cfg.t_end], [dldz], self.spec, th, self.cfg.solver, self.cfg.step, loss
        )
        grad = np.concatenate([res.grad_theta, (g_logits.T @ z_end).ravel(), g_logits.sum(axis=0)])
        return loss, grad

    def loss(self, theta) -> float:
        return cross_entropy_batch(self._forward(theta)[2], self.labels)[0]

    def accuracy(self, theta) -> float:
        logits = self._forward(theta)[2]
        return float(np.mean(np.argmax(logits, axis=1) == self.labels))


def train_classifier(cfg: RunConfig, data: ClassificationSet, tau: float | None = None) -> FitReport:
    tau = cfg.taus[0] if tau is None else tau
    start = time.perf_counter()
    problem = ClassifierProblem(cfg, data, tau)
    theta = problem.init(cfg.seed)
    state = AdamState.zeros(theta.size)
    losses: list[float] = []
    diverged = False
    for _ in range(cfg.epochs):
        try:
            loss, grad = problem.loss_and_grad(theta)
        except DDNNError:
            loss, grad = math.inf, None
        if not _finite(loss) or grad is None:
            losses.append(math.inf)
            diverged = True
            break
        losses.append(loss)
        theta, state = adam_step(theta, grad, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    final = math.inf if diverged else problem.loss(theta)
    acc = 0.0 if diverged else problem.accuracy(theta)
    return FitReport(
        train_losses=losses,
        final_train_loss=final,
        val_loss=math.nan,
        test_loss=math.nan,
        wall_seconds=time.perf_counter() - start,
        theta=theta,
        tau=tau,
        diverged=diverged,
        train_accuracy=acc,
    )
