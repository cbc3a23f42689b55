"""Logistic loss, optimisers (SGD, NVRM-SGD, Adam), training loop and diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .detector import DetectorParams, detect, window_samples
from .errors import DiagnosticError, ParameterError
from .metrics import fauc, froc
from .rng import generator

KINDS = ("sgd", "nvrm_sgd", "adam")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "nvrm_sgd"
    learning_rate: float = 0.0002
    batch_size: int = 64
    epochs: int = 40
    variability_scale_b: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"optimizer kind must be one of {KINDS}, got {self.kind!r}")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be > 0")
        if self.variability_scale_b < 0:
            raise ParameterError("variability_scale_b must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")


# --- logistic model on augmented features [X, 1] -------------------------

def logistic_loss(theta: np.ndarray, Xa: np.ndarray, y: np.ndarray) -> float:
    z = Xa @ theta
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def logistic_grad(theta: np.ndarray, Xa: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = 0.5 * (1.0 + np.tanh(0.5 * (Xa @ theta)))
    return Xa.T @ (p - y) / len(y)


def logistic_hessian(theta: np.ndarray, Xa: np.ndarray) -> np.ndarray:
    p = 0.5 * (1.0 + np.tanh(0.5 * (Xa @ theta)))
    return (Xa * (p * (1.0 - p))[:, None]).T @ Xa / Xa.shape[0]


def _theta(params) -> np.ndarray:
    return params.vector() if isinstance(params, DetectorParams) else np.asarray(params, dtype=np.float64)


def loss(params, dataset) -> float:
    """Mean logistic loss over the dataset's fixed labelled window sample."""
    s = window_samples(dataset)
    if len(s) == 0:
        raise ParameterError("empty window sample")
    return logistic_loss(_theta(params), s.augmented(), s.y)


def gradient(params, dataset) -> np.ndarray:
    s = window_samples(dataset)
    return logistic_grad(_theta(params), s.augmented(), s.y)


def hessian(params, dataset) -> np.ndarray:
    s = window_samples(dataset)
    return logistic_hessian(_theta(params), s.augmented())


# --- optimisers -------------------------------------------------------------

GradFn = Callable[[np.ndarray], np.ndarray]


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta: np.ndarray, grad_fn: GradFn) -> np.ndarray:
        return theta - self.lr * grad_fn(theta)


class NvrmSGD:
    """SGD on the single-draw estimate of E[L(theta + eps)], eps ~ N(0, b^2 I)."""

    def __init__(self, lr: float, b: float, rng: np.random.Generator):
        self.lr = lr
        self.b = b
        self.rng = rng

    def step(self, theta: np.ndarray, grad_fn: GradFn, eps: Optional[np.ndarray] = None) -> np.ndarray:
        if eps is None:
            eps = self.b * self.rng.standard_normal(theta.shape)
        return theta - self.lr * grad_fn(theta + eps)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, theta: np.ndarray, grad_fn: GradFn) -> np.ndarray:
        g = grad_fn(theta)
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(cfg: OptimizerConfig):
    if cfg.kind == "sgd":
        return SGD(cfg.learning_rate)
    if cfg.kind == "nvrm_sgd":
        return NvrmSGD(cfg.learning_rate, cfg.variability_scale_b, generator(cfg.seed, 0x4E56))
    return Adam(cfg.learning_rate)


# --- training ---------------------------------------------------------------

def performance_V(params: DetectorParams, dataset) -> float:
    """FAUC of the detector on ``dataset``."""
    preds = [detect(params, item) for item in dataset]
    return fauc(froc(preds, [item.boxes for item in dataset], len(dataset)))


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_scores: list[float] = field(default_factory=list)
    selected_epoch: int = 0  # 1-based; 0 when no epoch ran
    params: Optional[DetectorParams] = None
    trajectory: list[np.ndarray] = field(default_factory=list, repr=False)


def train(params0: DetectorParams, train_set, val_set, cfg: OptimizerConfig,
          val_fn: Optional[Callable] = None, keep_trajectory: bool = False) -> TrainReport:
    """Minibatch training with per-epoch validation and best-epoch selection.

    ``val_fn(params, val_set)`` overrides the FAUC validation score.
    """
    val_fn = val_fn or performance_V
    report = TrainReport(params=params0)
    if cfg.epochs == 0:
        return report
    s = window_samples(train_set)
    Xa, y = s.augmented(), s.y
    n = len(y)
    if n == 0:
        raise ParameterError("training set yields no samples")
    shuffle = generator(cfg.seed, 0x5F)
    opt = make_optimizer(cfg)
    theta = params0.vector()
    best_score, best_theta = -math.inf, theta
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            Xb, yb = Xa[idx], y[idx]
            theta = opt.step(theta, lambda t: logistic_grad(t, Xb, yb))
            if keep_trajectory:
                report.trajectory.append(theta.copy())
        report.train_loss.append(logistic_loss(theta, Xa, y))
        score = float(val_fn(DetectorParams.from_vector(theta), val_set))
        report.val_scores.append(score)
        if score > best_score:
            best_score, best_theta = score, theta.copy()
            report.selected_epoch = epoch
    report.params = DetectorParams.from_vector(best_theta)
    return report


def write_training_log(path, report: TrainReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_fauc"])
        for e, (l, v) in enumerate(zip(report.train_loss, report.val_scores), 1):
            w.writerow([e, repr(l), repr(v)])


def read_training_log(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
                 "val_fauc": float(r["val_fauc"])} for r in csv.DictReader(f)]


# --- diagnostics ------------------------------------------------------------

def forgetting_score(params_t, params_prev, dataset_prev, loss_fn: Optional[Callable] = None) -> float:
    """Loss increase on an earlier task's sample after moving to ``params_t``.

    ``loss_fn(params, dataset)`` replaces the logistic window loss.
    """
    loss_fn = loss_fn or loss
    return float(loss_fn(params_t, dataset_prev) - loss_fn(params_prev, dataset_prev))


def fit_logistic(dataset, theta0=None, tol: float = 1e-10, max_iter: int = 100) -> DetectorParams:
    """Newton's method to a stationary point of the logistic loss."""
    s = window_samples(dataset)
    Xa, y = s.augmented(), s.y
    theta = np.zeros(Xa.shape[1]) if theta0 is None else _theta(theta0).copy()
    for _ in range(max_iter):
        g = logistic_grad(theta, Xa, y)
        if np.linalg.norm(g) < tol:
            break
        H = logistic_hessian(theta, Xa)
        step = np.linalg.lstsq(H, g, rcond=None)[0]
        f0 = logistic_loss(theta, Xa, y)
        t = 1.0
        while logistic_loss(theta - t * step, Xa, y) > f0 and t > 1e-8:
            t *= 0.5
        theta = theta - t * step
    return DetectorParams.from_vector(theta)


def perturbed_risk_check(loss_batch: Callable[[np.ndarray], np.ndarray], grad: np.ndarray,
                         hess_trace: float, theta: np.ndarray, b: float, n_mc: int, seed: int = 0,
                         grad_tol: float = 1e-3, chunk: int = 4096) -> tuple[float, float]:
    """Generic form of :func:`nvrm_risk_check`.

    ``loss_batch`` maps an ``(m, p)`` array of parameter vectors to ``m``
    losses; ``grad`` and ``hess_trace`` are evaluated at ``theta``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    gnorm = float(np.linalg.norm(grad))
    if gnorm > grad_tol:
        raise DiagnosticError(f"gradient norm {gnorm:.3g} exceeds {grad_tol}; not a stationary point")
    base = float(loss_batch(theta[None, :])[0])
    taylor = base + b * b * float(hess_trace)
    if b == 0 or n_mc == 0:
        return base, taylor
    rng = generator(seed, 0x3C)
    total = 0.0
    done = 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        total += float(np.sum(loss_batch(theta[None, :] + b * rng.standard_normal((m, theta.size)))))
        done += m
    return total / n_mc, taylor


def nvrm_risk_check(params, dataset, b: float, n_mc: int, seed: int = 0,
                    grad_tol: float = 1e-3) -> tuple[float, float]:
    """Monte-Carlo neural-variable risk against its trace expansion.

    Returns ``(mc_estimate, taylor_estimate)`` where the expansion is
    ``L + b^2 tr(H)``.  The exact second-order Gaussian expectation is
    ``L + b^2 tr(H) / 2``; see :func:`exact_second_order_risk`.
    """
    s = window_samples(dataset)
    Xa, y = s.augmented(), s.y
    theta = _theta(params)

    def loss_batch(thetas):
        Z = Xa @ thetas.T
        return np.mean(np.logaddexp(0.0, Z) - y[:, None] * Z, axis=0)

    chunk = max(1, 2_000_000 // max(len(y), 1))
    return perturbed_risk_check(loss_batch, logistic_grad(theta, Xa, y),
                                float(np.trace(logistic_hessian(theta, Xa))), theta, b, n_mc, seed,
                                grad_tol, chunk)


def exact_second_order_risk(params, dataset, b: float) -> float:
    s = window_samples(dataset)
    theta = _theta(params)
    Xa = s.augmented()
    return logistic_loss(theta, Xa, s.y) + 0.5 * b * b * float(np.trace(logistic_hessian(theta, Xa)))
