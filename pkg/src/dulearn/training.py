"""SGD training loops for the three methods, plus a finite-difference harness.

Three trainers share one momentum-SGD engine:

* ``train_baseline``  — deterministic embeddings, margin softmax only.
* ``train_dul_cls``   — sampled embeddings with the lam-weighted KL term.
* ``train_dul_rgs``   — stage two on a trained baseline: trunk frozen,
  fresh heads regressed onto the frozen classifier columns under the
  heteroscedastic NLL.

Everything is single-threaded and driven by explicit seed streams, so a
fixed seed reproduces training bit-for-bit. Batch indices and sampling
noise come from separate streams, which is what lets the stochastic
trainer with eps forced to zero retrace the baseline exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .embeddings import harmonic_mean_rows, sigma_from_raw
from .errors import ContractViolation, DivergenceError
from .losses import (
    ClassifierWeights,
    ClsLossConfig,
    batch_het_loss,
    batch_rgs_loss,
    cls_total_loss,
    softmax_loss,
)
from .model import HEAD_PARAMS, TRUNK_PARAMS, EncoderModel, predict_labels

REGRESSION_LOSS = "regression"


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int
    max_lr: float
    base_lr: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    loss: ClsLossConfig | str = REGRESSION_LOSS

    def __post_init__(self) -> None:
        if self.steps <= 0:
            raise ContractViolation("steps must be > 0")
        if self.batch_size <= 0:
            raise ContractViolation("batch_size must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ContractViolation("momentum must be in [0, 1)")
        if self.weight_decay < 0.0:
            raise ContractViolation("weight_decay must be >= 0")
        for name in ("max_lr", "base_lr"):
            if not math.isfinite(getattr(self, name)):
                raise ContractViolation(f"{name} must be finite")
        if not isinstance(self.loss, ClsLossConfig) and self.loss != REGRESSION_LOSS:
            raise ContractViolation("loss must be a ClsLossConfig or the regression marker")


@dataclass
class TrainLog:
    """Per-step series (all of length ``steps``) plus end-of-run stats."""

    loss: np.ndarray
    loss_main: np.ndarray
    loss_reg: np.ndarray
    sigma_bar: np.ndarray
    lr: np.ndarray
    train_accuracy: float | None = None
    clamped_total: int = 0


def triangular_lr(step: int, total_steps: int, base_lr: float, max_lr: float) -> float:
    """One symmetric triangle over the run: base to max to base, linearly."""
    if not 0 <= step < total_steps:
        raise ContractViolation(f"step {step} out of range [0, {total_steps})")
    half = total_steps / 2.0
    if step <= half:
        return base_lr + (max_lr - base_lr) * (step / half)
    return base_lr + (max_lr - base_lr) * ((total_steps - step) / half)


def step_decay_lr(step: int, total_steps: int, start_lr: float) -> float:
    """Stage-two regression schedule: drop x10 at 40% and x100 at 60% of the run."""
    if not 0 <= step < total_steps:
        raise ContractViolation(f"step {step} out of range [0, {total_steps})")
    frac = step / total_steps
    if frac < 0.4:
        return start_lr
    if frac < 0.6:
        return start_lr * 0.1
    return start_lr * 0.01


class SgdState:
    """Momentum SGD; decay is added to the gradient before the momentum update,
    so one step with decay d equals a step on loss + (d/2)||params||^2."""

    def __init__(self, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               lr: float, skip: set[str] = frozenset()) -> None:
        for name, p in params.items():
            if name in skip:
                continue
            g = grads[name] + self.weight_decay * p
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
                self.velocity[name] = v
            v *= self.momentum
            v += g
            p -= lr * v


def _empty_log(steps: int) -> TrainLog:
    return TrainLog(
        loss=np.zeros(steps),
        loss_main=np.zeros(steps),
        loss_reg=np.zeros(steps),
        sigma_bar=np.zeros(steps),
        lr=np.zeros(steps),
    )


def _guard_finite(value: float, step: int) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss {value!r} at step {step}")


def _train_cls(dataset, model: EncoderModel, weights: ClassifierWeights,
               cfg: TrainConfig, stochastic: bool, zero_eps: bool,
               on_step: Callable | None):
    if not isinstance(cfg.loss, ClsLossConfig):
        raise ContractViolation("classification training needs a ClsLossConfig")
    x_all = dataset.x
    y_all = dataset.labels
    if y_all.size and (y_all.min() < 0 or y_all.max() >= weights.num_classes):
        raise ContractViolation("dataset labels out of classifier range")
    n = x_all.shape[0]

    ss = np.random.SeedSequence(int(cfg.seed))
    batch_ss, eps_ss = ss.spawn(2)
    batch_rng = np.random.default_rng(batch_ss)
    eps_rng = np.random.default_rng(eps_ss)

    opt = SgdState(cfg.momentum, cfg.weight_decay)
    params = {**model.params, "w": weights.w}
    skip = set(TRUNK_PARAMS) if model.frozen_trunk else set()
    log = _empty_log(cfg.steps)

    for step in range(cfg.steps):
        lr = triangular_lr(step, cfg.steps, cfg.base_lr, cfg.max_lr)
        idx = batch_rng.integers(0, n, size=cfg.batch_size)
        xb = x_all[idx]
        yb = y_all[idx]
        mu, r, cache = model.forward(xb)
        sigma = sigma_from_raw(r)
        if stochastic:
            eps = np.zeros_like(mu) if zero_eps else eps_rng.standard_normal(mu.shape)
            res = cls_total_loss(mu, sigma, eps, yb, weights, cfg.loss)
            loss_val = res.value
            main = res.softmax_value
            reg = cfg.loss.lam * res.kl_value
            dmu = res.grad_mu
            dr = res.grad_sigma * sigma * 0.5
            grad_w = res.grad_w
        else:
            sm = softmax_loss(mu, yb, weights, cfg.loss.softmax)
            loss_val = sm.value
            main = sm.value
            reg = 0.0
            dmu = sm.grad_s
            dr = np.zeros_like(r)
            grad_w = sm.grad_w
        _guard_finite(loss_val, step)
        grads = model.backward(cache, dmu, dr)
        grads["w"] = grad_w
        opt.update(params, grads, lr, skip=skip)
        log.loss[step] = loss_val
        log.loss_main[step] = main
        log.loss_reg[step] = reg
        log.sigma_bar[step] = float(np.mean(harmonic_mean_rows(sigma)))
        log.lr[step] = lr
        if on_step is not None:
            on_step(step, model, weights)

    weights.normalized = False  # columns drift off the unit sphere once trained
    log.train_accuracy = float(np.mean(predict_labels(model, weights, x_all) == y_all))
    return model, weights, log


def train_baseline(dataset, model: EncoderModel, weights: ClassifierWeights,
                   cfg: TrainConfig, on_step: Callable | None = None):
    """Deterministic trainer: the embedding is mu, no sampling, no KL term."""
    return _train_cls(dataset, model, weights, cfg, stochastic=False,
                      zero_eps=False, on_step=on_step)


def train_dul_cls(dataset, model: EncoderModel, weights: ClassifierWeights,
                  cfg: TrainConfig, zero_eps: bool = False,
                  on_step: Callable | None = None):
    """Stochastic trainer: one reparameterized draw per sample per step.

    ``zero_eps`` is a debug switch forcing eps to zero; together with
    lam == 0 this retraces the baseline trainer bit-for-bit on a shared
    seed, since batch indices come from their own stream.
    """
    return _train_cls(dataset, model, weights, cfg, stochastic=True,
                      zero_eps=zero_eps, on_step=on_step)


def train_dul_rgs(dataset, model: EncoderModel, weights: ClassifierWeights,
                  cfg: TrainConfig, on_step: Callable | None = None):
    """Stage-two trainer regressing fresh heads onto frozen class centers.

    The trunk of the pretrained model is frozen (no gradient, no decay:
    its parameters stay bit-identical), both heads are re-initialized, and
    the unit-normalized columns of the pretrained classifier serve as
    per-class regression targets. Uses the step-decay schedule starting at
    ``cfg.max_lr``.
    """
    if isinstance(cfg.loss, ClsLossConfig):
        raise ContractViolation("regression training needs the regression loss marker")
    if model is None or weights is None:
        raise ContractViolation("a pretrained model and classifier are required")
    y_all = dataset.labels
    if y_all.size and (y_all.min() < 0 or y_all.max() >= weights.num_classes):
        raise ContractViolation("dataset labels out of classifier range")

    trained = model.copy()
    trained.frozen_trunk = True
    trained.reinit_heads(cfg.seed)
    targets = ClassifierWeights(weights.unit_columns(), normalized=True)

    x_all = dataset.x
    n = x_all.shape[0]
    batch_rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed)).spawn(2)[0])
    opt = SgdState(cfg.momentum, cfg.weight_decay)
    skip = set(TRUNK_PARAMS)
    log = _empty_log(cfg.steps)

    for step in range(cfg.steps):
        lr = step_decay_lr(step, cfg.steps, cfg.max_lr)
        idx = batch_rng.integers(0, n, size=cfg.batch_size)
        mu, r, cache = trained.forward(x_all[idx])
        res = batch_rgs_loss(mu, r, y_all[idx], targets)
        _guard_finite(res.value, step)
        grads = trained.backward(cache, res.grad_mu, res.grad_r)
        opt.update(trained.params, grads, lr, skip=skip)
        log.loss[step] = res.value
        log.loss_main[step] = res.residual_term
        log.loss_reg[step] = res.logvar_term
        log.sigma_bar[step] = float(np.mean(harmonic_mean_rows(sigma_from_raw(r))))
        log.lr[step] = lr
        log.clamped_total += res.clamped
        if on_step is not None:
            on_step(step, trained, weights)

    log.train_accuracy = float(np.mean(predict_labels(trained, weights, x_all) == y_all))
    return trained, log


def train_hetreg(dataset, model: EncoderModel, cfg: TrainConfig,
                 on_step: Callable | None = None):
    """Fit the 1-D heteroscedastic regression task end to end.

    Unlike :func:`train_dul_rgs` the whole network trains (the mean has to
    be learned from scratch); targets are the observed y values.
    """
    if isinstance(cfg.loss, ClsLossConfig):
        raise ContractViolation("regression training needs the regression loss marker")
    if model.in_dim != 1 or model.embed_dim != 1:
        raise ContractViolation("hetreg expects a scalar-in, scalar-out model")
    x_all = np.asarray(dataset.x, dtype=np.float64)[:, None]
    t_all = np.asarray(dataset.y, dtype=np.float64)[:, None]
    n = x_all.shape[0]

    batch_rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed)).spawn(2)[0])
    opt = SgdState(cfg.momentum, cfg.weight_decay)
    log = _empty_log(cfg.steps)

    for step in range(cfg.steps):
        lr = triangular_lr(step, cfg.steps, cfg.base_lr, cfg.max_lr)
        idx = batch_rng.integers(0, n, size=cfg.batch_size)
        mu, r, cache = model.forward(x_all[idx])
        res = batch_het_loss(mu, r, t_all[idx])
        _guard_finite(res.value, step)
        grads = model.backward(cache, res.grad_mu, res.grad_r)
        opt.update(model.params, grads, lr)
        log.loss[step] = res.value
        log.loss_main[step] = res.residual_term
        log.loss_reg[step] = res.logvar_term
        log.sigma_bar[step] = float(np.mean(harmonic_mean_rows(sigma_from_raw(r))))
        log.lr[step] = lr
        log.clamped_total += res.clamped
        if on_step is not None:
            on_step(step, model, None)

    return model, log


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    per_param: tuple[float, ...]


def gradient_check(loss_fn, params, tolerance: float = 1e-4,
                   step: float = 1e-5) -> GradCheckReport:
    """Central-difference check of an analytic gradient.

    ``loss_fn(params) -> (value, grads)`` with grads aligned to the given
    list of parameter arrays, which are perturbed in place entry by entry.
    Relative error uses max(1, |analytic|, |numeric|) as denominator.
    """
    _, grads = loss_fn(params)
    per_param = []
    for k, p in enumerate(params):
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape:
            raise ContractViolation(f"gradient {k} shape {g.shape} != param shape {p.shape}")
        worst = 0.0
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + step
            up, _ = loss_fn(params)
            p[i] = orig - step
            dn, _ = loss_fn(params)
            p[i] = orig
            numeric = (up - dn) / (2.0 * step)
            analytic = float(g[i])
            rel = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, rel)
        per_param.append(worst)
    max_err = max(per_param) if per_param else 0.0
    return GradCheckReport(
        max_rel_error=max_err,
        tolerance=tolerance,
        passed=max_err < tolerance,
        per_param=tuple(per_param),
    )
