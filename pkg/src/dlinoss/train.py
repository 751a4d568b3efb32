"""Reverse-mode gradients for the oscillatory SSM, losses, Adam and the training loop.

The backward pass is written out by hand for this architecture. Through the
recurrence it runs the adjoint scan

    lam_k = g_k + M^T lam_{k+1}

which is the forward scan applied to the time-reversed sequence with
transposed blocks; gradients of the block entries are then sums of
``lam_k * w_{k-1}`` over batch and time.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import Variant
from .errors import ConfigError, NonFiniteError
from .model import ModelConfig, forward, gelu_grad, init_weights, param_shapes
from .param_init import InitSpec, clamp_bounds
from .scan import ScanElement, scan_inclusive
from .tasks import Split, TaskData

log = logging.getLogger(__name__)


# --- losses and metrics ------------------------------------------------------

def _valid(pred, mask):
    if mask is None or pred.ndim == 2:
        return np.ones(pred.shape[:-1] + (1,))
    return np.asarray(mask, dtype=np.float64)[..., None]


def mse_loss(pred, target, mask=None):
    """Mean squared error over valid entries. Returns (value, d value / d pred)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    w = _valid(pred, mask)
    count = w.sum() * pred.shape[-1]
    diff = (pred - target) * w
    return float((diff * diff).sum() / count), 2.0 * diff / count


def cross_entropy_loss(logits, labels, mask=None):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ConfigError(f"labels shape {labels.shape} does not match logits {logits.shape[:-1]}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ConfigError(f"labels out of range for {n_classes} classes")
    w = _valid(logits, mask)[..., 0]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, labels[..., None].astype(np.int64), axis=-1)[..., 0]
    count = w.sum()
    value = float(-(picked * w).sum() / count)
    grad = np.exp(logp)
    np.put_along_axis(grad, labels[..., None].astype(np.int64),
                      np.take_along_axis(grad, labels[..., None].astype(np.int64), axis=-1) - 1.0, axis=-1)
    return value, grad * (w / count)[..., None]


LOSSES = {"mse": mse_loss, "cross-entropy": cross_entropy_loss}


def metric(kind: str, pred, target, mask=None) -> float:
    if kind == "mse":
        return mse_loss(pred, target, mask)[0]
    if kind == "rmse":
        return math.sqrt(mse_loss(pred, target, mask)[0])
    if kind == "accuracy":
        pred = np.asarray(pred)
        hits = (pred.argmax(axis=-1) == np.asarray(target)).astype(np.float64)
        if mask is not None and pred.ndim == 3:
            w = np.asarray(mask, dtype=np.float64)
            return float((hits * w).sum() / w.sum())
        return float(hits.mean())
    raise ConfigError(f"unknown metric {kind!r}")


def higher_is_better(kind: str) -> bool:
    return kind == "accuracy"


# --- backward pass -----------------------------------------------------------

def _coefficient_vjp(variant, A, G, dt, g):
    g11, g12, g21, g22, gf1, gf2 = g
    if variant is Variant.LINOSS_IM:
        s = 1.0 / (1.0 + dt * dt * A)
        gs = g11 - g12 * dt * A + g21 * dt + g22 + gf1 * dt + gf2 * dt * dt
        gA = -g12 * dt * s - gs * s * s * dt * dt
        gdt = (-g12 * A * s + g21 * s + gf1 * s + 2.0 * gf2 * dt * s
               - 2.0 * gs * s * s * dt * A)
        return gA, np.zeros_like(A), gdt
    s = 1.0 / (1.0 + dt * G)
    gs = g11 - g12 * dt * A + g21 * dt - g22 * dt * dt * A + gf1 * dt + gf2 * dt * dt
    gA = -g12 * dt * s - g22 * dt * dt * s
    gdt = -g12 * A * s + g21 * s - 2.0 * g22 * dt * A * s + gf1 * s + 2.0 * gf2 * dt * s
    gS = -s * s * gs
    return gA, gS * dt, gdt + gS * G


def _constrain_vjp(A_bar, G, dt, gA, gG, gdt):
    """Pull (gA, gG, gdt) back through A = clip(A_bar, L(G, dt), U(G, dt)).

    Inside [L, U] the gradient passes to A_bar; outside it is zero for A_bar and
    flows through the active bound into G and dt instead.
    """
    lower, upper = clamp_bounds(G, dt)
    below = A_bar < lower
    above = A_bar > upper
    gA_bar = np.where(below | above, 0.0, gA)
    gL = np.where(below, gA, 0.0)
    gU = np.where(above, gA, 0.0)
    q = np.sqrt(1.0 + dt * G)
    q1 = 1.0 + q
    dL_dG = 2.0 * G / q1 ** 2 - G * G * dt / (q * q1 ** 3)
    dL_ddt = -G ** 3 / (q * q1 ** 3)
    dU_dG = q1 / (dt * q)
    dU_ddt = q1 * G / (dt * dt * q) - 2.0 * q1 ** 2 / dt ** 3
    gG = gG + gL * dL_dG + gU * dU_dG
    gdt = gdt + gL * dL_ddt + gU * dU_ddt
    return gA_bar, gG, gdt


def _shift_prev(w):
    prev = np.zeros_like(w)
    prev[:, 1:] = w[:, :-1]
    return prev


def _ssm_backward(config, weights, i, rec, gy, grads):
    pre = f"blocks.{i}."
    h_in, z, x, bu = rec["h_in"], rec["z"], rec["x"], rec["bu"]
    H, m = h_in.shape[-1], z.shape[-1]
    C, Bm, D = weights[pre + "C"], weights[pre + "B"], weights[pre + "D"]

    grads[pre + "C"] = gy.reshape(-1, H).T @ x.reshape(-1, m)
    grads[pre + "D"] = (gy * h_in).sum(axis=(0, 1))
    gh = gy * D
    gx = gy @ C

    m11, m12, m21, m22, f1, f2 = rec["coeffs"]
    rev = gx[:, ::-1]
    lz, lx = scan_inclusive(ScanElement(m11, m21, m12, m22, np.zeros_like(rev), rev), config.scan_mode)
    lz, lx = lz[:, ::-1], lx[:, ::-1]

    zp, xp = _shift_prev(z), _shift_prev(x)
    g_coeffs = (
        (lz * zp).sum(axis=(0, 1)),
        (lz * xp).sum(axis=(0, 1)),
        (lx * zp).sum(axis=(0, 1)),
        (lx * xp).sum(axis=(0, 1)),
        (lz * bu).sum(axis=(0, 1)),
        (lx * bu).sum(axis=(0, 1)),
    )
    gbu = f1 * lz + f2 * lx
    grads[pre + "B"] = gbu.reshape(-1, m).T @ h_in.reshape(-1, H)
    gh += gbu @ Bm

    A, G, dt = rec["A"], rec["G"], rec["dt"]
    gA, gG, gdt = _coefficient_vjp(config.variant, A, G, dt, g_coeffs)
    gA_bar, gG, gdt = _constrain_vjp(weights[pre + "A_bar"], G, dt, gA, gG, gdt)
    grads[pre + "A_bar"] = gA_bar
    if config.variant.damped:
        grads[pre + "G_bar"] = np.where(weights[pre + "G_bar"] > 0, gG, 0.0)
    grads[pre + "dt_bar"] = gdt * dt * (1.0 - dt)
    return gh


def backward(config: ModelConfig, weights, tape, grad_out) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every weight, given d loss / d outputs."""
    grads: dict[str, np.ndarray] = {}
    h, feats, mask = tape["h_final"], tape["feats"], tape["mask"]
    H = h.shape[-1]
    Wd = weights["decoder.W"]
    g = np.asarray(grad_out, dtype=np.float64)
    q = Wd.shape[0]
    grads["decoder.W"] = g.reshape(-1, q).T @ feats.reshape(-1, H)
    grads["decoder.b"] = g.reshape(-1, q).sum(axis=0)
    gfeat = g @ Wd
    if config.readout == "per-step":
        gh = gfeat
    elif config.readout == "last-token":
        gh = np.zeros_like(h)
        last = mask.sum(axis=1) - 1
        gh[np.arange(h.shape[0]), last] = gfeat
    else:
        counts = mask.sum(axis=1)[:, None, None]
        gh = gfeat[:, None, :] * mask[..., None] / counts

    for i in reversed(range(config.num_blocks)):
        rec = tape["blocks"][i]
        gh_in = gh if config.skip else np.zeros_like(gh)
        if config.mixing == "glu":
            pre = f"blocks.{i}.glu."
            gy_mix = rec["g"]
            ga = gh * rec["s"]
            gpre = gh * rec["a"] * rec["s"] * (1.0 - rec["s"])
            flat_g = gy_mix.reshape(-1, H)
            grads[pre + "W1"] = ga.reshape(-1, H).T @ flat_g
            grads[pre + "b1"] = ga.sum(axis=(0, 1))
            grads[pre + "W2"] = gpre.reshape(-1, H).T @ flat_g
            grads[pre + "b2"] = gpre.sum(axis=(0, 1))
            gg = ga @ weights[pre + "W1"] + gpre @ weights[pre + "W2"]
            gy = gg * gelu_grad(rec["y"])
        else:
            gy = gh
        gh = gh_in + _ssm_backward(config, weights, i, rec, gy, grads)

    u = tape["u"]
    grads["encoder.W"] = gh.reshape(-1, H).T @ u.reshape(-1, u.shape[-1])
    grads["encoder.b"] = gh.sum(axis=(0, 1))

    ordered = {}
    for name in param_shapes(config):
        gr = grads[name]
        if not np.all(np.isfinite(gr)):
            raise NonFiniteError(f"non-finite gradient for {name}", param=name)
        ordered[name] = gr
    return ordered


def loss_and_grad(config: ModelConfig, weights, inputs, targets, mask=None, loss: str = "mse"):
    """(loss value, gradients) for one batch."""
    out, tape = forward(config, weights, inputs, mask, keep=True)
    loss_mask = mask if config.readout == "per-step" else None
    value, g_out = LOSSES[loss](out, targets, loss_mask)
    return value, backward(config, weights, tape, g_out)


# --- optimizer ---------------------------------------------------------------

@dataclass
class Adam:
    """Adam with constant learning rate; moments mirror the parameter dict."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


# --- training loop -------------------------------------------------------------

@dataclass
class TrainRun:
    task: str
    model: ModelConfig
    init: InitSpec = field(default_factory=InitSpec)
    seed: int = 0
    max_steps: int = 1000
    eval_every: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    patience: int | None = 1000
    threshold: float | None = None
    stop_at_threshold: bool = False
    history: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    status: str = "pending"
    best_step: int | None = None
    best_val: float | None = None
    steps_to_threshold: int | None = None
    final_metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "variant": self.model.variant.value,
            "config": {
                "model": self.model.to_dict(),
                "init": self.init.to_dict(),
                "train": {
                    "max_steps": self.max_steps, "eval_every": self.eval_every,
                    "batch_size": self.batch_size, "lr": self.lr, "patience": self.patience,
                    "threshold": self.threshold, "stop_at_threshold": self.stop_at_threshold,
                },
            },
            "seed": self.seed,
            "status": self.status,
            "best_step": self.best_step,
            "best_val": self.best_val,
            "final_metrics": self.final_metrics,
            "steps_to_threshold": self.steps_to_threshold,
            "history": self.history,
        }


def evaluate(config: ModelConfig, weights, split: Split, kind: str, chunk: int = 256) -> float:
    outs = []
    for s in range(0, len(split), chunk):
        outs.append(forward(config, weights, split.inputs[s:s + chunk], split.mask[s:s + chunk]))
    pred = np.concatenate(outs, axis=0)
    mask = split.mask if config.readout == "per-step" else None
    return metric(kind, pred, split.targets, mask)


def train_loop(run: TrainRun, data: TaskData, weights: dict | None = None):
    """Train ``run.model`` on ``data``; returns (run, best weights).

    Deterministic in (seed, config, data). Validation is scored every
    ``eval_every`` steps; the best-by-validation weights are kept. A NaN loss or
    gradient ends the run with status ``diverged``.
    """
    seeds = np.random.SeedSequence(run.seed).spawn(2)
    init_rng, batch_rng = (np.random.default_rng(s) for s in seeds)
    if weights is None:
        weights = init_weights(run.model, run.init, init_rng)
    weights = {k: np.array(v, dtype=np.float64) for k, v in weights.items()}
    best = {k: v.copy() for k, v in weights.items()}
    opt = Adam(lr=run.lr)
    better = (lambda a, b: a > b) if higher_is_better(data.metric) else (lambda a, b: a < b)
    run.status = "running"
    since_best = 0
    n_train = len(data.train)

    def record_val(step, train_loss):
        val = evaluate(run.model, weights, data.val, data.metric)
        run.history.append({"step": step, "train_loss": train_loss, "val_metric": val})
        return val

    for step in range(1, run.max_steps + 1):
        t0 = time.perf_counter()
        idx = batch_rng.integers(0, n_train, size=min(run.batch_size, n_train))
        batch = data.train.take(idx)
        try:
            # overflow is caught below as a non-finite loss or gradient
            with np.errstate(all="ignore"):
                value, grads = loss_and_grad(run.model, weights, batch.inputs, batch.targets,
                                             batch.mask, data.loss)
            if not math.isfinite(value):
                raise NonFiniteError("non-finite loss")
        except NonFiniteError as exc:
            log.warning("run diverged at step %d: %s", step, exc)
            run.status = "diverged"
            run.final_metrics["diverged_at"] = step
            return run, best
        opt.step(weights, grads)
        run.wall_ms.append(1000.0 * (time.perf_counter() - t0))

        if step % run.eval_every == 0 or step == run.max_steps:
            try:
                with np.errstate(all="ignore"):
                    val = record_val(step, value)
            except NonFiniteError:
                run.status = "diverged"
                run.final_metrics["diverged_at"] = step
                return run, best
            if run.best_val is None or better(val, run.best_val):
                run.best_val, run.best_step = val, step
                best = {k: v.copy() for k, v in weights.items()}
                since_best = 0
            else:
                since_best += run.eval_every
            if run.threshold is not None and run.steps_to_threshold is None and not better(run.threshold, val):
                run.steps_to_threshold = step
                if run.stop_at_threshold:
                    break
            if run.patience is not None and since_best >= run.patience:
                log.info("early stop at step %d", step)
                break

    run.status = "completed"
    if len(data.test):
        run.final_metrics["test_" + data.metric] = evaluate(run.model, best, data.test, data.metric)
    if run.best_val is not None:
        run.final_metrics["val_" + data.metric] = run.best_val
    return run, best
