"""Supervised pre-training: stabilized cross-entropy, Adam, the epoch loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, as_tensor, exp, log, tmean, tsum, zero_grad
from .errors import (EmptyBatch, InvalidConfig, LabelOutOfRange,
                     NonFiniteLoss, ShapeMismatch)
from .network import Mode, SpikingNet, save_checkpoint


def log_softmax(logits):
    """Row-wise log-softmax, stabilized by the detached row maximum."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeMismatch(f"expected [N, K] logits, got {logits.shape}")
    peak = as_tensor(logits.data.max(axis=1, keepdims=True))  # constant
    z = logits - peak
    return z - log(tsum(exp(z), axis=1, keepdims=True))


def softmax(logits):
    return exp(log_softmax(logits))


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under the logits."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeMismatch("labels must be [N] matching the logits batch")
    if labels.shape[0] == 0:
        raise EmptyBatch("cross entropy over zero samples")
    k = logits.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    picked = tsum(log_softmax(logits) * as_tensor(onehot), axis=1)
    return -tmean(picked)


class Adam:
    """Adam with bias correction over an explicit parameter list."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
            raise InvalidConfig("bad Adam hyperparameters")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_lr(base_lr: float, step: int, total: int) -> float:
    """Half-cosine decay from base_lr to 0 across `total` steps."""
    if total <= 0:
        raise InvalidConfig("schedule needs a positive step count")
    frac = min(max(step, 0), total) / total
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * frac))


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    augment: bool = True        # horizontal flips
    cosine: bool = True         # half-cosine lr decay over all steps
    smooth: bool = False        # logistic spike stand-in (oracle runs only)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise InvalidConfig("bad training configuration")


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # per-epoch dicts
    best_val_acc: float = 0.0
    best_epoch: int = -1

    def to_dict(self):
        return {"epochs": self.epochs, "best_val_acc": self.best_val_acc,
                "best_epoch": self.best_epoch}


def iterate_batches(n: int, batch_size: int, rng=None):
    """Index batches over n samples; shuffled when an rng is given."""
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate(model: SpikingNet, x, y, mode=Mode.EVAL,
             batch_size: int = 256) -> float:
    """Fraction of correct argmax predictions."""
    y = np.asarray(y)
    hits = 0
    for idx in iterate_batches(x.shape[0], batch_size):
        logits = model.forward(x[idx], mode)
        hits += int((np.argmax(logits.data, axis=1) == y[idx]).sum())
    return hits / x.shape[0]


def train(model: SpikingNet, x, y, cfg: TrainConfig, val=None,
          checkpoint_path=None) -> TrainReport:
    """Fit the model; keep the weights (and optional checkpoint) of the
    epoch with the best validation accuracy.

    Raises NonFiniteLoss as soon as an objective stops being a number;
    the model is left at the last finite state.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise EmptyBatch("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    report = TrainReport()
    steps_per_epoch = -(-x.shape[0] // cfg.batch_size)
    total_steps = max(cfg.epochs * steps_per_epoch, 1)
    best_state = None
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for idx in iterate_batches(x.shape[0], cfg.batch_size, rng):
            xb = x[idx]
            if cfg.augment:
                flip = rng.random(xb.shape[0]) < 0.5
                xb = xb.copy()
                xb[flip] = xb[flip, :, :, ::-1]
            with Tape() as tape:
                logits = model.forward(xb, Mode.TRAIN, smooth=cfg.smooth)
                loss = cross_entropy(logits, y[idx])
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(f"loss diverged at step {step}")
            tape.backward(loss)
            lr = cosine_lr(cfg.lr, step, total_steps) if cfg.cosine else None
            opt.step(lr)
            zero_grad(model.parameters())
            losses.append(float(loss.data))
            step += 1
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val is not None:
            acc = evaluate(model, val[0], val[1])
            entry["val_acc"] = acc
            if acc > report.best_val_acc or report.best_epoch < 0:
                report.best_val_acc = acc
                report.best_epoch = epoch
                best_state = (
                    [p.data.copy() for p in model.parameters()],
                    [(s.norm.mu.copy(), s.norm.sigma2.copy())
                     for s in model.norm_lif_stages()])
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, model)
        report.epochs.append(entry)
    if best_state is not None:
        for p, saved in zip(model.parameters(), best_state[0]):
            p.data = saved
        for s, (mu, sig) in zip(model.norm_lif_stages(), best_state[1]):
            s.norm.mu, s.norm.sigma2 = mu, sig
    return report
