"""Spiking primitives: LIF dynamics, membrane-potential batch normalization
(applied between charging and firing), and the per-step threshold-modulation
update used after deployment.

All forward math is written with autodiff ops so the same code path serves
plain inference (no active tape) and gradient-based passes (tape active).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Tensor, as_tensor, batch_stats, channel_view,
                       heaviside_sg, logistic_spike, sqrt)
from .errors import (DegenerateVariance, InvalidConfig, MissingStats,
                     ShapeMismatch)


@dataclass(frozen=True)
class LifConfig:
    """Leaky integrate-and-fire constants (hard reset)."""

    tau: float = 2.0
    v_th: float = 1.0
    v_reset: float = 0.0

    def __post_init__(self):
        if self.tau < 1.0:
            raise InvalidConfig(f"tau must be >= 1, got {self.tau}")
        if not self.v_th > self.v_reset:
            raise InvalidConfig("v_th must exceed v_reset")


@dataclass(frozen=True)
class TmConfig:
    """Threshold-modulation knobs.

    rho0: statistics momentum at the start of each forward pass (0 freezes
    the estimates entirely); omega: per-step decay of that momentum;
    r: normalize the carried membrane of non-firing neurons; e: run the
    entropy-minimization update of the affine parameters after the pass.
    """

    rho0: float = 1.0
    omega: float = 0.94
    r: int = 0
    e: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho0 <= 1.0:
            raise InvalidConfig(f"rho0 must lie in [0, 1], got {self.rho0}")
        if not 0.0 < self.omega <= 1.0:
            raise InvalidConfig(f"omega must lie in (0, 1], got {self.omega}")
        if self.r not in (0, 1) or self.e not in (0, 1):
            raise InvalidConfig("r and e are binary flags")


class NormParams:
    """Per-channel affine parameters plus (optional) source statistics.

    gamma/beta are Tensors so they can be trained; mu/sigma2 are plain
    arrays updated outside the tape.  They stay None until populated, and
    every consumer that needs them calls require_stats() first.
    """

    def __init__(self, gamma, beta, mu=None, sigma2=None, eps: float = 1e-5,
                 momentum: float = 0.1, trainable: bool = True):
        self.gamma = gamma if isinstance(gamma, Tensor) else \
            Tensor(np.asarray(gamma, dtype=np.float64), requires_grad=trainable)
        self.beta = beta if isinstance(beta, Tensor) else \
            Tensor(np.asarray(beta, dtype=np.float64), requires_grad=trainable)
        if self.gamma.ndim != 1 or self.gamma.shape != self.beta.shape:
            raise ShapeMismatch("gamma and beta must be matching [C] vectors")
        if eps < 0:
            raise InvalidConfig("eps must be non-negative")
        if not 0.0 < momentum <= 1.0:
            raise InvalidConfig("momentum must lie in (0, 1]")
        self.mu = None if mu is None else np.asarray(mu, dtype=np.float64)
        self.sigma2 = None if sigma2 is None else \
            np.asarray(sigma2, dtype=np.float64)
        if self.sigma2 is not None and np.any(self.sigma2 < 0):
            raise InvalidConfig("sigma2 must be non-negative")
        self.eps = float(eps)
        self.momentum = float(momentum)

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def require_stats(self):
        if self.mu is None or self.sigma2 is None:
            raise MissingStats("normalization statistics were never populated")

    def update_running(self, batch_mu: np.ndarray, batch_var: np.ndarray):
        """EMA update of the stored statistics (first update copies)."""
        if self.mu is None:
            self.mu = batch_mu.copy()
            self.sigma2 = batch_var.copy()
        else:
            m = self.momentum
            self.mu = (1.0 - m) * self.mu + m * batch_mu
            self.sigma2 = (1.0 - m) * self.sigma2 + m * batch_var

    def copy(self, trainable: bool) -> "NormParams":
        return NormParams(
            Tensor(self.gamma.data.copy(), requires_grad=trainable),
            Tensor(self.beta.data.copy(), requires_grad=trainable),
            None if self.mu is None else self.mu.copy(),
            None if self.sigma2 is None else self.sigma2.copy(),
            eps=self.eps, momentum=self.momentum)


@dataclass
class TmState:
    """Persistent threshold-modulation state of one deployed layer."""

    mu_hat: np.ndarray
    sigma2_hat: np.ndarray
    rho: float
    v_th_mod: np.ndarray


@dataclass
class LifLayerState:
    """Per-pass membrane state; reset before every forward pass."""

    u: Tensor | None = field(default=None)

    def reset(self, shape):
        self.u = Tensor(np.zeros(shape))


def affine_normalize(h, gamma, beta, mu, sigma2, eps: float):
    """gamma * (h - mu) / sqrt(sigma2 + eps) + beta, broadcasting over [C].

    The single normalization expression in the package: the normalized-
    membrane model and the r=1 carry path of the threshold-modulated model
    must agree bitwise, so they both call this.
    """
    h = as_tensor(h)
    nd = h.ndim
    mu_v = channel_view(as_tensor(mu), nd)
    sig_v = channel_view(as_tensor(sigma2), nd)
    gamma_v = channel_view(as_tensor(gamma), nd)
    beta_v = channel_view(as_tensor(beta), nd)
    return gamma_v * (h - mu_v) / sqrt(sig_v + eps) + beta_v


def lif_charge(x_t, u_prev, cfg: LifConfig):
    """Membrane charge: h_t = x_t + u_{t-1} / tau."""
    x_t, u_prev = as_tensor(x_t), as_tensor(u_prev)
    if x_t.shape != u_prev.shape:
        raise ShapeMismatch(
            f"input {x_t.shape} and membrane {u_prev.shape} differ")
    return x_t + u_prev / cfg.tau


def membrane_norm(h, params: NormParams, training: bool, *,
                  update_running: bool | None = None):
    """Normalize the membrane potential before firing.

    training=True uses the current batch statistics (biased variance) and,
    unless update_running=False, folds them into the stored running
    statistics; training=False normalizes with the stored statistics.
    Passing training=True with update_running=False gives the
    direct-calibration behaviour: per-batch statistics, no state change.
    """
    h = as_tensor(h)
    if h.ndim < 2 or h.shape[1] != params.channels:
        raise ShapeMismatch(
            f"expected channel axis of size {params.channels}, got {h.shape}")
    if training:
        mean, var = batch_stats(h)
        if update_running is None or update_running:
            params.update_running(mean.data, var.data)
        return affine_normalize(h, params.gamma, params.beta, mean, var,
                                params.eps)
    params.require_stats()
    return affine_normalize(h, params.gamma, params.beta, params.mu,
                            params.sigma2, params.eps)


def lif_fire_reset(h, threshold, state: LifLayerState, cfg: LifConfig, *,
                   carry=None, alpha: float = 4.0, smooth: bool = False):
    """Fire (strict >) against a scalar or per-channel threshold, then hard-
    reset: the new membrane is carry*(1-o) + o*v_reset.

    carry defaults to h itself; callers that normalize the non-firing
    membrane pass the normalized tensor instead.  smooth=True substitutes
    the logistic for the step (gradient-oracle use only).
    """
    h = as_tensor(h)
    thr = as_tensor(threshold)
    if thr.ndim == 1:
        thr = channel_view(thr, h.ndim)
    elif thr.ndim not in (0, h.ndim):
        raise ShapeMismatch(f"threshold shape {thr.shape} not broadcastable")
    v = h - thr
    o = logistic_spike(v, alpha) if smooth else heaviside_sg(v, alpha)
    if carry is None:
        carry = h
    state.u = carry * (1.0 - o) + o * cfg.v_reset
    return o


def _tm_step(h, mu_prev, sig_prev, rho_prev: float, tm_cfg: TmConfig,
             params: NormParams, lif: LifConfig):
    """One threshold-modulation step on tape-aware tensors.

    Decays the momentum, folds the current batch statistics of h into the
    estimates, and re-evaluates the per-channel threshold
    (v_th - beta) * sqrt(sigma2 + eps) / gamma + mu.
    Returns (rho, mu, sigma2, threshold) with tensor-valued estimates.
    """
    rho = tm_cfg.omega * rho_prev
    mean, var = batch_stats(h)
    mu = mu_prev * (1.0 - rho) + mean * rho
    sig = sig_prev * (1.0 - rho) + var * rho
    if np.any(sig.data + params.eps <= 0.0):
        raise DegenerateVariance("sigma2 + eps must be positive")
    thr = (lif.v_th - params.beta) * sqrt(sig + params.eps) / params.gamma + mu
    return rho, mu, sig, thr


def tm_update(h, tm: TmState, cfg: TmConfig, params: NormParams,
              lif: LifConfig) -> TmState:
    """One statistics/threshold update, returning a new plain-array state."""
    h = as_tensor(h)
    if h.ndim < 2 or h.shape[1] != params.channels:
        raise ShapeMismatch(
            f"expected channel axis of size {params.channels}, got {h.shape}")
    rho, mu, sig, thr = _tm_step(h, as_tensor(tm.mu_hat),
                                 as_tensor(tm.sigma2_hat), tm.rho, cfg,
                                 params, lif)
    return TmState(mu_hat=mu.data.copy(), sigma2_hat=sig.data.copy(),
                   rho=rho, v_th_mod=thr.data.copy())
