"""Folding membrane normalization into per-channel firing thresholds.

A trained model normalizes the charged membrane and fires against a scalar
threshold.  For deployment the normalization is removed and its effect is
folded into a per-channel threshold instead:

    v_mod = (v_th - beta) * sqrt(sigma2 + eps) / gamma + mu

which fires identically (for gamma > 0) while costing nothing per element.
The folded model optionally keeps re-estimating (mu, sigma2) from live
activity — that is the threshold-modulation machinery in `neurons`.
"""

from __future__ import annotations

import numpy as np

from .errors import ModeError, ZeroGamma
from .neurons import TmConfig, TmState
from .network import SpikingNet, _NormLif, _TmLif


def reparam_threshold(v_th: float, gamma, beta, mu, sigma2,
                      eps: float) -> np.ndarray:
    """Per-channel deployed threshold equivalent to normalize-then-compare."""
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(gamma == 0.0):
        raise ZeroGamma("a zero scale channel cannot be folded into a "
                        "threshold")
    return (v_th - beta) * np.sqrt(sigma2 + eps) / gamma + mu


def deploy(model: SpikingNet, tm_cfg: TmConfig = TmConfig()) -> SpikingNet:
    """Return a deployed copy of a trained model.

    The copy replaces every normalize-and-fire stage with a folded-threshold
    stage whose statistics start from the stored running statistics.  The
    source model is left untouched.  Raises MissingStats if the model was
    never run in training mode, ZeroGamma if any scale collapsed to zero.
    """
    if model.deployed:
        raise ModeError("model is already deployed")
    clone = SpikingNet(model.spec, seed=None, lif=model.lif,
                       alpha=model.alpha, _init=False)
    for src, dst in zip(model.stages, clone.stages):
        if hasattr(src, "weight"):
            dst.weight.data = src.weight.data.copy()
    for i, (src, dst) in enumerate(zip(model.stages, clone.stages)):
        if not isinstance(src, _NormLif):
            continue
        src.norm.require_stats()
        norm = src.norm.copy(trainable=True)
        v_mod = reparam_threshold(model.lif.v_th, norm.gamma.data,
                                  norm.beta.data, norm.mu, norm.sigma2,
                                  norm.eps)
        tm = TmState(mu_hat=norm.mu.copy(), sigma2_hat=norm.sigma2.copy(),
                     rho=tm_cfg.rho0, v_th_mod=v_mod)
        clone.stages[i] = _TmLif(src.name, norm, src.lif, src.alpha,
                                 (src.channels, src.spatial), tm_cfg, tm)
    return clone
