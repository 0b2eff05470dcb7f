"""Label-free adaptation of a deployed model to a shifted input stream.

Four ways to run a stream:

* ``source``              frozen deployment, nothing adapts (the baseline)
* ``tm-norm``             thresholds track live statistics; the carried
                          membrane of non-firing neurons is re-normalized
* ``tm-ent``              tm-norm plus a prediction-entropy update of the
                          per-channel scale/shift after every batch
* ``direct-calibration``  the un-folded model, statistics recomputed from
                          each batch (the expensive reference adaptation)

Batches are consumed in stream order and predicted before any parameter
update, so accuracy is always measured on-line.  A batch whose objective
or gradients stop being finite is skipped: its statistics are rolled back
and no update happens, which keeps one poisoned batch from corrupting the
rest of the stream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, exp, tsum, tmean, zero_grad
from .energy import EnergyConstants, EnergyCounters, energy_row
from .errors import InvalidConfig, NonFiniteGradient
from .network import Mode, SpikeProbes, SpikingNet
from .neurons import TmConfig
from .reparam import deploy
from .training import Adam, log_softmax

ADAPT_MODES = ("source", "tm-norm", "tm-ent", "direct-calibration")


def entropy_loss(logits):
    """Mean Shannon entropy (nats) of the softmax predictions."""
    logp = log_softmax(logits)
    p = exp(logp)
    return tmean(-tsum(p * logp, axis=1))


@dataclass
class AdaptConfig:
    mode: str = "tm-norm"
    rho0: float = 1.0
    omega: float = 0.94
    batch_size: int = 64
    base_lr: float = 2.5e-4   # entropy step size at batch size 64
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ADAPT_MODES:
            raise InvalidConfig(f"mode must be one of {ADAPT_MODES}")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be positive")
        if self.base_lr <= 0:
            raise InvalidConfig("base_lr must be positive")

    @property
    def lr(self) -> float:
        """Entropy-update step, scaled linearly with the batch size."""
        return self.base_lr * self.batch_size / 64.0

    def tm_config(self) -> TmConfig | None:
        if self.mode == "source":
            return TmConfig(rho0=0.0, omega=self.omega, r=0, e=0)
        if self.mode == "tm-norm":
            return TmConfig(rho0=self.rho0, omega=self.omega, r=1, e=0)
        if self.mode == "tm-ent":
            return TmConfig(rho0=self.rho0, omega=self.omega, r=1, e=1)
        return None  # direct-calibration runs the un-folded model


@dataclass
class AdaptReport:
    mode: str
    batches: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    accuracy: float = 0.0
    mean_entropy: float = 0.0
    energy: dict = field(default_factory=dict)
    model: object = field(default=None, repr=False)      # the streamed model
    counters: object = field(default=None, repr=False)   # raw op tallies

    def to_dict(self):
        return {"mode": self.mode, "accuracy": self.accuracy,
                "mean_entropy": self.mean_entropy, "skipped": self.skipped,
                "energy": self.energy, "batches": self.batches}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["batch", "correct", "size",
                                               "entropy", "skipped"])
            w.writeheader()
            for row in self.batches:
                w.writerow(row)


def _tm_snapshot(model):
    out = []
    for s in model.norm_lif_stages():
        tm = getattr(s, "tm", None)
        if tm is not None:
            out.append((tm, tm.mu_hat.copy(), tm.sigma2_hat.copy(), tm.rho,
                        tm.v_th_mod.copy()))
    return out


def _tm_restore(snapshot):
    for tm, mu, sig, rho, thr in snapshot:
        tm.mu_hat, tm.sigma2_hat, tm.rho, tm.v_th_mod = mu, sig, rho, thr


def _grads_are_finite(params):
    return all(p.grad is None or np.all(np.isfinite(p.grad))
               for p in params)


def affine_update(opt: Adam, params, tape: Tape, loss) -> None:
    """Backpropagate the objective into the scale/shift parameters only.

    Raises NonFiniteGradient (leaving the parameters untouched) when the
    objective or any gradient is not a number.
    """
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteGradient("objective is not finite")
    tape.backward(loss)
    if not _grads_are_finite(params):
        zero_grad(params)
        raise NonFiniteGradient("gradient is not finite")
    opt.step()
    zero_grad(params)


def _count_entropy_backward(counters: EnergyCounters, model: SpikingNet,
                            n: int, t_steps: int, k: int) -> None:
    """Approximate cost of one entropy backward pass plus the Adam step.

    Charged per element and step: the surrogate slope and its chain-rule
    multiply; per channel: the gradient reductions onto scale/shift and
    the Adam moment updates; per sample: the softmax/entropy head.
    """
    for s in model.norm_lif_stages():
        e = n * s.neurons * t_steps
        c = s.channels
        counters.add("entropy-backward", acs=e + 2 * c, muls=2 * e + 10 * c)
    counters.add("entropy-backward", acs=n * (2 * k - 1), muls=n * (3 * k))


def adapt_stream(source: SpikingNet, x, y, cfg: AdaptConfig, *,
                 probes: SpikeProbes | None = None,
                 counters: EnergyCounters | None = None,
                 constants: EnergyConstants = EnergyConstants(),
                 tm_override: TmConfig | None = None):
    """Run a labelled stream through one adaptation mode.

    The source model is never modified: deployment produces a copy, and
    direct calibration re-estimates statistics without storing them.
    Labels are used for on-line accuracy only — no update ever sees them.
    Returns an AdaptReport; the streamed model hangs off ``report.model``.
    tm_override pins the exact threshold knobs (the ablation grid needs
    combinations the named modes never produce).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] != y.shape[0]:
        raise InvalidConfig("stream images and labels disagree in length")
    tm_cfg = tm_override if tm_override is not None else cfg.tm_config()
    if tm_cfg is None:
        model, mode = source, Mode.CALIBRATE
    else:
        model, mode = deploy(source, tm_cfg), Mode.DEPLOYED
    learning = tm_cfg is not None and tm_cfg.e == 1
    params = model.affine_parameters()
    opt = Adam(params, lr=cfg.lr) if learning else None
    counters = counters if counters is not None else EnergyCounters()
    report = AdaptReport(mode=cfg.mode)
    correct = 0
    entropies = []
    n_total = x.shape[0]
    k = model.spec.num_classes
    for b, start in enumerate(range(0, n_total, cfg.batch_size)):
        xb = x[start:start + cfg.batch_size]
        yb = y[start:start + cfg.batch_size]
        snapshot = _tm_snapshot(model) if learning else None
        skipped = False
        if learning:
            with Tape() as tape:
                logits = model.forward(xb, mode, counters=counters,
                                       probes=probes)
                loss = entropy_loss(logits)
            _count_entropy_backward(counters, model, xb.shape[0],
                                    model.spec.t_steps, k)
            try:
                affine_update(opt, params, tape, loss)
            except NonFiniteGradient:
                _tm_restore(snapshot)
                skipped = True
                report.skipped.append(b)
        else:
            logits = model.forward(xb, mode, counters=counters,
                                   probes=probes)
            loss = entropy_loss(logits)
        batch_correct = int((np.argmax(logits.data, axis=1) == yb).sum())
        correct += batch_correct
        ent = float(loss.data) if np.isfinite(loss.data) else None
        if ent is not None:
            entropies.append(ent)
        report.batches.append({"batch": b, "correct": batch_correct,
                               "size": int(xb.shape[0]), "entropy": ent,
                               "skipped": skipped})
    report.accuracy = correct / n_total
    report.mean_entropy = float(np.mean(entropies)) if entropies else 0.0
    report.energy = energy_row(cfg.mode, counters, constants)
    report.model = model
    report.counters = counters
    return report


def firing_rate_probe(model: SpikingNet, x, mode,
                      batch_size: int = 64) -> dict:
    """Per-layer, per-channel firing rates over a dataset."""
    probes = SpikeProbes()
    for start in range(0, x.shape[0], batch_size):
        model.forward(x[start:start + batch_size], mode, probes=probes)
    return probes.rates()


# the five component on/off combinations exercised by the ablation:
# (label, statistics momentum decays, carried membrane normalized, entropy)
ABLATION_VARIANTS = (
    ("V1", True, True, True),
    ("V2", True, True, False),
    ("V3", False, True, False),
    ("V4", True, False, False),
    ("V5", False, False, False),
)
_ABLATION_RHO0 = 0.9  # rho0 < 1 when the decayed-momentum component is on


def ablation_grid(source: SpikingNet, x, y, cfg: AdaptConfig):
    """Run the component ablation over one stream; one result row each."""
    rows = []
    for label, decayed, carry, ent in ABLATION_VARIANTS:
        tm_cfg = TmConfig(rho0=_ABLATION_RHO0 if decayed else 1.0,
                          omega=cfg.omega, r=int(carry), e=int(ent))
        variant_cfg = AdaptConfig(mode="tm-ent" if ent else "tm-norm",
                                  rho0=tm_cfg.rho0, omega=cfg.omega,
                                  batch_size=cfg.batch_size,
                                  base_lr=cfg.base_lr, seed=cfg.seed)
        report = adapt_stream(source, x, y, variant_cfg,
                              tm_override=tm_cfg)
        rows.append({"variant": label, "decayed_momentum": decayed,
                     "carry_norm": carry, "entropy_update": ent,
                     "accuracy": report.accuracy,
                     "uj_per_sample": report.energy["uj"],
                     "skipped": len(report.skipped)})
    return rows
