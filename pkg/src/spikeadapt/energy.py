"""Operation counting and the energy model.

Costs are charged per arithmetic event on 32-bit-equivalent hardware:
multiply-accumulate (dense, analog input), accumulate (spike-driven adds,
comparisons folded into the neuron update), and standalone multiplies
(scaling, division and square roots each count as one multiply).

Itemization, per layer and time step, for a batch of n samples with c
channels and s spatial positions (e = n*c*s membrane elements):

* analog conv        macs += n * dense_macs
* spiking conv / fc  acs  += rate * n * dense_ops       (one add per spike)
* neuron update      acs  += n * neurons                (leak + compare)
* batch statistics   acs  += 3e - 2c,  muls += e + c    (mean, then biased
                                                         variance)
* normalize          acs  += e + 2c,   muls += e + 3c   (per-channel fold
                                                         of scale/shift,
                                                         then one multiply
                                                         and add per item)
* carried-membrane   like normalize, but only the live fraction of
  normalize          elements (neurons that fired reset to a constant)
* statistics decay   acs  += 2c,       muls += 4c + 1   (two blends plus
                                                         the momentum step)
* threshold re-fold  acs  += 3c,       muls += 3c       (sqrt, divide and
                                                         scale per channel)
* average pool       acs  += n * out * (k*k - 1), muls += n * out
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, ModeError


@dataclass(frozen=True)
class EnergyConstants:
    """Per-event energies in picojoules."""

    mac_pj: float = 4.6
    ac_pj: float = 0.9
    mul_pj: float = 3.7

    @property
    def sop_pj(self) -> float:
        """A synaptic operation is one accumulate."""
        return self.ac_pj


def sops(rate: float, t_steps: int, dense_macs: float) -> float:
    """Spike-driven operations of a layer: firing rate x steps x fan-in."""
    if not 0.0 <= rate <= 1.0:
        raise InvalidConfig("firing rate must lie in [0, 1]")
    if t_steps < 1 or dense_macs < 0:
        raise InvalidConfig("bad sops arguments")
    return rate * t_steps * dense_macs


class EnergyCounters:
    """Per-layer op tallies filled in by the network's forward pass."""

    def __init__(self):
        self.layers = {}
        self.samples = 0
        self.forwards = 0

    def _at(self, name):
        if name not in self.layers:
            self.layers[name] = {"macs": 0.0, "acs": 0.0, "muls": 0.0}
        return self.layers[name]

    def add(self, name, macs=0.0, acs=0.0, muls=0.0):
        row = self._at(name)
        row["macs"] += macs
        row["acs"] += acs
        row["muls"] += muls

    # -- events emitted by the forward pass --------------------------------
    def batch(self, n: int, t_steps: int):
        self.samples += n
        self.forwards += 1

    def conv_analog(self, name, n, dense_macs):
        self.add(name, macs=n * dense_macs)

    def conv_spiking(self, name, n, rate, dense_macs):
        self.add(name, acs=rate * n * dense_macs)

    def fc(self, name, n, rate, dense_ops):
        self.add(name, acs=rate * n * dense_ops)

    def lif(self, name, n, neurons):
        self.add(name, acs=n * neurons)

    def norm_stats(self, name, n, channels, spatial):
        e = n * channels * spatial
        self.add(name, acs=3 * e - 2 * channels, muls=e + channels)

    def norm_elementwise(self, name, n, channels, spatial):
        e = n * channels * spatial
        self.add(name, acs=e + 2 * channels, muls=e + 3 * channels)

    def carry_norm(self, name, n, channels, spatial, live: float):
        e = n * channels * spatial * float(np.clip(live, 0.0, 1.0))
        self.add(name, acs=e + 2 * channels, muls=e + 3 * channels)

    def tm_ema(self, name, channels):
        self.add(name, acs=2 * channels, muls=4 * channels + 1)

    def tm_threshold(self, name, channels):
        self.add(name, acs=3 * channels, muls=3 * channels)

    def pool(self, name, n, out_elems, k):
        self.add(name, acs=n * out_elems * (k * k - 1), muls=n * out_elems)

    # -- reading the tallies ------------------------------------------------
    @property
    def macs(self):
        return sum(r["macs"] for r in self.layers.values())

    @property
    def acs(self):
        return sum(r["acs"] for r in self.layers.values())

    @property
    def muls(self):
        return sum(r["muls"] for r in self.layers.values())

    def energy_uj(self, constants: EnergyConstants = EnergyConstants(),
                  per_sample: bool = True) -> float:
        """Total energy in microjoules (per sample unless told otherwise)."""
        pj = (constants.mac_pj * self.macs + constants.ac_pj * self.acs
              + constants.mul_pj * self.muls)
        if per_sample:
            if self.samples == 0:
                raise InvalidConfig("no samples were counted")
            pj /= self.samples
        return pj / 1e6

    @staticmethod
    def from_totals(macs: float, acs: float, muls: float,
                    samples: int = 1) -> "EnergyCounters":
        c = EnergyCounters()
        c.add("total", macs=macs, acs=acs, muls=muls)
        c.samples = samples
        return c


def count_forward(model, x, mode, counters=None) -> EnergyCounters:
    """Run one inference pass and return its op counters."""
    from .network import Mode
    mode = Mode(mode)
    if mode is Mode.TRAIN:
        raise ModeError("op counting applies to inference passes only")
    counters = counters if counters is not None else EnergyCounters()
    model.forward(x, mode, counters=counters)
    return counters


def energy_row(label: str, counters: EnergyCounters,
               constants: EnergyConstants = EnergyConstants()) -> dict:
    """One table row: per-sample op counts in millions plus microjoules."""
    n = max(counters.samples, 1)
    return {
        "label": label,
        "macs_m": counters.macs / n / 1e6,
        "acs_m": counters.acs / n / 1e6,
        "muls_m": counters.muls / n / 1e6,
        "uj": counters.energy_uj(constants),
    }


def format_table(rows, baseline: str | None = None) -> str:
    """Align rows as text; with a baseline label, add % energy overhead."""
    base = None
    if baseline is not None:
        for row in rows:
            if row["label"] == baseline:
                base = row["uj"]
    header = f"{'method':<22}{'MACs(M)':>10}{'ACs(M)':>10}" \
             f"{'MULs(M)':>10}{'uJ/sample':>12}"
    if base is not None:
        header += f"{'overhead':>10}"
    lines = [header, "-" * len(header)]
    for row in rows:
        line = (f"{row['label']:<22}{row['macs_m']:>10.2f}"
                f"{row['acs_m']:>10.2f}{row['muls_m']:>10.2f}"
                f"{row['uj']:>12.2f}")
        if base is not None:
            pct = 0.0 if base == 0 else (row["uj"] - base) / base * 100.0
            line += f"{pct:>9.1f}%"
        lines.append(line)
    return "\n".join(lines)
