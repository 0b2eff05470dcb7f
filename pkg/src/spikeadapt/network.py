"""Spiking classifier assembly: declarative layer specs, the four forward
modes, and checkpoint round-tripping.

Input encoding is direct: the analog image is presented to the first
convolution at every one of the t_steps time steps.  The readout is the
mean over time of the final linear layer's outputs; there is no LIF after
the readout.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import __version__
from .autodiff import Tensor, as_tensor, avg_pool2d, conv2d, flatten, linear
from .container import load_container, save_container
from .errors import EmptyBatch, InvalidConfig, ModeError, ShapeMismatch
from .neurons import (LifConfig, LifLayerState, NormParams, TmConfig, TmState,
                      _tm_step, affine_normalize, lif_charge, lif_fire_reset,
                      membrane_norm)

CHECKPOINT_VERSION = 1


class Mode(str, Enum):
    """Forward semantics of a pass."""

    TRAIN = "train"          # batch statistics, running stats updated
    EVAL = "eval"            # stored statistics
    CALIBRATE = "calibrate"  # batch statistics recomputed, nothing stored
    DEPLOYED = "deployed"    # folded thresholds + threshold modulation


# -- declarative layer specs ---------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    spiking: bool = True  # followed by a normalized LIF stage

    kind = "conv"


@dataclass(frozen=True)
class PoolSpec:
    k: int

    kind = "pool"


@dataclass(frozen=True)
class FlattenSpec:
    kind = "flatten"


@dataclass(frozen=True)
class LinearSpec:
    out_features: int

    kind = "linear"


_SPEC_KINDS = {"conv": ConvSpec, "pool": PoolSpec, "flatten": FlattenSpec,
               "linear": LinearSpec}


@dataclass(frozen=True)
class NetworkSpec:
    """Input shape, ordered layer descriptors, time steps, class count."""

    input_shape: tuple
    layers: tuple
    t_steps: int = 4
    num_classes: int = 10

    def __post_init__(self):
        if self.t_steps < 1:
            raise InvalidConfig("t_steps must be >= 1")
        if self.num_classes < 2:
            raise InvalidConfig("num_classes must be >= 2")
        if len(self.input_shape) != 3:
            raise InvalidConfig("input_shape must be (channels, H, W)")
        if not self.layers or not isinstance(self.layers[-1], LinearSpec):
            raise InvalidConfig("the last layer must be the linear readout")
        if sum(isinstance(l, LinearSpec) for l in self.layers) != 1:
            raise InvalidConfig("exactly one linear readout is allowed")
        if self.layers[-1].out_features != self.num_classes:
            raise InvalidConfig("readout width must equal num_classes")
        self.shape_walk()  # validates propagation

    def shape_walk(self):
        """Per-layer output shapes; raises if any transition is illegal."""
        shape = tuple(self.input_shape)
        out = []
        for layer in self.layers:
            if isinstance(layer, ConvSpec):
                if len(shape) != 3:
                    raise InvalidConfig("conv after flatten is not supported")
                c, h, w = shape
                if layer.kernel < 1 or layer.stride < 1 or layer.padding < 0:
                    raise InvalidConfig("bad conv geometry")
                ho = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
                wo = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
                if ho < 1 or wo < 1:
                    raise InvalidConfig("conv output collapses to nothing")
                shape = (layer.out_channels, ho, wo)
            elif isinstance(layer, PoolSpec):
                c, h, w = shape
                if h % layer.k or w % layer.k:
                    raise InvalidConfig("pool size must divide spatial dims")
                shape = (c, h // layer.k, w // layer.k)
            elif isinstance(layer, FlattenSpec):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, LinearSpec):
                if len(shape) != 1:
                    raise InvalidConfig("linear readout needs flattened input")
                shape = (layer.out_features,)
            out.append(shape)
        return out

    def to_dict(self):
        layers = []
        for layer in self.layers:
            d = {"kind": layer.kind}
            for f in layer.__dataclass_fields__:
                d[f] = getattr(layer, f)
            layers.append(d)
        return {"input_shape": list(self.input_shape), "layers": layers,
                "t_steps": self.t_steps, "num_classes": self.num_classes}

    @staticmethod
    def from_dict(d) -> "NetworkSpec":
        layers = []
        for entry in d["layers"]:
            entry = dict(entry)
            cls = _SPEC_KINDS[entry.pop("kind")]
            layers.append(cls(**entry))
        return NetworkSpec(tuple(d["input_shape"]), tuple(layers),
                           d["t_steps"], d["num_classes"])


def reference_spec(num_classes: int = 3, input_shape=(3, 16, 16),
                   t_steps: int = 4) -> NetworkSpec:
    """The small three-conv architecture used throughout the test suite."""
    return NetworkSpec(
        input_shape=tuple(input_shape),
        layers=(ConvSpec(8, 3, 1, 1), ConvSpec(16, 3, 2, 1),
                ConvSpec(16, 3, 1, 1), FlattenSpec(), LinearSpec(num_classes)),
        t_steps=t_steps, num_classes=num_classes)


# -- runtime stages ------------------------------------------------------------

class _Conv:
    def __init__(self, name, spec: ConvSpec, in_shape, out_shape, weight,
                 analog_input):
        self.name = name
        self.stride = spec.stride
        self.padding = spec.padding
        self.weight = weight
        self.analog_input = analog_input
        c, h, w = in_shape
        f, ho, wo = out_shape
        # dense multiply-accumulate count for one sample, one time step
        self.dense_macs = f * ho * wo * c * spec.kernel * spec.kernel

    def step(self, x, ctx):
        if ctx.counters is not None:
            if self.analog_input:
                ctx.counters.conv_analog(self.name, x.shape[0],
                                         self.dense_macs)
            else:
                ctx.counters.conv_spiking(self.name, x.shape[0],
                                          float(x.data.mean()),
                                          self.dense_macs)
        return conv2d(x, self.weight, self.stride, self.padding)


class _Pool:
    def __init__(self, name, k, out_elems):
        self.name = name
        self.k = k
        self.out_elems = out_elems  # per sample

    def step(self, x, ctx):
        if ctx.counters is not None:
            ctx.counters.pool(self.name, x.shape[0], self.out_elems, self.k)
        return avg_pool2d(x, self.k)


class _Flatten:
    def __init__(self, name):
        self.name = name

    def step(self, x, ctx):
        return flatten(x)


class _Linear:
    def __init__(self, name, weight):
        self.name = name
        self.weight = weight
        self.dense_ops = weight.shape[0] * weight.shape[1]

    def step(self, x, ctx):
        if ctx.counters is not None:
            ctx.counters.fc(self.name, x.shape[0], float(x.data.mean()),
                            self.dense_ops)
        return linear(x, self.weight)


class _NormLif:
    """Membrane normalization fused with the LIF stage (pre-deployment).

    Charges, normalizes the membrane potential with batch or stored
    statistics, fires against the scalar v_th, and carries the *normalized*
    potential of non-firing neurons to the next step.
    """

    def __init__(self, name, norm: NormParams, lif: LifConfig, alpha,
                 out_shape):
        self.name = name
        self.norm = norm
        self.lif = lif
        self.alpha = alpha
        self.state = LifLayerState()
        self.neurons = int(np.prod(out_shape))  # per sample
        self.channels = out_shape[0]
        self.spatial = int(np.prod(out_shape[1:]))

    def begin_pass(self):
        self.state.u = None

    def step(self, x, ctx):
        if self.state.u is None:
            self.state.u = Tensor(np.zeros(x.shape))
        h = lif_charge(x, self.state.u, self.lif)
        n = x.shape[0]
        if ctx.mode is Mode.TRAIN:
            h_norm = membrane_norm(h, self.norm, training=True)
        elif ctx.mode is Mode.EVAL:
            h_norm = membrane_norm(h, self.norm, training=False)
        else:  # Mode.CALIBRATE
            h_norm = membrane_norm(h, self.norm, training=True,
                                update_running=False)
        if ctx.counters is not None:
            ctx.counters.lif(self.name, n, self.neurons)
            if ctx.mode is Mode.CALIBRATE:
                ctx.counters.norm_stats(self.name, n, self.channels,
                                        self.spatial)
            ctx.counters.norm_elementwise(self.name, n, self.channels,
                                          self.spatial)
        o = lif_fire_reset(h_norm, self.lif.v_th, self.state, self.lif,
                           alpha=self.alpha, smooth=ctx.smooth)
        ctx.saw_spikes(self.name, o)
        return o


class _TmLif:
    """Deployed LIF stage with folded per-channel thresholds.

    With rho0 > 0 the threshold statistics are re-estimated each step from
    the charged membrane; with rho0 == 0 the stored thresholds are applied
    untouched (pure inference) and the statistics code never runs.
    """

    def __init__(self, name, norm: NormParams, lif: LifConfig, alpha,
                 out_shape, tm_cfg: TmConfig, tm: TmState):
        self.name = name
        self.norm = norm
        self.lif = lif
        self.alpha = alpha
        self.tm_cfg = tm_cfg
        self.tm = tm
        self.state = LifLayerState()
        self.neurons = int(np.prod(out_shape))
        self.channels = out_shape[0]
        self.spatial = int(np.prod(out_shape[1:]))
        self._mu = None
        self._sig = None
        self._rho = None
        self._thr = None

    def begin_pass(self):
        self.state.u = None
        self._rho = self.tm_cfg.rho0
        self._mu = as_tensor(self.tm.mu_hat)
        self._sig = as_tensor(self.tm.sigma2_hat)
        self._thr = None

    def step(self, x, ctx):
        if self.state.u is None:
            self.state.u = Tensor(np.zeros(x.shape))
        h = lif_charge(x, self.state.u, self.lif)
        n = x.shape[0]
        adapting = self.tm_cfg.rho0 > 0.0
        if adapting:
            self._rho, self._mu, self._sig, self._thr = _tm_step(
                h, self._mu, self._sig, self._rho, self.tm_cfg, self.norm,
                self.lif)
            thr = self._thr
        else:
            thr = as_tensor(self.tm.v_th_mod)
        if ctx.counters is not None:
            ctx.counters.lif(self.name, n, self.neurons)
            if adapting:
                ctx.counters.norm_stats(self.name, n, self.channels,
                                        self.spatial)
                ctx.counters.tm_ema(self.name, self.channels)
                ctx.counters.tm_threshold(self.name, self.channels)
        carry = None
        if self.tm_cfg.r:
            carry = affine_normalize(h, self.norm.gamma, self.norm.beta,
                                     self._mu, self._sig, self.norm.eps)
        o = lif_fire_reset(h, thr, self.state, self.lif, carry=carry,
                           alpha=self.alpha, smooth=ctx.smooth)
        if ctx.counters is not None and self.tm_cfg.r:
            # only the surviving membrane needs its normalized value; the
            # neurons that fired reset to a constant
            ctx.counters.carry_norm(self.name, n, self.channels,
                                    self.spatial,
                                    live=1.0 - float(o.data.mean()))
        ctx.saw_spikes(self.name, o)
        return o

    def end_pass(self):
        if self.tm_cfg.rho0 > 0.0:
            self.tm.mu_hat = self._mu.data.copy()
            self.tm.sigma2_hat = self._sig.data.copy()
            self.tm.rho = self._rho
            self.tm.v_th_mod = self._thr.data.copy()


class SpikeProbes:
    """Per-layer, per-channel firing-rate accumulator."""

    def __init__(self):
        self.sums = {}
        self.counts = {}

    def record(self, name, o_data):
        axes = (0,) + tuple(range(2, o_data.ndim))
        per_channel = o_data.sum(axis=axes)
        per_channel_count = o_data.size // o_data.shape[1]
        if name not in self.sums:
            self.sums[name] = per_channel.astype(np.float64)
            self.counts[name] = per_channel_count
        else:
            self.sums[name] = self.sums[name] + per_channel
            self.counts[name] += per_channel_count

    def rates(self):
        return {name: self.sums[name] / self.counts[name]
                for name in self.sums}


class _Ctx:
    def __init__(self, mode, counters, trace, probes, smooth):
        self.mode = mode
        self.counters = counters
        self.trace = trace
        self.probes = probes
        self.smooth = smooth
        self.step_spikes = None

    def saw_spikes(self, name, o):
        if self.probes is not None:
            self.probes.record(name, o.data)
        if self.step_spikes is not None:
            self.step_spikes[name] = o.data.copy()


class SpikingNet:
    """Composable spiking classifier built from a NetworkSpec."""

    def __init__(self, spec: NetworkSpec, seed: int | None = 0,
                 lif: LifConfig = LifConfig(), alpha: float = 4.0,
                 eps: float = 1e-5, momentum: float = 0.1,
                 _init: bool = True):
        self.spec = spec
        self.lif = lif
        self.alpha = float(alpha)
        self.stages = []
        rng = np.random.default_rng(seed)
        shapes = spec.shape_walk()
        in_shape = tuple(spec.input_shape)
        conv_i = lif_i = pool_i = 0
        first_conv = True
        for layer, out_shape in zip(spec.layers, shapes):
            if isinstance(layer, ConvSpec):
                conv_i += 1
                fan_in = in_shape[0] * layer.kernel * layer.kernel
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                               size=(layer.out_channels, in_shape[0],
                                     layer.kernel, layer.kernel)) \
                    if _init else np.zeros((layer.out_channels, in_shape[0],
                                            layer.kernel, layer.kernel))
                self.stages.append(_Conv(f"conv{conv_i}", layer, in_shape,
                                         out_shape,
                                         Tensor(w, requires_grad=True),
                                         analog_input=first_conv))
                first_conv = False
                if layer.spiking:
                    lif_i += 1
                    norm = NormParams(np.ones(layer.out_channels),
                                      np.zeros(layer.out_channels),
                                      eps=eps, momentum=momentum)
                    self.stages.append(_NormLif(f"lif{lif_i}", norm, lif,
                                                alpha, out_shape))
            elif isinstance(layer, PoolSpec):
                pool_i += 1
                self.stages.append(_Pool(f"pool{pool_i}", layer.k,
                                         int(np.prod(out_shape))))
            elif isinstance(layer, FlattenSpec):
                self.stages.append(_Flatten("flatten"))
            elif isinstance(layer, LinearSpec):
                d = in_shape[0]
                w = rng.normal(0.0, 1.0 / np.sqrt(d),
                               size=(layer.out_features, d)) \
                    if _init else np.zeros((layer.out_features, d))
                self.stages.append(_Linear("fc", Tensor(w,
                                                        requires_grad=True)))
            in_shape = out_shape

    # -- structure helpers -----------------------------------------------------
    @property
    def deployed(self) -> bool:
        return any(isinstance(s, _TmLif) for s in self.stages)

    def stage(self, name):
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def norm_lif_stages(self):
        return [s for s in self.stages if isinstance(s, (_NormLif, _TmLif))]

    def parameters(self):
        params = []
        for s in self.stages:
            if isinstance(s, (_Conv, _Linear)):
                params.append(s.weight)
            elif isinstance(s, (_NormLif, _TmLif)):
                params.extend([s.norm.gamma, s.norm.beta])
        return params

    def affine_parameters(self):
        params = []
        for s in self.norm_lif_stages():
            params.extend([s.norm.gamma, s.norm.beta])
        return params

    # -- forward ----------------------------------------------------------------
    def forward(self, x, mode: Mode, *, counters=None, trace=None,
                probes=None, smooth: bool = False) -> Tensor:
        mode = Mode(mode)
        if self.deployed and mode is not Mode.DEPLOYED:
            raise ModeError(f"deployed model only runs in {Mode.DEPLOYED}")
        if not self.deployed and mode is Mode.DEPLOYED:
            raise ModeError("model was never deployed")
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1:] != tuple(self.spec.input_shape):
            raise ShapeMismatch(
                f"expected [N, {self.spec.input_shape}], got {x.shape}")
        if x.shape[0] == 0:
            raise EmptyBatch("forward needs at least one sample")
        ctx = _Ctx(mode, counters, trace, probes, smooth)
        if counters is not None:
            counters.batch(x.shape[0], self.spec.t_steps)
        for s in self.stages:
            if hasattr(s, "begin_pass"):
                s.begin_pass()
        acc = None
        for _ in range(self.spec.t_steps):
            if trace is not None:
                ctx.step_spikes = {}
            a = x
            for s in self.stages:
                a = s.step(a, ctx)
            acc = a if acc is None else acc + a
            if trace is not None:
                trace.append(ctx.step_spikes)
        for s in self.stages:
            if hasattr(s, "end_pass"):
                s.end_pass()
        return acc / float(self.spec.t_steps)


def predict(model: SpikingNet, x, mode: Mode) -> np.ndarray:
    """Class labels; ties resolve to the lowest index (argmax convention)."""
    logits = model.forward(x, mode)
    return np.argmax(logits.data, axis=1)


# -- checkpointing --------------------------------------------------------------

def save_checkpoint(path, model: SpikingNet) -> None:
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "toolkit_version": __version__,
        "kind": "deployed" if model.deployed else "trained",
        "spec": model.spec.to_dict(),
        "lif": {"tau": model.lif.tau, "v_th": model.lif.v_th,
                "v_reset": model.lif.v_reset},
        "alpha": model.alpha,
        "norm": {},
        "tm": {},
    }
    arrays = {}
    for s in model.stages:
        if isinstance(s, (_Conv, _Linear)):
            arrays[f"{s.name}.weight"] = s.weight.data
        elif isinstance(s, (_NormLif, _TmLif)):
            arrays[f"{s.name}.gamma"] = s.norm.gamma.data
            arrays[f"{s.name}.beta"] = s.norm.beta.data
            s.norm.require_stats()
            arrays[f"{s.name}.mu"] = s.norm.mu
            arrays[f"{s.name}.sigma2"] = s.norm.sigma2
            meta["norm"][s.name] = {"eps": s.norm.eps,
                                    "momentum": s.norm.momentum}
            if isinstance(s, _TmLif):
                arrays[f"{s.name}.mu_hat"] = s.tm.mu_hat
                arrays[f"{s.name}.sigma2_hat"] = s.tm.sigma2_hat
                arrays[f"{s.name}.v_th_mod"] = s.tm.v_th_mod
                meta["tm"][s.name] = {
                    "rho": s.tm.rho,
                    "cfg": {"rho0": s.tm_cfg.rho0, "omega": s.tm_cfg.omega,
                            "r": s.tm_cfg.r, "e": s.tm_cfg.e}}
    save_container(path, meta, arrays)


def load_checkpoint(path) -> SpikingNet:
    meta, arrays = load_container(path)
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise InvalidConfig(
            f"unsupported checkpoint version {meta.get('format_version')}")
    spec = NetworkSpec.from_dict(meta["spec"])
    lif = LifConfig(**meta["lif"])
    model = SpikingNet(spec, seed=None, lif=lif, alpha=meta["alpha"],
                       _init=False)
    deployed = meta["kind"] == "deployed"
    if deployed:
        _swap_in_tm_stages(model, meta)
    for s in model.stages:
        if isinstance(s, (_Conv, _Linear)):
            s.weight.data = arrays[f"{s.name}.weight"]
        elif isinstance(s, (_NormLif, _TmLif)):
            nm = meta["norm"][s.name]
            s.norm = NormParams(arrays[f"{s.name}.gamma"],
                                arrays[f"{s.name}.beta"],
                                arrays[f"{s.name}.mu"],
                                arrays[f"{s.name}.sigma2"],
                                eps=nm["eps"], momentum=nm["momentum"])
            if isinstance(s, _TmLif):
                s.tm = TmState(arrays[f"{s.name}.mu_hat"],
                               arrays[f"{s.name}.sigma2_hat"],
                               meta["tm"][s.name]["rho"],
                               arrays[f"{s.name}.v_th_mod"])
    return model


def _swap_in_tm_stages(model: SpikingNet, meta) -> None:
    """Replace every _NormLif with a _TmLif shell (arrays filled by caller)."""
    for i, s in enumerate(model.stages):
        if isinstance(s, _NormLif):
            cfg = meta["tm"][s.name]["cfg"]
            tm_cfg = TmConfig(cfg["rho0"], cfg["omega"], cfg["r"], cfg["e"])
            c = s.channels
            shell = TmState(np.zeros(c), np.ones(c), tm_cfg.rho0, np.ones(c))
            model.stages[i] = _TmLif(s.name, s.norm, s.lif, s.alpha,
                                     _shape_of(s), tm_cfg, shell)


def _shape_of(stage):
    # reconstruct (C, spatial...) for neuron counting; spatial detail beyond
    # the product is irrelevant to the stage, so a flat (C, S) stands in.
    return (stage.channels, stage.spatial)
