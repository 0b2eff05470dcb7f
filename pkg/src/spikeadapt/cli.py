"""Run the toolkit's pipelines from one declarative JSON config.

Every invocation takes ``--config run.json`` whose top level names the
``command`` plus the sections that command reads:

    {
      "command": "adapt",
      "seed": 0,
      "out": "reports",
      "checkpoint_in": "trained.spkc",
      "dataset": {"path": "stream.spkd"},
      "corruption": {"kind": "gaussian", "severity": 5},
      "adapt": {"mode": "tm-norm", "batch_size": 64}
    }

Commands:
    fixture       generate (and optionally corrupt) a dataset file
    pretrain      fit a network on a dataset, write a checkpoint
    deploy        fold normalization into thresholds, write a deployed copy
    adapt         stream a dataset through one adaptation mode
    ablate        run the five component combinations on one stream
    energy-table  tabulate per-sample energy for several modes

Flags: ``--config PATH`` (required), ``--set key=value`` (repeatable,
dotted paths, JSON-parsed values), ``--seed N`` and ``--out DIR`` as
shorthands for the top-level keys.  The top-level ``seed`` is the default
for every seeded section that does not pin its own.

Each run writes ``<out>/<command>.summary.json`` (config echo, toolkit
version, results) and, where a per-row series makes sense,
``<out>/<command>.series.csv``.  Reports are written atomically and never
embed clocks or hostnames: the same config produces byte-identical files.
Exit codes: 0 success, 1 bad usage or config, 2 runtime failure.  Set
SPIKEADAPT_LOG=info (or debug) for progress on stderr.
"""

import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .adaptation import ADAPT_MODES, AdaptConfig, ablation_grid, adapt_stream
from .data import CORRUPTIONS, corrupt, gen_synthetic, load_dataset, \
    save_dataset
from .errors import InvalidConfig, SpikeAdaptError
from .network import SpikingNet, load_checkpoint, reference_spec, \
    save_checkpoint
from .neurons import TmConfig
from .reparam import deploy
from .training import TrainConfig, evaluate, train

log = logging.getLogger("spikeadapt.cli")

USAGE = """\
usage: spikeadapt --config PATH [--set key=value]... [--seed N] [--out DIR]

Runs the command named in the config file; see the module documentation
for the config layout.  --set overrides dotted config paths, e.g.
--set adapt.mode=tm-ent --set train.epochs=2
"""

_GEN_KEYS = {"n", "num_classes", "image_size", "seed", "contrast",
             "background_noise"}
_SECTION_KEYS = {
    "dataset": _GEN_KEYS | {"path"},
    "val": _GEN_KEYS | {"path"},
    "corruption": {"kind", "severity", "seed"},
    "net": {"t_steps", "seed", "num_classes"},
    "train": {"epochs", "batch_size", "lr", "seed", "augment", "cosine"},
    "tm": {"rho0", "omega", "r", "e"},
    "adapt": {"mode", "rho0", "omega", "batch_size", "base_lr", "seed"},
}
_SCHEMA = {
    "fixture": ({"dataset", "path"}, {"corruption"}),
    "pretrain": ({"dataset", "checkpoint_out"}, {"val", "net", "train"}),
    "deploy": ({"checkpoint_in", "checkpoint_out"}, {"tm"}),
    "adapt": ({"checkpoint_in", "dataset"}, {"corruption", "adapt"}),
    "ablate": ({"checkpoint_in", "dataset"}, {"corruption", "adapt"}),
    "energy-table": ({"checkpoint_in", "dataset", "modes"},
                     {"corruption", "adapt"}),
}


class _HelpRequested(Exception):
    pass


def _parse_args(argv):
    opts = {"config": None, "sets": [], "seed": None, "out": None}
    i = 0
    while i < len(argv):
        flag = argv[i]
        if flag in ("-h", "--help"):
            raise _HelpRequested()
        if flag not in ("--config", "--set", "--seed", "--out"):
            raise InvalidConfig(f"unknown argument {flag!r}")
        if i + 1 >= len(argv):
            raise InvalidConfig(f"{flag} needs a value")
        value = argv[i + 1]
        i += 2
        if flag == "--config":
            opts["config"] = value
        elif flag == "--set":
            opts["sets"].append(value)
        elif flag == "--seed":
            try:
                opts["seed"] = int(value)
            except ValueError:
                raise InvalidConfig(f"--seed wants an integer, got {value!r}")
        else:
            opts["out"] = value
    if opts["config"] is None:
        raise InvalidConfig("--config PATH is required")
    return opts


def _apply_override(config, assignment):
    if "=" not in assignment:
        raise InvalidConfig(f"--set wants key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    *parents, leaf = dotted.split(".")
    for part in parents:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise InvalidConfig(f"--set {dotted}: {part!r} is not a section")
    node[leaf] = value


def _check_section(command, name, section):
    if not isinstance(section, dict):
        raise InvalidConfig(f"{command}: {name!r} must be an object")
    allowed = _SECTION_KEYS[name]
    for key in section:
        if key not in allowed:
            raise InvalidConfig(f"{command}: unknown key {key!r} in "
                                f"{name!r} (allowed: {sorted(allowed)})")
    if name in ("dataset", "val"):
        if "path" in section:
            if len(section) > 1:
                raise InvalidConfig(f"{command}: {name!r} mixes 'path' with "
                                    "generation keys")
            if not os.path.exists(section["path"]):
                raise InvalidConfig(f"{command}: {name}.path "
                                    f"{section['path']!r} does not exist")
        elif "n" not in section:
            raise InvalidConfig(f"{command}: {name!r} needs 'path' or 'n'")
    if name == "corruption":
        for key in ("kind", "severity"):
            if key not in section:
                raise InvalidConfig(f"{command}: corruption.{key} is missing")
        if section["kind"] not in CORRUPTIONS:
            raise InvalidConfig(f"{command}: unknown corruption "
                                f"{section['kind']!r}")


def _validate(config, path):
    if not isinstance(config, dict):
        raise InvalidConfig(f"{path}: top level must be an object")
    command = config.get("command")
    if command not in _SCHEMA:
        raise InvalidConfig(f"command must be one of {sorted(_SCHEMA)}, "
                            f"got {command!r}")
    required, optional = _SCHEMA[command]
    allowed = {"command", "seed", "out"} | required | optional
    for key in config:
        if key not in allowed:
            raise InvalidConfig(f"{command}: unknown key {key!r} "
                                f"(allowed: {sorted(allowed)})")
    for key in required:
        if key not in config:
            raise InvalidConfig(f"{command}: required key {key!r} is missing")
    for name in _SECTION_KEYS:
        if name in config:
            _check_section(command, name, config[name])
    for key in ("checkpoint_in",):
        if key in config and not os.path.exists(config[key]):
            raise InvalidConfig(f"{command}: {key} {config[key]!r} "
                                "does not exist")
    for key in ("checkpoint_out", "path", "out"):
        if key in config and not isinstance(config[key], str):
            raise InvalidConfig(f"{command}: {key!r} must be a path string")
    if command == "energy-table":
        modes = config["modes"]
        if not isinstance(modes, list) or not modes:
            raise InvalidConfig("energy-table: 'modes' must be a non-empty "
                                "list")
        for mode in modes:
            if mode not in ADAPT_MODES:
                raise InvalidConfig(f"energy-table: unknown mode {mode!r} "
                                    f"(choose from {ADAPT_MODES})")
    seed = config.get("seed", 0)
    if not isinstance(seed, int):
        raise InvalidConfig(f"seed must be an integer, got {seed!r}")
    # constructor-level validation of the typed sections, before any work
    if "train" in config:
        _train_config(config["train"], seed)
    if "tm" in config:
        TmConfig(**config["tm"])
    if "adapt" in config:
        _adapt_config(config.get("adapt", {}), seed)


# -- plumbing ----------------------------------------------------------------------


def _atomic_write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_file(path, writer):
    tmp = f"{path}.tmp"
    writer(tmp)
    os.replace(tmp, path)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON-serializable")


def _write_summary(config, results):
    out_dir = config.get("out", ".")
    doc = {"version": __version__, "command": config["command"],
           "config": config, "results": results}
    text = json.dumps(doc, indent=2, sort_keys=True,
                      default=_json_default) + "\n"
    path = os.path.join(out_dir, f"{config['command']}.summary.json")
    _atomic_write_text(path, text)
    return path


def _write_series(config, fieldnames, rows):
    out_dir = config.get("out", ".")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, restval="")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    path = os.path.join(out_dir, f"{config['command']}.series.csv")
    _atomic_write_text(path, buf.getvalue())
    return path


def _resolve_dataset(section, corruption, top_seed):
    if "path" in section:
        x, y, _ = load_dataset(section["path"])
    else:
        x, y = gen_synthetic(
            section["n"],
            num_classes=section.get("num_classes", 3),
            image_size=section.get("image_size", 16),
            seed=section.get("seed", top_seed),
            contrast=section.get("contrast", 0.45),
            background_noise=section.get("background_noise", 0.03))
    if corruption:
        x = corrupt(x, corruption["kind"], corruption["severity"],
                    seed=corruption.get("seed", top_seed))
    return x, np.asarray(y)


def _train_config(section, top_seed):
    kw = dict(section)
    kw.setdefault("seed", top_seed)
    return TrainConfig(**kw)


def _adapt_config(section, top_seed, mode=None):
    kw = dict(section)
    kw.setdefault("seed", top_seed)
    if mode is not None:
        kw["mode"] = mode
    return AdaptConfig(**kw)


# -- commands ----------------------------------------------------------------------


def _cmd_fixture(config, seed):
    x, y = _resolve_dataset(config["dataset"], config.get("corruption"),
                            seed)
    meta = {"generator": dict(config["dataset"]),
            "corruption": dict(config.get("corruption") or {})}
    _atomic_file(config["path"], lambda p: save_dataset(p, x, y, meta))
    log.info("wrote %d samples to %s", x.shape[0], config["path"])
    return {"path": config["path"], "samples": int(x.shape[0]),
            "image_shape": list(x.shape[1:]),
            "classes": int(y.max()) + 1}, None


def _cmd_pretrain(config, seed):
    x, y = _resolve_dataset(config["dataset"], None, seed)
    val = None
    if "val" in config:
        val = _resolve_dataset(config["val"], None, seed)
    net_cfg = config.get("net", {})
    num_classes = net_cfg.get("num_classes", int(y.max()) + 1)
    spec = reference_spec(num_classes=num_classes,
                          input_shape=tuple(x.shape[1:]),
                          t_steps=net_cfg.get("t_steps", 4))
    model = SpikingNet(spec, seed=net_cfg.get("seed", seed))
    cfg = _train_config(config.get("train", {}), seed)
    log.info("training %d epochs on %d samples", cfg.epochs, x.shape[0])
    report = train(model, x, y, cfg, val=val)
    _atomic_file(config["checkpoint_out"],
                 lambda p: save_checkpoint(p, model))
    results = {"checkpoint": config["checkpoint_out"],
               "epochs_run": len(report.epochs),
               "train_acc": evaluate(model, x, y)}
    if val is not None:
        results["best_val_acc"] = report.best_val_acc
        results["best_epoch"] = report.best_epoch
        results["final_val_acc"] = evaluate(model, val[0], val[1])
    series = (["epoch", "train_loss", "val_acc"], report.epochs)
    return results, series


def _cmd_deploy(config, seed):
    model = load_checkpoint(config["checkpoint_in"])
    tm = TmConfig(**config.get("tm", {}))
    deployed = deploy(model, tm)
    _atomic_file(config["checkpoint_out"],
                 lambda p: save_checkpoint(p, deployed))
    stages = {}
    for stage in deployed.norm_lif_stages():
        v = stage.tm.v_th_mod
        stages[stage.name] = {"v_th_min": float(v.min()),
                              "v_th_max": float(v.max()),
                              "v_th_mean": float(v.mean())}
    return {"checkpoint": config["checkpoint_out"], "stages": stages}, None


def _cmd_adapt(config, seed):
    source = load_checkpoint(config["checkpoint_in"])
    x, y = _resolve_dataset(config["dataset"], config.get("corruption"),
                            seed)
    cfg = _adapt_config(config.get("adapt", {}), seed)
    log.info("streaming %d samples in mode %s", x.shape[0], cfg.mode)
    report = adapt_stream(source, x, y, cfg)
    results = {"mode": report.mode, "accuracy": report.accuracy,
               "mean_entropy": report.mean_entropy,
               "skipped": report.skipped, "energy": report.energy,
               "batches": len(report.batches)}
    series = (["batch", "correct", "size", "entropy", "skipped"],
              report.batches)
    return results, series


def _cmd_ablate(config, seed):
    source = load_checkpoint(config["checkpoint_in"])
    x, y = _resolve_dataset(config["dataset"], config.get("corruption"),
                            seed)
    cfg = _adapt_config(config.get("adapt", {}), seed)
    rows = ablation_grid(source, x, y, cfg)
    fields = ["variant", "decayed_momentum", "carry_norm", "entropy_update",
              "accuracy", "uj_per_sample", "skipped"]
    return {"rows": rows}, (fields, rows)


def _cmd_energy_table(config, seed):
    source = load_checkpoint(config["checkpoint_in"])
    x, y = _resolve_dataset(config["dataset"], config.get("corruption"),
                            seed)
    modes = config["modes"]
    energies = {}
    for mode in modes:
        cfg = _adapt_config(config.get("adapt", {}), seed, mode=mode)
        log.info("counting mode %s", mode)
        energies[mode] = adapt_stream(source, x, y, cfg).energy
    baseline = "source" if "source" in modes else modes[0]
    base_uj = energies[baseline]["uj"]
    rows = []
    for mode in modes:
        e = energies[mode]
        rows.append({"mode": mode, "macs_m": e["macs_m"],
                     "acs_m": e["acs_m"], "muls_m": e["muls_m"],
                     "uj": e["uj"],
                     "overhead_pct": (e["uj"] / base_uj - 1.0) * 100.0})
    fields = ["mode", "macs_m", "acs_m", "muls_m", "uj", "overhead_pct"]
    return {"rows": rows, "baseline": baseline}, (fields, rows)


_COMMANDS = {
    "fixture": _cmd_fixture,
    "pretrain": _cmd_pretrain,
    "deploy": _cmd_deploy,
    "adapt": _cmd_adapt,
    "ablate": _cmd_ablate,
    "energy-table": _cmd_energy_table,
}


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    level = os.environ.get("SPIKEADAPT_LOG", "warning").upper()
    logging.basicConfig(stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s",
                        level=getattr(logging, level, logging.WARNING))
    try:
        opts = _parse_args(list(argv))
    except _HelpRequested:
        print(USAGE)
        return 0
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(USAGE, file=sys.stderr)
        return 1
    try:
        with open(opts["config"]) as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise InvalidConfig("top level must be an object")
        for assignment in opts["sets"]:
            _apply_override(config, assignment)
        if opts["seed"] is not None:
            config["seed"] = opts["seed"]
        if opts["out"] is not None:
            config["out"] = opts["out"]
        config.setdefault("out", ".")
        _validate(config, opts["config"])
    except (OSError, json.JSONDecodeError, SpikeAdaptError, TypeError,
            ValueError) as exc:
        print(f"error: {opts['config']}: {exc}", file=sys.stderr)
        return 1
    try:
        os.makedirs(config["out"], exist_ok=True)
        results, series = _COMMANDS[config["command"]](config,
                                                       config.get("seed", 0))
        if series is not None:
            fields, rows = series
            series_path = _write_series(config, fields, rows)
            log.info("series written to %s", series_path)
        summary_path = _write_summary(config, results)
    except (SpikeAdaptError, OSError) as exc:
        print(f"error: {opts['config']}: {config['command']}: "
              f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(summary_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
