"""Flat ``key = value`` experiment configuration with ``[section]`` headers.

Example::

    [env]
    game = catch

    [train]
    total_steps = 50000
    gamma = 0.99

    [run]
    eval_seeds = 1, 2, 3

Unset keys keep their documented defaults. Parsing collects every problem
(syntax, unknown key, duplicate key, type mismatch, violated invariant),
each tagged with its line number, and raises them together.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

from .agent import TrainConfig
from .env import EnvSpec
from .errors import ConfigError, ContractError
from .flow import FlowParams
from .mask import ThresholdPolicy
from .metrics import DEFAULT_BINS
from .net import RMSPropHyper

# evaluation seeds fixed before any run, shared by every checkpoint
DEFAULT_EVAL_SEEDS = (8317, 52110, 907, 44621, 13958, 70342, 2686, 61177, 39504, 25893)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs"
    eval_seeds: tuple = DEFAULT_EVAL_SEEDS
    train_trials: int = 5
    eval_steps: int = 2_000
    eval_epsilon: float = 0.01
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        object.__setattr__(self, "eval_seeds", tuple(int(s) for s in self.eval_seeds))
        if not self.eval_seeds:
            raise ConfigError("eval_seeds must list at least one seed")

    @property
    def train_seeds(self):
        return tuple(self.train.seed + i for i in range(self.train_trials))


def _int(s):
    return int(s)


def _float(s):
    return float(s)


_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


def _bool(s):
    try:
        return _BOOL[s.lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {s!r}") from None


def _str(s):
    return s


def _int_list(s):
    vals = tuple(int(v) for v in re.split(r"[,\s]+", s.strip()) if v)
    if not vals:
        raise ValueError("expected at least one integer")
    return vals


def _conv(s):
    """``8x5x2, 16x3x2, 16x3x1`` as (out_channels, kernel, stride) triples."""
    layers = []
    for part in s.split(","):
        bits = part.strip().lower().split("x")
        if len(bits) != 3:
            raise ValueError(f"conv layer {part.strip()!r} is not CxKxS")
        layers.append(tuple(int(b) for b in bits))
    return tuple(layers)


SCHEMA = {
    "env": {"game": _str, "frame_size": _int, "episode_cap": _int, "background": _str,
            "flicker_period": _int},
    "net": {"conv_layers": _conv, "lstm_units": _int, "unroll": _int},
    "flow": {"pyramid_levels": _int, "pyramid_scale": _float, "window_radius": _int,
             "expansion_sigma": _float, "iterations_per_level": _int},
    "mask": {"method": _str, "k": _float, "floor": _float, "bins": _int,
             "static_ratio": _float, "min_keep": _float},
    "train": {"masking_enabled": _bool, "total_steps": _int, "warmup_steps": _int,
              "epsilon_start": _float, "epsilon_end": _float, "epsilon_decay_start": _int,
              "epsilon_decay_end": _int, "gamma": _float, "batch_size": _int,
              "replay_capacity": _int, "target_sync_interval": _int, "train_interval": _int,
              "report_intervals": _int, "seed": _int},
    "optimizer": {"lr": _float, "lr_decay": _float, "decay_interval": _int, "rho": _float,
                  "momentum": _float, "eps": _float, "clip": _float},
    "run": {"out_dir": _str, "eval_seeds": _int_list, "train_trials": _int, "eval_steps": _int,
            "eval_epsilon": _float, "bins": _int},
}

_LINE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")
_SECTION = re.compile(r"^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$")


def _lex(text: str):
    """Yield ``(section, key, raw_value, line_no)`` and collect syntax errors."""
    errors, entries, seen = [], [], {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s or s.startswith(";"):
            continue
        m = _SECTION.match(s)
        if m:
            section = m.group(1)
            if section not in SCHEMA:
                errors.append(f"line {no}: unknown section [{section}]")
            continue
        m = _LINE.match(s)
        if not m:
            errors.append(f"line {no}: expected 'key = value', got {s!r}")
            continue
        key, value = m.group(1), m.group(2).strip()
        if section is None:
            errors.append(f"line {no}: key {key!r} appears before any [section]")
            continue
        if section not in SCHEMA:
            continue
        if key not in SCHEMA[section]:
            errors.append(f"line {no}: unknown key {key!r} in [{section}]")
            continue
        if (section, key) in seen:
            errors.append(f"line {no}: duplicate key {key!r} in [{section}] "
                          f"(first set on line {seen[section, key]}, again on line {no})")
            continue
        seen[section, key] = no
        entries.append((section, key, value, no))
    return entries, errors


def _build(cls, values: dict, lines: dict, section: str, errors: list):
    """Instantiate ``cls`` and tag invariant failures with the offending key's line."""
    try:
        return cls(**values)
    except (ConfigError, ContractError) as exc:
        msgs = exc.errors if isinstance(exc, ConfigError) else [str(exc)]
        for msg in msgs:
            named = [k for k in lines if re.search(rf"\b{k}\b", msg)]
            where = f"line {lines[named[0]]}: " if named else ""
            errors.append(f"{where}[{section}] {msg}")
        return None


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a configuration, reporting all errors at once."""
    entries, errors = _lex(text)
    values = {s: {} for s in SCHEMA}
    lines = {s: {} for s in SCHEMA}
    for section, key, raw, no in entries:
        try:
            values[section][key] = SCHEMA[section][key](raw)
            lines[section][key] = no
        except ValueError as exc:
            errors.append(f"line {no}: [{section}] {key} = {raw!r}: {exc}")

    env = _build(EnvSpec, values["env"], lines["env"], "env", errors)
    flow = _build(FlowParams, values["flow"], lines["flow"], "flow", errors)
    policy = _build(ThresholdPolicy, values["mask"], lines["mask"], "mask", errors)
    opt = _build(RMSPropHyper, values["optimizer"], lines["optimizer"], "optimizer", errors)

    train = None
    if None not in (env, flow, policy, opt):
        train_vals = dict(values["train"], **values["net"], env=env, flow=flow, policy=policy, optimizer=opt)
        train_lines = dict(lines["train"], **lines["net"])
        train = _build(TrainConfig, train_vals, train_lines, "train", errors)
        if train is not None:
            try:
                train.net_spec
            except ContractError as exc:
                errors.append(f"[net] {exc}")

    run_vals, run_lines = values["run"], lines["run"]
    for key, ok, what in (("train_trials", lambda v: v >= 1, ">= 1"),
                          ("eval_steps", lambda v: v >= 1, ">= 1"),
                          ("bins", lambda v: v >= 2, ">= 2"),
                          ("eval_epsilon", lambda v: 0.0 <= v <= 1.0, "in [0, 1]")):
        if key in run_vals and not ok(run_vals[key]):
            errors.append(f"line {run_lines[key]}: [run] {key} must be {what}, got {run_vals[key]}")
    if errors:
        raise ConfigError(errors)
    return RunConfig(train=train, **run_vals)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise ConfigError([f"{os.fspath(path)}: {e}" for e in exc.errors]) from None


def dumps_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(dumps_config(c)) == c``."""
    t = cfg.train
    objs = {"env": t.env, "flow": t.flow, "mask": t.policy, "optimizer": t.optimizer, "train": t,
            "net": t, "run": cfg}
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key in keys:
            v = getattr(objs[section], key)
            if key == "conv_layers":
                v = ", ".join("x".join(str(x) for x in layer) for layer in v)
            elif key == "eval_seeds":
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{key} = {v}")
        out.append("")
    return "\n".join(out)
