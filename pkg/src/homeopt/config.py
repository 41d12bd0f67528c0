"""Flat `section.key = value` experiment configs.

The format is line-oriented and dependency-free: blank lines and lines
starting with '#' are ignored, everything else must be `key = value` with a
dotted key. Unknown keys are errors. Resolution expands every default, and
the resolved form echoes back to text such that parse(echo(cfg)) == cfg and
reruns from the echo are byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .optim import OptimizerKind, preset, preset_names
from .problems import ProblemKind

_PROBLEM_KINDS = {k.value for k in ProblemKind}
_OPTIMIZER_KINDS = {k.value for k in OptimizerKind}


def fmt_float(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def _parse_float(s: str, path: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"expected a number, got {s!r}", path)


def _parse_int(s: str, path: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ConfigError(f"expected an integer, got {s!r}", path)


def _parse_intlist(s: str, path: str):
    if not s:
        return ()
    return tuple(_parse_int(p.strip(), path) for p in s.split(","))


# key -> (type tag, default). "" encodes an unset optional value.
_SCHEMA = {
    "name": ("str", "run"),
    "problem.kind": ("str", "logistic"),
    "problem.n": ("int", 100),
    "problem.dim": ("int", 5),
    "problem.seed": ("int", 1),
    "problem.scale": ("float", 1.0),
    "optimizer.kind": ("str", "home_adam"),
    "optimizer.preset": ("str", ""),
    "optimizer.eta": ("float", 0.01),
    "optimizer.beta1": ("float", 0.9),
    "optimizer.beta2": ("float", 0.99),
    "optimizer.eps": ("float", 1e-7),
    "optimizer.lambda": ("float", 0.0),
    "optimizer.tau": ("float", 1.0),
    "optimizer.c": ("optfloat", ""),
    "optimizer.gamma": ("float", 0.75),
    "run.T": ("int", 1000),
    "run.T_grid": ("intlist", ()),
    "run.Ns": ("intlist", (100, 200, 400)),
    "run.n_pairs": ("int", 50),
    "run.batch_size": ("int", 1),
    "run.seed": ("int", 7),
    "run.theta0_scale": ("float", 0.0),
    "run.probe_points": ("int", 100),
    "run.heldout_n": ("int", 200),
    "output.dir": ("str", ""),
    "output.formats": ("str", "csv,json"),
    "constants.G": ("optfloat", ""),
    "constants.L": ("optfloat", ""),
    "constants.sigma": ("optfloat", ""),
    "constants.rho": ("optfloat", ""),
    "constants.F0_minus_Fstar": ("optfloat", ""),
}

_KEY_ORDER = list(_SCHEMA)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved configuration; every field has a concrete value."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def name(self) -> str:
        return self.values["name"]

    def out_dir(self) -> str:
        return self.values["output.dir"] or f"runs/{self.name}"

    def hyperparams(self):
        from .optim import HyperParams
        v = self.values
        c = v["optimizer.c"]
        return HyperParams(eta=v["optimizer.eta"], beta1=v["optimizer.beta1"],
                           beta2=v["optimizer.beta2"], eps=v["optimizer.eps"],
                           lam=v["optimizer.lambda"], tau=v["optimizer.tau"],
                           c=c if c != "" else None,
                           gamma=v["optimizer.gamma"])

    def kind(self) -> OptimizerKind:
        return OptimizerKind(self.values["optimizer.kind"])

    def echo(self) -> str:
        lines = []
        for key in _KEY_ORDER:
            tag, _ = _SCHEMA[key]
            val = self.values[key]
            if tag == "float":
                s = fmt_float(val)
            elif tag == "optfloat":
                s = "" if val == "" else fmt_float(val)
            elif tag == "intlist":
                s = ",".join(str(v) for v in val)
            else:
                s = str(val)
            lines.append(f"{key} = {s}")
        return "\n".join(lines) + "\n"


def parse_text(text: str) -> dict:
    """Raw key -> string-value mapping from config text."""
    raw = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key in raw:
            raise ConfigError("duplicate key", key)
        raw[key] = value
    return raw


def _coerce(key: str, text: str):
    tag, _ = _SCHEMA[key]
    if tag == "str":
        return text
    if tag == "int":
        return _parse_int(text, key)
    if tag == "float":
        return _parse_float(text, key)
    if tag == "optfloat":
        return "" if text == "" else _parse_float(text, key)
    return _parse_intlist(text, key)


def _validate(values: dict) -> None:
    if values["problem.kind"] not in _PROBLEM_KINDS:
        raise ConfigError(f"unknown problem kind {values['problem.kind']!r}; "
                          f"one of {sorted(_PROBLEM_KINDS)}", "problem.kind")
    if values["optimizer.kind"] not in _OPTIMIZER_KINDS:
        raise ConfigError(f"unknown optimizer kind "
                          f"{values['optimizer.kind']!r}; "
                          f"one of {sorted(_OPTIMIZER_KINDS)}", "optimizer.kind")
    pname = values["optimizer.preset"]
    if pname and pname not in preset_names():
        raise ConfigError(f"unknown preset {pname!r}; one of {preset_names()}",
                          "optimizer.preset")
    positive = ["problem.n", "problem.dim", "problem.scale", "optimizer.eta",
                "run.T", "run.n_pairs", "run.batch_size", "run.probe_points",
                "run.heldout_n"]
    for key in positive:
        if not values[key] > 0:
            raise ConfigError(f"must be positive, got {values[key]}", key)
    for key in ("optimizer.beta1", "optimizer.beta2"):
        if not 0.0 < values[key] < 1.0:
            raise ConfigError(f"must lie in (0, 1), got {values[key]}", key)
    for key in ("optimizer.eps", "optimizer.lambda", "run.theta0_scale"):
        if values[key] < 0:
            raise ConfigError(f"must be nonnegative, got {values[key]}", key)
    if not values["optimizer.tau"] > 0:
        raise ConfigError("must be positive (use 'inf' for the always-switch "
                          "sentinel)", "optimizer.tau")
    if not 0.5 < values["optimizer.gamma"] <= 1.0:
        raise ConfigError(f"must lie in (0.5, 1], got "
                          f"{values['optimizer.gamma']}", "optimizer.gamma")
    if any(n < 2 for n in values["run.Ns"]):
        raise ConfigError("sweep sizes must all be >= 2", "run.Ns")


def resolve(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Apply defaults, preset expansion, and validation to raw key/values."""
    unknown = set(raw) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    values = {}
    explicit = set(raw)
    for key, (tag, default) in _SCHEMA.items():
        values[key] = _coerce(key, raw[key]) if key in raw else default
    if overrides:
        for key, val in overrides.items():
            values[key] = val
            explicit.add(key)

    pname = values["optimizer.preset"]
    if pname:
        if pname not in preset_names():
            raise ConfigError(f"unknown preset {pname!r}; one of "
                              f"{preset_names()}", "optimizer.preset")
        hp = preset(pname, OptimizerKind(values["optimizer.kind"]))
        preset_map = {"optimizer.eta": hp.eta, "optimizer.beta1": hp.beta1,
                      "optimizer.beta2": hp.beta2, "optimizer.eps": hp.eps,
                      "optimizer.lambda": hp.lam}
        if hp.tau is not None:
            preset_map["optimizer.tau"] = hp.tau
        for key, val in preset_map.items():
            if key not in explicit:
                values[key] = val

    if not values["output.dir"]:
        values["output.dir"] = f"runs/{values['name']}"
    _validate(values)
    return ExperimentConfig(values=values)


def load_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return resolve(parse_text(text), overrides)
