"""Run configuration: INI-style files with per-experiment presets.

A configuration has the sections ``[model]`` (``name`` plus model keyword
arguments), ``[data]`` (``source`` plus generator arguments), ``[train]``
(:class:`~alws.trainer.TrainConfig` fields), ``[eval]``,
``[gradient_check]`` and ``[run]`` (``output_dir``).  Values are Python
literals; ``true``/``false``/``none`` are accepted in any case.
"""
from __future__ import annotations

import ast
import configparser
import io
from dataclasses import asdict, dataclass, field

from .trainer import TrainConfig

SECTIONS = ("model", "data", "train", "eval", "gradient_check", "run")


class ConfigError(ValueError):
    """A configuration file or value is invalid; the message names the field."""


_COMMON_TRAIN = {"tol": 0.0, "max_failures": 3}

PRESETS = {
    "toy": {
        "model": {"name": "toy_softplus", "b": [1.0, 1.0], "sigma_x": 0.1},
        "data": {"source": "model", "n": 100, "seed": 1},
        "train": {"n_sleep": 5000, "n_val": 200, "batch_size": 100, "epochs": 0, "lam": 0.01,
                  "lambda_fixed": True, "adapt": False, "overdispersion": 1.0},
        "gradient_check": {"grid_lo": 0.25, "grid_hi": 2.0, "grid_n": 5, "n_sleep": 5000,
                           "lam": 0.01, "n_proposals": 50000, "ess_min": 10.0},
        "eval": {"metrics": ["mmd"], "n_samples": 100},
    },
    "linear_gaussian": {
        "model": {"name": "linear_gaussian", "dim_z": 2, "dim_x": 5},
        "data": {"source": "model", "n": 500, "seed": 1},
        "train": {"n_sleep": 500, "n_val": 100, "batch_size": 100, "epochs": 20,
                  "gen_lr": 0.01, "lam": 0.0001, "exp_fam_mode": True, "adapt": False,
                  "overdispersion": 1.0},
        "eval": {"metrics": ["mmd"], "n_samples": 500},
    },
    "pinwheel": {
        "model": {"name": "pinwheel_hier", "n_components": 10, "hidden": 20},
        "data": {"source": "pinwheel", "n_per_class": 500, "n_classes": 5, "seed": 1},
        "train": {"n_sleep": 500, "n_val": 100, "batch_size": 100, "epochs": 100,
                  "gen_lr": 0.001, "grad_lr": 0.001, "lam": 0.01, "adapt": True,
                  "overdispersion": 1.0},
        "eval": {"metrics": ["mmd"], "n_samples": 1000},
    },
    "ica": {
        "model": {"name": "ica_laplace", "dim_x": 16, "dim_z": 8, "sigma": 0.1},
        "data": {"source": "ica", "n": 20000, "seed": 1},
        "train": {"n_sleep": 300, "n_val": 100, "batch_size": 2000, "epochs": 100,
                  "gen_lr": 0.01, "grad_lr": 0.01, "lam": 0.001, "lambda_fixed": True,
                  "exp_fam_mode": True, "adapt": False, "bandwidth": 2.0,
                  "overdispersion": 1.0},
        "eval": {"metrics": ["mmd", "basis_match"], "n_samples": 1000},
    },
    "oscillator": {
        "model": {"name": "oscillator", "T": 30, "d_obs": 20},
        "data": {"source": "oscillator", "T": 30, "seed": 1},
        "train": {"n_sleep": 300, "n_val": 100, "batch_size": 1, "epochs": 5000,
                  "gen_lr": 0.001, "grad_lr": 0.001, "lam": 0.001, "exp_fam_mode": True,
                  "adapt": True, "overdispersion": 1.0},
        "eval": {"metrics": ["one_step_mse", "traj_mse"], "n_samples": 10},
    },
    "hh": {
        "model": {"name": "hodgkin_huxley", "T": 200, "current_seed": 0},
        "data": {"source": "model", "n": 1, "seed": 1},
        "train": {"n_sleep": 300, "n_val": 100, "batch_size": 1, "epochs": 500,
                  "gen_lr": 0.001, "grad_lr": 0.001, "lam": 0.001, "exp_fam_mode": True,
                  "adapt": True, "overdispersion": 1.0},
        "eval": {"metrics": ["traj_mse"], "n_samples": 10},
    },
    "blowfly": {
        "model": {"name": "blowfly", "T": 180},
        "data": {"source": "model", "n": 1, "seed": 1},
        "train": {"n_sleep": 300, "n_val": 100, "batch_size": 1, "epochs": 500,
                  "gen_lr": 0.001, "grad_lr": 0.001, "lam": 0.001, "adapt": True,
                  "overdispersion": 1.0},
        "eval": {"metrics": ["traj_mse"], "n_samples": 10},
    },
}


@dataclass
class RunConfig:
    """Fully resolved run settings."""

    model: dict
    data: dict
    train: TrainConfig
    eval: dict = field(default_factory=dict)
    gradient_check: dict = field(default_factory=dict)
    output_dir: str = "runs/default"

    @property
    def model_name(self):
        return self.model["name"]

    @property
    def model_kwargs(self):
        return {k: v for k, v in self.model.items() if k != "name"}

    def sections(self):
        return {"model": self.model, "data": self.data, "train": asdict(self.train),
                "eval": self.eval, "gradient_check": self.gradient_check,
                "run": {"output_dir": self.output_dir}}

    def dumps(self):
        """Serialise to INI text; reading it back yields an equal config."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for name, values in self.sections().items():
            cp[name] = {k: repr(v) for k, v in sorted(values.items())}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write_resolved(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())


def parse_value(text, where="value"):
    s = text.strip()
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    if low == "none":
        return None
    try:
        return ast.literal_eval(s)
    except (ValueError, SyntaxError):
        if any(c in s for c in "[]{}(),"):
            raise ConfigError(f"{where}: cannot parse {s!r}") from None
        return s


def _read(text, source):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys such as T are case-sensitive
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    out = {}
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]; expected one of {SECTIONS}")
        out[name] = {k: parse_value(v, f"{name}.{k}") for k, v in cp[name].items()}
    return out


def _merge(base, over):
    merged = {k: dict(v) for k, v in base.items()}
    for name, values in over.items():
        merged.setdefault(name, {}).update(values)
    return merged


def build(sections, seed=None, output_dir=None) -> RunConfig:
    """Validate raw sections and produce a :class:`RunConfig`."""
    model = dict(sections.get("model", {}))
    if "name" not in model:
        raise ConfigError("model.name is required")
    from .models import ZOO

    if model["name"] not in ZOO:
        raise ConfigError(f"model.name: unknown model {model['name']!r}; choose from {sorted(ZOO)}")
    data = dict(sections.get("data", {"source": "model", "n": 100, "seed": 0}))
    data.setdefault("source", "model")
    train_raw = {**_COMMON_TRAIN, **sections.get("train", {})}
    if seed is not None:
        train_raw["seed"] = seed
    known = set(TrainConfig.field_names())
    for key in train_raw:
        if key not in known:
            raise ConfigError(f"train.{key}: unknown field")
    try:
        train = TrainConfig(**train_raw)
    except (TypeError, ValueError) as exc:
        name = str(exc).split(" ")[0]
        raise ConfigError(f"train.{name}: {exc}") from None
    run = sections.get("run", {})
    out = output_dir or run.get("output_dir") or f"runs/{model['name']}"
    cfg = RunConfig(model, data, train, dict(sections.get("eval", {})),
                    dict(sections.get("gradient_check", {})), str(out))
    _check_model_kwargs(cfg)
    return cfg


def _check_model_kwargs(cfg):
    from .models import make_model

    try:
        make_model(cfg.model_name, **cfg.model_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from None


def load(path=None, preset=None, seed=None, output_dir=None) -> RunConfig:
    """Load a preset, a file, or a file layered on top of a preset."""
    if path is None and preset is None:
        raise ConfigError("give a config file, a preset, or both")
    sections = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        sections = PRESETS[preset]
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        sections = _merge(sections, _read(text, str(path)))
    return build(sections, seed, output_dir)


def loads(text, source="<string>", **kwargs) -> RunConfig:
    return build(_read(text, source), **kwargs)
