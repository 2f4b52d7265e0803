import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from axvit.errors import ConfigError

DEFAULT_SEED = 0
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass(frozen=True)
class RunConfig:
    model: str | None = None
    catalog: str | None = None
    dataset: str | None = None
    out: str | None = None
    seed: int = DEFAULT_SEED
    bitwidth: int = 8
    percentile: float = 99.9
    bins: int = 2048
    probe: int = 128
    # search
    lam: float = 1.0
    c: float = 1.4142135623730951
    sims: int = 1000
    policy: str = "hw"
    exhaustive: bool = False
    # training
    optimizer: str = "adam"
    lr: float = 5e-5
    epochs: int = 1
    batch_size: int = 128
    data_fraction: float = 0.025
    max_steps: int | None = None
    recalibrate: bool = False
    iterations: int = 500
    verbosity: int = 0


# Keys accepted from a --config file; CLI spellings such as "lambda" map onto fields
ALIASES = {"lambda": "lam", "data-fraction": "data_fraction", "batch-size": "batch_size", "max-steps": "max_steps"}


def _load_file(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found", source=str(path))
    try:
        values = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}", source=str(path)) from e
    if not isinstance(values, dict):
        raise ConfigError("top level must be an object", source=str(path))
    known = {f.name for f in fields(RunConfig)}
    resolved = {}
    for key, value in values.items():
        name = ALIASES.get(key, key.replace("-", "_"))
        if name not in known:
            raise ConfigError(f"unknown key '{key}'", source=str(path))
        resolved[name] = value
    return resolved


# Defaults, then the --config file, then flags that were actually passed
def load_run_config(args):
    config = RunConfig()
    config_path = getattr(args, "config", None)
    if config_path:
        config = replace(config, **_load_file(config_path))
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name, None) is not None}
    config = replace(config, **overrides)
    for role in ("model", "catalog"):
        path = getattr(config, role)
        if path and not Path(path).is_file():
            raise ConfigError("file not found", source=f"--{role} {path}")
    return config


def require(config, name):
    value = getattr(config, name)
    if value is None:
        raise ConfigError("this command needs a value", source=f"--{name}")
    return value


def configure_logging(verbosity=0):
    level = logging.DEBUG if verbosity > 0 else logging.WARNING if verbosity < 0 else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    for existing in list(root.handlers):
        if getattr(existing, "_axvit", False):
            root.removeHandler(existing)
    handler._axvit = True
    root.addHandler(handler)
    root.setLevel(level)
    return level
