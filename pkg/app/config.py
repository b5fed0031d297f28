from __future__ import annotations

import copy
import os
from pathlib import Path
from typing import Any, Dict

import yaml

from app.errors import ConfigError

# Default configuration values
DEFAULT_CONFIG: Dict[str, Any] = {
    # Master seed for encoders, keys and trials
    "seed": 0,
    # Worker threads for task and enumeration parallelism
    "jobs": 1,
    # Logging level (DEBUG, INFO, WARNING, ERROR)
    "log_level": "INFO",
    # Directory where reports and manifest.json are written
    "out_dir": "reports",
    # Source statistics: dsbs | table | file | markov_chain | independent | identical
    "pmf": {"kind": "dsbs", "p": 0.1},
    # Tasks to run, keyed by task name; absent tasks are skipped
    "tasks": {},
}

TASK_NAMES = ("entropy", "decompose", "leakage", "cipher", "region", "netsim")

# Defaults merged into each task block that is present
TASK_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "entropy": {},
    "decompose": {"convention": "co_information"},
    "leakage": {"ks": [4, 6, 8], "alphas": [0.5], "scenarios": "bounded", "delta": 0.0, "layouts": []},
    "cipher": {
        "k": 3,
        "alpha": 0.5,
        "layout": None,
        "cases": [1, 2, 3, 4, 5],
        "variant": "long",
        "target": "h=0",
        "independent_keys": False,
        "key_portion": None,
    },
    "region": {"cases": [1, 2, 3, 4, 5], "grid": 11, "target": "h=0"},
    "netsim": {"network": None, "combination": False},
}


def config_path_from_env(path: str | None = None) -> Path | None:
    """Explicit path, else LEAKLAB_CONFIG, else the repo-root config.yaml if present."""
    path = path or os.environ.get("LEAKLAB_CONFIG")
    if path:
        return Path(path)
    p = Path(__file__).resolve().parents[1] / "config.yaml"
    return p if p.exists() else None


def parse_document(text: str, source: str = "<config>") -> Dict[str, Any]:
    """Parse a YAML (or JSON) document into a top-level mapping."""
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"cannot parse {source}: {getattr(e, 'problem', None) or e}", line=line) from e
    # Validate that data is a dictionary
    if not isinstance(data, dict):
        raise ConfigError(f"{source} must contain a mapping at top level")
    return data


def load_config(path: str | None = None) -> Dict[str, Any]:
    """
    Load configuration from file or environment variable.

    Args:
        path (str | None): Path to configuration file

    Returns:
        Dict[str, Any]: Configuration dictionary

    Raises:
        ConfigError: unreadable file, bad YAML, or invalid field
    """
    # Start with default configuration
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    p = config_path_from_env(path)
    if p is not None:
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        with p.open("r", encoding="utf-8") as f:
            data = parse_document(f.read(), str(p))
        cfg.update(data)
        cfg["_base_dir"] = str(p.resolve().parent)
    # Validate and normalize config
    return _validate_config(cfg)


def _validate_config(cfg: Dict[str, Any]) -> Dict[str, Any]:
    """
    Validate and normalize configuration values.
    Clamps informative ranges; raises ConfigError for fields that cannot be used.
    """
    def _as_int(x: Any, default: int) -> int:
        try:
            return int(x)
        except Exception:
            return int(default)

    # seed: non-negative integer
    try:
        cfg["seed"] = int(cfg.get("seed", DEFAULT_CONFIG["seed"]))
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer", field="seed")
    if cfg["seed"] < 0:
        raise ConfigError("seed must be non-negative", field="seed")
    # jobs: at least 1
    cfg["jobs"] = max(1, _as_int(cfg.get("jobs", DEFAULT_CONFIG["jobs"]), DEFAULT_CONFIG["jobs"]))
    # log level
    cfg["log_level"] = str(cfg.get("log_level", DEFAULT_CONFIG["log_level"])).upper()
    # strings
    cfg["out_dir"] = str(cfg.get("out_dir", DEFAULT_CONFIG["out_dir"]))
    # pmf block
    if not isinstance(cfg.get("pmf"), dict):
        raise ConfigError("pmf must be a mapping with a 'kind' field", field="pmf")
    # tasks: mapping of known names, each with defaults filled in
    tasks = cfg.get("tasks") or {}
    if isinstance(tasks, list):
        tasks = {name: {} for name in tasks}
    if not isinstance(tasks, dict):
        raise ConfigError("tasks must be a mapping or a list of task names", field="tasks")
    normalized = {}
    for name, block in tasks.items():
        if name not in TASK_NAMES:
            raise ConfigError(f"unknown task '{name}'", field=f"tasks.{name}")
        if block is None:
            block = {}
        if not isinstance(block, dict):
            raise ConfigError("task settings must be a mapping", field=f"tasks.{name}")
        merged = copy.deepcopy(TASK_DEFAULTS[name])
        merged.update(block)
        normalized[name] = merged
    cfg["tasks"] = normalized
    return cfg


# Keys that change where or how fast a run happens, never what it computes
RUNTIME_KEYS = ("jobs", "log_level", "out_dir")


def public_config(cfg: Dict[str, Any]) -> Dict[str, Any]:
    """Config as hashed into reports: no private bookkeeping or runtime keys."""
    return {k: v for k, v in cfg.items() if not k.startswith("_") and k not in RUNTIME_KEYS}
