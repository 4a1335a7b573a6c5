"""Run configuration: defaults, flat-key config files, validation, provenance."""

from __future__ import annotations

import copy
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .jump_operator import TimeSearchConfig
from .model import ModelParams

# Defaults are the baseline problem c=0.01, lambda=0.1, alpha=1, d=0.001.
DEFAULTS = {
    "model": {"alpha": 1.0, "lambda": 0.1, "c": 0.01, "d": 0.001, "pi0": 0.2},
    "grid_size": 201,
    "quadrature_nodes": 64,
    "threads": 1,
    "t_search": {"t_lo": 1e-3, "t_hi": None, "coarse_points": 128, "refine_tol": 1e-6},
    "solver": {"tol": 1e-5, "max_iter": 500, "n_iterates_to_keep": 10},
    "simulate": {
        "n_paths": 100_000,
        "seed": 20240101,
        "pi0": [0.2, 0.5, 0.8],
        "policy": "solved",
        "interval": 2.0,
        "threshold": 0.9,
    },
    "sweep": {"axis": "d", "values": [0.001, 0.01]},
    "output": {"directory": "out", "format": "csv"},
}

POLICIES = ("solved", "periodic", "never")
SWEEP_AXES = ("c", "d", "alpha")


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit code 2."""


def _merge(base: dict, update: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a table")
            out[key] = _merge(base[key], value, prefix=path + ".")
        else:
            out[key] = value
    return out


def read_config_file(path: str | Path) -> dict:
    """Read ``key.path = value`` lines (TOML dotted keys) or a JSON document."""
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def set_flat(tree: dict, dotted: str, value) -> None:
    node = tree
    *parents, leaf = dotted.split(".")
    for key in parents:
        node = node.setdefault(key, {})
    node[leaf] = value


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    grid_size: int
    quadrature_nodes: int
    threads: int
    t_search: TimeSearchConfig
    tol: float
    max_iter: int
    n_iterates_to_keep: int
    n_paths: int
    seed: int
    pi0_list: tuple[float, ...]
    policy: str
    interval: float
    threshold: float
    sweep_axis: str
    sweep_values: tuple[float, ...]
    out_dir: Path
    raw: dict

    def resolved(self) -> dict:
        """Config tree with every default filled, including the time range."""
        tree = copy.deepcopy(self.raw)
        tree["t_search"]["t_hi"] = self.t_search.upper(self.model)
        return tree

    def write_resolved(self, directory: Path) -> Path:
        path = Path(directory) / "config.resolved.json"
        path.write_text(json.dumps(self.resolved(), indent=2, sort_keys=True) + "\n")
        return path


def _number(tree, *keys, kind=float):
    node = tree
    for k in keys:
        node = node[k]
    name = ".".join(keys)
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(f"{name} must be a number, got {node!r}")
    if kind is int:
        if int(node) != node:
            raise ConfigError(f"{name} must be an integer, got {node!r}")
        return int(node)
    if not math.isfinite(node):
        raise ConfigError(f"{name} must be finite")
    return float(node)


def _numbers(value, name):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{name} must be a nonempty list of numbers")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{name} entries must be finite numbers, got {v!r}")
        out.append(float(v))
    return tuple(out)


def build_config(overrides: dict | None = None, file_tree: dict | None = None) -> RunConfig:
    """Merge defaults, an optional file tree and flag overrides, then validate."""
    tree = _merge(DEFAULTS, file_tree or {})
    tree = _merge(tree, overrides or {})
    try:
        model = ModelParams(
            alpha=_number(tree, "model", "alpha"),
            lam=_number(tree, "model", "lambda"),
            c=_number(tree, "model", "c"),
            d=_number(tree, "model", "d"),
            pi0=_number(tree, "model", "pi0"),
        )
        ts = tree["t_search"]
        t_hi = None if ts["t_hi"] is None else _number(tree, "t_search", "t_hi")
        search = TimeSearchConfig(
            t_lo=_number(tree, "t_search", "t_lo"),
            t_hi=t_hi,
            n_coarse=_number(tree, "t_search", "coarse_points", kind=int),
            rel_tol=_number(tree, "t_search", "refine_tol"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    grid_size = _number(tree, "grid_size", kind=int)
    nodes = _number(tree, "quadrature_nodes", kind=int)
    threads = _number(tree, "threads", kind=int)
    tol = _number(tree, "solver", "tol")
    max_iter = _number(tree, "solver", "max_iter", kind=int)
    keep = _number(tree, "solver", "n_iterates_to_keep", kind=int)
    n_paths = _number(tree, "simulate", "n_paths", kind=int)
    seed = _number(tree, "simulate", "seed", kind=int)
    pi0_list = _numbers(tree["simulate"]["pi0"], "simulate.pi0")
    interval = _number(tree, "simulate", "interval")
    threshold = _number(tree, "simulate", "threshold")
    policy = tree["simulate"]["policy"]
    axis = tree["sweep"]["axis"]
    values = _numbers(tree["sweep"]["values"], "sweep.values")

    checks = [
        (grid_size >= 3, "grid_size must be at least 3"),
        (nodes >= 2, "quadrature_nodes must be at least 2"),
        (threads >= 1, "threads must be at least 1"),
        (tol > 0, "solver.tol must be positive"),
        (max_iter >= 1, "solver.max_iter must be at least 1"),
        (keep >= 0, "solver.n_iterates_to_keep must be nonnegative"),
        (n_paths >= 1, "simulate.n_paths must be at least 1"),
        (seed >= 0, "simulate.seed must be nonnegative"),
        (all(0 <= p <= 1 for p in pi0_list), "simulate.pi0 entries must lie in [0, 1]"),
        (interval > 0, "simulate.interval must be positive"),
        (0 <= threshold <= 1, "simulate.threshold must lie in [0, 1]"),
        (policy in POLICIES, f"simulate.policy must be one of {POLICIES}"),
        (axis in SWEEP_AXES, f"sweep.axis must be one of {SWEEP_AXES}"),
        (tree["output"]["format"] == "csv", "output.format must be 'csv'"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    if axis in ("c", "d") and any(v <= 0 for v in values):
        raise ConfigError(f"sweep values for {axis} must be positive")

    return RunConfig(
        model=model, grid_size=grid_size, quadrature_nodes=nodes, threads=threads,
        t_search=search, tol=tol, max_iter=max_iter, n_iterates_to_keep=keep,
        n_paths=n_paths, seed=seed, pi0_list=pi0_list, policy=policy,
        interval=interval, threshold=threshold, sweep_axis=axis, sweep_values=values,
        out_dir=Path(tree["output"]["directory"]), raw=tree,
    )
