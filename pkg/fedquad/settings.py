"""
Experiment config files.

Grammar: YAML with top-level scalars (seed, precision, workers, debug) and flat
sections (dataset, partition, model, loss, federation, optimizer, output, grid), each
a mapping of scalar or list values. Every key is optional; missing keys take the
defaults in `fedquad.config`. A sibling `<stem>.local.yaml` is merged on top, then
FEDQUAD_DATA_DIR fills an empty dataset.path.
"""
import copy
import dataclasses
import math
import os
import typing
from typing import Any, Dict, Tuple

import yaml

from .config import ExperimentConfig, GridSpec
from .errors import ConfigError
from .losses import METHODS

DATA_DIR_ENV = "FEDQUAD_DATA_DIR"

_pos_int = (lambda v: v >= 1, "must be >= 1")
_nonneg = (lambda v: v >= 0, "must be >= 0")
_positive = (lambda v: v > 0, "must be > 0")
_unit = (lambda v: 0 <= v < 1, "must be in [0, 1)")

RULES = {
    "precision": (lambda v: v in ("float64", "float32"), "must be float64 or float32"),
    "workers": _pos_int,
    "dataset.kind": (lambda v: v in ("blobs", "cifar10", "cifar100"),
                     "must be blobs, cifar10 or cifar100"),
    "dataset.num_classes": (lambda v: v >= 2, "must be >= 2"),
    "dataset.per_class": _pos_int,
    "dataset.test_per_class": _pos_int,
    "dataset.dim": _pos_int,
    "dataset.spread": _nonneg,
    "dataset.radius": _positive,
    "dataset.channel_std": (lambda v: all(s > 0 for s in v), "entries must be > 0"),
    "partition.kind": (lambda v: v in ("iid", "dirichlet"), "must be iid or dirichlet"),
    "partition.alpha": (lambda v: v > 0, "alpha must be > 0"),
    "partition.max_retries": _nonneg,
    "model.kind": (lambda v: v in ("auto", "cnn", "mlp"), "must be auto, cnn or mlp"),
    "model.hidden_dims": (lambda v: all(d >= 1 for d in v), "entries must be >= 1"),
    "model.embedding_dim": _pos_int,
    "model.channels": (lambda v: len(v) == 3 and all(c >= 1 for c in v),
                       "must list three positive widths"),
    "loss.method": (lambda v: v in METHODS, "must be one of " + ", ".join(METHODS)),
    "loss.beta": _nonneg,
    "loss.m1": _nonneg,
    "loss.m2": _nonneg,
    "loss.margin": _nonneg,
    "loss.temperature": _positive,
    "federation.num_clients": _pos_int,
    "federation.rounds": _pos_int,
    "federation.local_epochs": _pos_int,
    "federation.batch_size": _pos_int,
    "federation.participation": (lambda v: 0 < v <= 1, "must be in (0, 1]"),
    "optimizer.lr": _nonneg,
    "optimizer.beta1": _unit,
    "optimizer.beta2": _unit,
    "optimizer.eps": _positive,
    "optimizer.weight_decay": _nonneg,
    "output.export_rounds": (lambda v: all(r >= 0 for r in v), "entries must be >= 0"),
    "output.export_max_samples": _pos_int,
    "output.eval_max_samples": _pos_int,
    "output.eval_mode": (lambda v: v in ("auto", "logits", "centroid"),
                         "must be auto, logits or centroid"),
    "grid.beta": (lambda v: len(v) > 0 and all(b >= 0 for b in v), "needs values >= 0"),
    "grid.m1": (lambda v: len(v) > 0 and all(b >= 0 for b in v), "needs values >= 0"),
    "grid.m2": (lambda v: len(v) > 0 and all(b >= 0 for b in v), "needs values >= 0"),
    "grid.use_ce": (lambda v: len(v) > 0, "needs at least one value"),
}


def _deep_update(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base) if isinstance(base, dict) else {}
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def _line_map(node, prefix="", out=None) -> Dict[str, int]:
    """Dotted key path -> 1-based source line, from a composed YAML node."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _line_map(v, path, out)
    return out


def _read_yaml(text: str, source: str) -> Tuple[dict, Dict[str, int]]:
    try:
        data = yaml.safe_load(text)
        lines = _line_map(yaml.compose(text, Loader=yaml.SafeLoader))
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"{source}: {getattr(e, 'problem', None) or e}",
                          line=mark.line + 1 if mark else None) from e
    if data is None:
        return {}, {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping", line=1)
    return data, lines


def _coerce(value: Any, tp, key: str, line):
    origin = typing.get_origin(tp)
    if origin in (list, typing.List):
        (inner,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError("expected a list", key=key, line=line)
        return [_coerce(v, inner, key, line) for v in value]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key=key, line=line)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key=key, line=line)
        return value
    if tp is float:
        # YAML 1.1 reads "1e-5" (no dot) as a string
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"expected a number, got {value!r}", key=key, line=line) from None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"expected a finite number, got {value!r}", key=key, line=line)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key=key, line=line)
        return value
    raise ConfigError(f"unsupported field type {tp}", key=key, line=line)


def _build(cls, data: dict, lines: Dict[str, int], prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            path = f"{prefix}{k}"
            raise ConfigError("unknown key", key=path, line=lines.get(path))
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        path = f"{prefix}{f.name}"
        tp = hints[f.name]
        value = data[f.name]
        if dataclasses.is_dataclass(tp):
            if value is None:
                value = {}
            if not isinstance(value, dict):
                raise ConfigError("expected a section mapping", key=path, line=lines.get(path))
            kwargs[f.name] = _build(tp, value, lines, prefix=f"{path}.")
        else:
            kwargs[f.name] = _coerce(value, tp, path, lines.get(path))
    return cls(**kwargs)


def validate_config(cfg: ExperimentConfig, lines: Dict[str, int] = None) -> ExperimentConfig:
    lines = lines or {}
    for path, (check, message) in RULES.items():
        obj = cfg
        for part in path.split("."):
            obj = getattr(obj, part)
        if not check(obj):
            raise ConfigError(message, key=path, line=lines.get(path))
    if bool(cfg.dataset.channel_mean) != bool(cfg.dataset.channel_std):
        raise ConfigError("channel_mean and channel_std must be given together",
                          key="dataset.channel_mean", line=lines.get("dataset.channel_mean"))
    if cfg.loss.method == "fedavg" and not cfg.loss.use_ce:
        raise ConfigError("fedavg without cross-entropy has nothing to train",
                          key="loss.use_ce", line=lines.get("loss.use_ce"))
    if cfg.model_kind == "cnn" and cfg.dataset.kind == "blobs":
        raise ConfigError("cnn needs image data (cifar10/cifar100)",
                          key="model.kind", line=lines.get("model.kind"))
    return cfg


def parse_config_text(text: str, source: str = "<config>", local_text: str = None,
                      env: Dict[str, str] = None) -> ExperimentConfig:
    data, lines = _read_yaml(text, source)
    if local_text:
        local, local_lines = _read_yaml(local_text, f"{source} (local)")
        data = _deep_update(data, local)
        lines = {**lines, **local_lines}
    cfg = _build(ExperimentConfig, data, lines)
    env = os.environ if env is None else env
    if not cfg.dataset.path and env.get(DATA_DIR_ENV):
        cfg.dataset.path = env[DATA_DIR_ENV]
    return validate_config(cfg, lines)


def local_override_path(path: str) -> str:
    stem, ext = os.path.splitext(path)
    return f"{stem}.local{ext or '.yaml'}"


def parse_config(path: str = None, env: Dict[str, str] = None) -> ExperimentConfig:
    """Load, merge the local override, apply env fallbacks, validate. No path = all defaults."""
    if path is None:
        return parse_config_text("", env=env)
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    local_text = None
    local_path = local_override_path(path)
    if os.path.exists(local_path):
        with open(local_path, "r", encoding="utf-8") as f:
            local_text = f.read()
    return parse_config_text(text, source=path, local_text=local_text, env=env)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def serialize_config(cfg: ExperimentConfig, header: str = "") -> str:
    body = yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None)
    if header:
        body = "".join(f"# {ln}\n" for ln in header.splitlines()) + body
    return body


def with_overrides(cfg: ExperimentConfig, **paths) -> ExperimentConfig:
    """Copy with dotted-path overrides, e.g. with_overrides(cfg, **{"loss.beta": 0.0})."""
    out = copy.deepcopy(cfg)
    for path, value in paths.items():
        *parents, leaf = path.split(".")
        obj = out
        for p in parents:
            obj = getattr(obj, p)
        if not hasattr(obj, leaf):
            raise ConfigError("unknown key", key=path)
        setattr(obj, leaf, value)
    return validate_config(out)


def load_grid(path: str) -> GridSpec:
    """Grid file: either a `grid:` section or the bare beta/m1/m2/use_ce mapping."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read grid file {path}: {e}") from e
    data, lines = _read_yaml(text, path)
    prefix = "grid."
    if "grid" in data:
        data = data["grid"] or {}
    else:
        lines = {f"grid.{k}": v for k, v in lines.items()}
    grid = _build(GridSpec, data, lines, prefix=prefix)
    for key in ("beta", "m1", "m2", "use_ce"):
        check, message = RULES[f"grid.{key}"]
        if not check(getattr(grid, key)):
            raise ConfigError(message, key=f"grid.{key}", line=lines.get(f"grid.{key}"))
    return grid
