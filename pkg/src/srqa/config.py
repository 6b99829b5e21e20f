"""Run configuration: one YAML file with sections, flags and env overrides.

Defaults reproduce the published training and evaluation settings, so an
empty configuration is the strict reference setup.  Unknown keys are
rejected outright; precedence is command-line overrides > environment
variables (``SRQA_SECTION__KEY``) > config file > defaults.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .forge import DegradationOperator, default_bank
from .net import EncoderConfig, HeadConfig
from .trainer import TrainConfig

ENV_PREFIX = "SRQA_"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "forge": {
        "scales": [2.0, 3.0, 4.0],
        # empty list = the built-in operator bank; entries are mappings with
        # method_id / family / parameters / scales
        "operators": [],
    },
    "train": {
        "epochs": 60,
        "batch_items": 16,
        "lr": 1.0e-3,
        "momentum": 0.9,
        "weight_decay": 1.0e-4,
        "tau": 0.1,
        "crop_size": 256,
        "t0_epochs": 10,
        "t_mult": 2,
        "lr_min": 0.0,
        "color_transform": True,
        "auxiliary": True,
        "head_norm": "auto",
        "norm_position": "pre",
        "contrastive_reduction": "sum",
        "tied_color": False,
        "mix_roles": False,
        "checkpoint_every": 0,
        "backbone": "convnext-tiny",
        "d_enc": 768,
        "pretrained": True,
        "trainable": True,
        "d_hidden": 512,
        "d_proj": 128,
        "head_bias": True,
    },
    "eval": {
        "iterations": 20,
        "train_frac": 0.8,
        "alpha": 1.0,
        "per_scale": False,
        "group_by_content": True,
        "crop_size": 256,
    },
}


def _check_keys(data: Mapping, reference: Mapping, path: str = "") -> None:
    for key, value in data.items():
        here = f"{path}{key}"
        if key not in reference:
            raise ConfigError(f"unknown configuration key {here!r}")
        if isinstance(reference[key], Mapping):
            if not isinstance(value, Mapping):
                raise ConfigError(f"configuration key {here!r} must be a section")
            _check_keys(value, reference[key], here + ".")


def _merge(base: dict, override: Mapping) -> None:
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = copy.deepcopy(value)


def _coerce_like(default: Any, value: Any, key: str) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"key {key!r} expects a boolean, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"key {key!r} expects an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"key {key!r} expects a number, got {value!r}")
    return value


def _coerce(data: dict, reference: Mapping, path: str = "") -> None:
    for key, value in list(data.items()):
        here = f"{path}{key}"
        ref = reference[key]
        if isinstance(ref, Mapping):
            _coerce(value, ref, here + ".")
        else:
            data[key] = _coerce_like(ref, value, here)


class RunConfig:
    """Fully-resolved configuration with typed accessors."""

    def __init__(self, data: dict):
        self.data = data

    def __getitem__(self, dotted: str) -> Any:
        node: Any = self.data
        for part in dotted.split("."):
            node = node[part]
        return node

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    def config_hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def operators(self) -> list[DegradationOperator]:
        entries = self.data["forge"]["operators"]
        if not entries:
            return default_bank()
        ops = []
        for entry in entries:
            try:
                ops.append(
                    DegradationOperator(
                        method_id=str(entry["method_id"]),
                        family=str(entry["family"]),
                        parameters=dict(entry.get("parameters", {})),
                        supported_scales=frozenset(
                            float(s) for s in entry.get("scales", self.data["forge"]["scales"])
                        ),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad operator entry {entry!r}: {exc}") from exc
        return ops

    def train_config(self, **overrides) -> TrainConfig:
        t = self.data["train"]
        encoder = EncoderConfig(
            backbone_id=t["backbone"],
            d_enc=t["d_enc"],
            pretrained=t["pretrained"],
            trainable=t["trainable"],
        )
        head = HeadConfig(
            d_hidden=t["d_hidden"],
            d_proj=t["d_proj"],
            bias=t["head_bias"],
        )
        kwargs = dict(
            epochs=t["epochs"],
            batch_items=t["batch_items"],
            lr=t["lr"],
            momentum=t["momentum"],
            weight_decay=t["weight_decay"],
            tau=t["tau"],
            crop_size=t["crop_size"],
            t0_epochs=t["t0_epochs"],
            t_mult=t["t_mult"],
            lr_min=t["lr_min"],
            color_transform=t["color_transform"],
            auxiliary=t["auxiliary"],
            head_norm=t["head_norm"],
            norm_position=t["norm_position"],
            contrastive_reduction=t["contrastive_reduction"],
            tied_color=t["tied_color"],
            mix_roles=t["mix_roles"],
            checkpoint_every=t["checkpoint_every"],
            seed=self.seed,
            encoder=encoder,
            head=head,
        )
        kwargs.update(overrides)
        try:
            return TrainConfig(**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def eval_kwargs(self) -> dict:
        e = self.data["eval"]
        return dict(
            iterations=e["iterations"],
            train_frac=e["train_frac"],
            alpha=e["alpha"],
            per_scale=e["per_scale"],
            group_by_content=e["group_by_content"],
            crop_size=e["crop_size"],
            seed=self.seed,
        )


def _env_overrides(env: Mapping[str, str]) -> dict:
    out: dict = {}
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX) :].lower().replace("__", ".")
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        try:
            node[parts[-1]] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse environment override {name}={raw!r}: {exc}") from exc
    return out


def parse_set_override(expr: str) -> dict:
    """``section.key=value`` (YAML-typed value) into a nested mapping."""
    if "=" not in expr:
        raise ConfigError(f"override {expr!r} must look like section.key=value")
    dotted, raw = expr.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    node: dict = {}
    out = node
    parts = dotted.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def load_config(
    path: str | None = None,
    overrides: list[str] | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge defaults <- file <- environment <- explicit overrides."""
    data = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path!r} is not valid YAML: {exc}") from exc
        if not isinstance(loaded, Mapping):
            raise ConfigError(f"config file {path!r} must hold a mapping")
        _check_keys(loaded, DEFAULTS)
        _merge(data, loaded)
    env_data = _env_overrides(os.environ if env is None else env)
    _check_keys(env_data, DEFAULTS)
    _merge(data, env_data)
    for expr in overrides or []:
        patch = parse_set_override(expr)
        _check_keys(patch, DEFAULTS)
        _merge(data, patch)
    _coerce(data, DEFAULTS)
    return RunConfig(data)
