"""Experiment configuration: schema-validated JSON in, typed objects out.

A config file names an algorithm, a dataset source, the model and
hypernetwork architecture, the training recipe, and an output directory.
`load_config` validates it against the published schema (unknown keys are
rejected), fills in defaults, and returns a resolved view whose dict form
round-trips through JSON byte-for-byte.  Builders then materialize the
dataset, shards, and model bundle deterministically from the resolved
values, so a stored `config.resolved.json` is enough to rebuild a run.

The environment variable ``HYPERFL_SEED`` overrides the config seed.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from . import datakit as dk
from .attack import AttackConfig
from .datakit import Dataset, PartitionSpec
from .errors import ConfigError
from .fedsim import DPConfig, ModelBundle, RoundConfig
from .hypernet import HypernetSpec, target_from_netspec
from .network import NetSpec, OptimConfig, dense_net

ENV_SEED = "HYPERFL_SEED"

_OPTIM_G = {"learning_rate": 0.1, "momentum": 0.5, "weight_decay": 5e-4}
_OPTIM_HV = {"learning_rate": 0.01, "momentum": 0.5, "weight_decay": 5e-4}

_DEFAULTS = {
    "workers": 1,
    "snapshot_every": 0,
    "partition": {
        "clients": 20,
        "groups": 3,
        "dominant_classes": 3,
        "samples_per_client": 600,
        "uniform_percent": 20.0,
        "test_fraction": 1.0 / 6.0,
    },
    "model": {"activation": "relu"},
    "hypernet": {"embedding_dim": 64, "hidden_dim": 100, "hidden_bias": True},
    "rounds": {
        "local_epochs": 5,
        "batch_size": 50,
        "sampling_rate": 1.0,
        "total_rounds": 200,
        "server_lr": 0.01,
        "eta_g": dict(_OPTIM_G),
        "eta_h": dict(_OPTIM_HV),
        "eta_v": dict(_OPTIM_HV),
    },
    "dp": {"clip_norm": None, "sigma": 0.0},
}

_DATASET_DEFAULTS = {"synthetic": {"separation": 3.0}, "pattern": {}, "idx": {"num_classes": None}}

ATTACK_DEFAULTS = {
    "iterations": 10_000,
    "step_size": 0.1,
    "grad_loss": "cosine",
    "tv_coeff": 1e-6,
    "init": "uniform",
    "optimizer": "adam",
    "seed": 0,
    "samples": 50,
}


def _schema() -> dict:
    with resources.files("hyperfl").joinpath("schema/experiment.schema.json").open("rb") as f:
        return json.load(f)


def _validate(raw: dict, schema: dict) -> None:
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}")


def _merge(defaults: dict, user: dict) -> dict:
    out = dict(defaults)
    for k, v in user.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def default_image_shape(dim: int) -> list[int]:
    """Square when the pixel count allows it, a single row otherwise."""
    side = math.isqrt(dim)
    return [side, side] if side * side == dim else [1, dim]


def resolve(raw: dict) -> dict:
    """Validate a config dict and materialize every default into it."""
    _validate(raw, _schema())
    out = _merge(_DEFAULTS, raw)
    out["algorithm"] = out["algorithm"].replace("-", "_")

    ds = _merge(_DATASET_DEFAULTS[raw["dataset"]["kind"]], raw["dataset"])
    if "image_shape" not in ds:
        if ds["kind"] == "pattern":
            ds["image_shape"] = [ds["side"], ds["side"]]
        elif ds["kind"] == "synthetic":
            ds["image_shape"] = default_image_shape(ds["dim"])
        else:
            ds["image_shape"] = None  # unknown until the files are read
    out["dataset"] = ds

    if "attack" in out:
        out["attack"] = _merge(ATTACK_DEFAULTS, out["attack"])

    _validate({k: v for k, v in out.items()}, _schema())
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration; ``data`` is the JSON-ready resolved dict."""

    data: dict

    @property
    def algorithm(self) -> str:
        return self.data["algorithm"]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output_dir"])

    @property
    def workers(self) -> int:
        return int(self.data["workers"])

    @property
    def snapshot_every(self) -> int:
        return int(self.data["snapshot_every"])

    @property
    def clients(self) -> int:
        return int(self.data["partition"]["clients"])

    @property
    def test_fraction(self) -> float:
        return float(self.data["partition"]["test_fraction"])

    def partition_spec_for(self, num_classes: int) -> PartitionSpec:
        """Concrete shard recipe once the dataset's class count is known."""
        p = self.data["partition"]
        return PartitionSpec(
            groups=dk.consecutive_groups(num_classes, p["groups"], p["dominant_classes"]),
            samples_per_client=p["samples_per_client"],
            uniform_percent=p["uniform_percent"],
        )

    @property
    def round_config(self) -> RoundConfig:
        r = self.data["rounds"]
        return RoundConfig(
            local_epochs=r["local_epochs"],
            eta_g=OptimConfig(**r["eta_g"]),
            eta_h=OptimConfig(**r["eta_h"]),
            eta_v=OptimConfig(**r["eta_v"]),
            batch_size=r["batch_size"],
            sampling_rate=r["sampling_rate"],
            total_rounds=r["total_rounds"],
            server_lr=r["server_lr"],
        )

    @property
    def dp_config(self) -> DPConfig:
        d = self.data["dp"]
        clip = math.inf if d["clip_norm"] is None else float(d["clip_norm"])
        return DPConfig(clip_norm=clip, sigma=float(d["sigma"]))

    @property
    def attack_config(self) -> Optional[AttackConfig]:
        a = self.data.get("attack")
        if a is None:
            return None
        return AttackConfig(**{k: v for k, v in a.items() if k != "samples"})

    @property
    def attack_samples(self) -> int:
        a = self.data.get("attack")
        return int(a["samples"]) if a else 0

    @property
    def image_shape(self) -> Optional[tuple[int, int]]:
        shape = self.data["dataset"]["image_shape"]
        return None if shape is None else (int(shape[0]), int(shape[1]))

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"


def load_config(path: str | Path, apply_env: bool = True) -> ExperimentConfig:
    """Read, validate, and resolve a config file.

    ``apply_env`` lets ``HYPERFL_SEED`` override the seed; pass False when
    re-reading a stored resolved config whose seed must stay as recorded.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON at line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    resolved = resolve(raw)
    if apply_env and os.environ.get(ENV_SEED):
        try:
            resolved["seed"] = int(os.environ[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {os.environ[ENV_SEED]!r}")
    cfg = ExperimentConfig(resolved)
    # constructing the typed views validates every numeric field now, not mid-run
    _ = (cfg.round_config, cfg.dp_config, cfg.attack_config)
    build_bundle(cfg)
    return cfg


def load_attack_overrides(path: str | Path) -> tuple[AttackConfig, int]:
    """Read a standalone attack-settings file; returns (config, sample count)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"attack config is not valid JSON at line {e.lineno}: {e.msg}")
    schema = _schema()
    _validate_fragment(raw, {**schema["definitions"]["attack"], "definitions": schema["definitions"]})
    merged = _merge(ATTACK_DEFAULTS, raw)
    return AttackConfig(**{k: v for k, v in merged.items() if k != "samples"}), int(merged["samples"])


def _validate_fragment(raw: dict, schema: dict) -> None:
    try:
        jsonschema.validate(raw, schema)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"attack config invalid at {where}: {e.message}")


# -- builders -------------------------------------------------------------------


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    ds = cfg.data["dataset"]
    if ds["kind"] == "synthetic":
        return dk.synth_dataset(
            num_classes=ds["num_classes"],
            dim=ds["dim"],
            per_class=ds["per_class"],
            separation=ds["separation"],
            seed=cfg.seed,
        )
    if ds["kind"] == "pattern":
        return dk.pattern_dataset(
            num_classes=ds["num_classes"], side=ds["side"], per_class=ds["per_class"], seed=cfg.seed
        )
    return dk.load_idx(ds["images"], ds["labels"], num_classes=ds["num_classes"])


def build_shards(cfg: ExperimentConfig, ds: Dataset) -> list[tuple[Dataset, Dataset]]:
    """Partition, then split each client's shard into train and test."""
    parts = dk.partition(ds, cfg.partition_spec_for(ds.num_classes), cfg.clients, cfg.seed)
    return [dk.train_test_split(p, cfg.seed + c, cfg.test_fraction) for c, p in enumerate(parts)]


def build_bundle(cfg: ExperimentConfig) -> ModelBundle:
    m = cfg.data["model"]
    ds = cfg.data["dataset"]
    if ds["kind"] == "synthetic" and m["extractor"][0] != ds["dim"]:
        raise ConfigError(
            f"extractor input width {m['extractor'][0]} does not match dataset dim {ds['dim']}"
        )
    if ds["kind"] == "pattern" and m["extractor"][0] != ds["side"] ** 2:
        raise ConfigError(
            f"extractor input width {m['extractor'][0]} does not match {ds['side']}x{ds['side']} images"
        )
    fe = dense_net("fe", m["extractor"], activation=m["activation"])
    cls = dense_net("cls", m["classifier"], activation=m["activation"])
    h = cfg.data["hypernet"]
    hyper = HypernetSpec(
        target=target_from_netspec(fe),
        embedding_dim=h["embedding_dim"],
        hidden_dim=h["hidden_dim"],
        hidden_bias=h["hidden_bias"],
    )
    return ModelBundle(fe=fe, cls=cls, hyper=hyper)
