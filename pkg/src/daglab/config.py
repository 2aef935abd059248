"""Experiment configuration: one flat JSON object, validated key by key."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import transforms as tf
from .models import SharingMode

MODES = ("baseline", "da", "ida", "md", "dag", "dag_no_g")
G_LOSSES = ("non_saturating", "saturating")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class DagConfig:
    mode: str = "dag"
    family: str = "point_rotation"
    k: int = 4
    lambda_u: float = 0.2
    lambda_v: float = 0.2
    sharing: str = "all_but_heads"
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    epsilon: float = 1e-8
    batch: int = 64
    iterations: int = 20000
    g_loss: str = "non_saturating"
    seed: int = 0
    # data
    dataset: str = "points"
    n_samples: int = 2000
    fraction: float = 1.0
    sigma: float | None = None  # None: 0.05 for points, 0.1 for grids
    data_seed: int | None = None  # None: follow seed
    n_t: int = 5
    n_c: float = 0.75
    # networks
    d_z: int = 8
    latent: str = "normal"
    d_hidden: tuple[int, ...] = (64, 64)
    g_hidden: tuple[int, ...] = (64, 64)
    # evaluation
    eval_every: int = 1000
    eval_samples: int = 2000
    reference_samples: int = 10000
    radius_multiplier: float = 3.0
    dump_samples: bool = True

    @property
    def resolved_sigma(self) -> float:
        if self.sigma is not None:
            return self.sigma
        return 0.05 if self.dataset == "points" else 0.1

    @property
    def resolved_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["d_hidden"] = list(self.d_hidden)
        d["g_hidden"] = list(self.g_hidden)
        return d

    def replace(self, **changes) -> "DagConfig":
        return parse_config({**self.to_dict(), **changes})


_FIELDS = {f.name: f for f in dataclasses.fields(DagConfig)}
_INT_KEYS = {"k", "batch", "iterations", "seed", "n_samples", "n_t", "d_z", "eval_every", "eval_samples", "reference_samples"}
_FLOAT_KEYS = {"lambda_u", "lambda_v", "lr", "beta1", "beta2", "epsilon", "fraction", "n_c", "radius_multiplier"}
_STR_KEYS = {"mode", "family", "sharing", "g_loss", "dataset", "latent"}


def _coerce(key: str, value: Any) -> Any:
    if key in _INT_KEYS or key == "data_seed":
        if key == "data_seed" and value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if key in _FLOAT_KEYS or key == "sigma":
        if key == "sigma" and value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value.lower()
    if key in ("d_hidden", "g_hidden"):
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError(key, "expected a non-empty list of widths")
        if any(isinstance(v, bool) or not isinstance(v, int) or v < 1 for v in value):
            raise ConfigError(key, "widths must be positive integers")
        return tuple(value)
    if key == "dump_samples":
        if not isinstance(value, bool):
            raise ConfigError(key, "expected true or false")
        return value
    raise ConfigError(key, "unknown key")


def parse_config(document: dict[str, Any] | str | None) -> DagConfig:
    """Validate a flat config object (or its JSON text) and fill in defaults."""
    if document is None:
        document = {}
    if isinstance(document, str):
        try:
            document = json.loads(document) if document.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError("<document>", "expected a single flat object")
    values = {}
    for key, value in document.items():
        if key not in _FIELDS:
            raise ConfigError(key, "unknown key")
        values[key] = _coerce(key, value)
    cfg = DagConfig(**values)
    return _validate(cfg)


def _validate(cfg: DagConfig) -> DagConfig:
    if cfg.mode not in MODES:
        raise ConfigError("mode", f"must be one of {', '.join(MODES)}")
    if cfg.g_loss not in G_LOSSES:
        raise ConfigError("g_loss", f"must be one of {', '.join(G_LOSSES)}")
    try:
        SharingMode(cfg.sharing)
    except ValueError:
        raise ConfigError("sharing", f"must be one of {', '.join(m.value for m in SharingMode)}") from None
    if cfg.dataset not in ("points", "grid"):
        raise ConfigError("dataset", "must be 'points' or 'grid'")
    if cfg.latent not in ("normal", "uniform"):
        raise ConfigError("latent", "must be 'normal' or 'uniform'")
    if cfg.family not in tf.FAMILIES:
        raise ConfigError("family", f"must be one of {', '.join(tf.FAMILIES)}")
    point_family = cfg.family in tf.POINT_FAMILIES
    if point_family != (cfg.dataset == "points"):
        kind = "point" if cfg.dataset == "points" else "image"
        raise ConfigError("family", f"{cfg.family!r} does not act on the {cfg.dataset!r} dataset; pick a {kind} family")
    changes: dict[str, Any] = {}
    if cfg.mode == "baseline":
        changes["k"] = 1  # a single discriminator on untransformed data
    k = changes.get("k", cfg.k)
    if k < 1:
        raise ConfigError("k", "must be >= 1")
    if cfg.mode != "md" and k > tf.catalogue_size(cfg.family):
        raise ConfigError("k", f"{cfg.family} catalogue holds {tf.catalogue_size(cfg.family)} transforms, got {k}")
    for key in ("lambda_u", "lambda_v", "epsilon"):
        if getattr(cfg, key) < 0:
            raise ConfigError(key, "must be non-negative")
    if cfg.lr <= 0:
        raise ConfigError("lr", "must be positive")
    for key in ("beta1", "beta2"):
        if not 0.0 <= getattr(cfg, key) < 1.0:
            raise ConfigError(key, "must lie in [0, 1)")
    for key in ("batch", "n_samples", "d_z", "eval_every", "eval_samples", "reference_samples", "n_t"):
        if getattr(cfg, key) < 1:
            raise ConfigError(key, "must be positive")
    if cfg.iterations < 0:
        raise ConfigError("iterations", "must be >= 0")
    if not 0.0 < cfg.fraction <= 1.0:
        raise ConfigError("fraction", "must lie in (0, 1]")
    if int(cfg.fraction * cfg.n_samples) < 1:
        raise ConfigError("fraction", "keeps no samples")
    if not 0.0 < cfg.n_c <= 1.0:
        raise ConfigError("n_c", "must lie in (0, 1]")
    if cfg.sigma is not None and cfg.sigma <= 0:
        raise ConfigError("sigma", "must be positive")
    if cfg.radius_multiplier <= 0:
        raise ConfigError("radius_multiplier", "must be positive")
    dim = 2 if cfg.dataset == "points" else 64
    if cfg.eval_samples < dim + 1 or cfg.reference_samples < dim + 1:
        raise ConfigError("eval_samples", f"need at least {dim + 1} samples for the Frechet distance")
    return dataclasses.replace(cfg, **changes) if changes else cfg


def load_config(path: str | Path) -> DagConfig:
    return parse_config(Path(path).read_text())
