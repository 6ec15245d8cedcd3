"""Run configuration: an INI file with one section per pipeline stage.

Every key is optional; missing keys take the library defaults. Unknown
sections and keys are rejected so typos cannot silently fall back to a
default. Example::

    [dataset]
    head_count = 1500
    multipliers = 1,1,1,1,1,1,1,1,0.04,0.003

    [mining]
    methods = ours, entropy, random
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from tailminer import backbone as bb
from tailminer import mcmau, recalib
from tailminer.data import DEFAULT_TAIL_THRESHOLD, SkewProfile
from tailminer.errors import ConfigError, TailminerError
from tailminer.nn import EarlyStoppingConfig, TrainConfig
from tailminer.pipeline import PipelineConfig
from tailminer.ranking import DEFAULT_TOP_K, METHODS


@dataclass(frozen=True)
class DatasetFiles:
    train: Path
    pool: Path
    test: Path


@dataclass(frozen=True)
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    files: DatasetFiles | None = None
    methods: tuple[str, ...] = METHODS
    sample_sizes: tuple[int, ...] = (50, 100, 200)
    finetune_mode: str = "scratch"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def as_dict(self) -> dict:
        p = self.pipeline

        def train(cfg: TrainConfig) -> dict:
            out = {"learning_rate": cfg.learning_rate, "epochs": cfg.epochs, "batch_size": cfg.batch_size}
            if cfg.early_stopping is not None:
                es = cfg.early_stopping
                out.update(patience=es.patience, min_delta=es.min_delta,
                           validation_fraction=es.validation_fraction)
            return out

        profile = p.profile.as_dict()
        profile.pop("seed")
        return {
            "dataset": {"profile": profile,
                        "files": None if self.files is None else
                        {k: str(v) for k, v in vars(self.files).items()}},
            "backbone": {"arch": list(p.backbone_arch), **train(p.backbone)},
            "recalib": {"gamma": p.focal_gamma, "alphas": list(p.focal_alphas), **train(p.rc)},
            "autoencoder": {"encoder": None if p.ae_encoder is None else list(p.ae_encoder), **train(p.ae)},
            "mining": {"methods": list(self.methods), "top_k": p.top_k, "min_confidence": p.min_confidence,
                       "raw_baseline_probs": p.raw_baseline_probs, "sample_sizes": list(self.sample_sizes),
                       "finetune_mode": self.finetune_mode},
            "eval": {"tail_threshold": p.tail_threshold, "seeds": list(self.seeds)},
        }

    def digest(self) -> str:
        """Hash of every setting except the seed."""
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


# --- parsing ------------------------------------------------------------------


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in _items(text))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in _items(text))


def _items(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in {"1", "true", "yes", "on"}:
        return True
    if value in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in {"", "none"} else float(text)


_TRAIN_KEYS: dict[str, Callable] = {"learning_rate": float, "epochs": int, "batch_size": int}
_ES_KEYS: dict[str, Callable] = {"patience": int, "min_delta": float, "validation_fraction": float}

SCHEMA: dict[str, dict[str, Callable]] = {
    "dataset": {
        "head_count": int, "multipliers": _floats, "feature_dim": int, "cluster_separation": float,
        "noise_scale": float, "pool_per_class": int, "test_per_class": int, "class_names": _items,
        "train_csv": str, "pool_csv": str, "test_csv": str,
    },
    "backbone": {"arch": _ints, **_TRAIN_KEYS},
    "recalib": {"gamma": float, "alphas": _floats, **_TRAIN_KEYS, **_ES_KEYS},
    "autoencoder": {"encoder": _ints, **_TRAIN_KEYS},
    "mining": {
        "methods": _items, "top_k": int, "min_confidence": _optional_float, "raw_baseline_probs": _bool,
        "sample_sizes": _ints, "finetune_mode": str,
    },
    "eval": {"tail_threshold": float, "seeds": _ints},
}


def _parse(parser: configparser.ConfigParser, source: str) -> dict[str, dict]:
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]; valid: {', '.join(SCHEMA)}")
        for key, raw in parser.items(section):
            conv = SCHEMA[section].get(key)
            if conv is None:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            try:
                values.setdefault(section, {})[key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from None
    return values


def _train_cfg(base: TrainConfig, vals: dict) -> TrainConfig:
    cfg = replace(base, **{k: vals[k] for k in _TRAIN_KEYS if k in vals})
    es_vals = {k: vals[k] for k in _ES_KEYS if k in vals}
    if es_vals:
        cfg = replace(cfg, early_stopping=replace(cfg.early_stopping or EarlyStoppingConfig(), **es_vals))
    return cfg


def _build(values: dict[str, dict], base_dir: Path) -> RunConfig:
    ds = dict(values.get("dataset", {}))
    paths = {k: ds.pop(f"{k}_csv") for k in ("train", "pool", "test") if f"{k}_csv" in ds}
    files = None
    if paths:
        if len(paths) != 3:
            raise ConfigError("dataset files need all of train_csv, pool_csv and test_csv")
        resolved = {k: (base_dir / v).resolve() for k, v in paths.items()}
        for k, p in resolved.items():
            if not p.is_file():
                raise ConfigError(f"[dataset] {k}_csv: file not found: {p}")
        files = DatasetFiles(**resolved)
    if "class_names" in ds:
        ds["class_names"] = tuple(ds["class_names"])
    profile = SkewProfile(**ds)

    bbv = values.get("backbone", {})
    rcv = values.get("recalib", {})
    aev = values.get("autoencoder", {})
    mv = values.get("mining", {})
    ev = values.get("eval", {})
    pipeline = PipelineConfig(
        profile=profile,
        backbone_arch=bbv.get("arch", bb.DEFAULT_ARCH),
        backbone=_train_cfg(bb.default_config(), bbv),
        rc=_train_cfg(recalib.default_config(), rcv),
        focal_gamma=rcv.get("gamma", recalib.DEFAULT_GAMMA),
        focal_alphas=rcv.get("alphas", ()),
        ae_encoder=aev.get("encoder"),
        ae=_train_cfg(mcmau.default_config(), aev),
        top_k=mv.get("top_k", DEFAULT_TOP_K),
        min_confidence=mv.get("min_confidence"),
        raw_baseline_probs=mv.get("raw_baseline_probs", False),
        tail_threshold=ev.get("tail_threshold", DEFAULT_TAIL_THRESHOLD),
    )
    methods = tuple(mv.get("methods", METHODS))
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown method(s) {bad}; valid: {', '.join(METHODS)}")
    mode = mv.get("finetune_mode", "scratch")
    if mode not in ("scratch", "continue"):
        raise ConfigError("finetune_mode must be 'scratch' or 'continue'")
    sizes = mv.get("sample_sizes", (50, 100, 200))
    if any(n < 0 for n in sizes):
        raise ConfigError("sample sizes must be non-negative")
    if pipeline.top_k < 1:
        raise ConfigError("top_k must be positive")
    if not 0 < pipeline.tail_threshold:
        raise ConfigError("tail_threshold must be positive")
    return RunConfig(pipeline, files, methods, sizes, mode, ev.get("seeds", (0, 1, 2, 3, 4)))


def load(path: str | Path | None = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Read ``path`` (or defaults when None) and apply ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    base_dir = Path.cwd()
    source = "<defaults>"
    if path is not None:
        path = Path(path)
        source = str(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read_string(path.read_text(encoding="utf-8"), source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        base_dir = path.parent
    for item in overrides:
        target, sep, value = item.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value.strip())
    try:
        return _build(_parse(parser, source), base_dir)
    except ConfigError:
        raise
    except (TailminerError, TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
