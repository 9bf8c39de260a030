"""Service configuration: thresholds, cadences, and artifact paths.

One JSON or TOML document loaded at startup; the only environment
variable the service reads is RINGWATCH_CONFIG (the document's path).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib  # Python 3.11+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .detector import ScoreParams

CONFIG_ENV_VAR = "RINGWATCH_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class Thresholds:
    edge_threshold: float = 0.8
    auto_block: float = 0.95
    manual_floor: float = 0.5
    sample_rate: float = 0.05

    def validate(self) -> None:
        if not (0.0 < self.edge_threshold < 1.0):
            raise ConfigError(f"edge_threshold {self.edge_threshold} outside (0, 1)")
        if not (0.01 <= self.sample_rate <= 0.10):
            raise ConfigError(f"sample_rate {self.sample_rate} outside [0.01, 0.10]")
        if not (0.0 <= self.manual_floor <= self.auto_block <= 1.0):
            raise ConfigError("need 0 <= manual_floor <= auto_block <= 1")


@dataclass
class ServiceConfig:
    thresholds: Thresholds = field(default_factory=Thresholds)
    score: ScoreParams = field(default_factory=ScoreParams)
    reconcile_interval_ms: int = 60_000  # event time between reconciliations
    reconcile_pending_limit: int = 100  # pending tickets forcing an early run
    schema_path: str | None = None
    model_path: str | None = None
    hash_key: str = "ringwatch-default-key"
    reviewer_token: str = "reviewer-token"
    monitoring_seed: int = 2024
    fsync: bool = True

    def validate(self) -> None:
        self.thresholds.validate()
        if self.reconcile_interval_ms <= 0:
            raise ConfigError("reconcile_interval_ms must be positive")


def _from_dict(doc: dict) -> ServiceConfig:
    th = doc.get("thresholds", {})
    sc = doc.get("score", {})
    cfg = ServiceConfig(
        thresholds=Thresholds(
            edge_threshold=th.get("edge_threshold", 0.8),
            auto_block=th.get("auto_block", 0.95),
            manual_floor=th.get("manual_floor", 0.5),
            sample_rate=th.get("sample_rate", 0.05),
        ),
        score=ScoreParams(
            density_weight=sc.get("density_weight", 0.10),
            heuristic_weight=sc.get("heuristic_weight", 0.10),
            family_discount=sc.get("family_discount", 0.20),
            family_max_members=sc.get("family_max_members", 3),
            family_feature=sc.get("family_feature", "device_id"),
        ),
        reconcile_interval_ms=doc.get("reconcile_interval_ms", 60_000),
        reconcile_pending_limit=doc.get("reconcile_pending_limit", 100),
        schema_path=doc.get("schema_path"),
        model_path=doc.get("model_path"),
        hash_key=doc.get("hash_key", "ringwatch-default-key"),
        reviewer_token=doc.get("reviewer_token", "reviewer-token"),
        monitoring_seed=doc.get("monitoring_seed", 2024),
        fsync=doc.get("fsync", True),
    )
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike | None = None) -> ServiceConfig:
    """Load from an explicit path, or $RINGWATCH_CONFIG, or defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return ServiceConfig()
    p = Path(path)
    raw = p.read_bytes()
    if p.suffix == ".json":
        return _from_dict(json.loads(raw))
    return _from_dict(tomllib.loads(raw.decode("utf-8")))


def load_document(path: str | os.PathLike) -> dict:
    """Parse a JSON/TOML document (used for schemas and population specs)."""
    p = Path(path)
    raw = p.read_bytes()
    if p.suffix == ".json":
        return json.loads(raw)
    return tomllib.loads(raw.decode("utf-8"))
