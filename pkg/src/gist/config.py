"""Run configuration: one TOML file with sections [world] [cbjt] [search] [ctr] [eval]."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class WorldConfig:
    users: int = 2000
    source_items: int = 5000
    target_items: int = 1000
    categories: int = 4
    d_z: int = 8
    d_c: int = 16
    zipf_exponent: float = 1.3
    view_noise_a: float = 0.3
    view_noise_b: float = 0.3
    source_events_per_user_tick: int = 150
    target_events_per_user_tick: int = 2
    ticks: int = 7
    beta_click: float = 8.0
    beta_select: float = 8.0
    lifelong_cap: int = 1000
    profile_vocab_sizes: list[int] = field(default_factory=lambda: [8, 4])
    seed: int = 7


@dataclass
class CbjtConfig:
    d_e: int = 32
    tower_hidden: int = 32
    content_epochs: int = 60
    content_batch: int = 256
    content_lr: float = 1e-3
    source_epochs: int = 3
    source_batch: int = 256
    source_lr: float = 2e-3
    source_max_events: int = 250000
    source_history_cap: int = 100
    qualify_top_frac: float = 0.2
    distill_max_impressions: int = 250000
    distill_min_history: int = 16
    theta_pair: float = 0.4
    theta_sweep: list[float] = field(default_factory=lambda: [0.2, 0.3, 0.4, 0.5])
    behavior_epochs: int = 300
    behavior_batch: int = 256
    behavior_lr: float = 3e-3
    union_epochs: int = 150
    union_batch: int = 256
    union_lr: float = 1e-3
    union_weight_decay: float = 0.0
    union_gate_decay: float = 0.0
    pair_holdout_frac: float = 0.2
    cooc_window: int = 5


@dataclass
class SearchConfig:
    top_k: int = 100
    mode: str = "soft"


@dataclass
class CtrConfig:
    variant: str = "gist"
    asi: str = "score+dist"
    m1: int = 32
    m2: int = 16
    hist_buckets: int = 8
    item_dim: int = 16
    user_dim: int = 16
    profile_dim: int = 8
    asi_dim: int = 8
    hist_dim: int = 16
    att_hidden: int = 32
    top_hidden: list[int] = field(default_factory=lambda: [64, 32])
    epochs: int = 8
    batch: int = 256
    lr: float = 2e-3
    weight_decay: float = 0.0
    target_history_cap: int = 100


@dataclass
class EvalConfig:
    train_fraction: float = 6.0 / 7.0
    recall_ks: list[int] = field(default_factory=lambda: [1, 10, 100])
    base_variant: str = "din"
    variants: list[str] = field(
        default_factory=lambda: ["din", "sim_hard", "sim_soft_pool", "sim_soft_attn", "gist"]
    )


@dataclass
class Config:
    world: WorldConfig = field(default_factory=WorldConfig)
    cbjt: CbjtConfig = field(default_factory=CbjtConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    ctr: CtrConfig = field(default_factory=CtrConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Stable digest of the full configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {
    "world": WorldConfig,
    "cbjt": CbjtConfig,
    "search": SearchConfig,
    "ctr": CtrConfig,
    "eval": EvalConfig,
}


def _build_section(cls, table: dict, section: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(table) - set(fields)
    if unknown:
        raise ValueError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    kwargs = {}
    for key, value in table.items():
        want = fields[key].type
        if want == "int" and isinstance(value, bool):
            raise ValueError(f"[{section}] {key}: expected int, got bool")
        if want == "float" and isinstance(value, int):
            value = float(value)
        kwargs[key] = value
    return cls(**kwargs)


def load_config(path: str | Path) -> Config:
    """Parse a TOML config file; unknown sections or keys are errors."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")
    parts = {
        name: _build_section(cls, doc.get(name, {}), name)
        for name, cls in _SECTIONS.items()
    }
    return Config(**parts)


def default_config() -> Config:
    return Config()
