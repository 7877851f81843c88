"""Flat ``key = value`` experiment configs with ``#`` comments.

List-valued keys take comma-separated values. Lines of the form
``sweep.<key> = v1, v2, ...`` declare sweep axes over any scalar key.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from ..channel import MODES, POWER_REFS, ChannelSpec
from ..errors import ConfigError
from ..topology import KINDS
from ..trainer import LR_SCHEDULES, METHODS, TrainConfig

_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


@dataclass(frozen=True)
class ExperimentConfig:
    # training
    mode: str = "cfl"
    method: str = "fedsgd"
    rounds: int = 300
    lr: float = 0.05
    lr_schedule: str = "constant"
    batch_size: int = 32
    beta: float = 1.0
    beta_decay: float = 1.0
    mu_prox: float = 0.01
    eval_every: int = 10
    workers: int = 1
    # data
    devices: int = 10
    samples_per_device: int = 200
    classes: int = 5
    feature_dim: int = 20
    hidden: int = 0
    class_radius: float = 3.0
    class_std: float = 1.0
    mixture_seed: int = 0
    dirichlet_alpha: float = 1.0
    source_factor: float = 2.0
    test_size: int = 2000
    # topology (dfl)
    topology: str = "complete"
    er_p: float = 0.01
    # channel
    noise_mode: str = "snr_db"
    snr_db: float = 40.0
    noise_sigma: float = 0.0
    power_ref: str = "unit"
    # bookkeeping
    probes: int = 10
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str = "runs/default"
    plots: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond: bool, key: str, msg: str):
            if not cond:
                raise ConfigError(f"{key}: {msg}", key=key)

        need(self.mode in ("cfl", "dfl"), "mode", "must be cfl or dfl")
        need(self.method in METHODS, "method", f"must be one of {', '.join(METHODS)}")
        need(self.lr_schedule in LR_SCHEDULES, "lr_schedule", f"must be one of {', '.join(LR_SCHEDULES)}")
        need(self.rounds >= 0, "rounds", "must be >= 0")
        need(self.lr > 0, "lr", "must be > 0")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.beta >= 0, "beta", "must be >= 0")
        need(0 < self.beta_decay <= 1, "beta_decay", "must lie in (0, 1]")
        need(self.mu_prox >= 0, "mu_prox", "must be >= 0")
        need(self.eval_every >= 1, "eval_every", "must be >= 1")
        need(self.workers >= 1, "workers", "must be >= 1")
        need(self.devices >= 1, "devices", "must be >= 1")
        need(self.samples_per_device >= 1, "samples_per_device", "must be >= 1")
        need(self.classes >= 2, "classes", "must be >= 2")
        need(self.feature_dim >= 1, "feature_dim", "must be >= 1")
        need(self.hidden >= 0, "hidden", "must be >= 0 (0 selects logistic)")
        need(self.class_radius > 0, "class_radius", "must be > 0")
        need(self.class_std > 0, "class_std", "must be > 0")
        need(self.dirichlet_alpha > 0, "dirichlet_alpha", "must be > 0")
        need(self.source_factor >= 1, "source_factor", "must be >= 1")
        need(self.test_size >= 1, "test_size", "must be >= 1")
        need(self.topology in KINDS, "topology", f"must be one of {', '.join(KINDS)}")
        need(0 < self.er_p <= 1, "er_p", "must lie in (0, 1]")
        need(self.noise_mode in MODES, "noise_mode", f"must be one of {', '.join(MODES)}")
        need(self.noise_sigma >= 0, "noise_sigma", "must be >= 0")
        need(self.power_ref in POWER_REFS, "power_ref", f"must be one of {', '.join(POWER_REFS)}")
        need(self.probes >= 10, "probes", "must be >= 10")
        need(len(self.seeds) >= 1, "seeds", "needs at least one seed")
        need(self.mode == "cfl" or self.devices >= 2 or self.topology == "complete",
             "topology", "a single-device DFL run only supports the complete topology")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(mode=self.mode, method=self.method, rounds=self.rounds, lr=self.lr,
                           lr_schedule=self.lr_schedule, batch_size=self.batch_size, beta=self.beta,
                           beta_decay=self.beta_decay, mu_prox=self.mu_prox, eval_every=self.eval_every,
                           seed=seed, workers=self.workers)

    def channel(self) -> ChannelSpec:
        if self.noise_mode == "noiseless":
            return ChannelSpec.noiseless()
        if self.noise_mode == "sigma":
            return ChannelSpec.fixed_sigma(self.noise_sigma)
        return ChannelSpec.snr(self.snr_db, self.power_ref)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    axes: dict[str, tuple[Any, ...]] = field(default_factory=dict)

    def points(self) -> list[dict[str, Any]]:
        combos: list[dict[str, Any]] = [{}]
        for key, values in self.axes.items():
            combos = [{**c, key: v} for c in combos for v in values]
        return combos

    def size(self) -> int:
        return len(self.points()) * len(self.base.seeds)


FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _field_type(name: str) -> str:
    t = FIELDS[name].type
    return t if isinstance(t, str) else t.__name__


def _convert(name: str, raw: str, line: int | None) -> Any:
    kind = _field_type(name)
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return _BOOL[raw.lower()]
        if kind.startswith("tuple"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except (ValueError, KeyError):
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind}", key=name, line=line) from None


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_text(text: str) -> tuple[ExperimentConfig, dict[str, tuple[Any, ...]]]:
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    axes: dict[str, tuple[Any, ...]] = {}
    for no, raw_line in enumerate(text.splitlines(), start=1):
        content = raw_line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"expected 'key = value', got {content!r}", line=no)
        key, raw = (s.strip() for s in content.split("=", 1))
        if key.startswith("sweep."):
            name = key[len("sweep."):]
            if name not in FIELDS or name == "seeds":
                raise ConfigError(f"unknown sweep axis {name!r}", key=key, line=no)
            if _field_type(name).startswith("tuple"):
                raise ConfigError(f"cannot sweep list-valued key {name!r}", key=key, line=no)
            items = tuple(_convert(name, v, no) for v in raw.split(",") if v.strip())
            if not items:
                raise ConfigError(f"sweep axis {name!r} has no values", key=key, line=no)
            axes[name] = items
            lines[key] = no
            continue
        if key not in FIELDS:
            raise ConfigError(f"unknown key {key!r}", key=key, line=no)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", key=key, line=no)
        values[key] = _convert(key, raw, no)
        lines[key] = no
    try:
        cfg = ExperimentConfig(**values)
    except ConfigError as exc:
        raise ConfigError(str(exc), key=exc.key, line=lines.get(exc.key or "")) from None
    for name, items in axes.items():
        for v in items:
            try:
                cfg.replace(**{name: v})
            except ConfigError as exc:
                raise ConfigError(str(exc), key=name, line=lines[f"sweep.{name}"]) from None
    return cfg, axes


def parse_config(path: str | Path) -> ExperimentConfig:
    return parse_text(Path(path).read_text(encoding="utf-8"))[0]


def parse_sweep(path: str | Path) -> SweepSpec:
    cfg, axes = parse_text(Path(path).read_text(encoding="utf-8"))
    return SweepSpec(cfg, axes)


def dump_config(cfg: ExperimentConfig, axes: dict[str, tuple[Any, ...]] | None = None) -> str:
    lines = [f"{f.name} = {_format(getattr(cfg, f.name))}" for f in fields(cfg)]
    for name, items in (axes or {}).items():
        lines.append(f"sweep.{name} = {_format(tuple(items))}")
    return "\n".join(lines) + "\n"
