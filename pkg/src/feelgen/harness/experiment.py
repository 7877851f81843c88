"""Single experiment: build the world from a config, train, bound, persist."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import bounds as B
from ..data import (ClientPartition, LabeledDataset, MixtureSpec, default_mixture, dirichlet_partition,
                    gen_synthetic, global_test_set)
from ..errors import UndefinedBoundError
from ..model import ModelSpec
from ..numerics import RngStream
from ..topology import MixingMatrix, build_graph, metropolis_weights, single_node
from ..trainer import RoundMetrics, RunResult, run_cfl, run_dfl
from .config import ExperimentConfig, dump_config
from .svg import line_chart

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("round", "train_loss", "test_loss", "test_acc", "gap")


def fmt(x) -> str:
    """Locale-free number formatting that round-trips 64-bit floats."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def metrics_csv(metrics: list[RoundMetrics]) -> str:
    return csv_text(METRIC_COLUMNS, [(m.round, m.train_loss, m.test_loss, m.test_acc, m.gap) for m in metrics])


@dataclass
class World:
    mixture: MixtureSpec
    model: ModelSpec
    partition: ClientPartition
    test: LabeledDataset
    mixing: MixingMatrix | None


def build_world(cfg: ExperimentConfig, seed: int) -> World:
    mixture = default_mixture(cfg.classes, cfg.feature_dim, cfg.class_radius, cfg.class_std,
                              RngStream.derive(cfg.mixture_seed, "mixture"))
    n_dev, n = cfg.devices, cfg.samples_per_device
    source_size = math.ceil(cfg.source_factor * n_dev * n)
    uniform = np.full(cfg.classes, 1.0 / cfg.classes)
    source = gen_synthetic(mixture, source_size, uniform, RngStream.derive(seed, "source"))
    part = dirichlet_partition(source, n_dev, cfg.dirichlet_alpha, n, RngStream.derive(seed, "partition"),
                               classes=cfg.classes)
    test = global_test_set(mixture, part, cfg.test_size, RngStream.derive(seed, "test"))
    mixing = None
    if cfg.mode == "dfl":
        if n_dev == 1:
            mixing = single_node()
        else:
            graph = build_graph(cfg.topology, n_dev, cfg.er_p, RngStream.derive(seed, "topology"))
            mixing = metropolis_weights(graph)
    return World(mixture, ModelSpec(cfg.feature_dim, cfg.classes, cfg.hidden), part, test, mixing)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seed: int
    run: RunResult
    constants: B.BoundConstants | None
    bound: float | None
    bound_note: str
    out_dir: Path | None

    @property
    def lam(self) -> float | None:
        return self.run.constants.get("lambda")

    @property
    def mean_d(self) -> float:
        return float(np.mean(self.run.constants["D"]))

    def summary(self) -> dict:
        final = self.run.final
        return {
            "seed": self.seed,
            "mode": self.config.mode,
            "method": self.config.method,
            "rounds": self.config.rounds,
            "final": None if final is None else {
                "round": final.round, "train_loss": final.train_loss, "test_loss": final.test_loss,
                "test_acc": final.test_acc, "gap": final.gap},
            "diverged": self.run.diverged,
            "lambda": self.lam,
            "D": list(self.run.constants["D"]),
            "sigma": self.run.constants["sigma"],
            "bound": self.bound,
            "bound_kind": "cfl" if self.config.mode == "cfl" else "dfl",
            "bound_note": self.bound_note,
            "constants": None if self.constants is None else self.constants.to_dict(),
            "wall_clock_seconds": self.run.wall_clock,
        }


def _bound(cfg: ExperimentConfig, seed: int, world: World, run: RunResult):
    checkpoints = [run.params] if np.all(np.isfinite(run.params)) else []
    est = B.estimate_constants(world.model, world.partition, cfg.probes, RngStream.derive(seed, "probes"),
                               checkpoints=checkpoints)
    lam = run.constants["lambda"] or 0.0
    consts = B.BoundConstants(R=est.R, L=est.L, xi=est.xi, D=est.D, sigma_sq=run.constants["sigma_sq"], lam=lam,
                              d=world.model.param_dim, n=cfg.samples_per_device, eta=tuple(run.eta))
    note = est.note
    try:
        value = B.bound_cfl(consts) if cfg.mode == "cfl" else B.bound_dfl(consts)
    except UndefinedBoundError as exc:
        value, note = (0.0, note) if consts.T == 0 else (None, str(exc))
    return consts, value, note


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, out_dir: str | Path | None = None,
                   plots: bool | None = None, write: bool = True) -> ExperimentResult:
    seed = cfg.seeds[0] if seed is None else seed
    world = build_world(cfg, seed)
    tc = cfg.train_config(seed)
    channel = cfg.channel()
    if cfg.mode == "cfl":
        run = run_cfl(tc, world.model, world.partition, world.test, channel)
    else:
        run = run_dfl(tc, world.model, world.partition, world.test, world.mixing, channel)
    consts, value, note = _bound(cfg, seed, world, run)
    target = Path(out_dir if out_dir is not None else cfg.out_dir) if write else None
    result = ExperimentResult(cfg, seed, run, consts, value, note, target)
    if target is not None:
        persist(result, cfg.plots if plots is None else plots)
    return result


def persist(result: ExperimentResult, plots: bool) -> None:
    out = result.out_dir
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.resolved", dump_config(result.config))
    atomic_write(out / "metrics.csv", metrics_csv(result.run.metrics))
    atomic_write(out / "summary.json", json.dumps(result.summary(), indent=2, allow_nan=True) + "\n")
    if plots:
        ms = result.run.metrics
        rounds = [m.round for m in ms]
        atomic_write(out / "accuracy.svg", line_chart({"test accuracy": (rounds, [m.test_acc for m in ms])},
                                                      title="Test accuracy", xlabel="round", ylabel="accuracy"))
        atomic_write(out / "loss.svg", line_chart({"train loss": (rounds, [m.train_loss for m in ms]),
                                                   "test loss": (rounds, [m.test_loss for m in ms]),
                                                   "gap": (rounds, [m.gap for m in ms])},
                                                  title="Loss and generalization gap", xlabel="round",
                                                  ylabel="nats"))
