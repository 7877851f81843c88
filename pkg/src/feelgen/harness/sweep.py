"""Cross-product sweeps over config axes and seeds, with per-point aggregates."""
from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from .config import SweepSpec, dump_config
from .experiment import atomic_write, csv_text, run_experiment
from .svg import line_chart

log = logging.getLogger(__name__)

VALUE_COLUMNS = ("final_acc", "final_gap", "final_test_loss", "bound", "lambda", "mean_D")


def point_label(point: dict[str, Any]) -> str:
    if not point:
        return "base"
    raw = "_".join(f"{k}-{v}" for k, v in point.items())
    return re.sub(r"[^A-Za-z0-9_.-]+", "", raw)


def _run_one(args):
    cfg, seed, out_dir, plots = args
    try:
        res = run_experiment(cfg, seed=seed, out_dir=out_dir, plots=plots)
    except Exception as exc:  # recorded per row; the sweep carries on
        log.warning("sweep point failed: %s", exc)
        return {"error": f"{type(exc).__name__}: {exc}"}
    final = res.run.final
    return {
        "final_acc": final.test_acc, "final_gap": final.gap, "final_test_loss": final.test_loss,
        "bound": res.bound, "lambda": res.lam, "mean_D": res.mean_d, "diverged": res.run.diverged,
        "curve": [(m.round, m.test_acc) for m in res.run.metrics],
    }


def _mean_std(values):
    vals = [v for v in values if v is not None and math.isfinite(v)]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def run_sweep(sweep: SweepSpec, out_dir: str | Path | None = None, jobs: int = 1,
              plots: bool | None = None) -> tuple[list[dict], list[dict]]:
    """Run every (axis point, seed) pair; write ``sweep.csv`` and return (rows, aggregates)."""
    base = sweep.base
    out = Path(out_dir if out_dir is not None else base.out_dir)
    plots = base.plots if plots is None else plots
    points = sweep.points()
    log.info("sweep: %d points x %d seeds = %d runs", len(points), len(base.seeds), sweep.size())
    tasks, keys = [], []
    for point in points:
        cfg = base.replace(**point)
        for seed in base.seeds:
            tasks.append((cfg, seed, out / point_label(point) / f"seed-{seed}", plots))
            keys.append((point, seed))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]

    axes = list(sweep.axes)
    rows = []
    for (point, seed), res in zip(keys, results):
        row = {"kind": "run", **point, "seed": seed, "n_ok": 0 if "error" in res else 1}
        row.update({c: res.get(c) for c in VALUE_COLUMNS})
        row.update(diverged=res.get("diverged"), error=res.get("error", ""), curve=res.get("curve"))
        rows.append(row)

    aggregates = []
    for point in points:
        members = [r for r in rows if all(r[k] == v for k, v in point.items()) and not r["error"]]
        agg = {"kind": "aggregate", **point, "seed": "", "n_ok": len(members), "diverged": "", "error": ""}
        for c in VALUE_COLUMNS:
            agg[c], agg[f"{c}_std"] = _mean_std([r[c] for r in members])
        aggregates.append(agg)

    header = ["kind", *axes, "seed", "n_ok"]
    for c in VALUE_COLUMNS:
        header += [c, f"{c}_std"]
    header += ["diverged", "error"]
    table = [[r.get(h) for h in header] for r in rows + aggregates]
    atomic_write(out / "sweep.csv", csv_text(header, table))
    atomic_write(out / "sweep.resolved", dump_config(base, sweep.axes))
    if plots:
        series = {}
        for point in points:
            curves = [r["curve"] for r in rows
                      if all(r[k] == v for k, v in point.items()) and not r["error"] and r["curve"]]
            if curves:
                n = min(len(c) for c in curves)
                xs = [c[0] for c in curves[0][:n]]
                ys = [float(np.mean([c[i][1] for c in curves])) for i in range(n)]
                series[point_label(point)] = (xs, ys)
        atomic_write(out / "sweep_accuracy.svg", line_chart(series, title="Mean test accuracy",
                                                            xlabel="round", ylabel="accuracy"))
    for r in rows:
        r.pop("curve", None)
    return rows, aggregates
