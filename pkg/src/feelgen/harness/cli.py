"""Command-line entry point: ``feelgen {simulate,sweep,bound,topology,partition}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .. import bounds as B
from ..data import heterogeneity
from ..errors import ConfigError, FeelgenError, ParameterError
from ..numerics import RngStream
from ..topology import build_graph, contraction_check, lam, metropolis_weights
from .config import ExperimentConfig, parse_config, parse_sweep
from .experiment import build_world, csv_text, fmt, run_experiment
from .sweep import run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("feelgen")


def _overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    if getattr(args, "no_plots", False):
        changes["plots"] = False
    return cfg.replace(**changes) if changes else cfg


def cmd_simulate(args) -> int:
    cfg = _overrides(parse_config(args.config), args)
    res = run_experiment(cfg)
    final = res.run.final
    if not args.quiet:
        print(f"seed={res.seed} rounds={cfg.rounds} mode={cfg.mode} method={cfg.method}")
        print(f"final test_acc={final.test_acc:.4f} gap={final.gap:.6f} diverged={res.run.diverged}")
        bound = "undefined" if res.bound is None else f"{res.bound:.6g}"
        print(f"bound({'cfl' if cfg.mode == 'cfl' else 'dfl'})={bound}  artifacts={res.out_dir}")
    return EXIT_DIVERGED if res.run.diverged else EXIT_OK


def cmd_sweep(args) -> int:
    sweep = parse_sweep(args.config)
    sweep = type(sweep)(_overrides(sweep.base, args), sweep.axes)
    if not args.quiet:
        print(f"sweep: {len(sweep.points())} points x {len(sweep.base.seeds)} seeds = {sweep.size()} runs",
              flush=True)
    rows, aggs = run_sweep(sweep, jobs=args.jobs)
    if not args.quiet:
        axes = list(sweep.axes)
        for a in aggs:
            label = " ".join(f"{k}={a[k]}" for k in axes) or "base"
            acc, sd = a["final_acc"], a["final_acc_std"]
            acc_s = "n/a" if acc is None else f"{acc:.4f}±{sd:.4f}"
            print(f"{label}: acc={acc_s} gap={fmt(a['final_gap'])} ok={a['n_ok']}")
        print(f"wrote {Path(sweep.base.out_dir) / 'sweep.csv'}")
    failed = sum(1 for r in rows if r["error"])
    return EXIT_RUNTIME if failed == len(rows) else EXIT_OK


def read_constants(path: str | Path) -> tuple[B.BoundConstants, list[float] | None]:
    """Parse a ``key = value`` constants file.

    Keys: R, L, xi, D, sigma_sq, lambda, d, n, T, eta, and optionally mi.
    ``xi``, ``D`` and ``mi`` take one value per client or a single value
    together with ``N``; ``eta`` takes T values or a single value together
    with ``T``.
    """
    raw: dict[str, tuple[str, int]] = {}
    for no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"expected 'key = value', got {content!r}", line=no)
        key, value = (s.strip() for s in content.split("=", 1))
        raw[key] = (value, no)
    known = {"R", "L", "xi", "D", "sigma_sq", "lambda", "d", "n", "N", "T", "eta", "mi"}
    for key, (_, no) in raw.items():
        if key not in known:
            raise ConfigError(f"unknown constant {key!r}", key=key, line=no)

    def floats(key, default=None):
        if key not in raw:
            if default is None:
                raise ConfigError(f"missing constant {key!r}", key=key)
            return default
        value, no = raw[key]
        try:
            return [float(x) for x in value.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"{key}: cannot read {value!r} as numbers", key=key, line=no) from None

    def scalar(key, default=None, kind=float):
        vals = floats(key, None if default is None else [default])
        if len(vals) != 1:
            raise ConfigError(f"{key}: expected a single value", key=key, line=raw[key][1])
        return kind(vals[0])

    n_clients = scalar("N", 0, int) if "N" in raw else None
    xi, d_vals = floats("xi"), floats("D")
    if n_clients is not None:
        xi = xi * n_clients if len(xi) == 1 else xi
        d_vals = d_vals * n_clients if len(d_vals) == 1 else d_vals
    eta = floats("eta", [])
    if "T" in raw:
        t = scalar("T", 0, int)
        if len(eta) == 1:
            eta = eta * t
        if len(eta) != t:
            raise ConfigError(f"eta has {len(eta)} values but T = {t}", key="eta")
    try:
        c = B.BoundConstants(R=scalar("R"), L=scalar("L"), xi=tuple(xi), D=tuple(d_vals),
                             sigma_sq=scalar("sigma_sq"), lam=scalar("lambda", 0.0), d=scalar("d", 1, int),
                             n=scalar("n", 1, int), eta=tuple(eta))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    mi = floats("mi") if "mi" in raw else None
    if mi is not None:
        if len(mi) == 1:
            mi = mi * c.N
        if len(mi) != c.N:
            raise ConfigError(f"mi has {len(mi)} values for {c.N} clients", key="mi", line=raw["mi"][1])
    return c, mi


def cmd_bound(args) -> int:
    c, mi = read_constants(args.constants)
    rows = []
    for name, fn in (("bound_cfl", B.bound_cfl), ("bound_dfl", B.bound_dfl)):
        try:
            rows.append((name, fn(c)))
        except FeelgenError as exc:
            rows.append((name, None))
            print(f"{name}: undefined ({exc})", file=sys.stderr)
    if mi is not None:
        rows.append(("bound_generic", B.bound_generic(mi, c.R, c.n, c.N)))
    for name, value in rows:
        print(f"{name} = {'undefined' if value is None else fmt(value)}")
    print()
    sys.stdout.write(csv_text(["quantity", "value"], rows))
    return EXIT_OK


def cmd_topology(args) -> int:
    g = build_graph(args.kind, args.n, args.p, RngStream.derive(args.seed, "topology"))
    m = metropolis_weights(g)
    print(f"N={g.n}")
    print(f"edges={len(g.edges)}")
    print(f"lambda={fmt(lam(m))}")
    sys.stdout.write(csv_text(["k", "norm_theta_k_minus_P", "lambda_k"], contraction_check(m, args.k_max)))
    return EXIT_OK


def cmd_partition(args) -> int:
    cfg = _overrides(parse_config(args.config), args)
    world = build_world(cfg, cfg.seeds[0])
    part = world.partition
    d_vals = heterogeneity(part)
    header = ["client", *[f"class_{c}" for c in range(cfg.classes)], "D"]
    rows = []
    for i, client in enumerate(part.clients):
        hist = [int((client.labels == c).sum()) for c in range(cfg.classes)]
        rows.append([i, *hist, float(d_vals[i])])
    sys.stdout.write(csv_text(header, rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="feelgen", description="Federated edge learning over noisy channels: "
                                "simulation, sweeps and generalization bounds.")
    p.add_argument("--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="override the seed list with one seed")
        sp.add_argument("--out", default=None, help="override out_dir")
        sp.add_argument("--no-plots", action="store_true")
        sp.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    sp = sub.add_parser("simulate", help="run one experiment")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="run a cross-product sweep")
    sp.add_argument("config")
    sp.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bound", help="evaluate the bounds on a constants file")
    sp.add_argument("constants")
    sp.set_defaults(func=cmd_bound)

    sp = sub.add_parser("topology", help="mixing-matrix spectral summary")
    sp.add_argument("--kind", required=True, choices=["complete", "ring", "star", "erdos_renyi"])
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--p", type=float, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--k-max", type=int, default=10)
    sp.set_defaults(func=cmd_topology)

    sp = sub.add_parser("partition", help="per-client label histograms and heterogeneity")
    sp.add_argument("config")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_partition)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FeelgenError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
