"""Command-line entry point: ``onlinegam {simulate,fit,batch,report,bench,resume}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bandwidth import batch_bandwidth
from .config import ConfigError, RunConfig, load_config
from .estimate import AdditiveEstimate
from .grid import GridSpec
from .io import IngestError, NDJSONWriter, ingest, read_estimate, write_blocks, write_estimate, write_rows
from .report import (bandwidth_errors, bench, efficiency_lower_bound, efficiency_report, replicate,
                     simulation_truth_grid, study_efficiency)
from .runner import OnlineGAM
from .simulation import simulate
from .solver import SolverConfig, batch_fit, pool_blocks

log = logging.getLogger("onlinegam")


def _solver(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(cfg.eps_outer, cfg.eps_inner, cfg.max_outer, cfg.max_inner, cfg.max_step)


def _bandwidth(spec: str, d: int):
    if spec == "pilot":
        return "pilot"
    path = Path(spec)
    if path.suffix == ".csv" and path.exists():
        return np.loadtxt(path, delimiter=",", ndmin=2)
    try:
        vals = np.array([float(v) for v in spec.split(",")])
    except ValueError:
        raise ConfigError(f"bandwidth: expected 'pilot', numbers or a schedule CSV, got {spec!r}")
    if vals.size not in (1, d) or np.any(vals <= 0):
        raise ConfigError(f"bandwidth needs 1 or {d} positive values")
    return vals


def _blocks(cfg: RunConfig):
    if cfg.input == "simulation":
        if cfg.d != 2 or cfg.family != "poisson-log":
            raise ConfigError("the simulation design is two-dimensional poisson-log")
        return simulate(cfg.seed, cfg.blocks, cfg.block_mean, cfg.block_sd)
    return ingest(cfg.input, cfg.d)


def _run_stream(model: OnlineGAM, blocks, cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with NDJSONWriter(out / "diagnostics.ndjson") as diag:
        for block in blocks:
            rec = model.partial_fit(block)
            diag.write(rec)
            log.info("block %d N=%d h=%s outer=%d", rec["K"], rec["N"],
                     np.round(rec["bandwidth"], 4).tolist(), rec["outer_iterations"])
            if cfg.snapshot_every and model.K % cfg.snapshot_every == 0:
                write_estimate(out / f"estimate_K{model.K:05d}.csv", model.estimate, model.grid)
                model.save(out / "state.npz", extra={"config": vars(cfg)})
    if model.estimate is None:
        raise IngestError("no blocks in input")
    write_estimate(out / "estimate.csv", model.estimate, model.grid)
    model.save(out / "state.npz", extra={"config": vars(cfg)})
    print(f"processed {model.K} blocks (N={model.state.N}); results in {out}")


def _int_list(text: str) -> list[int]:
    try:
        return sorted({int(v) for v in text.split(",")})
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def cmd_fit(cfg: RunConfig, args) -> int:
    model = OnlineGAM(GridSpec(cfg.grid_points, cfg.d), cfg.family, cfg.kernel, cfg.L,
                      _bandwidth(cfg.bandwidth, cfg.d), cfg.G, cfg.R, cfg.L_pilot, _solver(cfg))
    _run_stream(model, _blocks(cfg), cfg, Path(cfg.output))
    return 0


def cmd_resume(cfg: RunConfig, args) -> int:
    model, user = OnlineGAM.load(args.snapshot)
    if cfg.input == "simulation":
        raise ConfigError("resume needs --input pointing at the remaining blocks")
    print(f"resuming at K={model.K}")
    _run_stream(model, ingest(cfg.input, model.grid.d), cfg, Path(cfg.output))
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = write_blocks(out, simulate(cfg.seed, cfg.blocks, cfg.block_mean, cfg.block_sd))
    print(f"wrote {cfg.blocks} blocks ({n} rows) to {out}")
    return 0


def cmd_batch(cfg: RunConfig, args) -> int:
    grid = GridSpec(cfg.grid_points, cfg.d)
    pooled = pool_blocks(_blocks(cfg))
    solver = _solver(cfg)
    bw = _bandwidth(cfg.bandwidth, cfg.d)
    if isinstance(bw, str):
        h = batch_bandwidth(pooled, grid, cfg.family, cfg.kernel, cfg.G, cfg.R, solver).h
    elif bw.ndim == 2:
        raise ConfigError("batch fits take a single bandwidth, not a schedule")
    else:
        h = bw
    est, info = batch_fit(pooled, h, grid, cfg.family, cfg.kernel, 1, solver)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_estimate(out / "batch_estimate.csv", est, grid)
    print(f"batch fit on N={pooled.n} at h={np.round(h, 5).tolist()}: "
          f"{info.outer_iterations} outer iterations, converged={info.converged}")
    return 0


def _load_estimate(path) -> tuple[AdditiveEstimate, GridSpec]:
    b0, h, nodes, beta, beta1 = read_estimate(path)
    grid = GridSpec(len(nodes), beta.shape[0])
    return AdditiveEstimate(b0, beta, beta1[:, None, :], h), grid


def cmd_report(cfg: RunConfig, args) -> int:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.online or args.batch:
        if not (args.online and args.batch):
            raise ConfigError("data-mode report needs both --online and --batch")
        on, grid = _load_estimate(args.online)
        ba, grid_b = _load_estimate(args.batch)
        if grid != grid_b:
            raise ConfigError("online and batch estimates use different grids")
        rep = efficiency_report([on], [ba], grid, cfg.L)
        print(json.dumps(rep.as_record(), indent=2))
        return 0
    grid = GridSpec(cfg.grid_points, 2)
    Ls = _int_list(args.L_list) if args.L_list else [cfg.L]
    results = []
    for r in range(args.reps):
        res = replicate(cfg.seed + r, cfg.blocks, Ls, grid, cfg.G, cfg.R, cfg.L_pilot,
                        _solver(cfg), cfg.kernel)
        results.append(res)
        log.info("replication %d done", r + 1)
    reports = study_efficiency(results, grid)
    rows = []
    for L, rep in reports.items():
        for j in range(2):
            rows.append({"L": L, "component": j + 1, "imse_online": rep.imse_online[j],
                         "imse_batch": rep.imse_batch[j], "eff": rep.eff[j], "bound": rep.bound})
    write_rows(out / "efficiency.csv", rows)
    checkpoints = sorted({k for k in (20, cfg.blocks) if k <= cfg.blocks})
    errs = bandwidth_errors(results, checkpoints, cfg.kernel)
    write_rows(out / "bandwidth_error.csv",
               [{"K": K, "component": j + 1, "median_rel_error": float(np.median(e[:, j]))}
                for K, e in errs.items() for j in range(2)])
    truth = simulation_truth_grid(grid)
    curves = []
    for i, x in enumerate(grid.nodes):
        row = {"node": x, "truth1": truth[0, i], "truth2": truth[1, i]}
        for L in Ls:
            for j in range(2):
                row[f"online_L{L}_{j + 1}"] = np.mean([r.online[L].components[j, i] for r in results])
        curves.append(row)
    write_rows(out / "curves.csv", curves)
    for row in rows:
        print(f"L={row['L']:>3} beta{row['component']}: eff={row['eff']:.4f} "
              f"(bound {row['bound']:.4f})")
    return 0


def cmd_bench(cfg: RunConfig, args) -> int:
    grid = GridSpec(cfg.grid_points, cfg.d)
    Ls = _int_list(args.L_list) if args.L_list else [cfg.L]
    bw = _bandwidth(cfg.bandwidth, cfg.d)
    if not isinstance(bw, str) and bw.ndim == 2:
        raise ConfigError("bench takes pilot or a fixed bandwidth")
    rows = bench(_blocks(cfg), grid, cfg.family, Ls, args.batch_every,
                 None if isinstance(bw, str) else bw, cfg.G, cfg.R, cfg.L_pilot, _solver(cfg),
                 cfg.kernel)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "timing.csv", rows)
    print(f"wrote {len(rows)} timing rows to {out / 'timing.csv'}")
    return 0


def cmd_bound(cfg: RunConfig, args) -> int:
    for L in args.values:
        print(f"{L}\t{efficiency_lower_bound(L):.5f}")
    return 0


_OVERRIDES = [
    ("--family", str), ("--d", int), ("--grid-points", int), ("--kernel", str), ("--L", int),
    ("--L-pilot", int), ("--G", float), ("--R", float), ("--eps-outer", float),
    ("--eps-inner", float), ("--max-outer", int), ("--max-inner", int), ("--max-step", float),
    ("--bandwidth", str), ("--input", str), ("--blocks", int), ("--block-mean", float),
    ("--block-sd", float), ("--output", str), ("--seed", int), ("--snapshot-every", int),
]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("-v", "--verbose", action="store_true")
    for flag, kind in _OVERRIDES:
        common.add_argument(flag, dest=flag[2:].replace("-", "_"), type=kind, default=None)

    p = argparse.ArgumentParser(prog="onlinegam",
                                description="Online smooth backfitting for additive models.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", parents=[common], help="stream blocks through the online fit")
    s.set_defaults(func=cmd_fit)
    s = sub.add_parser("resume", parents=[common], help="continue a stream from a snapshot")
    s.add_argument("--snapshot", required=True)
    s.set_defaults(func=cmd_resume)
    s = sub.add_parser("simulate", parents=[common], help="write simulated blocks as CSV")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("batch", parents=[common], help="batch fit on all input data")
    s.set_defaults(func=cmd_batch)
    s = sub.add_parser("report", parents=[common], help="efficiency report")
    s.add_argument("--reps", type=int, default=10)
    s.add_argument("--Ls", dest="L_list", default=None, help="comma-separated L values")
    s.add_argument("--online", help="online estimate CSV (data mode)")
    s.add_argument("--batch", help="batch estimate CSV (data mode)")
    s.set_defaults(func=cmd_report)
    s = sub.add_parser("bench", parents=[common], help="timing of online vs batch refits")
    s.add_argument("--Ls", dest="L_list", default=None, help="comma-separated L values")
    s.add_argument("--batch-every", type=int, default=10)
    s.set_defaults(func=cmd_bench)
    s = sub.add_parser("bound", help="efficiency lower bound for given L")
    s.add_argument("values", type=int, nargs="+")
    s.set_defaults(func=cmd_bound)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "bound":
        try:
            return cmd_bound(None, args)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {flag[2:].replace("-", "_"): getattr(args, flag[2:].replace("-", "_"))
                 for flag, _ in _OVERRIDES}
    try:
        cfg = load_config(args.config, **overrides)
        return args.func(cfg, args)
    except (ConfigError, IngestError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
