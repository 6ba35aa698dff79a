"""Command line front end.

Subcommands::

    gen-dataset   sample clearance labels over a map
    train         fit the residual MLP on a dataset file
    eval          metric-space accuracy of a checkpoint on a dataset
    simulate      closed-loop navigation run, trajectory CSV out
    plot          render a trajectory CSV (or eval heat map) as SVG

Every command that writes an output file also writes ``<out>.config.json``
holding the fully resolved configuration, so runs are reproducible from
their artifacts.  Errors exit with code 1 and a single ``category: message``
line on stderr; categories are config-error, io-error, data-error,
solver-error and internal-error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import dataset as ds
from . import maps, net, sim, svg
from .cbf import CbfConfig
from .control import Bounds, ControllerConfig, NonFiniteEvaluationError, \
    SolverOptions
from .geometry import DEFAULT_MAX_GAP
from .sim import Scenario, ScenarioFormatError


class _CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _write_config(out_path: str, payload: dict) -> None:
    with open(str(out_path) + ".config.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _add_gen(sub):
    p = sub.add_parser("gen-dataset", help="sample clearance labels")
    p.add_argument("--map", required=True,
                   help="builtin map name (toy, maze) or map file")
    p.add_argument("--shape", required=True,
                   help="builtin shape (rectangle, triangle, cross, point) "
                        "or shape file")
    p.add_argument("--locations", type=int, default=2500,
                   help="random planar locations (ignored with --grid)")
    p.add_argument("--thetas", type=int, default=20,
                   help="headings per location")
    p.add_argument("--grid", nargs=2, type=int, metavar=("NX", "NY"),
                   help="use an NX x NY location grid instead of random draws")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-gap", type=float, default=DEFAULT_MAX_GAP)
    p.add_argument("--out", required=True, help="dataset file to write")


def _add_train(sub):
    p = sub.add_parser("train", help="fit the clearance regressor")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--split-seed", type=int, default=17)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--skip-stride", type=int, default=2)
    p.add_argument("--skip-sources", default="",
                   help="comma list of source blocks (default: rule-based)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--patience", type=int, default=8)
    p.add_argument("--base-lr", type=float, default=1e-4)
    p.add_argument("--max-lr", type=float, default=1e-3)
    p.add_argument("--cycle-epochs", type=int, default=4)
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--eps-margin", type=float, default=ds.DEFAULT_EPS_MARGIN)


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the text report here")
    p.add_argument("--heatmap", help="write a per-location MSE SVG here")


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="closed-loop navigation run")
    p.add_argument("--scenario", required=True,
                   help="builtin scenario (maze-rectangle, maze-triangle, "
                        "maze-cross) or scenario file")
    p.add_argument("--model", required=True)
    p.add_argument("--map", help="override the scenario map")
    p.add_argument("--shape", help="override the scenario shape")
    p.add_argument("--out", required=True, help="trajectory CSV to write")
    p.add_argument("--summary", help="write the audit report here")
    p.add_argument("--max-gap", type=float, default=DEFAULT_MAX_GAP)
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--gammas", default="0.1,0.1",
                   help="comma list, one rate per barrier order")
    p.add_argument("--lam", type=float, default=1000.0)
    p.add_argument("--margin", type=float, default=0.0,
                   help="safety-ball radius shrink against prediction error")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--n-interp", type=int)


def _add_plot(sub):
    p = sub.add_parser("plot", help="render a trajectory CSV as SVG")
    p.add_argument("--log", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--scenario", help="scenario (for waypoint markers)")
    p.add_argument("--every", type=int, default=25)
    p.add_argument("--no-balls", action="store_true")
    p.add_argument("--max-gap", type=float, default=DEFAULT_MAX_GAP)
    p.add_argument("--out", required=True)


def _resolve_scenario_file(spec: str) -> sim.ScenarioFile:
    if spec in sim._BUILTIN_SCENARIOS:
        return sim.builtin_scenario(spec)
    return sim.load_scenario(spec)


def _cmd_gen(args) -> int:
    obs = maps.resolve_map(args.map, max_gap=args.max_gap)
    shape = maps.resolve_shape(args.shape, max_gap=args.max_gap)
    if args.grid:
        samples = ds.generate_grid(shape, obs, args.grid[0], args.grid[1],
                                   args.thetas)
    else:
        samples = ds.generate(shape, obs, args.locations, args.thetas,
                              args.seed)
    ds.save(args.out, samples)
    _write_config(args.out, {
        "command": "gen-dataset", "map": args.map, "shape": args.shape,
        "locations": args.locations, "thetas": args.thetas,
        "grid": args.grid, "seed": args.seed, "max_gap": args.max_gap,
        "n_samples": len(samples), "out": args.out,
    })
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    samples = ds.load(args.data)
    if not 0.0 < args.val_frac < 1.0:
        raise _CliError("config-error", "--val-frac must be in (0, 1)")
    val, train_set = ds.split(samples, args.val_frac, args.split_seed)
    stats = ds.fit_norm_stats(train_set, margin=args.eps_margin)
    xtr = ds.normalize_inputs(train_set.xytheta, stats)
    ytr = ds.normalize_target(train_set.d, stats)
    xva = ds.normalize_inputs(val.xytheta, stats)
    yva = ds.normalize_target(val.d, stats)
    sources = tuple(int(v) for v in args.skip_sources.split(",")) \
        if args.skip_sources else None
    cfg = net.MlpConfig(width=args.width, n_blocks=args.blocks,
                        skip_stride=args.skip_stride, skip_sources=sources,
                        seed=args.seed)
    model = net.MlpModel.init(cfg)
    tcfg = net.TrainConfig(batch_size=args.batch, max_epochs=args.epochs,
                           base_lr=args.base_lr, max_lr=args.max_lr,
                           cycle_epochs=args.cycle_epochs,
                           clip_norm=args.clip,
                           weight_decay=args.weight_decay,
                           patience=args.patience, seed=args.seed)
    history = net.train(model, (xtr, ytr), (xva, yva), tcfg)
    net.save_checkpoint(args.out, model, stats)
    best = min(history["val_mse"]) if history["val_mse"] else float("nan")
    _write_config(args.out, {
        "command": "train", "data": args.data, "out": args.out,
        "val_frac": args.val_frac, "split_seed": args.split_seed,
        "width": args.width, "blocks": args.blocks,
        "skip_stride": args.skip_stride,
        "skip_sources": list(cfg.resolved_skip_sources), "seed": args.seed,
        "epochs": args.epochs, "batch": args.batch,
        "patience": args.patience, "base_lr": args.base_lr,
        "max_lr": args.max_lr, "cycle_epochs": args.cycle_epochs,
        "clip": args.clip, "weight_decay": args.weight_decay,
        "eps_margin": args.eps_margin, "n_parameters": model.n_parameters(),
        "epochs_run": len(history["val_mse"]),
        "best_epoch": history["best_epoch"], "best_val_mse": best,
        "diverged": history["diverged"],
    })
    print(f"trained {model.n_parameters()} parameters, "
          f"{len(history['val_mse'])} epochs, best val mse {best:.6g}"
          + (" [diverged]" if history["diverged"] else ""))
    return 0


def _cmd_eval(args) -> int:
    model, stats = net.load_checkpoint(args.model)
    if stats is None:
        raise _CliError("data-error",
                        f"checkpoint {args.model} carries no normalisation "
                        f"stats; evaluation needs them")
    samples = ds.load(args.data)
    rep = net.evaluate(model, samples, stats)
    lines = [
        f"samples              {rep.n}",
        f"locations            {rep.locations.shape[0]}",
        f"metric mse           {rep.mse:.6e}",
        f"normalised mse       {rep.norm_mse:.6e}",
        f"median location mse  {rep.median_location_mse:.6e}",
        f"locations < 0.01     {rep.frac_locations_below(0.01) * 100:.1f}%",
    ]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_config(args.out, {
            "command": "eval", "model": args.model, "data": args.data,
            "out": args.out, "heatmap": args.heatmap,
        })
    if args.heatmap:
        locs = rep.locations
        n_loc = max(1, locs.shape[0])
        # cell size from the sampling density over the data's bounding box
        wx = locs[:, 0].max() - locs[:, 0].min() if n_loc > 1 else 1.0
        wy = locs[:, 1].max() - locs[:, 1].min() if n_loc > 1 else 1.0
        cell = max(np.sqrt(max(wx * wy, 1e-9) / n_loc), 1e-3)
        bounds = [locs[:, 0].min() - cell, locs[:, 0].max() + cell,
                  locs[:, 1].min() - cell, locs[:, 1].max() + cell]
        with open(args.heatmap, "w", encoding="utf-8") as fh:
            fh.write(svg.svg_heatmap(locs, rep.location_mse, bounds, cell))
    return 0


def _cmd_simulate(args) -> int:
    sf = _resolve_scenario_file(args.scenario)
    map_spec = args.map or sf.map_spec
    shape_spec = args.shape or sf.shape_spec
    if not map_spec or not shape_spec:
        raise _CliError("config-error",
                        "scenario gives no map/shape; pass --map/--shape")
    obs = maps.resolve_map(map_spec, max_gap=args.max_gap)
    shape = maps.resolve_shape(shape_spec, max_gap=args.max_gap)
    model, stats = net.load_checkpoint(args.model)
    if stats is None:
        raise _CliError("data-error",
                        "checkpoint carries no normalisation stats")
    scenario = Scenario(obstacles=obs, shape=shape, start=sf.start,
                        start_theta=sf.start_theta, waypoints=sf.waypoints,
                        max_steps=args.max_steps or sf.max_steps,
                        n_interp=args.n_interp or sf.n_interp,
                        stall_steps=sf.stall_steps, stall_tol=sf.stall_tol)
    gammas = tuple(float(v) for v in args.gammas.split(","))
    ctrl = ControllerConfig(dt=args.dt, cbf=CbfConfig(gammas=gammas),
                            lam=args.lam, margin=args.margin)
    log = sim.run(scenario, model, stats, ctrl)
    sim.write_csv(log, args.out)
    rep = sim.audit_report(log)
    _write_config(args.out, {
        "command": "simulate", "scenario": args.scenario, "map": map_spec,
        "shape": shape_spec, "model": args.model, "out": args.out,
        "dt": args.dt, "gammas": list(gammas), "lam": args.lam,
        "margin": args.margin,
        "max_gap": args.max_gap, "max_steps": scenario.max_steps,
        "n_interp": scenario.n_interp, "outcome": log.outcome,
        "steps": rep.n_steps,
    })
    text = sim.format_report(rep)
    print(text, end="")
    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            fh.write(text)
    if log.outcome != "reached":
        print(f"warning: outcome {log.outcome}", file=sys.stderr)
    return 0


def _cmd_plot(args) -> int:
    log = sim.read_csv(args.log)
    obs = maps.resolve_map(args.map, max_gap=args.max_gap)
    shape = maps.resolve_shape(args.shape, max_gap=args.max_gap)
    waypoints = None
    if args.scenario:
        waypoints = _resolve_scenario_file(args.scenario).waypoints
    out = svg.svg_trajectory(obs, shape, log, waypoints=waypoints,
                             every=args.every,
                             draw_balls=not args.no_balls)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(out)
    _write_config(args.out, {
        "command": "plot", "log": args.log, "map": args.map,
        "shape": args.shape, "scenario": args.scenario,
        "every": args.every, "out": args.out,
    })
    print(f"wrote {args.out}")
    return 0


_DISPATCH = {
    "gen-dataset": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "simulate": _cmd_simulate,
    "plot": _cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lsbnav",
        description="clearance-field learning and safe navigation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    _add_gen(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_simulate(sub)
    _add_plot(sub)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except _CliError as e:
        print(f"{e.category}: {e}", file=sys.stderr)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"io-error: {e}", file=sys.stderr)
    except (maps.MapFormatError, ScenarioFormatError) as e:
        print(f"config-error: {e}", file=sys.stderr)
    except (ds.DatasetFormatError, ds.DegenerateFeatureError,
            ds.NonPositiveShiftedError, net.VersionMismatchError,
            net.CorruptChecksumError) as e:
        print(f"data-error: {e}", file=sys.stderr)
    except NonFiniteEvaluationError as e:
        print(f"solver-error: {e}", file=sys.stderr)
    except ValueError as e:
        print(f"config-error: {e}", file=sys.stderr)
    except OSError as e:
        print(f"io-error: {e}", file=sys.stderr)
    except Exception as e:  # pragma: no cover - safety net
        print(f"internal-error: {type(e).__name__}: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
