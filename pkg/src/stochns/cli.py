"""Command-line interface: ``stochns <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import glob
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, load_config
from .csvio import (DIAGNOSTICS_SCHEMA, FIT_SCHEMA, INFSUP_SCHEMA, RATES_SCHEMA, STOPPING_SCHEMA,
                    TAIL_SCHEMA, emit_csv, read_csv)
from .experiments import (ExperimentConfigError, LadderSpec, calibrate_xi, fit_stability,
                          probability_tail_report, rate_study)
from .fem import FemSystem, SaddleSolveError, infsup_constant
from .manifest import write_manifest
from .mesh import build_mesh
from .noise import NoiseConfigError, build_noise, sample_path, sample_seed
from .plot import emit_plot
from .schemes import StepError, TimeGrid, run_trajectory
from .stopping import stopping_decay_study

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _out_dir(args, cfg):
    path = args.out or cfg["output.dir"]
    os.makedirs(path, exist_ok=True)
    return path


def _seed(args, cfg):
    return cfg["run.seed"] if args.seed is None else args.seed


def _noise(cfg):
    return build_noise(cfg["noise.j_max"], cfg["noise.decay_r"], cfg["noise.scale"])


# ------------------------------------------------------------------ subcommands
def cmd_mesh_info(args, cfg):
    n = args.n or cfg["run.mesh_n"]
    mesh = build_mesh(n)
    fem = FemSystem(mesh)
    print(f"n = {n}  h = {mesh.h:.6g}")
    print(f"vertices {mesh.n_vertices}  triangles {mesh.n_triangles}  edges {mesh.n_edges}")
    print(f"velocity dofs {fem.n_vel}  pressure dofs {fem.n_pressure}")
    if args.out:
        out = _out_dir(args, cfg)
        with open(os.path.join(out, f"mesh_{n}.txt"), "w", encoding="utf-8") as fh:
            fh.write(mesh.dump())
    return EXIT_OK


def cmd_infsup(args, cfg):
    pair = tuple(int(k) for k in args.pair.split(","))
    rows = []
    for n in args.n or [4, 8, 16]:
        fem = FemSystem(build_mesh(n), degree_pair=pair)
        beta = infsup_constant(fem)
        rows.append({"n": n, "h": fem.mesh.h, "pair": f"P{pair[0]}/P{pair[1]}", "beta": beta})
        print(f"n = {n:3d}  h = {fem.mesh.h:.5f}  beta = {beta:.6f}")
    if args.out:
        emit_csv(os.path.join(_out_dir(args, cfg), "infsup.csv"), rows, INFSUP_SCHEMA)
    return EXIT_OK


def _simulate_one(job):
    cfg_values, index, master = job
    from .config import RunConfig
    cfg = RunConfig(cfg_values)
    with threadpool_limits(limits=1):
        fem = FemSystem(build_mesh(cfg["run.mesh_n"]))
        noise = _noise(cfg)
        grid = TimeGrid(cfg["run.T"], cfg["run.M"])
        seed = sample_seed(master, index)
        path = sample_path(noise, grid.M, grid.T, seed)
        tr = run_trajectory(fem, noise, grid, path=path, formulation=cfg["run.formulation"],
                            mu=cfg["run.mu"], convection=cfg["run.convection"] == "on")
        t = grid.times
        rows = [dict(m=s.m, t=t[s.m], **{k: s.diagnostics[k] for k in DIAGNOSTICS_SCHEMA[2:]})
                for s in tr]
    return rows, seed, path.checksum()


def _map(fn, jobs, threads):
    if threads <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, jobs))


def cmd_simulate(args, cfg):
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    master = _seed(args, cfg)
    jobs = [(cfg.values, i, master) for i in range(cfg["run.samples"])]
    results = _map(_simulate_one, jobs, args.threads)
    files = []
    for i, (rows, seed, _) in enumerate(results):
        path = os.path.join(out, f"diagnostics_{i:04d}.csv")
        emit_csv(path, rows, DIAGNOSTICS_SCHEMA)
        files.append(path)
        last = rows[-1]
        print(f"sample {i}: seed {seed}  final energy {last['energy']:.6g}  "
              f"max identity residual {max(r['energy_identity_residual'] for r in rows):.3g}")
    write_manifest(os.path.join(out, "manifest.json"), command="simulate", config=cfg,
                   version=__version__, seeds=[r[1] for r in results],
                   checksums=[r[2] for r in results], outputs=files,
                   wall_clock=time.perf_counter() - t0)
    return EXIT_OK


def ladder_from_config(cfg, mode=None, formulation=None, seed=None):
    lad = cfg.ladder() if mode is None else cfg.replace(ladder__mode=mode).ladder()
    return LadderSpec(
        mode=mode or cfg["ladder.mode"],
        mesh_levels=lad["mesh_levels"], time_levels=lad["time_levels"],
        ref_n=lad["ref_n"], ref_M=lad["ref_M"], samples=lad["samples"],
        master_seed=cfg["run.seed"] if seed is None else seed,
        T=cfg["run.T"], mu=cfg["run.mu"],
        formulation=formulation or cfg["ladder.formulation"],
        j_max=cfg["noise.j_max"], decay_r=cfg["noise.decay_r"], noise_scale=cfg["noise.scale"],
    )


def cmd_convergence(args, cfg):
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    spec = ladder_from_config(cfg, args.mode, args.formulation, args.seed)
    study = rate_study(spec, threads=args.threads)
    rates = emit_csv(os.path.join(out, "rates.csv"), study.rows(), RATES_SCHEMA)
    fit = emit_csv(os.path.join(out, "fit.csv"), study.fit_rows(), FIT_SCHEMA)
    err_rows = [{"sample": i, "seed": s, **{f"E{k}": float(e) for k, e in enumerate(row)}}
                for i, (s, row) in enumerate(zip(study.seeds, study.error_matrix()))]
    errors = emit_csv(os.path.join(out, "errors.csv"), err_rows,
                      ("sample", "seed") + tuple(f"E{k}" for k in range(len(study.records))))
    alpha = cfg["tail.alpha"]
    xi = cfg["tail.xi"]
    if xi == "auto":
        xi = calibrate_xi(study.records, spec.mode, alpha)
    tail = probability_tail_report(study.records, xi, alpha, spec.mode)
    tail_csv = emit_csv(os.path.join(out, "tail.csv"), tail.rows(), TAIL_SCHEMA)
    for r in study.rows():
        print(f"level {r['level']}: tau {r['tau']:.5g}  h {r['h']:.5g}  mean E {r['mean_E']:.4g}"
              f"  q90 {r['q90']:.4g}")
    for stat, f in study.fits.items():
        print(f"{stat}: slope {f.slope:.3f}  alpha {f.alpha:.3f}  r2 {f.r2:.3f}  "
              f"drop-coarsest shift {fit_stability(study, stat):.3f}")
    print(f"tail (alpha {alpha}, xi {xi:.4g}): {np.round(tail.frequency, 3).tolist()}")
    write_manifest(os.path.join(out, "manifest.json"), command="convergence", config=cfg,
                   version=__version__, seeds=study.seeds, checksums=study.checksums,
                   outputs=[rates, fit, errors, tail_csv], wall_clock=time.perf_counter() - t0,
                   extra={"ladder": {"mode": spec.mode, "formulation": spec.formulation,
                                     "levels": spec.levels, "ref": [spec.ref_n, spec.ref_M],
                                     "samples": spec.samples}})
    return EXIT_OK


def cmd_stokes_rate(args, cfg):
    args.formulation = "stokes"
    return cmd_convergence(args, cfg)


def _read_diagnostics(paths):
    trajs, tau = [], None
    for p in paths:
        rows = read_csv(p, DIAGNOSTICS_SCHEMA[:2])
        if len(rows) < 2:
            raise ValueError(f"{p}: need at least two steps")
        d = {k: np.array([float(r[k]) for r in rows]) for k in DIAGNOSTICS_SCHEMA}
        step = d["t"][1] - d["t"][0]
        if tau is not None and not np.isclose(step, tau, rtol=1e-12, atol=0):
            raise ValueError(f"{p}: time step differs from the other files")
        tau = step
        trajs.append(d)
    return trajs, tau


def cmd_stopping_stats(args, cfg):
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    paths = []
    for p in args.inputs:
        paths.extend(sorted(glob.glob(os.path.join(p, "diagnostics_*.csv")))
                     if os.path.isdir(p) else [p])
    seeds, checksums = [], []
    if paths:
        trajs, tau = _read_diagnostics(paths)
    else:
        sim_cfg = cfg.replace(run__formulation="u")
        master = _seed(args, cfg)
        jobs = [(sim_cfg.values, i, master) for i in range(cfg["stopping.samples"])]
        results = _map(_simulate_one, jobs, args.threads)
        trajs = [{k: np.array([r[k] for r in rows]) for k in DIAGNOSTICS_SCHEMA}
                 for rows, _, _ in results]
        seeds = [r[1] for r in results]
        checksums = [r[2] for r in results]
        tau = cfg.tau
    power = cfg["stopping.K_power"]
    table = stopping_decay_study(cfg["stopping.R"], trajs, tau, clause=cfg["stopping.clause"],
                                 K_of_R=lambda R: R ** power, min_samples=1)
    csv_path = emit_csv(os.path.join(out, "stopping.csv"), table.rows(), STOPPING_SCHEMA)
    for r in table.rows():
        print(f"R {r['R']:.4g}: P = {r['frequency']:.3f}  [{r['ci_low']:.3f}, {r['ci_high']:.3f}]")
    print(f"monotone: {table.monotone}  log-log slope: {table.slope:.3f}")
    write_manifest(os.path.join(out, "manifest.json"), command="stopping-stats", config=cfg,
                   version=__version__, seeds=seeds, checksums=checksums, outputs=[csv_path],
                   wall_clock=time.perf_counter() - t0, extra={"inputs": paths})
    return EXIT_OK


def cmd_plot(args, cfg):
    out = _out_dir(args, cfg)
    rates = args.rates or os.path.join(out, "rates.csv")
    svg = emit_plot(rates, os.path.join(out, "rates.svg"))
    print(svg)
    return EXIT_OK


# ------------------------------------------------------------------ entry point
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (section.key = value lines)")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for samples")

    p = _Parser(prog="stochns", description="Stochastic Navier-Stokes finite element harness")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("mesh-info", parents=[common], help="mesh and dof counts")
    s.add_argument("--n", type=int)
    s.set_defaults(func=cmd_mesh_info)

    s = sub.add_parser("infsup", parents=[common], help="discrete inf-sup constants")
    s.add_argument("--n", type=int, nargs="+")
    s.add_argument("--pair", default="2,1", help="velocity,pressure degrees")
    s.set_defaults(func=cmd_infsup)

    s = sub.add_parser("simulate", parents=[common], help="run trajectories, write diagnostics")
    s.set_defaults(func=cmd_simulate)

    for name, func, helptext in (
            ("convergence", cmd_convergence, "self-convergence rate study"),
            ("stokes-rate", cmd_stokes_rate, "rate study with convection switched off")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--mode", choices=("time", "space", "joint"))
        if name == "convergence":
            s.add_argument("--formulation", choices=("u", "y", "stokes"))
        s.set_defaults(func=func)

    s = sub.add_parser("stopping-stats", parents=[common], help="stopping-time decay table")
    s.add_argument("inputs", nargs="*", help="diagnostics CSVs or directories")
    s.set_defaults(func=cmd_stopping_stats)

    s = sub.add_parser("plot", parents=[common], help="log-log SVG from rates.csv")
    s.add_argument("--rates", help="rates.csv (default: <out>/rates.csv)")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        return args.func(args, cfg)
    except (ConfigError, ExperimentConfigError, NoiseConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepError, SaddleSolveError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
