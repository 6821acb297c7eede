"""Command-line workbench: ``hamrom <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import pipeline, plotting
from .benchmark import benchmark_methods
from .config import ConfigError, ExperimentConfig
from .evaluation import ErrorReport, reference_trajectory
from .foms import FamilyError, make_fom, params_from_vector, params_vector
from .integrators import IntegrationError, IntegratorConfig, integrate
from .linear import SnapshotSet, cotangent_lift
from .networks import ArchitectureError
from .storage import FormatError, read_checkpoint, read_snapshots, write_checkpoint, write_snapshots
from .training import ReducedNet, TrainingError, standardize_fit

log = logging.getLogger("hamrom")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
    for key in ("seed", "method", "k", "precision"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    return ExperimentConfig.from_dict(data)


def _out(args, default: str) -> str:
    path = args.out or default
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    snaps, meta = pipeline.generate(cfg)
    path = _out(args, "snapshots.bin")
    write_snapshots(path, snaps, meta)
    print(f"wrote {snaps.n_params} trajectories of {snaps.n_steps + 1} states to {path}")
    return EXIT_OK


def cmd_reduce(args) -> int:
    cfg = _load_config(args)
    snaps, header = read_snapshots(args.snapshots)
    n_train = int(header.get("meta", {}).get("n_train", snaps.n_params))
    if snaps.family != cfg.family or snaps.n != cfg.n:
        raise ConfigError(f"snapshots are {snaps.family} N={snaps.n}, config asks for {cfg.family} N={cfg.n}")

    def progress(k, row):
        print(f"step {k}: objective {row['objective']:.4e} val {row['val_objective']:.4e}", flush=True)

    ckpt, hist = pipeline.reduce(cfg, snaps, n_train, callback=progress if args.verbose else None)
    path = _out(args, f"{cfg.method}.ckpt")
    write_checkpoint(path, ckpt)
    print(f"wrote {cfg.method} checkpoint (K={ckpt.k}) to {path}")
    if hist is not None:
        hist.write_csv(path + ".history.csv")
        print(f"best validation objective {hist.best_val:.4e} at step {hist.best_step}")
    return EXIT_OK


def _params(family: str, values):
    try:
        return params_from_vector(family, values)
    except (FamilyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_predict(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    mu = _params(ckpt.family, args.mu)
    cfg_range = ckpt.meta.get("config", {})
    lo, hi = cfg_range.get("param_lo"), cfg_range.get("param_hi")
    if lo is not None:
        v = params_vector(mu)
        lo_, hi_ = np.minimum(lo, hi), np.maximum(lo, hi)
        if np.any(v < lo_) or np.any(v > hi_):
            log.warning("parameter %s lies outside the training range [%s, %s]", [float(x) for x in v], lo, hi)
    if args.steps is not None:
        n_steps = args.steps
    else:
        t_final = args.t_final if args.t_final is not None else cfg_range.get("t_final")
        if t_final is None:
            raise ConfigError("pass --t-final or --steps")
        n_steps = int(round(t_final / ckpt.dt))
    if n_steps < 1:
        raise ConfigError("the horizon must cover at least one step")
    traj = pipeline.predict(ckpt, mu, n_steps)
    if not np.all(np.isfinite(traj.states)):
        raise FloatingPointError("prediction produced non-finite values")
    path = _out(args, "prediction.bin")
    snaps = SnapshotSet(traj.states[None], [mu], ckpt.dt, ckpt.family)
    write_snapshots(path, snaps, {"method": ckpt.method, "k": ckpt.k, "checkpoint": os.path.basename(args.checkpoint)})
    print(f"wrote {n_steps + 1} decoded states to {path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    ckpt = read_checkpoint(args.checkpoint)
    report = pipeline.evaluate(ckpt, cfg.test_params(), cfg.n_steps)
    path = _out(args, "report.json")
    report.write_json(path)
    report.write_csv(os.path.splitext(path)[0] + ".csv")
    for r in report.results:
        print(f"{r.name}: l2_q {r.l2_q:.3e} l2_p {r.l2_p:.3e} (squared {r.err_q:.3e} / {r.err_p:.3e}) "
              f"drift {r.drift:.2e}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _load_config(args)
    name, mu = cfg.test_params()[0]
    fom = make_fom(cfg.family, cfg.n, mu)
    if not fom.separable:
        raise ConfigError("the timing benchmark covers the wave families only")
    y0 = fom.initial_state().y
    n_steps = cfg.benchmark_steps or cfg.n_steps
    basis = read_checkpoint(args.psd).basis() if args.psd else None
    if basis is None:
        ref = integrate(y0, n_steps, IntegratorConfig(cfg.dt), fom).states
        basis = cotangent_lift(SnapshotSet(ref[None], [mu], cfg.dt, cfg.family), cfg.k)
    if args.checkpoint:
        net = read_checkpoint(args.checkpoint).net()
        label = args.checkpoint
    else:
        cfg.method = "aehnn"
        prep = standardize_fit(y0[None, None], np.atleast_2d(params_vector(mu)))
        net = ReducedNet.create("ae_hnn", cfg.ae_architecture(), cfg.dyn_architecture(), cfg.dt, cfg.seed, prep)
        label = "untrained network"
    mu_std = net.prep.apply_mu(params_vector(mu))
    timings = benchmark_methods(fom, y0, cfg.dt, n_steps, basis, net, mu_std, cfg.precision, cfg.repetitions)
    path = _out(args, "timing.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "mean_s", "std_s", "repetitions"])
        w.writeheader()
        for t in timings:
            w.writerow(t.as_row())
    fom_t = timings[0].mean
    print(f"{cfg.family} N={cfg.n} K={cfg.k} {n_steps} steps, {cfg.precision}, parameter {name}, AE-HNN from {label}")
    for t in timings:
        print(f"  {t.name:7s} {1e3 * t.mean:9.2f} ms +- {1e3 * t.std:.2f}  ({fom_t / t.mean:.2f}x vs fom)")
    return EXIT_OK


def cmd_plot(args) -> int:
    outdir = plotting.ensure_dir(args.out or "plots")
    made = []
    if args.report:
        try:
            with open(args.report) as fh:
                rep = json.load(fh)
            ErrorReport.from_dict(rep)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{args.report}: malformed report ({exc})") from exc
        base = os.path.join(outdir, "hamiltonian")
        plotting.write_hamiltonian_csv(rep, base + ".csv")
        plotting.plot_hamiltonians(rep, base + ".svg")
        made += [base + ".csv", base + ".svg"]
    if args.history:
        svg = os.path.join(outdir, "history.svg")
        plotting.plot_history(args.history, svg)
        made.append(svg)
    if args.prediction:
        snaps, header = read_snapshots(args.prediction)
        pred = snaps.trajectories[0]
        mu = snaps.params[0]
        ref = reference_trajectory(snaps.family, snaps.n, mu, snaps.dt, snaps.n_steps).states
        n = snaps.n
        times = np.arange(snaps.n_steps + 1) * snaps.dt
        errs = {"q": plotting.error_vs_time(ref[:, :n], pred[:, :n]), "p": plotting.error_vs_time(ref[:, n:], pred[:, n:])}
        base = os.path.join(outdir, "error_time")
        plotting.write_error_time_csv(times, errs["q"], base + "_q.csv")
        plotting.write_error_time_csv(times, errs["p"], base + "_p.csv")
        plotting.plot_error_time(times, errs, base + ".svg")
        made += [base + "_q.csv", base + "_p.csv", base + ".svg"]
        x = make_fom(snaps.family, n, mu).grid.x
        for frac in (0.0, 0.5, 1.0):
            step = int(round(frac * snaps.n_steps))
            fields = {"q_ref": ref[step, :n], "q_pred": pred[step, :n]}
            stem = os.path.join(outdir, f"solution_step{step}")
            plotting.write_solution_csv(x, fields, stem + ".csv")
            plotting.plot_solution(x, fields, stem + ".svg", f"t = {step * snaps.dt:.4g}")
            made += [stem + ".csv", stem + ".svg"]
    if not made:
        raise ConfigError("nothing to plot: pass --report, --history or --prediction")
    for m in made:
        print(m)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hamrom", description="Reduced models for parameterized Hamiltonian systems.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="experiment JSON file (family defaults when omitted)")
            sp.add_argument("--seed", type=int)
            sp.add_argument("--method", choices=("psd", "pod", "aehnn", "aeflow"))
            sp.add_argument("--k", type=int, help="reduced dimension is 2K")
            sp.add_argument("--precision", choices=("f32", "f64"))
        sp.add_argument("--out", help="output path")

    sp = sub.add_parser("generate", help="integrate the full model and store snapshots")
    common(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("reduce", help="build a basis or train a network")
    common(sp)
    sp.add_argument("--snapshots", required=True)
    sp.set_defaults(func=cmd_reduce)

    sp = sub.add_parser("predict", help="roll a reduced model and decode")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--mu", type=float, nargs="+", required=True, help="parameter vector")
    sp.add_argument("--t-final", type=float, help="horizon (defaults to the training horizon)")
    sp.add_argument("--steps", type=int, help="number of steps (overrides --t-final)")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", help="errors and Hamiltonian traces on the test parameters")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("benchmark", help="time full and reduced rollouts")
    common(sp)
    sp.add_argument("--checkpoint", help="AE-HNN checkpoint (an untrained network is timed otherwise)")
    sp.add_argument("--psd", help="PSD checkpoint (built from one trajectory otherwise)")
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("plot", help="CSV tables and SVG figures")
    common(sp, config=False)
    sp.add_argument("--report")
    sp.add_argument("--history")
    sp.add_argument("--prediction")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ArchitectureError, FamilyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, IntegrationError, TrainingError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
