"""Command-line entry point: ``dkfkit <subcommand> [options]``."""
import argparse
import dataclasses
import sys

import numpy as np

from ..dkf import dkf_filter
from ..errors import DkfError
from ..learn import SupervisedSet, fit_state_dynamics, load_model, save_model
from .config import load_config
from .experiments import (
    CONSISTENCY_FAMILIES,
    ConsistencyConfig,
    build_context,
    discriminative_model,
    fit_learner,
    read_trajectory_csv,
    run_consistency,
    run_experiment,
    run_robustness,
    write_belief_csv,
    write_consistency_csv,
    write_report_csv,
    write_robustness_csv,
    write_trajectory_csv,
)


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _parser():
    def common_flags(suppress):
        # subcommand copies must not clobber values given before the subcommand
        c = argparse.ArgumentParser(add_help=False)
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        c.add_argument("--seed", type=int, default=d(None), help="seed (overrides the config's seed list)")
        c.add_argument("--config", default=d(None), help="experiment config (YAML)")
        c.add_argument("--out", default=d(None), help="output path; '-' or omitted writes to stdout")
        c.add_argument("--threads", type=int, default=d(1), help="worker threads for trials")
        return c

    top, common = common_flags(False), common_flags(True)

    p = argparse.ArgumentParser(prog="dkfkit", description="Discriminative Kalman filter benchmarks",
                                parents=[top])
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("simulate", parents=[common], help="simulate a test trajectory")
    s.add_argument("--T", type=int, default=None, help="steps (default: the config's T)")
    s.add_argument("--split", choices=("test", "train"), default="test")

    s = sub.add_parser("fit", parents=[common], help="fit a learner on a trajectory CSV")
    s.add_argument("trajectory")
    s.add_argument("--learner", default=None, help="learner kind (default: the config's learner)")

    s = sub.add_parser("run", parents=[common], help="filter a trajectory with a fitted model")
    s.add_argument("trajectory")
    s.add_argument("--model", required=True, help="model file from 'fit'")
    s.add_argument("--filter", default="dkf", choices=("dkf", "robust-dkf", "unfiltered"))

    sub.add_parser("bench", parents=[common], help="run an experiment config")

    s = sub.add_parser("robustness", parents=[common], help="feature-offset sweep")
    s.add_argument("--offsets", type=_floats, default=(0.0, 1.0, 2.0, 3.0, 5.0))
    s.add_argument("--saturation", type=float, default=None, help="also run with features clipped at this z-score")

    s = sub.add_parser("consistency", parents=[common], help="TV distance to the grid posterior versus n")
    s.add_argument("--family", choices=CONSISTENCY_FAMILIES, default="mixture")
    s.add_argument("--n", type=_ints, default=(4, 16, 64, 256))
    s.add_argument("--repetitions", type=int, default=20)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--grid", type=int, default=2001)
    return p


def _emit(text, path):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _config(args):
    if args.config is None:
        raise DkfError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    return cfg


def _simulate(args):
    cfg = _config(args)
    if args.T is not None:
        if args.T < 1:
            raise DkfError("--T must be >= 1")
        cfg = dataclasses.replace(cfg, T=args.T)
    if args.split == "train" and cfg.train_T < 1:
        raise DkfError("the config has no training split (train_T = 0)")
    ctx = build_context(dataclasses.replace(cfg, learner={"kind": "exact"}, filters=("kf",)), cfg.seeds[0])
    _emit(write_trajectory_csv(ctx.test if args.split == "test" else ctx.train), args.out)
    return 0


def _read_traj(path):
    with open(path, encoding="utf-8") as fh:
        return read_trajectory_csv(fh.read(), source=path)


def _fit(args):
    traj = _read_traj(args.trajectory)
    spec = {"kind": args.learner} if args.learner else None
    if spec is None:
        spec = _config(args).learner if args.config else {"kind": "mlp"}
    rng = np.random.default_rng(np.random.SeedSequence([args.seed or 0]))
    bundle = fit_learner(spec, SupervisedSet(traj.observations, traj.states), rng)
    bundle["state"] = fit_state_dynamics(traj.states)
    if args.out is None or args.out == "-":
        raise DkfError("fit needs --out <model file>")
    save_model(bundle, args.out)
    return 0


def _run(args):
    traj = _read_traj(args.trajectory)
    bundle = load_model(args.model)
    if not {"f", "q", "state"} <= set(bundle):
        raise DkfError(f"{args.model}: expected a model file written by 'fit'")
    dm = discriminative_model(bundle)
    X = traj.observations
    if args.filter == "unfiltered":
        F, Qs = dm.evaluate(X)
        text = write_belief_csv(F, Qs, np.zeros(len(X), dtype=bool))
    else:
        r = dkf_filter(X, bundle["state"], dm, variant="exact" if args.filter == "dkf" else "robust")
        text = write_belief_csv(r.means, r.covs, r.fallback)
    _emit(text, args.out)
    return 0


def _bench(args):
    cfg = _config(args)
    report = run_experiment(cfg, threads=args.threads)
    _emit(write_report_csv(report), args.out if args.out is not None else cfg.output)
    for r in report.failed:
        print(f"failed: {r.filter} seed {r.seed}: {r.error}", file=sys.stderr)
    return 1 if report.failed else 0


def _robustness(args):
    cfg = _config(args)
    rows = run_robustness(cfg, args.offsets, args.saturation, threads=args.threads)
    _emit(write_robustness_csv(rows), args.out)
    failed = [r for r in rows if r.failure]
    for r in failed:
        print(f"failed: {r.filter} seed {r.seed} offset {r.offset}: {r.failure}", file=sys.stderr)
    return 1 if failed else 0


def _consistency(args):
    cc = ConsistencyConfig(family=args.family, n_list=args.n, repetitions=args.repetitions,
                           steps=args.steps, grid_size=args.grid,
                           master_seed=0 if args.seed is None else args.seed)
    tv = run_consistency(cc, threads=args.threads)
    _emit(write_consistency_csv(cc, tv), args.out)
    return 0


_COMMANDS = {
    "simulate": _simulate,
    "fit": _fit,
    "run": _run,
    "bench": _bench,
    "robustness": _robustness,
    "consistency": _consistency,
}


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        parser.print_usage(sys.stderr)
        print("dkfkit: error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except (DkfError, OSError, ValueError) as exc:
        print(f"dkfkit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
