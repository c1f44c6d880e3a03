"""Command-line surface for running and inspecting diffusion experiments.

Subcommands: simulate-forward, train, sample, evaluate, decay-check,
pipeline. Every command takes --config pointing at a TOML run file; --seed
and --out override the file's run table. Exit codes: 0 success, 2 config
error, 3 numerical failure, 4 projection failure budget exceeded.
"""

import argparse
import os
import sys

import numpy as np

from .config import ConfigError, load_config
from .dynamics import NonFiniteState, dump_trajectory, trajectory_to_csv, \
    sample_backward, simulate_forward
from .geometry import ProjectionFailure
from .pipeline import (FailureBudgetExceeded, _read_csv, _stage_rngs,
                       _write_csv, _write_json, build_dataset, build_prior,
                       build_task, decay_check, fit_score, rerun_evaluation,
                       run_pipeline)
from .score import load_score_net
from .zoo import prior_uniform

# sampling aborts with exit code 4 when more than this fraction of the
# requested backward chains fail
FAILURE_BUDGET = 0.5

SLOW_SON_ORDER = 6  # SO(n) with n >= 6 needs --slow


def _load(args):
    overrides = {}
    if args.seed is not None:
        overrides["run.seed"] = args.seed
    if args.out is not None:
        overrides["run.out_dir"] = args.out
    cfg = load_config(args.config, overrides)
    if (cfg.task_kind == "son" and cfg.task_params["n"] >= SLOW_SON_ORDER
            and not args.slow):
        raise ConfigError([f"task.n: SO({cfg.task_params['n']}) is a slow "
                           "task; pass --slow to enable it"])
    return cfg


def _check_budget(failures: int, requested: int):
    if failures > FAILURE_BUDGET * requested:
        raise FailureBudgetExceeded(
            f"{failures}/{requested} chains failed, over the "
            f"{FAILURE_BUDGET:.0%} budget")


def cmd_simulate_forward(args) -> int:
    cfg = _load(args)
    task = build_task(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    x0 = prior_uniform(task, rng, 1)[0]
    traj = simulate_forward(task.cs, cfg.sampler, cfg.sched, x0, rng,
                            grad_f=task.grad_f)
    bin_path = os.path.join(cfg.out_dir, "forward_traj.bin")
    csv_path = os.path.join(cfg.out_dir, "forward_traj.csv")
    dump_trajectory(traj, bin_path)
    trajectory_to_csv(traj, csv_path)
    print(f"simulated {cfg.sched.N} steps of {cfg.sampler.mode}; "
          f"terminal |h|_inf = {traj.h_inf[-1]:.3e} -> {bin_path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    task = build_task(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    rng_data, _, _, _ = _stage_rngs(cfg.seed)
    dataset = build_dataset(cfg, task, rng_data)
    _write_csv(os.path.join(cfg.out_dir, "dataset.csv"), dataset)
    model, reports, paths = fit_score(cfg, task, dataset, cfg.out_dir)
    final = reports[-1].loss if reports else float("nan")
    print(f"trained {len(reports)} epochs (final loss {final:.6g}) "
          f"-> {paths['checkpoint']}")
    return 0


def cmd_sample(args) -> int:
    cfg = _load(args)
    task = build_task(cfg)
    checkpoint = args.checkpoint or os.path.join(cfg.out_dir, "score_net.bin")
    model = load_score_net(checkpoint)
    dataset = None
    if cfg.prior == "empirical_terminal":
        dataset_path = os.path.join(cfg.out_dir, "dataset.csv")
        if os.path.exists(dataset_path):
            dataset = _read_csv(dataset_path)
        else:
            dataset = build_dataset(cfg, task, _stage_rngs(cfg.seed)[0])
    _, _, rng_prior, rng_sample = _stage_rngs(cfg.seed)
    prior = build_prior(cfg, task, dataset, rng_prior)
    samples, failures = sample_backward(task.cs, cfg.sampler, cfg.sched,
                                        model, prior, cfg.n_samples,
                                        rng_sample, grad_f=task.grad_f,
                                        threads=args.threads)
    _check_budget(failures, cfg.n_samples)
    out_path = os.path.join(cfg.out_dir, "samples.csv")
    _write_csv(out_path, samples)
    print(f"generated {len(samples)} samples ({failures} failed chains) "
          f"-> {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    res = rerun_evaluation(cfg)
    out_path = os.path.join(cfg.out_dir, "eval_report.json")
    _write_json(out_path, res["payload"])
    r = res["report"]
    print(f"jsd = {r.jsd:.4f}  avg|h| = {r.avg_abs_h:.3e}  "
          f"avg g+ = {r.avg_g_plus:.3e} -> {out_path}")
    return 0


def cmd_decay_check(args) -> int:
    cfg = _load(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    res = decay_check(cfg)
    out_path = os.path.join(cfg.out_dir, "decay_check.json")
    _write_json(out_path, res)
    print(f"decay check: {res['verdict']} "
          f"(max relative error {res['max_rel_error']:.4f} over "
          f"{res['steps_checked']} checks) -> {out_path}")
    return 0 if res["verdict"] == "pass" else 3


def cmd_pipeline(args) -> int:
    cfg = _load(args)
    res = run_pipeline(cfg, dry_run=args.dry_run, threads=args.threads)
    if args.dry_run:
        print(f"config ok -> {res['paths']['resolved_config']}")
        return 0
    _check_budget(res["failures"], cfg.n_samples)
    m = res["meta"]["metrics"]
    print(f"pipeline done: jsd = {m['jsd']:.4f}  avg|h| = "
          f"{m['avg_abs_h']:.3e}  avg g+ = {m['avg_g_plus']:.3e}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run config (TOML)")
    common.add_argument("--seed", type=int, default=None,
                        help="override run.seed")
    common.add_argument("--out", default=None, help="override run.out_dir")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for backward sampling")
    common.add_argument("--slow", action="store_true",
                        help="enable slow tasks (large rotation groups)")

    parser = argparse.ArgumentParser(
        prog="landing-diffusion",
        description="Constrained diffusion via landing dynamics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-forward", parents=[common],
                       help="run one noising trajectory, dump it to disk")
    p.set_defaults(func=cmd_simulate_forward)

    p = sub.add_parser("train", parents=[common],
                       help="generate a dataset and fit the score network")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[common],
                       help="draw samples from a trained checkpoint")
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint path (default: <out>/score_net.bin)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", parents=[common],
                       help="recompute metrics from saved samples")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("decay-check", parents=[common],
                       help="verify forward violation decay against the "
                            "closed-form rate")
    p.set_defaults(func=cmd_decay_check)

    p = sub.add_parser("pipeline", parents=[common],
                       help="dataset -> train -> sample -> evaluate")
    p.add_argument("--dry-run", action="store_true",
                   help="validate the config and write the resolved echo "
                        "without executing")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(err, file=sys.stderr)
        return 2
    except (ProjectionFailure, FailureBudgetExceeded) as err:
        print(f"projection failure: {err}", file=sys.stderr)
        return 4
    except (NonFiniteState, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
