"""End-to-end run pipeline: dataset -> training -> sampling -> evaluation.

Artifacts in the run directory:
  resolved_config.json   every knob with its effective value (also on dry runs)
  dataset.csv            training points, one row per sample
  score_net.bin          trained network checkpoint
  samples.csv            generated samples
  eval_report.json       JSD, violation statistics, histograms
  run_meta.json          config echo plus stage summaries

Artifacts are pure functions of the config: no timestamps, fixed float
formatting, sorted JSON keys. Running the same config twice produces
byte-identical files.
"""

import dataclasses
import json
import os

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .dynamics import (LANDING_MODES, cumulative_S, decay_oracle,
                       sample_backward, simulate_forward)
from .metrics import evaluate_samples
from .score import make_score_net, save_score_net
from .training import train
from .zoo import (TaskSpec, dataset_son_mixture, dataset_vmf_mixture,
                  make_disk, make_sphere, make_sphere_cap, make_son,
                  prior_empirical_terminal, prior_uniform)


class FailureBudgetExceeded(RuntimeError):
    """Too many chains failed to produce a usable sample set."""


def build_task(cfg: RunConfig) -> TaskSpec:
    kind, p = cfg.task_kind, cfg.task_params
    if kind == "sphere":
        return make_sphere(p["d"])
    if kind == "disk":
        return make_disk(p["d"], p["epsilon"])
    if kind == "cap":
        return make_sphere_cap(p["zmax"], epsilon=p["epsilon"])
    if kind == "son":
        return make_son(p["n"])
    raise ConfigError([f"task.kind: unknown kind {kind!r}"])


def build_dataset(cfg: RunConfig, task: TaskSpec, rng, n=None) -> np.ndarray:
    if cfg.dataset_kind is None:
        raise ConfigError(["dataset: section required for this command"])
    p = cfg.dataset_params
    n = int(n if n is not None else p["n"])
    if cfg.dataset_kind == "vmf_mixture":
        if any(len(m) != task.cs.dim for m in p["modes"]):
            raise ConfigError(["dataset.modes: direction length must equal "
                               f"the task dimension {task.cs.dim}"])
        modes = [(np.asarray(mu, dtype=float), float(kap))
                 for mu, kap in zip(p["modes"], p["kappas"])]
        return dataset_vmf_mixture(task, modes, p["weights"], n, rng)
    if cfg.task_kind != "son":
        raise ConfigError(["dataset.kind: son_mixture needs task.kind = 'son'"])
    # mixture modes are pinned by the run seed so the held-out reference
    # (drawn from an independent stage rng) shares them with the dataset
    return dataset_son_mixture(cfg.task_params["n"], p["n_modes"],
                               p["concentration"], n, rng,
                               mode_seed=cfg.seed)


def build_prior(cfg: RunConfig, task: TaskSpec, dataset, rng):
    """Per-chain prior sampler closure for backward sampling."""
    if cfg.prior == "uniform":
        return lambda r: prior_uniform(task, r, 1)[0]
    if dataset is None:
        raise ConfigError(["sampling.prior: empirical_terminal needs a dataset"])
    return prior_empirical_terminal(task.cs, cfg.sampler, cfg.sched, dataset,
                                    rng, pool_size=cfg.pool_size)


def _write_csv(path, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    header = ",".join(f"x{i}" for i in range(X.shape[1]))
    np.savetxt(path, X, delimiter=",", header=header, comments="",
               fmt="%.17g")


def _read_csv(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _stage_rngs(seed: int):
    ss = np.random.SeedSequence(seed)
    kids = ss.spawn(4)
    return tuple(np.random.default_rng(k) for k in kids)


def fit_score(cfg: RunConfig, task: TaskSpec, dataset, out_dir):
    """Training stage: build the net, fit it, save checkpoint and log."""
    model = make_score_net(task.cs.dim, cfg.sched.N, hidden=cfg.hidden,
                           momentum_mode=cfg.momentum_mode,
                           embed_width=cfg.embed_width,
                           conditioning=cfg.conditioning, sched=cfg.sched,
                           seed=cfg.seed)
    paths = {"checkpoint": os.path.join(out_dir, "score_net.bin"),
             "training_log": os.path.join(out_dir, "training_log.jsonl")}
    train_config = dataclasses.replace(
        cfg.train, log_path=paths["training_log"],
        checkpoint_path=paths["checkpoint"])
    model, reports = train(task.cs, cfg.sampler, cfg.sched, train_config,
                           dataset, model, grad_f=task.grad_f)
    save_score_net(model, paths["checkpoint"])
    return model, reports, paths


def run_pipeline(config, dry_run: bool = False, threads: int = 1) -> dict:
    """Execute dataset generation, training, sampling, and evaluation.

    config is a RunConfig or a path to a TOML file. Returns a dict of
    artifact paths plus headline metrics. dry_run validates the config,
    writes the resolved echo, and executes nothing else.
    """
    cfg = config if isinstance(config, RunConfig) else load_config(config)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    paths = {"resolved_config": os.path.join(out, "resolved_config.json")}
    _write_json(paths["resolved_config"], cfg.resolved)
    if dry_run:
        return {"paths": paths, "dry_run": True}

    task = build_task(cfg)
    rng_data, rng_ref, rng_prior, rng_sample = _stage_rngs(cfg.seed)

    # stage 1: dataset
    dataset = build_dataset(cfg, task, rng_data)
    paths["dataset"] = os.path.join(out, "dataset.csv")
    _write_csv(paths["dataset"], dataset)

    # stage 2: training (forward simulation happens inside, every l_f epochs)
    model, reports, stage_paths = fit_score(cfg, task, dataset, out)
    paths.update(stage_paths)

    # stage 3: backward sampling
    prior = build_prior(cfg, task, dataset, rng_prior)
    samples, failures = sample_backward(task.cs, cfg.sampler, cfg.sched,
                                        model, prior, cfg.n_samples,
                                        rng_sample, grad_f=task.grad_f,
                                        threads=threads)
    if len(samples) == 0:
        raise FailureBudgetExceeded("every backward chain failed; nothing to "
                                    "evaluate")
    paths["samples"] = os.path.join(out, "samples.csv")
    _write_csv(paths["samples"], samples)

    # stage 4: evaluation against held-out reference draws
    if cfg.reference_n > 0:
        reference = build_dataset(cfg, task, rng_ref, n=cfg.reference_n)
    else:
        reference = dataset
    report = evaluate_samples(task.cs, samples, reference, recipe=cfg.recipe,
                              powers=cfg.powers, failures=failures,
                              bins=cfg.bins)
    paths["eval_report"] = os.path.join(out, "eval_report.json")
    _write_json(paths["eval_report"], report.to_dict())

    meta = {
        "config": cfg.resolved,
        "model": {"n_params": model.n_params, "widths": list(model.widths)},
        "training": {
            "epochs_run": len(reports),
            "final_loss": reports[-1].loss if reports else None,
            "final_grad_norm": reports[-1].grad_norm if reports else None,
        },
        "sampling": {"n_generated": int(len(samples)),
                     "n_requested": cfg.n_samples,
                     "failures": int(failures)},
        "metrics": {"jsd": report.jsd, "avg_abs_h": report.avg_abs_h,
                    "avg_g_plus": report.avg_g_plus},
        "artifacts": {k: os.path.basename(v) for k, v in paths.items()},
    }
    paths["run_meta"] = os.path.join(out, "run_meta.json")
    _write_json(paths["run_meta"], meta)

    return {"paths": paths, "report": report, "meta": meta,
            "failures": failures, "n_generated": int(len(samples))}


def rerun_evaluation(config, samples_path=None, reference_path=None) -> dict:
    """Recompute the EvalReport from saved sample files.

    With default paths this reproduces eval_report.json from a finished run
    byte-for-byte (evaluation is deterministic).
    """
    cfg = config if isinstance(config, RunConfig) else load_config(config)
    task = build_task(cfg)
    out = cfg.out_dir
    samples = _read_csv(samples_path or os.path.join(out, "samples.csv"))
    if reference_path is None:
        if cfg.reference_n > 0:
            _, rng_ref, _, _ = _stage_rngs(cfg.seed)
            reference = build_dataset(cfg, task, rng_ref, n=cfg.reference_n)
        else:
            reference = _read_csv(os.path.join(out, "dataset.csv"))
    else:
        reference = _read_csv(reference_path)
    report = evaluate_samples(task.cs, samples, reference, recipe=cfg.recipe,
                              powers=cfg.powers, bins=cfg.bins)
    return {"report": report, "payload": report.to_dict()}


# ---------------------------------------------------------------------------
# decay check
# ---------------------------------------------------------------------------

def _decay_start_point(task: TaskSpec, seed: int) -> np.ndarray:
    """Deterministic off-manifold start: a prior point pushed outward.

    Equality tasks are scaled multiplicatively (h = |x|^2 - 1 style residuals
    become 0.21); pure-inequality tasks are pushed to radius 1.1 so the
    constraint is genuinely violated.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    x = prior_uniform(task, rng, 1)[0]
    if task.cs.n_eq == 0:
        nrm = float(np.linalg.norm(x))
        if nrm < 1e-12:
            x = np.zeros_like(x)
            x[0] = 1.0
            nrm = 1.0
        return 1.1 * x / nrm
    return 1.1 * x


def decay_check(config, rel_tol: float = 0.05, floor: float = 1e-6,
                max_dt: float = 1e-3) -> dict:
    """Noise-free forward run compared against the closed-form decay law.

    The configured sampler is forced to its landing variant with zero noise,
    and the schedule is refined to dt <= max_dt (the law is a continuous-time
    statement; a coarse grid hides it behind discretization error). Per-step
    violations are checked against the exponential-decay prediction wherever
    the predicted magnitude exceeds `floor`. Returns a verdict dict with the
    max relative error.
    """
    cfg = config if isinstance(config, RunConfig) else load_config(config)
    task = build_task(cfg)
    mode = cfg.sampler.mode
    if mode not in LANDING_MODES:
        mode = "ulla" if mode == "ulla_p" else "olla"
    sampler = dataclasses.replace(cfg.sampler, mode=mode, noise_scale=0.0,
                                  terminal_projection=False,
                                  landing_integrator="exact")
    x0 = _decay_start_point(task, cfg.seed)
    sched = cfg.sched
    if sched.N == 0 or sched.dt > max_dt:
        n_fine = max(sched.N, int(np.ceil(sched.T / max_dt)))
        sched = dataclasses.replace(sched, N=n_fine)
    traj = simulate_forward(task.cs, sampler, sched, x0,
                            np.random.default_rng(cfg.seed))

    max_rel = 0.0
    checked = 0
    # equalities: |h| follows a clean exponential, compare pointwise while
    # the prediction is above the floor
    if task.cs.n_eq > 0:
        for k in range(sched.N + 1):
            h_pred, _, _ = decay_oracle(task.cs, sched, sampler.alpha, x0,
                                        k * sched.dt)
            pred_h = float(np.max(np.abs(h_pred)))
            if pred_h > floor:
                max_rel = max(max_rel, abs(traj.h_inf[k] - pred_h) / pred_h)
                checked += 1

    # inequalities active at the start: the shifted residual g + eps is the
    # exponential quantity; g itself crosses zero at tau, where pointwise
    # relative error is meaningless. Check the shifted decay during the
    # active phase, the crossing step against tau, and boundary pinning after.
    crossing_step_errors = []
    post_crossing_g = 0.0
    if task.cs.n_ineq > 0:
        eps = task.cs.epsilon
        _, _, tau = decay_oracle(task.cs, sched, sampler.alpha, x0, 0.0)
        G = np.stack([np.atleast_1d(np.asarray(task.cs.g(s), dtype=float))
                      for s in traj.states])
        g0 = G[0]
        for j in range(task.cs.n_ineq):
            if g0[j] < 0:
                continue  # inactive constraints carry no decay prediction
            below = np.nonzero(G[:, j] < 0.0)[0]
            kc = int(below[0]) if below.size else sched.N + 1
            for k in range(min(kc, sched.N + 1)):
                pred = (g0[j] + eps) * np.exp(
                    -sampler.alpha * cumulative_S(sched, k * sched.dt))
                max_rel = max(max_rel, abs(G[k, j] + eps - pred) / pred)
                checked += 1
            if tau[j] <= sched.T:
                crossing_step_errors.append(abs(kc - tau[j] / sched.dt))
            if kc <= sched.N:
                post_crossing_g = max(post_crossing_g,
                                      float(np.max(G[kc:, j])))

    ok = (checked > 0 and max_rel <= rel_tol
          and all(e <= 2.0 for e in crossing_step_errors)
          and post_crossing_g <= floor)
    return {
        "verdict": "pass" if ok else "fail",
        "max_rel_error": float(max_rel),
        "steps_checked": checked,
        "crossing_step_errors": [float(e) for e in crossing_step_errors],
        "post_crossing_g_plus": float(max(post_crossing_g, 0.0)),
        "mode": mode,
        "alpha": sampler.alpha,
        "rel_tol": rel_tol,
        "dt": sched.dt,
        "n_steps": sched.N,
        "x0": [float(v) for v in x0],
    }
