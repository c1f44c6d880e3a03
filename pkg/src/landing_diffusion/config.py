"""Run configuration: TOML files with strict validation.

A config is a TOML document with tables [run], [task], [dataset],
[schedule], [sampler], [training], [model], [sampling], [evaluation].
Only [task] is mandatory; everything else carries defaults. Validation is
collected, not fail-fast: ConfigError lists every offending field at once.
"""

from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .dynamics import MODES, UNDERDAMPED_MODES, NoiseSchedule, SamplerConfig
from .training import TrainConfig

TASK_KINDS = ("sphere", "disk", "cap", "son")
DATASET_KINDS = ("vmf_mixture", "son_mixture")
PRIOR_KINDS = ("uniform", "empirical_terminal")
RECIPES = ("spherical_histogram", "power_trace", "coordinate")


class ConfigError(ValueError):
    """Invalid run config; .problems lists every offending field."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(f"invalid config:\n{lines}")


@dataclass
class RunConfig:
    name: str
    seed: int
    out_dir: str
    task_kind: str
    task_params: dict
    sched: NoiseSchedule
    sampler: SamplerConfig
    train: TrainConfig
    hidden: tuple
    embed_width: int
    conditioning: str
    dataset_kind: Optional[str] = None
    dataset_params: dict = field(default_factory=dict)
    n_samples: int = 1000
    prior: str = "uniform"
    pool_size: int = 1024
    recipe: str = "spherical_histogram"
    bins: tuple = (20, 40)
    powers: tuple = (1, 2)
    reference_n: int = 0        # 0 means: reuse the dataset as reference
    resolved: dict = field(default_factory=dict)

    @property
    def momentum_mode(self) -> bool:
        return self.sampler.mode in UNDERDAMPED_MODES


_SECTIONS = {
    "run": ("name", "seed", "out_dir"),
    "task": ("kind", "d", "n", "zmax", "epsilon"),
    "dataset": ("kind", "n", "modes", "kappas", "weights",
                "n_modes", "concentration"),
    "schedule": ("sigma_min", "sigma_max", "T", "N"),
    "sampler": ("mode", "alpha", "gamma", "use_curvature",
                "terminal_projection", "landing_integrator", "noise_scale",
                "newton_max_iter", "newton_tol", "retries"),
    "training": ("epochs", "batch_size", "lr", "beta1", "beta2", "delta",
                 "l_f", "optimizer", "steps_per_sample",
                 "checkpoint_interval"),
    "model": ("hidden", "embed_width", "conditioning"),
    "sampling": ("n_samples", "prior", "pool_size"),
    "evaluation": ("recipe", "bins", "powers", "reference_n"),
}


def _check_keys(data, problems):
    for section, table in data.items():
        if section not in _SECTIONS:
            problems.append(f"{section}: unrecognized section")
            continue
        if not isinstance(table, dict):
            problems.append(f"{section}: expected a table")
            continue
        for key in table:
            if key not in _SECTIONS[section]:
                problems.append(f"{section}.{key}: unrecognized key")


def _get(data, section, key, default, kind, problems, check=None):
    table = data.get(section, {})
    if not isinstance(table, dict) or key not in table:
        return default
    val = table[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    bad_type = kind is not None and not isinstance(val, kind)
    bad_bool = kind is not bool and isinstance(val, bool)
    if bad_type or bad_bool:
        problems.append(f"{section}.{key}: expected {kind.__name__}")
        return default
    if check is not None:
        msg = check(val)
        if msg:
            problems.append(f"{section}.{key}: {msg}")
            return default
    return val


def _positive(v):
    return None if v > 0 else "must be positive"


def _nonnegative(v):
    return None if v >= 0 else "must be nonnegative"


def _at_least_2(v):
    return None if v >= 2 else "must be >= 2"


def build_config(data: dict, overrides: Optional[dict] = None) -> RunConfig:
    """Validate a parsed config dict and assemble the run objects.

    overrides maps dotted keys ('run.seed') to replacement values, applied
    before validation; this is how CLI flags reach the config.
    """
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for dotted, val in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        data.setdefault(section, {})[key] = val

    problems = []
    _check_keys(data, problems)

    name = _get(data, "run", "name", "run", str, problems)
    seed = _get(data, "run", "seed", 0, int, problems, _nonnegative)
    out_dir = _get(data, "run", "out_dir", "out", str, problems)

    task_kind = _get(data, "task", "kind", None, str, problems)
    if task_kind is None:
        problems.append("task.kind: missing")
    elif task_kind not in TASK_KINDS:
        problems.append(f"task.kind: must be one of {TASK_KINDS}")
    task_params = {}
    if task_kind in ("sphere", "disk"):
        task_params["d"] = _get(data, "task", "d", 3 if task_kind == "sphere" else 2,
                                int, problems, _at_least_2)
    if task_kind == "cap":
        zmax = _get(data, "task", "zmax", 0.5, float, problems,
                    lambda v: None if -1.0 < v < 1.0 else "must lie in (-1, 1)")
        task_params["zmax"] = zmax
    if task_kind in ("disk", "cap"):
        task_params["epsilon"] = _get(data, "task", "epsilon", 0.05, float,
                                      problems, _positive)
    if task_kind == "son":
        task_params["n"] = _get(data, "task", "n", 3, int, problems,
                                _at_least_2)

    dataset_kind = _get(data, "dataset", "kind", None, str, problems)
    dataset_params = {}
    if dataset_kind is not None and dataset_kind not in DATASET_KINDS:
        problems.append(f"dataset.kind: must be one of {DATASET_KINDS}")
        dataset_kind = None
    if dataset_kind == "vmf_mixture":
        n = _get(data, "dataset", "n", 1000, int, problems, _positive)
        modes = _get(data, "dataset", "modes", None, list, problems)
        kappas = _get(data, "dataset", "kappas", None, list, problems)
        weights = _get(data, "dataset", "weights", None, list, problems)
        def _numbers(vals):
            return all(isinstance(v, (int, float)) and not isinstance(v, bool)
                       for v in vals)

        if modes is None:
            problems.append("dataset.modes: missing")
        elif not all(isinstance(m, list) and _numbers(m) and len(m) > 0
                     for m in modes):
            problems.append("dataset.modes: must be a list of direction vectors")
            modes = None
        if kappas is None:
            problems.append("dataset.kappas: missing")
        elif not _numbers(kappas):
            problems.append("dataset.kappas: must be numbers")
            kappas = None
        if modes is not None and kappas is not None:
            if len(modes) != len(kappas):
                problems.append("dataset.kappas: length must match modes")
            elif any(k < 0 for k in kappas):
                problems.append("dataset.kappas: must be nonnegative")
        if weights is None and modes is not None:
            weights = [1.0 / len(modes)] * len(modes)
        if weights is not None and not _numbers(weights):
            problems.append("dataset.weights: must be numbers")
            weights = None
        if weights is not None and modes is not None:
            if len(weights) != len(modes):
                problems.append("dataset.weights: length must match modes")
            elif abs(sum(weights) - 1.0) > 1e-9 or any(w < 0 for w in weights):
                problems.append("dataset.weights: must be a distribution")
        dataset_params = {"n": n, "modes": modes, "kappas": kappas,
                          "weights": weights}
    elif dataset_kind == "son_mixture":
        dataset_params = {
            "n": _get(data, "dataset", "n", 1000, int, problems, _positive),
            "n_modes": _get(data, "dataset", "n_modes", 2, int, problems,
                            _positive),
            "concentration": _get(data, "dataset", "concentration", 100.0,
                                  float, problems, _positive),
        }

    sigma_min = _get(data, "schedule", "sigma_min", 0.1, float, problems,
                     _nonnegative)
    sigma_max = _get(data, "schedule", "sigma_max", 1.3, float, problems,
                     _positive)
    T = _get(data, "schedule", "T", 2.0, float, problems, _positive)
    N = _get(data, "schedule", "N", 50, int, problems, _positive)
    if sigma_min > sigma_max:
        problems.append("schedule.sigma_min: must not exceed sigma_max")

    mode = _get(data, "sampler", "mode", "olla", str, problems,
                lambda v: None if v in MODES else f"must be one of {MODES}")
    alpha = _get(data, "sampler", "alpha", 50.0, float, problems, _positive)
    gamma = _get(data, "sampler", "gamma", 3.0, float, problems, _positive)
    use_curvature = _get(data, "sampler", "use_curvature", False, bool, problems)
    terminal_projection = _get(data, "sampler", "terminal_projection", True,
                               bool, problems)
    integrator = _get(data, "sampler", "landing_integrator", "exact", str,
                      problems, lambda v: None if v in ("exact", "euler")
                      else "must be 'exact' or 'euler'")
    noise_scale = _get(data, "sampler", "noise_scale", 1.0, float, problems,
                       _nonnegative)
    newton_max_iter = _get(data, "sampler", "newton_max_iter", 50, int,
                           problems, _positive)
    newton_tol = _get(data, "sampler", "newton_tol", 1e-10, float, problems,
                      _positive)
    retries = _get(data, "sampler", "retries", 5, int, problems, _nonnegative)

    epochs = _get(data, "training", "epochs", 2000, int, problems, _nonnegative)
    batch_size = _get(data, "training", "batch_size", 128, int, problems,
                      _positive)
    lr = _get(data, "training", "lr", 1e-3, float, problems, _positive)
    beta1 = _get(data, "training", "beta1", 0.9, float, problems)
    beta2 = _get(data, "training", "beta2", 0.999, float, problems)
    delta = _get(data, "training", "delta", 1e-8, float, problems, _positive)
    l_f = _get(data, "training", "l_f", 100, int, problems,
               lambda v: None if v >= 1 else "must be >= 1")
    optimizer = _get(data, "training", "optimizer", "adam", str, problems,
                     lambda v: None if v in ("adam", "sgd")
                     else "must be 'adam' or 'sgd'")
    steps_per_sample = _get(data, "training", "steps_per_sample", 0, int,
                            problems, _nonnegative)
    checkpoint_interval = _get(data, "training", "checkpoint_interval", 0,
                               int, problems, _nonnegative)

    hidden = _get(data, "model", "hidden", [128, 128, 128], list, problems,
                  lambda v: None if v and all(isinstance(w, int) and w > 0
                                              for w in v)
                  else "must be a list of positive integers")
    embed_width = _get(data, "model", "embed_width", 32, int, problems,
                       lambda v: None if v >= 2 and v % 2 == 0
                       else "must be an even integer >= 2")
    conditioning = _get(data, "model", "conditioning", "step", str, problems,
                        lambda v: None if v in ("step", "sigma")
                        else "must be 'step' or 'sigma'")

    n_samples = _get(data, "sampling", "n_samples", 1000, int, problems,
                     _positive)
    prior = _get(data, "sampling", "prior", "uniform", str, problems,
                 lambda v: None if v in PRIOR_KINDS
                 else f"must be one of {PRIOR_KINDS}")
    pool_size = _get(data, "sampling", "pool_size", 1024, int, problems,
                     _positive)

    recipe = _get(data, "evaluation", "recipe", None, str, problems,
                  lambda v: None if v in RECIPES
                  else f"must be one of {RECIPES}")
    if recipe is None:
        recipe = "power_trace" if task_kind == "son" else (
            "coordinate" if task_kind == "disk" else "spherical_histogram")
    bins = _get(data, "evaluation", "bins", [20, 40], list, problems,
                lambda v: None if v and all(isinstance(b, int) and b >= 2
                                            for b in v)
                else "must be a list of integers >= 2")
    powers = _get(data, "evaluation", "powers", [1, 2], list, problems,
                  lambda v: None if v and all(isinstance(k, int) and k >= 1
                                              for k in v)
                  else "must be a list of positive integers")
    reference_n = _get(data, "evaluation", "reference_n", 0, int, problems,
                       _nonnegative)

    if problems:
        raise ConfigError(problems)

    sched = NoiseSchedule(sigma_min, sigma_max, T=T, N=N)
    sampler = SamplerConfig(mode=mode, alpha=alpha, gamma=gamma,
                            use_curvature=use_curvature,
                            terminal_projection=terminal_projection,
                            newton_max_iter=newton_max_iter,
                            newton_tol=newton_tol, seed=seed,
                            landing_integrator=integrator,
                            noise_scale=noise_scale, retries=retries)
    train = TrainConfig(epochs=epochs, batch_size=batch_size, lr=lr,
                        beta1=beta1, beta2=beta2, delta=delta, l_f=l_f,
                        seed=seed, optimizer=optimizer,
                        steps_per_sample=steps_per_sample,
                        checkpoint_interval=checkpoint_interval)

    cfg = RunConfig(name=name, seed=seed, out_dir=out_dir,
                    task_kind=task_kind, task_params=task_params,
                    sched=sched, sampler=sampler, train=train,
                    hidden=tuple(hidden), embed_width=embed_width,
                    conditioning=conditioning, dataset_kind=dataset_kind,
                    dataset_params=dataset_params, n_samples=n_samples,
                    prior=prior, pool_size=pool_size, recipe=recipe,
                    bins=tuple(bins), powers=tuple(powers),
                    reference_n=reference_n)
    cfg.resolved = resolve_dict(cfg)
    return cfg


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return build_config(data, overrides)


def resolve_dict(cfg: RunConfig) -> dict:
    """Full resolved-config echo: every knob with its effective value."""
    return {
        "run": {"name": cfg.name, "seed": cfg.seed, "out_dir": cfg.out_dir},
        "task": {"kind": cfg.task_kind, **cfg.task_params},
        "dataset": ({"kind": cfg.dataset_kind, **cfg.dataset_params}
                    if cfg.dataset_kind else None),
        "schedule": {"sigma_min": cfg.sched.sigma_min,
                     "sigma_max": cfg.sched.sigma_max,
                     "T": cfg.sched.T, "N": cfg.sched.N},
        "sampler": {"mode": cfg.sampler.mode, "alpha": cfg.sampler.alpha,
                    "gamma": cfg.sampler.gamma,
                    "use_curvature": cfg.sampler.use_curvature,
                    "terminal_projection": cfg.sampler.terminal_projection,
                    "landing_integrator": cfg.sampler.landing_integrator,
                    "noise_scale": cfg.sampler.noise_scale,
                    "newton_max_iter": cfg.sampler.newton_max_iter,
                    "newton_tol": cfg.sampler.newton_tol,
                    "retries": cfg.sampler.retries},
        "training": {"epochs": cfg.train.epochs,
                     "batch_size": cfg.train.batch_size,
                     "lr": cfg.train.lr, "beta1": cfg.train.beta1,
                     "beta2": cfg.train.beta2, "delta": cfg.train.delta,
                     "l_f": cfg.train.l_f, "optimizer": cfg.train.optimizer,
                     "steps_per_sample": cfg.train.steps_per_sample,
                     "checkpoint_interval": cfg.train.checkpoint_interval},
        "model": {"hidden": list(cfg.hidden), "embed_width": cfg.embed_width,
                  "conditioning": cfg.conditioning,
                  "momentum": cfg.momentum_mode},
        "sampling": {"n_samples": cfg.n_samples, "prior": cfg.prior,
                     "pool_size": cfg.pool_size},
        "evaluation": {"recipe": cfg.recipe, "bins": list(cfg.bins),
                       "powers": list(cfg.powers),
                       "reference_n": cfg.reference_n},
    }
