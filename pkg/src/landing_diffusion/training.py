"""Variance-weighted tangential-residual losses and the training loop.

Both losses compare each stored forward transition against the mean of the
parametrized backward kernel, keep only the tangential part of the mismatch,
and weight it by the inverse kernel variance. Gradients flow through the
score evaluations only; trajectory positions and pseudo-momenta are data.
"""

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from .dynamics import (
    LANDING_MODES,
    UNDERDAMPED_MODES,
    NoiseSchedule,
    NonFiniteState,
    SamplerConfig,
    friction_factor,
    sigma_at,
    simulate_forward,
    simulate_forward_ensemble,
)
from .geometry import ProjectionFailure, batch_geometry, geometry_at
from .score import (
    ScoreNet,
    save_score_net,
    score_eval_batch,
    score_grad_params_batch,
)

OVERDAMPED_MODES = ("olla", "olla_p")


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8
    l_f: int = 100               # forward-trajectory regeneration period
    seed: int = 0
    optimizer: str = "adam"      # "adam" | "sgd"
    steps_per_sample: int = 0    # 0 = exact sum over all N transition terms
    log_path: Optional[str] = None
    checkpoint_path: Optional[str] = None
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.l_f < 1:
            raise ValueError("l_f must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("need epochs >= 0 and batch_size >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.steps_per_sample < 0:
            raise ValueError("steps_per_sample must be >= 0 (0 = full sum)")


@dataclass
class LossReport:
    epoch: int
    loss: float
    per_step: np.ndarray   # mean weighted loss per transition index k
    grad_norm: float
    cache_age: int = 0


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8


def init_opt_state(theta: np.ndarray, config: TrainConfig) -> OptState:
    return OptState(theta=theta, m=np.zeros_like(theta), v=np.zeros_like(theta),
                    kind=config.optimizer, beta1=config.beta1,
                    beta2=config.beta2, delta=config.delta)


def optimizer_step(state: OptState, grads: np.ndarray, lr: float) -> OptState:
    """Update theta in place; plain descent when kind == 'sgd'."""
    if state.kind == "sgd":
        state.theta -= lr * grads
        return state
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads ** 2
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    state.theta -= lr * m_hat / (np.sqrt(v_hat) + state.delta)
    return state


# ---------------------------------------------------------------------------
# geometry cache for a trajectory batch
# ---------------------------------------------------------------------------

@dataclass
class _GeomCache:
    """Score-independent pieces of the loss, reusable across epochs."""

    proj: np.ndarray         # (B, N, d, d) projector at x_{k+1}
    tang_delta: np.ndarray   # (B, N, d)   Pi(x_{k+1}) (x_k - x_{k+1})
    p_bwd: Optional[np.ndarray]  # (B, N, d) reconstructed momenta (underdamped)


def _projector_rows(cs, X: np.ndarray) -> np.ndarray:
    if cs.n_ineq == 0:
        _, proj, _ = batch_geometry(cs, X)
        return proj
    return np.stack([geometry_at(cs, x).proj for x in X])


def _build_cache(cs, sched: NoiseSchedule, states: np.ndarray,
                 p_term: Optional[np.ndarray]) -> _GeomCache:
    B, Np1, d = states.shape
    N = Np1 - 1
    proj = _projector_rows(cs, states[:, 1:].reshape(B * N, d)).reshape(B, N, d, d)
    delta = states[:, :-1] - states[:, 1:]
    tang_delta = np.einsum("bkij,bkj->bki", proj, delta)
    p_bwd = None
    if p_term is not None:
        # pseudo-point x_{N+1} = x_N + sigma_N^2 dt Pi(x_N) p_term extends the
        # chain so the k = N-1 term has a momentum estimate
        pN = np.einsum("bij,bj->bi", proj[:, N - 1], p_term)
        x_pseudo = states[:, N] + sigma_at(sched, N) ** 2 * sched.dt * pN
        nxt = np.concatenate([states[:, 2:], x_pseudo[:, None, :]], axis=1)
        sig2dt = np.array([sigma_at(sched, min(k + 2, N)) ** 2 * sched.dt
                           for k in range(N)])
        vel = (nxt - states[:, 1:]) / sig2dt[None, :, None]
        p_bwd = np.einsum("bkij,bkj->bki", proj, vel)
    return _GeomCache(proj=proj, tang_delta=tang_delta, p_bwd=p_bwd)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _eval_score_rows(model, kp1, X, P):
    """(values, is_net); callables give loss-only evaluation."""
    if isinstance(model, ScoreNet):
        if model.momentum_mode != (P is not None):
            raise ValueError("score network regime does not match the loss")
        return score_eval_batch(model, kp1, X, P), True
    if callable(model):
        out = model(kp1, X, P) if P is not None else model(kp1, X)
        return np.asarray(out, dtype=float), False
    raise TypeError("model must be a ScoreNet or a callable")


def _select_terms(B: int, N: int, steps_per_sample: int, rng):
    """Row/step index pairs plus the inverse-probability scale factor."""
    if steps_per_sample and steps_per_sample < N:
        if rng is None:
            raise ValueError("subsampled loss needs an rng")
        j = steps_per_sample
        kcols = np.argsort(rng.random((B, N)), axis=1)[:, :j]
        rows = np.repeat(np.arange(B), j)
        return rows, kcols.ravel(), N / j
    rows = np.repeat(np.arange(B), N)
    kcols = np.tile(np.arange(N), B)
    return rows, kcols, 1.0


def _grad_f_rows(grad_f, X):
    if grad_f is None:
        return None
    return np.stack([np.asarray(grad_f(x), dtype=float) for x in X])


def _loss_core(cs, config, sched, model, states, p_term, grad_f,
               steps_per_sample, rng, cache, underdamped):
    B, Np1, d = states.shape
    N = Np1 - 1
    if N < 1:
        raise ValueError("need at least one transition")
    if cache is None:
        cache = _build_cache(cs, sched, states, p_term if underdamped else None)
    dt = sched.dt
    rows, kcols, scale = _select_terms(B, N, steps_per_sample, rng)
    kp1 = kcols + 1
    sigma = np.array([sigma_at(sched, k) for k in range(N + 1)])[kp1]
    s2dt = sigma ** 2 * dt

    X = states[rows, kp1]
    P = cache.p_bwd[rows, kcols] if underdamped else None
    s_out, is_net = _eval_score_rows(model, kp1, X, P)
    gf = _grad_f_rows(grad_f, X)
    drift = s_out if gf is None else s_out + gf
    proj_drift = np.einsum("mij,mj->mi", cache.proj[rows, kcols], drift)

    if underdamped:
        a = np.exp(-config.gamma * sigma ** 2 * dt)
        r = (cache.tang_delta[rows, kcols]
             + (s2dt * a)[:, None] * P
             + (s2dt ** 2)[:, None] * proj_drift)
        w = 1.0 / (2.0 * s2dt ** 2 * (1.0 - a ** 2))
        upstream = r * (scale / B / (1.0 - a ** 2))[:, None]
    else:
        r = cache.tang_delta[rows, kcols] - (0.5 * s2dt)[:, None] * proj_drift
        w = 1.0 / (2.0 * s2dt)
        upstream = r * (-0.5 * scale / B)

    terms = w * np.sum(r * r, axis=1)
    loss = float(np.sum(terms) * scale / B)

    per_step = np.zeros(N)
    counts = np.zeros(N)
    np.add.at(per_step, kcols, terms)
    np.add.at(counts, kcols, 1.0)
    per_step /= np.maximum(counts, 1.0)

    grad = None
    if is_net:
        grad = score_grad_params_batch(model, kp1, X, upstream, P)
    return loss, grad, per_step


def cwpm_loss_over(cs, config: SamplerConfig, sched: NoiseSchedule, model,
                   states: np.ndarray, grad_f=None, steps_per_sample: int = 0,
                   rng=None, cache: Optional[_GeomCache] = None):
    """Overdamped loss over a (B, N+1, d) position batch.

    Returns (loss, flat theta gradient or None, per-step profile).
    """
    if config.mode not in OVERDAMPED_MODES:
        raise ValueError("overdamped loss requires an overdamped sampler config")
    return _loss_core(cs, config, sched, model, states, None, grad_f,
                      steps_per_sample, rng, cache, underdamped=False)


def cwpm_loss_under(cs, config: SamplerConfig, sched: NoiseSchedule, model,
                    states: np.ndarray, p_term: Optional[np.ndarray],
                    grad_f=None, steps_per_sample: int = 0, rng=None,
                    cache: Optional[_GeomCache] = None):
    """Underdamped loss; p_term holds the terminal momentum draws (raw
    normals are fine, they are projected where used)."""
    if config.mode not in UNDERDAMPED_MODES:
        raise ValueError("underdamped loss requires an underdamped sampler config")
    if p_term is None and cache is None:
        raise ValueError("underdamped loss needs terminal momentum draws")
    return _loss_core(cs, config, sched, model, states, p_term, grad_f,
                      steps_per_sample, rng, cache, underdamped=True)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _simulate_batch(cs, config, sched, dataset, batch_size, rng, grad_f,
                    underdamped):
    data = np.asarray(dataset, dtype=float)
    idx = rng.choice(len(data), size=batch_size, replace=batch_size > len(data))
    X0 = data[idx]
    if (config.mode in LANDING_MODES and not config.use_curvature
            and cs.n_ineq == 0):
        states = simulate_forward_ensemble(cs, config, sched, X0, rng,
                                           grad_f=grad_f, keep_path=True)
    else:
        rows = []
        for x0 in X0:
            # a failed chain (projection or blowup) is resampled from the
            # dataset rather than aborting the whole batch
            for _ in range(config.retries + 1):
                try:
                    rows.append(simulate_forward(cs, config, sched, x0, rng,
                                                 grad_f=grad_f).states)
                    break
                except (ProjectionFailure, NonFiniteState):
                    x0 = data[rng.integers(len(data))]
            else:
                raise ProjectionFailure(
                    "forward training chain kept failing after resampling",
                    config.retries + 1, float("nan"))
        states = np.stack(rows)
    p_term = rng.standard_normal(X0.shape) if underdamped else None
    return states, p_term


def train(cs, config: SamplerConfig, sched: NoiseSchedule,
          train_config: TrainConfig, dataset, model: ScoreNet,
          grad_f=None) -> Tuple[ScoreNet, List[LossReport]]:
    """Fit the score to forward trajectories of the configured sampler.

    Every l_f epochs a fresh batch of chains is simulated from resampled
    dataset points; in between, the cached batch is reused and only theta
    moves. Aborts (keeping the last finite-loss parameters) if the loss or
    gradient stops being finite.
    """
    underdamped = config.mode in UNDERDAMPED_MODES
    if not isinstance(model, ScoreNet):
        raise TypeError("train() needs a ScoreNet")
    if model.momentum_mode != underdamped:
        raise ValueError("score network regime does not match the sampler mode")

    rng = np.random.default_rng(train_config.seed)
    opt = init_opt_state(model.theta, train_config)
    reports: List[LossReport] = []
    last_good = model.theta.copy()
    states = cache = p_term = None
    log_fh = open(train_config.log_path, "w") if train_config.log_path else None

    try:
        for epoch in range(train_config.epochs):
            cache_age = epoch % train_config.l_f
            if cache_age == 0:
                states, p_term = _simulate_batch(cs, config, sched, dataset,
                                                 train_config.batch_size, rng,
                                                 grad_f, underdamped)
                cache = _build_cache(cs, sched, states,
                                     p_term if underdamped else None)
            if underdamped:
                loss, grad, per_step = cwpm_loss_under(
                    cs, config, sched, model, states, p_term, grad_f=grad_f,
                    steps_per_sample=train_config.steps_per_sample, rng=rng,
                    cache=cache)
            else:
                loss, grad, per_step = cwpm_loss_over(
                    cs, config, sched, model, states, grad_f=grad_f,
                    steps_per_sample=train_config.steps_per_sample, rng=rng,
                    cache=cache)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                np.copyto(model.theta, last_good)
                warnings.warn(f"non-finite loss at epoch {epoch}; "
                              "restored last good parameters and stopped")
                break
            np.copyto(last_good, model.theta)
            optimizer_step(opt, grad, train_config.lr)
            grad_norm = float(np.linalg.norm(grad))
            reports.append(LossReport(epoch=epoch, loss=loss,
                                      per_step=per_step, grad_norm=grad_norm,
                                      cache_age=cache_age))
            if log_fh is not None:
                log_fh.write(json.dumps({"epoch": epoch, "loss": loss,
                                         "grad_norm": grad_norm,
                                         "cache_age": cache_age},
                                        sort_keys=True) + "\n")
            if (train_config.checkpoint_path
                    and train_config.checkpoint_interval > 0
                    and (epoch + 1) % train_config.checkpoint_interval == 0):
                save_score_net(model, train_config.checkpoint_path)
    finally:
        if log_fh is not None:
            log_fh.close()
    return model, reports
