"""Noise schedule, discrete transition kernels, and trajectory simulation.

Four sampler families share the same geometric ingredients: overdamped and
underdamped landing dynamics (olla / ulla) whose drift contracts constraint
violations at rate alpha, and their projection variants (olla_p / ulla_p)
where a Newton solve replaces the landing term after a purely tangential
update. Forward kernels noise data toward the terminal distribution;
backward kernels consume a (learned or oracle) score.
"""

import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .geometry import (
    ProjectionFailure,
    geometry_at,
    landing_direction,
    mean_curvature,
    curvature_H1,
    curvature_H2,
    newton_project,
    batch_geometry,
)

MODES = ("olla", "olla_p", "ulla", "ulla_p")
LANDING_MODES = ("olla", "ulla")
UNDERDAMPED_MODES = ("ulla", "ulla_p")


class NonFiniteState(RuntimeError):
    """A kernel produced NaN or infinity."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear schedule sigma(t) = sigma_min + (t/T)(sigma_max - sigma_min)."""

    sigma_min: float
    sigma_max: float
    T: float
    N: int

    def __post_init__(self):
        if not (0 <= self.sigma_min <= self.sigma_max) or self.sigma_max <= 0:
            raise ValueError("need 0 <= sigma_min <= sigma_max with sigma_max > 0")
        if self.T <= 0 or self.N < 0:
            raise ValueError("need T > 0 and N >= 0")

    @property
    def dt(self) -> float:
        return self.T / self.N if self.N > 0 else 0.0


def sigma_at(sched: NoiseSchedule, k: int) -> float:
    """sigma at step k, for 0 <= k <= N."""
    if not 0 <= k <= sched.N:
        raise IndexError(f"step index {k} outside [0, {sched.N}]")
    if sched.N == 0:
        return sched.sigma_min
    return sched.sigma_min + (k / sched.N) * (sched.sigma_max - sched.sigma_min)


def cumulative_S(sched: NoiseSchedule, t: float) -> float:
    """S(t) = integral of sigma(s)^2 from 0 to t, in closed form."""
    if not 0 <= t <= sched.T:
        raise ValueError(f"time {t} outside [0, {sched.T}]")
    c = (sched.sigma_max - sched.sigma_min) / sched.T
    s0 = sched.sigma_min
    return s0 * s0 * t + s0 * c * t * t + c * c * t ** 3 / 3.0


def friction_factor(gamma: float, sigma_k: float, dt: float) -> float:
    """a_k = exp(-gamma sigma_k^2 dt)."""
    return float(np.exp(-gamma * sigma_k ** 2 * dt))


@dataclass
class SamplerConfig:
    mode: str = "olla"
    alpha: float = 50.0
    gamma: float = 3.0
    use_curvature: bool = False
    terminal_projection: bool = True
    newton_max_iter: int = 50
    newton_tol: float = 1e-10
    seed: int = 0
    # 'exact' applies the per-step contraction 1 - exp(-alpha sigma^2 dt) to
    # the landing direction (exponential integrator for the stiff normal
    # part); 'euler' keeps the literal Euler-Maruyama coefficients.
    landing_integrator: str = "exact"
    noise_scale: float = 1.0
    retries: int = 5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode in LANDING_MODES and self.alpha <= 0:
            raise ValueError("landing modes require alpha > 0")
        if self.landing_integrator not in ("exact", "euler"):
            raise ValueError("landing_integrator must be 'exact' or 'euler'")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")


@dataclass
class Trajectory:
    """Positions x_0..x_N plus per-step violation diagnostics.

    Positions are the only per-step state stored, in every mode; pseudo-
    momenta are reconstructed from position differences when needed.
    """

    states: np.ndarray       # (N+1, d) float64
    sched: NoiseSchedule
    config: SamplerConfig
    h_inf: np.ndarray        # (N+1,) max |h|
    g_plus_max: np.ndarray   # (N+1,) max(g, 0) max
    projection_events: int = 0


def _grad_f_at(grad_f, x):
    if grad_f is None:
        return 0.0
    return np.asarray(grad_f(x), dtype=float)


def _landing_coeff(config: SamplerConfig, sigma: float, dt: float,
                   forward_olla: bool = False) -> float:
    """Scale of the landing displacement along gradJ^T Gdag J.

    'euler' keeps the literal per-kernel coefficients: alpha sigma^4 dt / 2
    for the forward overdamped kernel and alpha sigma^2 dt everywhere else.
    'exact' replaces both with 1 - exp(-alpha sigma^2 dt), an exponential
    integrator for the stiff normal part: it reproduces the continuous-time
    decay law of the constraint violation without step-size bias and stays
    contractive for any alpha dt.
    """
    if config.landing_integrator == "exact":
        return 1.0 - float(np.exp(-config.alpha * sigma ** 2 * dt))
    if forward_olla:
        return 0.5 * config.alpha * sigma ** 4 * dt
    return config.alpha * sigma ** 2 * dt


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState("state contains NaN or infinity")
    return x


# ---------------------------------------------------------------------------
# overdamped kernels
# ---------------------------------------------------------------------------

def forward_step_olla(cs, config, sched, k, x_k, zeta, grad_f=None):
    """One overdamped noising step from x_k."""
    sigma = sigma_at(sched, k)
    dt = sched.dt
    cache = geometry_at(cs, x_k)
    out = x_k + sigma * np.sqrt(dt) * (cache.proj @ zeta)
    if grad_f is not None:
        out = out - 0.5 * sigma ** 2 * dt * (cache.proj @ _grad_f_at(grad_f, x_k))
    out = out - _landing_coeff(config, sigma, dt, forward_olla=True) * landing_direction(cache)
    if config.use_curvature:
        out = out + 0.5 * sigma ** 2 * dt * mean_curvature(cache, cs)
    return _check_finite(out)


def backward_step_olla(cs, config, sched, kp1, x_next, score_vec, zeta, grad_f=None):
    """One overdamped denoising step from x_{k+1} using score s ~ 2 grad ln q."""
    sigma = sigma_at(sched, kp1)
    dt = sched.dt
    cache = geometry_at(cs, x_next)
    drift_in = np.asarray(score_vec, dtype=float) + _grad_f_at(grad_f, x_next)
    out = x_next + 0.5 * sigma ** 2 * dt * (cache.proj @ drift_in)
    out = out + sigma * np.sqrt(dt) * (cache.proj @ zeta)
    out = out - _landing_coeff(config, sigma, dt) * landing_direction(cache)
    if config.use_curvature:
        out = out + 0.5 * sigma ** 2 * dt * mean_curvature(cache, cs)
    return _check_finite(out)


# ---------------------------------------------------------------------------
# pseudo-momenta
# ---------------------------------------------------------------------------

def pseudo_momentum_fwd(cs, sched, k, x_k, x_prev):
    """p~_k = Pi(x_k) (x_k - x_{k-1}) / (sigma_{k-1}^2 dt), sigma_{-1} := sigma_0."""
    sigma_prev = sigma_at(sched, max(k - 1, 0))
    v = (np.asarray(x_k, dtype=float) - np.asarray(x_prev, dtype=float)) / (sigma_prev ** 2 * sched.dt)
    return geometry_at(cs, x_k).proj @ v


def pseudo_momentum_bwd(cs, sched, kp1, x, x_next2):
    """p~_{k+1} = Pi(x_{k+1}) (x_{k+2} - x_{k+1}) / (sigma_{k+2}^2 dt).

    The index for sigma clamps to N so the pseudo-point convention
    x_{N+1} = x_N + sigma_N^2 dt p_N recovers p_N exactly.
    """
    sigma_next = sigma_at(sched, min(kp1 + 1, sched.N))
    v = (np.asarray(x_next2, dtype=float) - np.asarray(x, dtype=float)) / (sigma_next ** 2 * sched.dt)
    return geometry_at(cs, x).proj @ v


# ---------------------------------------------------------------------------
# underdamped kernels
# ---------------------------------------------------------------------------

def _ulla_curvature(cs, config, cache, p_tilde, sigma, dt, backward):
    H1 = curvature_H1(cache, cs, p_tilde)
    H2 = curvature_H2(cache, cs, p_tilde).sum(axis=1)
    sign = 1.0 if backward else -1.0
    vec = H1 + sign * config.alpha * H2
    return -sigma ** 4 * dt * dt * (cache.gradJ.T @ (cache.gram_pinv @ vec))


def forward_step_ulla(cs, config, sched, k, x_k, x_prev, zeta, grad_f=None):
    """One underdamped noising step; x_prev feeds the pseudo-momentum."""
    sigma = sigma_at(sched, k)
    dt = sched.dt
    a = friction_factor(config.gamma, sigma, dt)
    cache = geometry_at(cs, x_k)
    p_tilde = cache.proj @ ((np.asarray(x_k, dtype=float) - np.asarray(x_prev, dtype=float))
                            / (sigma_at(sched, max(k - 1, 0)) ** 2 * dt))
    inner = a * p_tilde
    if grad_f is not None:
        inner = inner - sigma ** 2 * dt * _grad_f_at(grad_f, x_k)
    out = x_k + sigma ** 2 * dt * (cache.proj @ inner)
    out = out + sigma ** 2 * dt * np.sqrt(1.0 - a * a) * (cache.proj @ zeta)
    out = out - _landing_coeff(config, sigma, dt) * landing_direction(cache)
    if config.use_curvature:
        out = out + _ulla_curvature(cs, config, cache, p_tilde, sigma, dt, backward=False)
    return _check_finite(out)


def backward_step_ulla(cs, config, sched, kp1, x_next, p_tilde, score_vec, zeta, grad_f=None):
    """One underdamped denoising step from x_{k+1}.

    p_tilde is the backward pseudo-momentum at x_{k+1} (from the future pair
    via pseudo_momentum_bwd, or a fresh tangential draw at the chain start);
    score_vec approximates 2 gamma (grad_p ln q + p~).
    """
    sigma = sigma_at(sched, kp1)
    dt = sched.dt
    a = friction_factor(config.gamma, sigma, dt)
    cache = geometry_at(cs, x_next)
    drift_in = np.asarray(score_vec, dtype=float) + _grad_f_at(grad_f, x_next)
    out = x_next - sigma ** 2 * dt * a * (cache.proj @ p_tilde)
    out = out - sigma ** 4 * dt * dt * (cache.proj @ drift_in)
    out = out + sigma ** 2 * dt * np.sqrt(1.0 - a * a) * (cache.proj @ zeta)
    out = out - _landing_coeff(config, sigma, dt) * landing_direction(cache)
    if config.use_curvature:
        out = out + _ulla_curvature(cs, config, cache, p_tilde, sigma, dt, backward=True)
    return _check_finite(out)


# ---------------------------------------------------------------------------
# projection variants: tangential update then Newton solve
# ---------------------------------------------------------------------------

def forward_step_projected(cs, config, sched, k, x_k, zeta, x_prev=None, grad_f=None):
    """olla_p / ulla_p forward step: tangential drift and noise, no landing
    or curvature, then projection back to the constraint set anchored at x_k."""
    sigma = sigma_at(sched, k)
    dt = sched.dt
    cache = geometry_at(cs, x_k)
    if config.mode == "olla_p":
        y = x_k + sigma * np.sqrt(dt) * (cache.proj @ zeta)
        if grad_f is not None:
            y = y - 0.5 * sigma ** 2 * dt * (cache.proj @ _grad_f_at(grad_f, x_k))
    elif config.mode == "ulla_p":
        if x_prev is None:
            raise ValueError("ulla_p forward step needs x_prev")
        a = friction_factor(config.gamma, sigma, dt)
        p_tilde = cache.proj @ ((np.asarray(x_k, dtype=float) - np.asarray(x_prev, dtype=float))
                                / (sigma_at(sched, max(k - 1, 0)) ** 2 * dt))
        inner = a * p_tilde + np.sqrt(1.0 - a * a) * zeta
        if grad_f is not None:
            inner = inner - sigma ** 2 * dt * _grad_f_at(grad_f, x_k)
        y = x_k + sigma ** 2 * dt * (cache.proj @ inner)
    else:
        raise ValueError("projected step requires an olla_p or ulla_p config")
    y = _check_finite(y)
    return newton_project(cs, y, x_k, max_iter=config.newton_max_iter, tol=config.newton_tol)


def backward_step_projected(cs, config, sched, kp1, x_next, score_vec, zeta,
                            p_tilde=None, grad_f=None):
    """olla_p / ulla_p backward step, projection anchored at x_{k+1}."""
    sigma = sigma_at(sched, kp1)
    dt = sched.dt
    cache = geometry_at(cs, x_next)
    drift_in = np.asarray(score_vec, dtype=float) + _grad_f_at(grad_f, x_next)
    if config.mode == "olla_p":
        y = x_next + 0.5 * sigma ** 2 * dt * (cache.proj @ drift_in)
        y = y + sigma * np.sqrt(dt) * (cache.proj @ zeta)
    elif config.mode == "ulla_p":
        if p_tilde is None:
            raise ValueError("ulla_p backward step needs p_tilde")
        a = friction_factor(config.gamma, sigma, dt)
        y = x_next - sigma ** 2 * dt * a * (cache.proj @ p_tilde)
        y = y - sigma ** 4 * dt * dt * (cache.proj @ drift_in)
        y = y + sigma ** 2 * dt * np.sqrt(1.0 - a * a) * (cache.proj @ zeta)
    else:
        raise ValueError("projected step requires an olla_p or ulla_p config")
    y = _check_finite(y)
    return newton_project(cs, y, x_next, max_iter=config.newton_max_iter, tol=config.newton_tol)


# ---------------------------------------------------------------------------
# chain simulation
# ---------------------------------------------------------------------------

def _violations(cs, x):
    h_inf = float(np.max(np.abs(cs.h(x)))) if cs.n_eq else 0.0
    g_plus = float(np.max(np.maximum(cs.g(x), 0.0))) if cs.n_ineq else 0.0
    return h_inf, g_plus


def simulate_forward(cs, config, sched, x_0, rng, grad_f=None) -> Trajectory:
    """Run N forward steps of the configured kernel from x_0.

    Projection-variant steps retry with fresh noise up to config.retries
    before aborting; raw failure events are counted on the trajectory.
    Terminal Newton projection is applied when the config enables it.
    """
    d = cs.dim
    N = sched.N
    x = np.asarray(x_0, dtype=float).copy()
    states = np.empty((N + 1, d))
    h_inf = np.empty(N + 1)
    g_plus = np.empty(N + 1)
    states[0] = x
    h_inf[0], g_plus[0] = _violations(cs, x)
    events = 0

    underdamped = config.mode in UNDERDAMPED_MODES
    x_prev = None
    if underdamped and N > 0:
        zeta0 = config.noise_scale * rng.standard_normal(d)
        p0 = geometry_at(cs, x).proj @ zeta0
        x_prev = x - sigma_at(sched, 0) ** 2 * sched.dt * p0  # pseudo-point x_{-1}

    for k in range(N):
        try:
            if config.mode == "olla":
                zeta = config.noise_scale * rng.standard_normal(d)
                x_new = forward_step_olla(cs, config, sched, k, x, zeta, grad_f)
            elif config.mode == "ulla":
                zeta = config.noise_scale * rng.standard_normal(d)
                x_new = forward_step_ulla(cs, config, sched, k, x, x_prev, zeta, grad_f)
            else:
                x_new = None
                last_err = None
                for _ in range(config.retries + 1):
                    zeta = config.noise_scale * rng.standard_normal(d)
                    try:
                        x_new = forward_step_projected(cs, config, sched, k, x, zeta,
                                                       x_prev=x_prev, grad_f=grad_f)
                        break
                    except ProjectionFailure as err:
                        events += 1
                        last_err = err
                if x_new is None:
                    raise last_err
        except (NonFiniteState, ProjectionFailure) as err:
            err.step = k
            raise
        if underdamped:
            x_prev = x
        x = x_new
        states[k + 1] = x
        h_inf[k + 1], g_plus[k + 1] = _violations(cs, x)

    if config.terminal_projection and cs.n_eq:
        try:
            states[N] = newton_project(cs, states[N], states[N],
                                       max_iter=config.newton_max_iter, tol=config.newton_tol)
        except ProjectionFailure as err:
            err.step = N
            raise
        h_inf[N], g_plus[N] = _violations(cs, states[N])

    return Trajectory(states=states, sched=sched, config=config,
                      h_inf=h_inf, g_plus_max=g_plus, projection_events=events)


def simulate_forward_ensemble(cs, config, sched, X0, rng, grad_f=None,
                              keep_path=False):
    """Vectorized forward simulation of B independent landing-mode chains.

    Requires an equality-only constraint set with batch-broadcasting
    callables and curvature off; identical update formulas to the scalar
    kernels, evaluated per step across the whole batch. Returns the full
    (B, N+1, d) path when keep_path is set, else the (B, d) terminal states.
    """
    if config.mode not in LANDING_MODES:
        raise ValueError("ensemble fast path covers the landing modes only")
    if config.use_curvature:
        raise ValueError("ensemble fast path does not support curvature terms")
    X = np.array(X0, dtype=float)
    B, d = X.shape
    N = sched.N
    dt = sched.dt
    path = np.empty((B, N + 1, d)) if keep_path else None
    if keep_path:
        path[:, 0] = X

    underdamped = config.mode == "ulla"
    X_prev = None
    if underdamped:
        _, proj, _ = batch_geometry(cs, X)
        Z0 = config.noise_scale * rng.standard_normal((B, d))
        P0 = np.einsum("bij,bj->bi", proj, Z0)
        X_prev = X - sigma_at(sched, 0) ** 2 * dt * P0

    for k in range(N):
        sigma = sigma_at(sched, k)
        _, proj, landing = batch_geometry(cs, X)
        Z = config.noise_scale * rng.standard_normal((B, d))
        coeff = _landing_coeff(config, sigma, dt, forward_olla=config.mode == "olla")
        if config.mode == "olla":
            X_new = X + sigma * np.sqrt(dt) * np.einsum("bij,bj->bi", proj, Z)
            if grad_f is not None:
                X_new = X_new - 0.5 * sigma ** 2 * dt * np.einsum(
                    "bij,bj->bi", proj, np.asarray(grad_f(X), dtype=float))
            X_new = X_new - coeff * landing
        else:
            a = friction_factor(config.gamma, sigma, dt)
            sp = sigma_at(sched, max(k - 1, 0))
            P = np.einsum("bij,bj->bi", proj, (X - X_prev) / (sp ** 2 * dt))
            inner = a * P + np.sqrt(1.0 - a * a) * Z
            if grad_f is not None:
                inner = inner - sigma ** 2 * dt * np.asarray(grad_f(X), dtype=float)
            X_new = X + sigma ** 2 * dt * np.einsum("bij,bj->bi", proj, inner)
            X_new = X_new - coeff * landing
            X_prev = X
        if not np.all(np.isfinite(X_new)):
            raise NonFiniteState(f"non-finite state in ensemble at step {k}")
        X = X_new
        if keep_path:
            path[:, k + 1] = X

    if config.terminal_projection and cs.n_eq:
        for b in range(B):
            X[b] = newton_project(cs, X[b], X[b], max_iter=config.newton_max_iter,
                                  tol=config.newton_tol)
        if keep_path:
            path[:, N] = X
    return path if keep_path else X


def _as_score_fn(score_model):
    if score_model is None:
        return lambda k, x, p: np.zeros_like(x)
    from .score import ScoreNet, score_eval
    if isinstance(score_model, ScoreNet):
        return lambda k, x, p: score_eval(score_model, k, x, p)
    return score_model


def sample_backward(cs, config, sched, score_model, prior_sampler, n_samples,
                    rng, grad_f=None, threads=1):
    """Draw n_samples by running the backward kernel from the prior.

    score_model may be a ScoreNet, a callable (k, x, p_tilde) -> vector, or
    None for the zero score. Returns (samples, n_failures); chains that
    exhaust projection retries, go non-finite, or fail the terminal
    projection are dropped and counted.
    """
    score = _as_score_fn(score_model)
    d = cs.dim
    N = sched.N
    dt = sched.dt

    def run_chain(chain_rng):
        x = np.asarray(prior_sampler(chain_rng), dtype=float).copy()
        p_tilde = None
        if config.mode in UNDERDAMPED_MODES:
            zeta = chain_rng.standard_normal(d) * config.noise_scale
            p_tilde = geometry_at(cs, x).proj @ zeta
        for kp1 in range(N, 0, -1):
            if config.mode in UNDERDAMPED_MODES:
                s = score(kp1, x, p_tilde)
            else:
                s = score(kp1, x, None)
            if config.mode == "olla":
                zeta = config.noise_scale * chain_rng.standard_normal(d)
                x_new = backward_step_olla(cs, config, sched, kp1, x, s, zeta, grad_f)
            elif config.mode == "ulla":
                zeta = config.noise_scale * chain_rng.standard_normal(d)
                x_new = backward_step_ulla(cs, config, sched, kp1, x, p_tilde, s, zeta, grad_f)
            else:
                x_new = None
                last_err = None
                for _ in range(config.retries + 1):
                    zeta = config.noise_scale * chain_rng.standard_normal(d)
                    try:
                        if config.mode == "olla_p":
                            x_new = backward_step_projected(cs, config, sched, kp1, x, s,
                                                            zeta, grad_f=grad_f)
                        else:
                            x_new = backward_step_projected(cs, config, sched, kp1, x, s,
                                                            zeta, p_tilde=p_tilde, grad_f=grad_f)
                        break
                    except ProjectionFailure as err:
                        last_err = err
                if x_new is None:
                    raise last_err
            if config.mode in UNDERDAMPED_MODES:
                # momentum for the next (earlier) step from the pair just made
                p_tilde = geometry_at(cs, x_new).proj @ (
                    (x - x_new) / (sigma_at(sched, kp1) ** 2 * dt))
            x = x_new
        if config.terminal_projection and cs.n_eq:
            x = newton_project(cs, x, x, max_iter=config.newton_max_iter,
                               tol=config.newton_tol)
        return x

    chain_rngs = rng.spawn(n_samples)
    out = []
    failures = 0

    def attempt(r):
        try:
            return run_chain(r)
        except (ProjectionFailure, NonFiniteState):
            return None

    if threads > 1 and n_samples > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(attempt, chain_rngs))
    else:
        results = [attempt(r) for r in chain_rngs]
    for r in results:
        if r is None:
            failures += 1
        else:
            out.append(r)
    samples = np.array(out) if out else np.zeros((0, d))
    return samples, failures


# ---------------------------------------------------------------------------
# closed-form decay oracle
# ---------------------------------------------------------------------------

def _invert_S(sched: NoiseSchedule, target: float) -> float:
    """Smallest t >= 0 with S(t) = target (S is strictly increasing)."""
    c = (sched.sigma_max - sched.sigma_min) / sched.T
    s0 = sched.sigma_min
    if c == 0:
        return target / (s0 * s0)
    roots = np.roots([c * c / 3.0, s0 * c, s0 * s0, -target])
    real = roots[np.abs(roots.imag) < 1e-10].real
    real = real[real >= -1e-12]
    return float(np.min(real))


def decay_oracle(cs, sched, alpha, x_0, t):
    """Lemma-style predictions: h decays as h(x0) e^{-alpha S(t)}; an active
    inequality follows -eps + (g(x0)+eps) e^{-alpha S(t)} until it crosses
    zero at tau, after which the prediction is pinned at the boundary.

    Returns (h_pred, g_pred, tau); tau_j is 0 when g_j(x0) < 0, and g_pred_j
    is just g_j(x0) in that case (an inactive constraint does not move).
    """
    x_0 = np.asarray(x_0, dtype=float)
    decay = float(np.exp(-alpha * cumulative_S(sched, t)))
    h_pred = np.asarray(cs.h(x_0), dtype=float) * decay if cs.n_eq else np.zeros(0)
    if cs.n_ineq == 0:
        return h_pred, np.zeros(0), np.zeros(0)
    g0 = np.atleast_1d(np.asarray(cs.g(x_0), dtype=float))
    eps = cs.epsilon
    tau = np.zeros_like(g0)
    g_pred = g0.copy()
    for j, gj in enumerate(g0):
        if gj < 0:
            continue
        tau[j] = _invert_S(sched, np.log((gj + eps) / eps) / alpha)
        g_pred[j] = -eps + (gj + eps) * decay if t <= tau[j] else 0.0
    return h_pred, g_pred, tau


# ---------------------------------------------------------------------------
# trajectory I/O
# ---------------------------------------------------------------------------

_TRAJ_MAGIC = b"LDTRAJ01"


def dump_trajectory(traj: Trajectory, path):
    """32-byte header {magic, d, N, mode index} + row-major LE float64 states."""
    N_, d = traj.states.shape[0] - 1, traj.states.shape[1]
    header = struct.pack("<8sIII12x", _TRAJ_MAGIC, d, N_, MODES.index(traj.config.mode))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(traj.states, dtype="<f8").tobytes())


def load_trajectory_states(path):
    """Read back (states, mode) from a trajectory dump."""
    with open(path, "rb") as fh:
        header = fh.read(32)
        magic, d, N_, mode_idx = struct.unpack("<8sIII12x", header)
        if magic != _TRAJ_MAGIC:
            raise ValueError(f"bad trajectory magic {magic!r}")
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(N_ + 1, d)
    return data.copy(), MODES[mode_idx]


def trajectory_to_csv(traj: Trajectory, path):
    d = traj.states.shape[1]
    cols = ["step"] + [f"x{i}" for i in range(d)] + ["h_inf", "g_plus_max"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(traj.states.shape[0]):
            row = [str(k)] + ["%.17g" % v for v in traj.states[k]]
            row += ["%.17g" % traj.h_inf[k], "%.17g" % traj.g_plus_max[k]]
            fh.write(",".join(row) + "\n")
