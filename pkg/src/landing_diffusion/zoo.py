"""Built-in tasks: constraint sets, priors, and synthetic datasets.

Desk-scale stand-ins for the full experiment families: von Mises-Fisher
mixtures on S^2, rotation-group tasks SO(n), a unit disk (inequality only),
and a sphere cap mixing both constraint kinds.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import ConstraintSet, geometry_at, newton_project


@dataclass
class TaskSpec:
    name: str
    cs: ConstraintSet
    f: Optional[Callable] = None        # target potential, None means 0
    grad_f: Optional[Callable] = None
    prior_kind: str = "uniform_manifold"
    metric_recipe: str = "spherical_histogram"
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Constraint sets
# ---------------------------------------------------------------------------

def make_sphere(d: int = 3) -> TaskSpec:
    """Unit sphere in R^d: h(x) = |x|^2 - 1."""
    if d < 2:
        raise ValueError("d must be >= 2")
    eye = np.eye(d)

    def h(x):
        return np.sum(x * x, axis=-1, keepdims=True) - 1.0

    def grad_h(x):
        return 2.0 * np.asarray(x)[..., None, :]

    def hess_h(x):
        return 2.0 * eye[None]

    cs = ConstraintSet(dim=d, n_eq=1, n_ineq=0, h=h, grad_h=grad_h, hess_h=hess_h)
    return TaskSpec(name=f"sphere{d}", cs=cs, meta={"d": d})


def make_disk(d: int = 2, epsilon: float = 0.05) -> TaskSpec:
    """Unit ball in R^d as a pure inequality task: g(x) = |x|^2 - 1 <= 0."""
    if d < 2:
        raise ValueError("d must be >= 2")
    eye = np.eye(d)

    def g(x):
        return np.sum(x * x, axis=-1, keepdims=True) - 1.0

    def grad_g(x):
        return 2.0 * np.asarray(x)[..., None, :]

    def hess_g(x):
        return 2.0 * eye[None]

    cs = ConstraintSet(dim=d, n_eq=0, n_ineq=1, g=g, grad_g=grad_g, hess_g=hess_g,
                       epsilon=epsilon)
    return TaskSpec(name=f"disk{d}", cs=cs, metric_recipe="coordinate",
                    meta={"d": d, "epsilon": epsilon})


def make_sphere_cap(zmax: float, d: int = 3, epsilon: float = 0.05) -> TaskSpec:
    """Unit sphere with the cap z > zmax cut away: feasible iff x_last <= zmax."""
    if not -1.0 < zmax < 1.0:
        raise ValueError("zmax must lie strictly inside (-1, 1)")
    eye = np.eye(d)
    ez = eye[d - 1]

    def h(x):
        return np.sum(x * x, axis=-1, keepdims=True) - 1.0

    def grad_h(x):
        return 2.0 * np.asarray(x)[..., None, :]

    def hess_h(x):
        return 2.0 * eye[None]

    def g(x):
        return np.asarray(x)[..., d - 1:d] - zmax

    def grad_g(x):
        x = np.asarray(x)
        return np.broadcast_to(ez, x.shape[:-1] + (1, d)).copy()

    def hess_g(x):
        return np.zeros((1, d, d))

    cs = ConstraintSet(dim=d, n_eq=1, n_ineq=1, h=h, grad_h=grad_h, hess_h=hess_h,
                       g=g, grad_g=grad_g, hess_g=hess_g, epsilon=epsilon)
    return TaskSpec(name=f"cap{d}", cs=cs, meta={"d": d, "zmax": zmax, "epsilon": epsilon})


def make_son(n: int) -> TaskSpec:
    """SO(n) embedded in R^(n*n): upper-triangular rows of X^T X - I.

    That is n(n+1)/2 equality constraints; det = +1 is enforced by the priors
    and by rejection at output time, never as a constraint row.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    d = n * n
    iu, ju = np.triu_indices(n)
    m = len(iu)
    eye_n = np.eye(n)

    def h(x):
        X = np.asarray(x).reshape(np.asarray(x).shape[:-1] + (n, n))
        P = np.einsum("...ai,...aj->...ij", X, X)
        return P[..., iu, ju] - eye_n[iu, ju]

    def grad_h(x):
        X = np.asarray(x).reshape(np.asarray(x).shape[:-1] + (n, n))
        batch = X.shape[:-2]
        G = np.zeros(batch + (m, n, n))
        for r in range(m):
            i, j = iu[r], ju[r]
            G[..., r, :, i] += X[..., :, j]
            G[..., r, :, j] += X[..., :, i]
        return G.reshape(batch + (m, d))

    hess_cache = {}

    def hess_h(x):
        if "H" not in hess_cache:
            H = np.zeros((m, d, d))
            for r in range(m):
                i, j = iu[r], ju[r]
                for a in range(n):
                    H[r, a * n + i, a * n + j] += 1.0
                    H[r, a * n + j, a * n + i] += 1.0
            hess_cache["H"] = H
        return hess_cache["H"]

    cs = ConstraintSet(dim=d, n_eq=m, n_ineq=0, h=h, grad_h=grad_h, hess_h=hess_h)
    return TaskSpec(name=f"so{n}", cs=cs, prior_kind="empirical_terminal",
                    metric_recipe="power_trace", meta={"n": n, "m": m})


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

def _uniform_sphere(d, rng, size):
    z = rng.standard_normal((size, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _haar_son(n, rng, size):
    Z = rng.standard_normal((size, n, n))
    Q, R = np.linalg.qr(Z)
    # fix the QR sign ambiguity to get Haar on O(n), then flip the last
    # column of the det=-1 draws onto SO(n)
    diag = np.einsum("bii->bi", R)
    Q = Q * np.sign(np.where(diag == 0, 1.0, diag))[:, None, :]
    dets = np.linalg.det(Q)
    Q[dets < 0, :, -1] *= -1.0
    return Q.reshape(size, n * n)


def prior_uniform(task: TaskSpec, rng, n: int) -> np.ndarray:
    """n i.i.d. uniform samples on the task's manifold (rejection for caps)."""
    name = task.name
    if name.startswith("sphere"):
        return _uniform_sphere(task.cs.dim, rng, n)
    if name.startswith("so"):
        return _haar_son(task.meta["n"], rng, n)
    if name.startswith("cap"):
        out = []
        have = 0
        while have < n:
            cand = _uniform_sphere(task.cs.dim, rng, 2 * (n - have) + 16)
            ok = cand[task.cs.g(cand)[:, 0] <= 0.0]
            out.append(ok)
            have += len(ok)
        return np.concatenate(out)[:n]
    if name.startswith("disk"):
        d = task.cs.dim
        dirs = _uniform_sphere(d, rng, n)
        radii = rng.random(n) ** (1.0 / d)
        return dirs * radii[:, None]
    raise ValueError(f"no uniform prior for task {name!r}")


def prior_momentum(task: TaskSpec, x: np.ndarray, rng) -> np.ndarray:
    """Tangential momentum draw Pi(x) zeta with zeta standard normal."""
    cache = geometry_at(task.cs, x)
    return cache.proj @ rng.standard_normal(task.cs.dim)


def prior_empirical_terminal(cs, config, sched, dataset, rng, pool_size: int):
    """Terminal-state pool prior: run pool_size forward chains from resampled
    data points, keep their terminal states, and sample uniformly from the
    pool. Returns a sampler closure taking an rng."""
    from .dynamics import simulate_forward

    dataset = np.asarray(dataset, dtype=float)
    idx = rng.integers(0, len(dataset), size=pool_size)
    pool = np.empty((pool_size, cs.dim))
    for i, row in enumerate(idx):
        traj = simulate_forward(cs, config, sched, dataset[row], rng)
        pool[i] = traj.states[-1]

    def sampler(rng_in):
        return pool[rng_in.integers(0, pool_size)]

    sampler.pool = pool
    return sampler


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def _sample_vmf(mu, kappa, n, rng):
    """von Mises-Fisher draws via Wood's rejection scheme."""
    mu = np.asarray(mu, dtype=float)
    d = mu.shape[0]
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if kappa == 0:
        return _uniform_sphere(d, rng, n)
    b = (-2.0 * kappa + np.sqrt(4.0 * kappa ** 2 + (d - 1) ** 2)) / (d - 1)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (d - 1) * np.log(1.0 - x0 ** 2)
    ws = np.empty(n)
    have = 0
    while have < n:
        k = 2 * (n - have) + 16
        z = rng.beta((d - 1) / 2.0, (d - 1) / 2.0, size=k)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.random(k)
        ok = kappa * w + (d - 1) * np.log(1.0 - x0 * w) - c >= np.log(u)
        w = w[ok][: n - have]
        ws[have:have + len(w)] = w
        have += len(w)
    # tangential directions orthogonal to e_d, then rotate e_d -> mu
    v = _uniform_sphere(d - 1, rng, n)
    out = np.concatenate([v * np.sqrt(1.0 - ws ** 2)[:, None], ws[:, None]], axis=1)
    e_last = np.zeros(d)
    e_last[-1] = 1.0
    u_h = e_last - mu
    nu = np.linalg.norm(u_h)
    if nu > 1e-12:
        u_h /= nu
        out = out - 2.0 * np.outer(out @ u_h, u_h)
    return out


def dataset_vmf_mixture(task: TaskSpec, modes, weights, n: int, rng) -> np.ndarray:
    """Mixture of von Mises-Fisher components on the task sphere.

    modes: sequence of (mean direction, concentration) pairs. Mean directions
    are normalized; component counts are multinomial in the weights.
    """
    weights = np.asarray(weights, dtype=float)
    if len(weights) != len(modes) or abs(weights.sum() - 1.0) > 1e-9 or np.any(weights < 0):
        raise ValueError("weights must be a distribution over the modes")
    counts = rng.multinomial(n, weights)
    parts = []
    for (mu, kappa), cnt in zip(modes, counts):
        if cnt == 0:
            continue
        mu = np.asarray(mu, dtype=float)
        mu = mu / np.linalg.norm(mu)
        parts.append(_sample_vmf(mu, float(kappa), int(cnt), rng))
    samples = np.concatenate(parts)
    return samples[rng.permutation(n)]


def _expm_skew(A):
    # exact exponential of a real skew-symmetric matrix: iA is Hermitian
    w, V = np.linalg.eigh(1j * A)
    return (V @ (np.exp(-1j * w)[:, None] * V.conj().T)).real


def dataset_son_mixture(n: int, n_modes: int, concentration: float,
                        n_samples: int, rng, mode_seed=None) -> np.ndarray:
    """Concentrated perturbations around n_modes fixed rotations in SO(n).

    Each sample is mode @ exp(S) with S skew-symmetric Gaussian of scale
    1/sqrt(concentration), Newton-polished back onto the manifold. The mode
    rotations come from rng unless mode_seed pins them, which lets two
    independently seeded draws (dataset and held-out reference) share one
    mixture.
    """
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    task = make_son(n)
    mode_rng = rng if mode_seed is None else np.random.default_rng(mode_seed)
    modes = _haar_son(n, mode_rng, n_modes).reshape(n_modes, n, n)
    scale = 1.0 / np.sqrt(concentration)
    il, jl = np.tril_indices(n, k=-1)
    out = np.empty((n_samples, n * n))
    which = rng.integers(0, n_modes, size=n_samples)
    for i in range(n_samples):
        S = np.zeros((n, n))
        xi = rng.standard_normal(len(il)) * scale
        S[il, jl] = xi
        S -= S.T
        X = modes[which[i]] @ _expm_skew(S)
        out[i] = newton_project(task.cs, X.ravel(), X.ravel(), max_iter=20, tol=1e-12)
    return out
