"""Constraint-set geometry: active sets, stacked Jacobians, tangent projectors,
curvature corrections, and Newton projection onto the feasible set.

The feasible set is Sigma = {x : h(x) = 0, g(x) <= 0}. Inequalities with
g_j(x) >= 0 are promoted into the working equality stack with an offset
epsilon, so the stacked constraint vector is J(x) = [h(x), g_active(x) + eps].
All pseudo-inverses go through an SVD with a relative cutoff so that
rank-deficient (e.g. duplicated) constraint rows are handled smoothly.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np


class MissingHessian(RuntimeError):
    """Raised when a curvature quantity is requested but the constraint
    set carries no Hessian callables."""


class ProjectionFailure(RuntimeError):
    """Newton projection did not reach the feasibility tolerance."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class ConstraintSet:
    """Bundle of constraint callables defining the feasible set.

    h maps (d,) -> (m,) and grad_h maps (d,) -> (m, d); likewise g/grad_g
    with l rows. Either family may be absent (None). Hessian callables are
    optional and return (m, d, d) / (l, d, d) stacks. h/g/grad_h/grad_g
    should broadcast over a leading batch axis ((B, d) -> (B, m) etc.) if
    the set is to be used with the vectorized ensemble simulators.
    """

    dim: int
    n_eq: int
    n_ineq: int
    h: Optional[Callable] = None
    g: Optional[Callable] = None
    grad_h: Optional[Callable] = None
    grad_g: Optional[Callable] = None
    hess_h: Optional[Callable] = None
    hess_g: Optional[Callable] = None
    epsilon: float = 0.0
    rank_tol: float = 1e-8

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.epsilon == 0 and self.n_ineq > 0:
            raise ValueError("epsilon = 0 is only permitted without inequalities")
        if (self.h is None) != (self.n_eq == 0):
            raise ValueError("h and n_eq disagree")
        if (self.g is None) != (self.n_ineq == 0):
            raise ValueError("g and n_ineq disagree")

    @property
    def has_hessians(self) -> bool:
        ok_h = self.n_eq == 0 or self.hess_h is not None
        ok_g = self.n_ineq == 0 or self.hess_g is not None
        return ok_h and ok_g


@dataclass(frozen=True)
class GeometryCache:
    """All per-point geometric quantities, immutable once built."""

    x: np.ndarray
    active: Tuple[int, ...]
    J: np.ndarray          # (M,) stacked residuals, M = m + |active|
    gradJ: np.ndarray      # (M, d)
    gram_pinv: np.ndarray  # (M, M) Moore-Penrose inverse of gradJ gradJ^T
    proj: np.ndarray       # (d, d) tangent projector
    rank: int


def active_set(cs: ConstraintSet, x: np.ndarray) -> Tuple[int, ...]:
    """Indices j (0-based, ascending) with g_j(x) >= 0."""
    if cs.n_ineq == 0:
        return ()
    gx = np.asarray(cs.g(x), dtype=float)
    return tuple(int(j) for j in np.nonzero(gx >= 0.0)[0])


def stacked_constraints(cs: ConstraintSet, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked residual vector J(x) and its Jacobian, equalities first."""
    x = np.asarray(x, dtype=float)
    parts, grads = [], []
    if cs.n_eq > 0:
        parts.append(np.atleast_1d(np.asarray(cs.h(x), dtype=float)))
        grads.append(np.atleast_2d(np.asarray(cs.grad_h(x), dtype=float)))
    act = active_set(cs, x)
    if act:
        gx = np.atleast_1d(np.asarray(cs.g(x), dtype=float))
        gg = np.atleast_2d(np.asarray(cs.grad_g(x), dtype=float))
        idx = list(act)
        parts.append(gx[idx] + cs.epsilon)
        grads.append(gg[idx])
    if not parts:
        return np.zeros(0), np.zeros((0, cs.dim))
    return np.concatenate(parts), np.vstack(grads)


def geometry_at(cs: ConstraintSet, x: np.ndarray) -> GeometryCache:
    """Compute the stacked constraints, Gram pseudo-inverse, and projector.

    G = gradJ gradJ^T is inverted through the SVD of gradJ with singular
    values below rank_tol * s_max zeroed; Pi = I - V_keep V_keep^T where
    V_keep spans the retained right-singular directions. Empty stack gives
    Pi = I.
    """
    x = np.asarray(x, dtype=float)
    J, gradJ = stacked_constraints(cs, x)
    d = cs.dim
    act = active_set(cs, x)
    if J.shape[0] == 0:
        return GeometryCache(x=x, active=act, J=J, gradJ=gradJ,
                             gram_pinv=np.zeros((0, 0)), proj=np.eye(d), rank=0)
    U, s, Vt = np.linalg.svd(gradJ, full_matrices=False)
    if s[0] > 0:
        keep = s > cs.rank_tol * s[0]
    else:
        keep = np.zeros_like(s, dtype=bool)
    rank = int(keep.sum())
    Uk = U[:, keep]
    Vk = Vt[keep]
    # G = U diag(s^2) U^T, so its pseudo-inverse is U_keep diag(s^-2) U_keep^T
    gram_pinv = (Uk / s[keep] ** 2) @ Uk.T
    proj = np.eye(d) - Vk.T @ Vk
    return GeometryCache(x=x, active=act, J=J, gradJ=gradJ,
                         gram_pinv=gram_pinv, proj=proj, rank=rank)


def landing_direction(cache: GeometryCache) -> np.ndarray:
    """Unscaled landing direction gradJ^T Gdag J (callers scale and negate)."""
    if cache.J.shape[0] == 0:
        return np.zeros_like(cache.x)
    return cache.gradJ.T @ (cache.gram_pinv @ cache.J)


def _stacked_hessians(cs: ConstraintSet, cache: GeometryCache) -> np.ndarray:
    if not cs.has_hessians:
        raise MissingHessian("constraint set has no Hessian callables")
    blocks = []
    if cs.n_eq > 0:
        blocks.append(np.asarray(cs.hess_h(cache.x), dtype=float))
    if cache.active:
        hg = np.asarray(cs.hess_g(cache.x), dtype=float)
        blocks.append(hg[list(cache.active)])
    if not blocks:
        return np.zeros((0, cs.dim, cs.dim))
    return np.concatenate(blocks, axis=0)


def mean_curvature(cache: GeometryCache, cs: ConstraintSet) -> np.ndarray:
    """H(x) = -gradJ^T Gdag [tr(hess J_i  Pi)]_i, zero for an empty stack."""
    if cache.J.shape[0] == 0:
        return np.zeros_like(cache.x)
    hess = _stacked_hessians(cs, cache)
    traces = np.einsum("ijk,kj->i", hess, cache.proj)
    return -cache.gradJ.T @ (cache.gram_pinv @ traces)


def curvature_H1(cache: GeometryCache, cs: ConstraintSet, p: np.ndarray) -> np.ndarray:
    """Entries p^T hess(J_i) p."""
    hess = _stacked_hessians(cs, cache)
    p = np.asarray(p, dtype=float)
    return np.einsum("j,ijk,k->i", p, hess, p)


def curvature_H2(cache: GeometryCache, cs: ConstraintSet, p: np.ndarray) -> np.ndarray:
    """Matrix with M_ij = p^T hess(J_i) gradJ_j^T (Gdag J)_j.

    Its row-sum over j is the vector [p^T hess(J_i) (gradJ^T Gdag J)]_i that
    enters the underdamped drift; kernels consume the row-sum.
    """
    hess = _stacked_hessians(cs, cache)
    p = np.asarray(p, dtype=float)
    M = cache.J.shape[0]
    if M == 0:
        return np.zeros((0, 0))
    w = cache.gram_pinv @ cache.J          # (M,)
    A = np.einsum("j,ijk->ik", p, hess)    # rows p^T hess(J_i)
    return A @ (cache.gradJ.T * w[None, :])


def newton_project(cs: ConstraintSet, x0: np.ndarray, anchor: np.ndarray,
                   max_iter: int = 50, tol: float = 1e-10) -> np.ndarray:
    """Project x0 onto {h = 0} along range(grad_h(anchor)^T), then check g.

    Gauss-Newton on the multipliers lam with x = x0 + grad_h(anchor)^T lam;
    the anchor Jacobian stays frozen while the residual Jacobian is refreshed
    each iteration. Damped by step halving (up to 20) whenever the residual
    norm would increase. Raises ProjectionFailure on stagnation, non-finite
    iterates, or an infeasible inequality at the solution.
    """
    x0 = np.asarray(x0, dtype=float)
    anchor = np.asarray(anchor, dtype=float)

    def _ineq_ok(x):
        if cs.n_ineq == 0:
            return True
        return bool(np.all(np.asarray(cs.g(x), dtype=float) <= tol))

    if cs.n_eq == 0:
        if _ineq_ok(x0):
            return x0
        raise ProjectionFailure("inequalities infeasible and no equality rows to move along",
                                iterations=0, residual=float(np.max(cs.g(x0))))

    A = np.atleast_2d(np.asarray(cs.grad_h(anchor), dtype=float))  # frozen rows
    x = x0.copy()
    r = np.atleast_1d(np.asarray(cs.h(x), dtype=float))
    res = float(np.max(np.abs(r)))
    if res <= tol:
        if _ineq_ok(x):
            return x
        raise ProjectionFailure("equalities satisfied but inequalities violated",
                                iterations=0, residual=float(np.max(cs.g(x))))

    for it in range(1, max_iter + 1):
        Jx = np.atleast_2d(np.asarray(cs.grad_h(x), dtype=float))
        # residual Jacobian in lambda space: d h(x0 + A^T lam) / d lam = Jx A^T
        sys = Jx @ A.T
        try:
            dlam = -np.linalg.pinv(sys, rcond=cs.rank_tol) @ r
        except np.linalg.LinAlgError:
            raise ProjectionFailure("singular multiplier system", it, res)
        step = A.T @ dlam
        scale = 1.0
        for _ in range(20):
            x_new = x + scale * step
            r_new = np.atleast_1d(np.asarray(cs.h(x_new), dtype=float))
            if np.all(np.isfinite(r_new)) and np.max(np.abs(r_new)) < res:
                break
            scale *= 0.5
        else:
            raise ProjectionFailure("no descent after 20 halvings", it, res)
        x, r = x_new, r_new
        res = float(np.max(np.abs(r)))
        if not np.all(np.isfinite(x)):
            raise ProjectionFailure("non-finite iterate", it, res)
        if res <= tol:
            if _ineq_ok(x):
                return x
            raise ProjectionFailure("projected point violates inequalities",
                                    it, float(np.max(cs.g(x))))
    raise ProjectionFailure("max iterations reached", max_iter, res)


# ---------------------------------------------------------------------------
# Batched geometry for ensemble simulation (equality-only constraint sets).
# Same formulas as geometry_at, vectorized over a leading chain axis.
# ---------------------------------------------------------------------------

def batch_geometry(cs: ConstraintSet, X: np.ndarray):
    """Per-chain (J, proj, landing) for a batch X of shape (B, d).

    Requires an equality-only constraint set whose h/grad_h broadcast over
    the batch axis; active sets would make the stack height nonuniform.
    Returns J (B, m), proj (B, d, d), landing (B, d) = gradJ^T Gdag J.
    """
    if cs.n_ineq != 0:
        raise ValueError("batched geometry requires an equality-only constraint set")
    B, d = X.shape
    if cs.n_eq == 0:
        eye = np.broadcast_to(np.eye(d), (B, d, d))
        return np.zeros((B, 0)), eye, np.zeros((B, d))
    J = np.asarray(cs.h(X), dtype=float).reshape(B, cs.n_eq)
    gradJ = np.asarray(cs.grad_h(X), dtype=float).reshape(B, cs.n_eq, d)
    if cs.n_eq == 1:
        # closed form for a single row: G is scalar
        row = gradJ[:, 0, :]
        G = np.einsum("bd,bd->b", row, row)
        inv = np.where(G > 0, 1.0 / np.where(G > 0, G, 1.0), 0.0)
        landing = row * (J[:, 0] * inv)[:, None]
        proj = np.eye(d)[None] - inv[:, None, None] * np.einsum("bi,bj->bij", row, row)
        return J, proj, landing
    U, s, Vt = np.linalg.svd(gradJ, full_matrices=False)
    keep = s > cs.rank_tol * s[:, :1]
    inv2 = np.where(keep, 1.0 / np.where(keep, s, 1.0) ** 2, 0.0)
    gram_pinv = np.einsum("bmk,bk,bnk->bmn", U, inv2, U)
    kf = keep.astype(float)
    proj = np.eye(d)[None] - np.einsum("bkd,bk,bke->bde", Vt, kf, Vt)
    landing = np.einsum("bmd,bm->bd", gradJ, np.einsum("bmn,bn->bm", gram_pinv, J))
    return J, proj, landing
