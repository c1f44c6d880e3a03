import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from landing_diffusion.geometry import (
    ConstraintSet,
    MissingHessian,
    ProjectionFailure,
    active_set,
    stacked_constraints,
    geometry_at,
    landing_direction,
    mean_curvature,
    curvature_H1,
    curvature_H2,
    newton_project,
    batch_geometry,
)
from landing_diffusion.zoo import make_sphere, make_disk, make_sphere_cap, make_son


SPHERE = make_sphere(3).cs
DISK = make_disk(2).cs
CAP = make_sphere_cap(0.5).cs
SO3 = make_son(3).cs


def fd_jacobian(fn, x, m, eps=1e-6):
    x = np.asarray(x, dtype=float)
    out = np.zeros((m, len(x)))
    for i in range(len(x)):
        dx = np.zeros_like(x)
        dx[i] = eps
        out[:, i] = (np.atleast_1d(fn(x + dx)) - np.atleast_1d(fn(x - dx))) / (2 * eps)
    return out


# ---------------------------------------------------------------------------
# active set / stacking
# ---------------------------------------------------------------------------

def test_active_set_interior():
    assert active_set(DISK, np.array([0.5, 0.0])) == ()


def test_active_set_outside():
    # g = 1.44 - 1 = 0.44 >= 0
    assert active_set(DISK, np.array([1.2, 0.0])) == (0,)


def test_active_set_boundary_counts():
    assert active_set(DISK, np.array([1.0, 0.0])) == (0,)


def test_stack_sphere():
    J, gradJ = stacked_constraints(SPHERE, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(J, [0.0], atol=1e-15)
    np.testing.assert_allclose(gradJ, [[2.0, 0.0, 0.0]])


def test_stack_disk_active_offset():
    J, gradJ = stacked_constraints(DISK, np.array([1.2, 0.0]))
    np.testing.assert_allclose(J, [0.49])
    np.testing.assert_allclose(gradJ, [[2.4, 0.0]])


def test_stack_empty_interior():
    J, gradJ = stacked_constraints(DISK, np.array([0.3, 0.1]))
    assert J.shape == (0,)
    assert gradJ.shape == (0, 2)


# ---------------------------------------------------------------------------
# projector / pseudo-inverse
# ---------------------------------------------------------------------------

def test_projector_sphere_pole():
    cache = geometry_at(SPHERE, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(cache.proj, np.diag([0.0, 1.0, 1.0]), atol=1e-14)
    assert cache.rank == 1


def test_projector_empty_stack_identity():
    cache = geometry_at(DISK, np.array([0.2, 0.2]))
    np.testing.assert_allclose(cache.proj, np.eye(2))
    assert cache.rank == 0
    np.testing.assert_allclose(landing_direction(cache), np.zeros(2))


def test_duplicate_rows_collapse():
    # h1 = x1, h2 = x1: rank 1, projector kills the first coordinate only
    def h(x):
        return np.array([x[0], x[0]])

    def grad_h(x):
        return np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])

    dup = ConstraintSet(dim=3, n_eq=2, n_ineq=0, h=h, grad_h=grad_h)
    cache = geometry_at(dup, np.array([0.3, 0.1, -0.2]))
    assert cache.rank == 1
    np.testing.assert_allclose(cache.proj, np.diag([0.0, 1.0, 1.0]), atol=1e-12)

    single = ConstraintSet(dim=3, n_eq=1, n_ineq=0,
                           h=lambda x: np.array([x[0]]),
                           grad_h=lambda x: np.array([[1.0, 0.0, 0.0]]))
    cache1 = geometry_at(single, np.array([0.3, 0.1, -0.2]))
    assert np.linalg.norm(cache.proj - cache1.proj) < 1e-8
    # the landing directions agree as well (rCRCQ robustness)
    np.testing.assert_allclose(landing_direction(cache), landing_direction(cache1),
                               atol=1e-12)


def mp_identities_ok(G, Gp, scale_tol):
    return (np.linalg.norm(G @ Gp @ G - G) <= scale_tol
            and np.linalg.norm(Gp @ G @ Gp - Gp) <= scale_tol * max(np.linalg.norm(Gp) / max(np.linalg.norm(G), 1e-300), 1.0)
            and np.linalg.norm((G @ Gp).T - G @ Gp) <= scale_tol
            and np.linalg.norm((Gp @ G).T - Gp @ G) <= scale_tol)


@pytest.mark.parametrize("cs,d", [(SPHERE, 3), (CAP, 3), (SO3, 9), (DISK, 2)])
def test_projector_and_pinv_identities(cs, d):
    rng = np.random.default_rng(7)
    for _ in range(200):
        x = rng.standard_normal(d) * 1.5
        cache = geometry_at(cs, x)
        P = cache.proj
        assert np.linalg.norm(P @ P - P) <= 1e-10
        assert np.linalg.norm(P - P.T) <= 1e-12
        assert np.linalg.norm(cache.gradJ @ P) <= 1e-10 * max(1.0, np.linalg.norm(cache.gradJ))
        if cache.J.shape[0]:
            G = cache.gradJ @ cache.gradJ.T
            assert mp_identities_ok(G, cache.gram_pinv, 1e-8 * max(np.linalg.norm(G), 1.0))


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30, deadline=None)
def test_projector_splits_range_and_kernel(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(9) * 2.0
    cache = geometry_at(SO3, x)
    if cache.rank == 0:
        return
    # v in the row space of gradJ is annihilated
    coeffs = rng.standard_normal(cache.gradJ.shape[0])
    v = cache.gradJ.T @ coeffs
    assert np.linalg.norm(cache.proj @ v) <= 1e-8 * max(np.linalg.norm(v), 1.0)
    # v orthogonal to every gradient row passes through unchanged
    w = rng.standard_normal(9)
    w -= cache.gradJ.T @ (np.linalg.pinv(cache.gradJ.T, rcond=1e-12) @ w)
    np.testing.assert_allclose(cache.proj @ w, w, atol=1e-8)


def test_rank_matches_svd_cutoff():
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rng.standard_normal(9)
        cache = geometry_at(SO3, x)
        s = np.linalg.svd(cache.gradJ, compute_uv=False)
        expected = int(np.sum(s > SO3.rank_tol * s[0])) if s.size and s[0] > 0 else 0
        assert cache.rank == expected


# ---------------------------------------------------------------------------
# landing direction
# ---------------------------------------------------------------------------

def test_landing_on_manifold_is_zero():
    cache = geometry_at(SPHERE, np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(landing_direction(cache), np.zeros(3), atol=1e-14)


def test_landing_sphere_offset():
    cache = geometry_at(SPHERE, np.array([1.1, 0.0, 0.0]))
    np.testing.assert_allclose(landing_direction(cache),
                               [0.09545454545454546, 0.0, 0.0], rtol=1e-14)


def test_landing_disk_with_offset():
    cache = geometry_at(DISK, np.array([1.2, 0.0]))
    np.testing.assert_allclose(landing_direction(cache),
                               [0.20416666666666666, 0.0], rtol=1e-14)


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------

def test_mean_curvature_sphere():
    rng = np.random.default_rng(11)
    for _ in range(5):
        x = rng.standard_normal(3)
        x /= np.linalg.norm(x)
        cache = geometry_at(SPHERE, x)
        np.testing.assert_allclose(mean_curvature(cache, SPHERE), -2.0 * x, atol=1e-10)


def test_mean_curvature_empty_and_affine():
    cache = geometry_at(DISK, np.array([0.1, 0.1]))
    np.testing.assert_allclose(mean_curvature(cache, DISK), np.zeros(2))

    affine = ConstraintSet(
        dim=3, n_eq=1, n_ineq=0,
        h=lambda x: np.array([x[0] + 2 * x[1] - 1.0]),
        grad_h=lambda x: np.array([[1.0, 2.0, 0.0]]),
        hess_h=lambda x: np.zeros((1, 3, 3)))
    cache = geometry_at(affine, np.array([5.0, -1.0, 2.0]))
    np.testing.assert_allclose(mean_curvature(cache, affine), np.zeros(3), atol=1e-14)


def test_missing_hessian_raises():
    bare = ConstraintSet(dim=3, n_eq=1, n_ineq=0,
                         h=lambda x: np.array([x[0]]),
                         grad_h=lambda x: np.array([[1.0, 0.0, 0.0]]))
    cache = geometry_at(bare, np.array([1.0, 0.0, 0.0]))
    with pytest.raises(MissingHessian):
        mean_curvature(cache, bare)
    with pytest.raises(MissingHessian):
        curvature_H1(cache, bare, np.zeros(3))


def test_H1_sphere():
    cache = geometry_at(SPHERE, np.array([0.3, -0.8, 0.1]))
    np.testing.assert_allclose(curvature_H1(cache, SPHERE, np.array([0.0, 1.0, 0.0])), [2.0])
    np.testing.assert_allclose(curvature_H1(cache, SPHERE, np.zeros(3)), [0.0])


def test_H2_on_manifold_zero():
    x = np.array([0.0, 0.0, 1.0])
    cache = geometry_at(SPHERE, x)
    np.testing.assert_allclose(curvature_H2(cache, SPHERE, np.array([1.0, 1.0, 0.0])),
                               np.zeros((1, 1)), atol=1e-14)


def test_H2_sphere_values():
    cache = geometry_at(SPHERE, np.array([1.1, 0.0, 0.0]))
    # p orthogonal to the landing direction gives zero
    M = curvature_H2(cache, SPHERE, np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(M, [[0.0]], atol=1e-15)
    # non-orthogonal p: p^T (2I) dir with dir = (21/220, 0, 0)
    M = curvature_H2(cache, SPHERE, np.array([1.0, 2.0, 0.0]))
    np.testing.assert_allclose(M, [[0.19090909090909092]], rtol=1e-14)


@pytest.mark.parametrize("cs,d", [(SPHERE, 3), (CAP, 3), (SO3, 9)])
def test_curvature_matches_bruteforce_fd(cs, d):
    """H, H1, H2 against contractions of finite-difference Hessians."""
    rng = np.random.default_rng(5)
    for _ in range(8):
        x = rng.standard_normal(d) * 1.2
        p = rng.standard_normal(d)
        cache = geometry_at(cs, x)
        M = cache.J.shape[0]
        if M == 0:
            continue
        eps = 1e-5
        hessJ = np.zeros((M, d, d))
        for i in range(d):
            dx = np.zeros(d)
            dx[i] = eps
            _, gp = stacked_constraints(cs, x + dx)
            _, gm = stacked_constraints(cs, x - dx)
            if gp.shape != gm.shape or gp.shape[0] != M:
                break  # active set flipped inside the stencil; skip the probe
            hessJ[:, :, i] = (gp - gm) / (2 * eps)
        else:
            tr = np.array([np.trace(hessJ[i] @ cache.proj) for i in range(M)])
            H_ref = -cache.gradJ.T @ (cache.gram_pinv @ tr)
            np.testing.assert_allclose(mean_curvature(cache, cs), H_ref,
                                       rtol=1e-4, atol=1e-6)
            h1_ref = np.array([p @ hessJ[i] @ p for i in range(M)])
            np.testing.assert_allclose(curvature_H1(cache, cs, p), h1_ref,
                                       rtol=1e-4, atol=1e-6)
            w = cache.gram_pinv @ cache.J
            h2_ref = np.array([[p @ hessJ[i] @ (cache.gradJ[j] * w[j])
                                for j in range(M)] for i in range(M)])
            np.testing.assert_allclose(curvature_H2(cache, cs, p), h2_ref,
                                       rtol=1e-4, atol=1e-6)


# ---------------------------------------------------------------------------
# newton projection
# ---------------------------------------------------------------------------

def test_newton_radial():
    x = newton_project(SPHERE, np.array([2.0, 0.0, 0.0]), np.array([2.0, 0.0, 0.0]))
    np.testing.assert_allclose(x, [1.0, 0.0, 0.0], atol=1e-9)


def test_newton_noop_on_manifold():
    x0 = np.array([0.0, 1.0, 0.0])
    assert np.array_equal(newton_project(SPHERE, x0, x0), x0)


def test_newton_degenerate_anchor_fails():
    with pytest.raises(ProjectionFailure):
        newton_project(SPHERE, np.zeros(3), np.zeros(3), max_iter=10)


def test_newton_displacement_in_anchor_range():
    rng = np.random.default_rng(13)
    for _ in range(20):
        anchor = rng.standard_normal(3)
        anchor /= np.linalg.norm(anchor)
        x0 = anchor + 0.3 * rng.standard_normal(3)
        x = newton_project(SPHERE, x0, anchor)
        assert abs(np.dot(x, x) - 1.0) <= 1e-10
        move = x - x0
        # displacement must lie along grad_h(anchor) = 2*anchor
        residual = move - anchor * (move @ anchor)
        assert np.linalg.norm(residual) <= 1e-8


def test_newton_so3():
    rng = np.random.default_rng(2)
    task = make_son(3)
    X = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    if np.linalg.det(X) < 0:
        X[:, 0] *= -1
    x0 = X.ravel() + 0.05 * rng.standard_normal(9)
    x = newton_project(task.cs, x0, x0, max_iter=40, tol=1e-11)
    assert np.max(np.abs(task.cs.h(x))) <= 1e-11


def test_newton_respects_inequalities():
    # feasible equality solution exists but lies inside the cut cap
    x0 = np.array([0.05, 0.0, 1.3])
    with pytest.raises(ProjectionFailure):
        newton_project(CAP, x0, x0)


# ---------------------------------------------------------------------------
# batched geometry agrees with the scalar path
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("task_cs,d", [(SPHERE, 3), (SO3, 9)])
def test_batch_matches_scalar(task_cs, d):
    rng = np.random.default_rng(17)
    X = rng.standard_normal((40, d)) * 1.3
    J, proj, landing = batch_geometry(task_cs, X)
    for b in range(0, 40, 7):
        cache = geometry_at(task_cs, X[b])
        np.testing.assert_allclose(J[b], cache.J, atol=1e-12)
        np.testing.assert_allclose(proj[b], cache.proj, atol=1e-10)
        np.testing.assert_allclose(landing[b], landing_direction(cache), atol=1e-10)


def test_batch_rejects_inequalities():
    with pytest.raises(ValueError):
        batch_geometry(CAP, np.zeros((4, 3)))


# ---------------------------------------------------------------------------
# gradient validation of the built-in tasks (ConstraintSet invariant)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("cs,d", [(SPHERE, 3), (DISK, 2), (CAP, 3), (SO3, 9)])
def test_builtin_gradients_match_fd(cs, d):
    rng = np.random.default_rng(23)
    for _ in range(5):
        x = rng.standard_normal(d)
        if cs.n_eq:
            ref = fd_jacobian(cs.h, x, cs.n_eq)
            got = np.atleast_2d(cs.grad_h(x))
            np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-7)
        if cs.n_ineq:
            ref = fd_jacobian(cs.g, x, cs.n_ineq)
            got = np.atleast_2d(cs.grad_g(x))
            np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("cs,d", [(SPHERE, 3), (CAP, 3), (SO3, 9)])
def test_builtin_hessians_symmetric(cs, d):
    rng = np.random.default_rng(29)
    x = rng.standard_normal(d)
    H = np.asarray(cs.hess_h(x))
    assert np.max(np.abs(H - np.transpose(H, (0, 2, 1)))) <= 1e-10
