import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landing_diffusion.dynamics import NoiseSchedule
from landing_diffusion.score import (
    ScoreNet,
    embedding_frequencies,
    sinusoidal_embedding,
    make_score_net,
    score_eval,
    score_eval_batch,
    score_grad_params,
    score_grad_params_batch,
    score_grad_input,
    save_score_net,
    load_score_net,
)


def small_net(momentum=False, seed=0):
    model = make_score_net(3, n_steps=10, hidden=(5, 4), momentum_mode=momentum,
                           embed_width=8, seed=seed)
    rng = np.random.default_rng(seed + 100)
    model.theta[...] = 0.3 * rng.standard_normal(model.theta.shape)
    return model


def fd_grad_params(model, k, x, upstream, p_tilde=None, h=1e-6):
    g = np.empty_like(model.theta)
    for i in range(model.theta.size):
        orig = model.theta[i]
        model.theta[i] = orig + h
        fp = float(score_eval(model, k, x, p_tilde) @ upstream)
        model.theta[i] = orig - h
        fm = float(score_eval(model, k, x, p_tilde) @ upstream)
        model.theta[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------

def test_embedding_frequencies_geometric():
    f = embedding_frequencies(32)
    assert len(f) == 16
    assert f[0] == 0.5
    assert f[-1] == pytest.approx(64.0)
    ratios = f[1:] / f[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)


def test_embedding_width_validation():
    with pytest.raises(ValueError):
        sinusoidal_embedding(0.5, width=7)
    with pytest.raises(ValueError):
        sinusoidal_embedding(0.5, width=0)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
def test_embedding_norm_constant(u):
    emb = sinusoidal_embedding(u, width=32)
    assert np.linalg.norm(emb) == pytest.approx(np.sqrt(16.0), rel=1e-12)


@pytest.mark.parametrize("n_steps", [10, 50, 500, 5000])
def test_embedding_step_distinguishability(n_steps):
    u = np.arange(n_steps + 1) / n_steps
    emb = sinusoidal_embedding(u, width=32)
    gaps = np.linalg.norm(np.diff(emb, axis=0), axis=1)
    assert gaps.min() > 1e-6


# ---------------------------------------------------------------------------
# construction and evaluation
# ---------------------------------------------------------------------------

def test_zero_init_gives_zero_output():
    model = make_score_net(3, n_steps=20, hidden=(16, 16))
    rng = np.random.default_rng(0)
    for k in (0, 7, 20):
        out = score_eval(model, k, rng.standard_normal(3))
        np.testing.assert_array_equal(out, np.zeros(3))


def test_momentum_mode_input_width():
    plain = make_score_net(3, n_steps=10, hidden=(8,))
    mom = make_score_net(3, n_steps=10, hidden=(8,), momentum_mode=True)
    assert plain.widths[0] == 3 + 32
    assert mom.widths[0] == 6 + 32


def test_distinct_inputs_distinct_outputs():
    model = small_net()
    a = score_eval(model, 2, np.array([1.0, 0.0, 0.0]))
    b = score_eval(model, 2, np.array([0.0, 1.0, 0.0]))
    c = score_eval(model, 3, np.array([1.0, 0.0, 0.0]))
    assert not np.allclose(a, b)
    assert not np.allclose(a, c)  # step conditioning reaches the output


def test_eval_is_deterministic():
    model = small_net()
    x = np.array([0.2, -0.4, 0.9])
    assert np.array_equal(score_eval(model, 5, x), score_eval(model, 5, x))


def test_batch_matches_single():
    model = small_net(momentum=True)
    rng = np.random.default_rng(4)
    X = rng.standard_normal((6, 3))
    P = rng.standard_normal((6, 3))
    ks = np.array([0, 1, 2, 3, 9, 10])
    batch = score_eval_batch(model, ks, X, P)
    for i in range(6):
        np.testing.assert_allclose(batch[i],
                                   score_eval(model, ks[i], X[i], P[i]),
                                   rtol=1e-12, atol=1e-15)


def test_dimension_and_mode_errors():
    model = small_net()
    with pytest.raises(ValueError):
        score_eval(model, 0, np.zeros(4))
    with pytest.raises(ValueError):
        score_eval(model, 0, np.zeros(3), np.zeros(3))  # not momentum mode
    with pytest.raises(ValueError):
        score_eval(model, 11, np.zeros(3))
    mom = small_net(momentum=True)
    with pytest.raises(ValueError):
        score_eval(mom, 0, np.zeros(3))  # missing p_tilde


def test_sigma_conditioning():
    sched = NoiseSchedule(0.1, 1.3, T=2.0, N=50)
    model = make_score_net(3, n_steps=50, conditioning="sigma", sched=sched,
                           hidden=(4,), embed_width=4)
    np.testing.assert_allclose(model.cond[0], 0.1 / 1.3)
    np.testing.assert_allclose(model.cond[50], 1.0)
    with pytest.raises(ValueError):
        make_score_net(3, n_steps=50, conditioning="sigma")


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("momentum", [False, True])
def test_grad_params_matches_fd(momentum):
    rng = np.random.default_rng(7)
    model = small_net(momentum=momentum, seed=3)
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(0, 11))
        x = rng.standard_normal(3)
        p = rng.standard_normal(3) if momentum else None
        upstream = rng.standard_normal(3)
        g = score_grad_params(model, k, x, upstream, p_tilde=p)
        g_fd = fd_grad_params(model, k, x, upstream, p_tilde=p)
        worst = max(worst, np.linalg.norm(g - g_fd) / np.linalg.norm(g_fd))
    assert worst < 1e-4


def test_grad_zero_upstream():
    model = small_net()
    g = score_grad_params(model, 1, np.array([0.5, 0.1, -0.2]), np.zeros(3))
    np.testing.assert_array_equal(g, np.zeros_like(model.theta))


def test_grad_linear_in_upstream():
    model = small_net()
    rng = np.random.default_rng(9)
    x = rng.standard_normal(3)
    u1, u2 = rng.standard_normal(3), rng.standard_normal(3)
    g1 = score_grad_params(model, 4, x, u1)
    g2 = score_grad_params(model, 4, x, u2)
    g12 = score_grad_params(model, 4, x, u1 + u2)
    np.testing.assert_allclose(g12, g1 + g2, atol=1e-12)


def test_grad_batch_equals_sum_of_rows():
    model = small_net(momentum=True, seed=5)
    rng = np.random.default_rng(12)
    X = rng.standard_normal((5, 3))
    P = rng.standard_normal((5, 3))
    U = rng.standard_normal((5, 3))
    ks = np.array([0, 3, 3, 7, 10])
    total = score_grad_params_batch(model, ks, X, U, P)
    acc = np.zeros_like(model.theta)
    for i in range(5):
        acc += score_grad_params(model, ks[i], X[i], U[i], p_tilde=P[i])
    np.testing.assert_allclose(total, acc, rtol=1e-12, atol=1e-13)


def test_grad_input_matches_fd():
    model = small_net(seed=8)
    rng = np.random.default_rng(15)
    x = rng.standard_normal(3)
    upstream = rng.standard_normal(3)
    dx, dp = score_grad_input(model, 2, x, upstream)
    assert dp is None
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (score_eval(model, 2, x + e) - score_eval(model, 2, x - e)) @ upstream / (2 * h)
        assert dx[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_fit_linear_target():
    """A one-hidden-layer net recovers s*(x) = Ax on the unit sphere."""
    rng = np.random.default_rng(0)
    A = 0.5 * rng.standard_normal((3, 3))
    X = rng.standard_normal((200, 3))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    Y = X @ A.T
    model = make_score_net(3, n_steps=10, hidden=(48,), embed_width=8, seed=1)
    ks = np.zeros(200, dtype=int)
    m = np.zeros_like(model.theta)
    v = np.zeros_like(model.theta)
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    for t in range(1, 2001):
        resid = score_eval_batch(model, ks, X) - Y
        grad = score_grad_params_batch(model, ks, X, 2.0 * resid / len(X))
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad ** 2
        model.theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    err = np.max(np.abs(score_eval_batch(model, ks, X) - Y))
    assert err < 1e-2


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = small_net(momentum=True, seed=2)
    path = tmp_path / "net.ckpt"
    save_score_net(model, path)
    back = load_score_net(path)
    assert back.widths == model.widths
    assert back.momentum_mode == model.momentum_mode
    assert back.embed_width == model.embed_width
    assert back.conditioning == model.conditioning
    assert np.array_equal(back.theta, model.theta)
    assert np.array_equal(back.cond, model.cond)
    rng = np.random.default_rng(1)
    x, p = rng.standard_normal(3), rng.standard_normal(3)
    np.testing.assert_array_equal(score_eval(back, 3, x, p),
                                  score_eval(model, 3, x, p))


def test_checkpoint_save_is_deterministic(tmp_path):
    model = small_net(seed=6)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_score_net(model, p1)
    save_score_net(model, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTANET0" + b"\x00" * 64)
    with pytest.raises(ValueError):
        load_score_net(path)


def test_checkpoint_truncated(tmp_path):
    model = small_net()
    path = tmp_path / "net.ckpt"
    save_score_net(model, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) - 16])
    with pytest.raises(ValueError):
        load_score_net(path)
