"""Score network: a small dense net with step conditioning and hand-rolled
reverse-mode gradients.

The network maps (x [, p_tilde], embedding(k)) to a d-vector. Nothing here
knows about constraints; callers project the output when they need a tangent
field. Gradients are exact (up to roundoff) and accumulated against a flat
parameter vector so optimizers can stay array-oriented.
"""

import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

_MAGIC = b"LDNET01\x00"
_CONDITIONING = ("step", "sigma")
# geometric frequency ladder for the sinusoidal features, 0.5 .. 64 cycles
# over the unit interval
_FREQ_LO = 0.5
_FREQ_HI = 64.0


def embedding_frequencies(width: int) -> np.ndarray:
    if width < 2 or width % 2:
        raise ValueError("embedding width must be a positive even number")
    n = width // 2
    if n == 1:
        return np.array([_FREQ_LO])
    return _FREQ_LO * (_FREQ_HI / _FREQ_LO) ** (np.arange(n) / (n - 1))


def sinusoidal_embedding(u, width: int = 32) -> np.ndarray:
    """Sinusoidal features of a scalar (or array of scalars) in [0, 1].

    The lowest frequency completes half a cycle over the interval, so
    consecutive step indices stay distinguishable for any realistic chain
    length; the norm of every embedding is sqrt(width / 2).
    """
    freqs = embedding_frequencies(width)
    u_arr = np.asarray(u, dtype=float)
    ang = 2.0 * np.pi * u_arr[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


@dataclass
class ScoreNet:
    """Flat-parameter dense network with per-step conditioning values.

    widths holds the full layer sizes (input, hidden..., output); cond holds
    the scalar fed to the embedding for each step index 0..N.
    """

    widths: Tuple[int, ...]
    theta: np.ndarray
    cond: np.ndarray
    d: int
    momentum_mode: bool
    embed_width: int
    conditioning: str

    @property
    def n_steps(self) -> int:
        return len(self.cond) - 1

    @property
    def n_params(self) -> int:
        return self.theta.size


def _param_count(widths: Sequence[int]) -> int:
    return sum(n_out * n_in + n_out
               for n_in, n_out in zip(widths[:-1], widths[1:]))


def _unpack(theta: np.ndarray, widths: Sequence[int]):
    """Views of the flat vector as (W, b) pairs; no copies."""
    layers = []
    pos = 0
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        W = theta[pos:pos + n_out * n_in].reshape(n_out, n_in)
        pos += n_out * n_in
        b = theta[pos:pos + n_out]
        pos += n_out
        layers.append((W, b))
    return layers


def make_score_net(d, n_steps, hidden=(128, 128, 128), momentum_mode=False,
                   embed_width=32, conditioning="step", sched=None, seed=0):
    """Build a network with variance-scaled hidden layers and a zero final
    layer, so the untrained score is identically zero.

    conditioning='sigma' embeds sigma_k / sigma_max instead of k / N and
    needs the noise schedule at build time.
    """
    if conditioning not in _CONDITIONING:
        raise ValueError(f"conditioning must be one of {_CONDITIONING}")
    if n_steps < 1:
        raise ValueError("need at least one step")
    n_in = d * (2 if momentum_mode else 1) + embed_width
    widths = (n_in,) + tuple(int(w) for w in hidden) + (d,)
    if any(w < 1 for w in widths):
        raise ValueError("layer widths must be positive")

    if conditioning == "sigma":
        if sched is None:
            raise ValueError("sigma conditioning requires the noise schedule")
        from .dynamics import sigma_at
        cond = np.array([sigma_at(sched, k) / sched.sigma_max
                         for k in range(n_steps + 1)])
    else:
        cond = np.arange(n_steps + 1) / n_steps

    rng = np.random.default_rng(seed)
    theta = np.zeros(_param_count(widths))
    layers = _unpack(theta, widths)
    for W, _ in layers[:-1]:
        W[...] = rng.standard_normal(W.shape) / np.sqrt(W.shape[1])
    # final layer stays zero
    return ScoreNet(widths=widths, theta=theta, cond=cond, d=d,
                    momentum_mode=momentum_mode, embed_width=embed_width,
                    conditioning=conditioning)


def _assemble_input(model: ScoreNet, ks, X, P=None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.d:
        raise ValueError(f"expected points of dimension {model.d}")
    ks = np.atleast_1d(np.asarray(ks))
    if ks.shape[0] == 1 and X.shape[0] > 1:
        ks = np.repeat(ks, X.shape[0])
    if np.any(ks < 0) or np.any(ks >= len(model.cond)):
        raise ValueError("step index outside the schedule")
    cols = [X]
    if model.momentum_mode:
        if P is None:
            raise ValueError("momentum-mode network needs p_tilde")
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape != X.shape:
            raise ValueError("p_tilde must match x in shape")
        cols.append(P)
    elif P is not None:
        raise ValueError("this network was not built in momentum mode")
    cols.append(sinusoidal_embedding(model.cond[ks], model.embed_width))
    return np.concatenate(cols, axis=1)


def _forward(model: ScoreNet, Z: np.ndarray):
    layers = _unpack(model.theta, model.widths)
    hs = [Z]
    h = Z
    for W, b in layers[:-1]:
        h = np.tanh(h @ W.T + b)
        hs.append(h)
    W, b = layers[-1]
    return h @ W.T + b, hs


def _backward(model: ScoreNet, hs, upstream: np.ndarray):
    """Reverse accumulation; returns (flat parameter grad, input grad)."""
    layers = _unpack(model.theta, model.widths)
    grad = np.zeros_like(model.theta)
    gl = _unpack(grad, model.widths)
    delta = np.atleast_2d(upstream)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        gW, gb = gl[i]
        gW += delta.T @ hs[i]
        gb += delta.sum(axis=0)
        delta = delta @ W
        if i > 0:
            delta = delta * (1.0 - hs[i] ** 2)
    return grad, delta


def score_eval(model: ScoreNet, k: int, x, p_tilde=None) -> np.ndarray:
    """Raw network output for one query; callers project if they need a
    tangent vector."""
    Z = _assemble_input(model, k, x, p_tilde)
    out, _ = _forward(model, Z)
    return out[0]


def score_eval_batch(model: ScoreNet, ks, X, P=None) -> np.ndarray:
    Z = _assemble_input(model, ks, X, P)
    out, _ = _forward(model, Z)
    return out


def score_grad_params(model: ScoreNet, k: int, x, upstream,
                      p_tilde=None) -> np.ndarray:
    """d(loss)/d(theta) for one query with upstream = d(loss)/d(output)."""
    Z = _assemble_input(model, k, x, p_tilde)
    _, hs = _forward(model, Z)
    grad, _ = _backward(model, hs, np.atleast_2d(upstream))
    return grad


def score_grad_params_batch(model: ScoreNet, ks, X, upstream,
                            P=None) -> np.ndarray:
    """Gradient summed over the batch rows in one reverse pass."""
    Z = _assemble_input(model, ks, X, P)
    _, hs = _forward(model, Z)
    grad, _ = _backward(model, hs, upstream)
    return grad


def score_grad_input(model: ScoreNet, k: int, x, upstream, p_tilde=None):
    """d(loss)/dx (and d(loss)/dp_tilde in momentum mode)."""
    Z = _assemble_input(model, k, x, p_tilde)
    _, hs = _forward(model, Z)
    _, dZ = _backward(model, hs, np.atleast_2d(upstream))
    dx = dZ[0, :model.d]
    if model.momentum_mode:
        return dx, dZ[0, model.d:2 * model.d]
    return dx, None


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_score_net(model: ScoreNet, path) -> None:
    """Bit-exact binary checkpoint: fixed header, then the conditioning
    table and the flat parameter block, all little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIII", int(model.momentum_mode),
                             _CONDITIONING.index(model.conditioning),
                             model.embed_width, len(model.widths)))
        fh.write(struct.pack(f"<{len(model.widths)}I", *model.widths))
        fh.write(struct.pack("<IQ", len(model.cond), model.theta.size))
        fh.write(np.ascontiguousarray(model.cond, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.theta, dtype="<f8").tobytes())


def load_score_net(path) -> ScoreNet:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path} is not a score-net checkpoint")
        mom, cond_idx, embed_width, n_widths = struct.unpack("<IIII", fh.read(16))
        widths = struct.unpack(f"<{n_widths}I", fh.read(4 * n_widths))
        n_cond, n_params = struct.unpack("<IQ", fh.read(12))
        cond = np.frombuffer(fh.read(8 * n_cond), dtype="<f8").copy()
        theta = np.frombuffer(fh.read(8 * n_params), dtype="<f8").copy()
    if theta.size != n_params or theta.size != _param_count(widths):
        raise ValueError(f"{path} is truncated or inconsistent")
    return ScoreNet(widths=tuple(widths), theta=theta, cond=cond,
                    d=widths[-1], momentum_mode=bool(mom),
                    embed_width=embed_width,
                    conditioning=_CONDITIONING[cond_idx])
