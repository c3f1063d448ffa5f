"""Neural mean-field vector field and its exact derivatives.

The augmented state is ``m = [x; h]`` (length ``2n``).  The field is

    g(m; theta) = [ A x - diag(x) A x + eps(x, h; eta) ;  B x - C h ]

with ``eps`` a small ELU network whose output is clamped to ``[0, 1]`` and
``B``, ``C`` diagonal (stored as vectors).  Every function accepts a single
state of shape ``(2n,)`` or a batch of shape ``(batch, 2n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

LOG_FLOOR = 1e-8


@dataclass
class ThetaParams:
    """Trainable parameters: transmission matrix, MLP layers and diagonal kernel."""
    A: np.ndarray
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    B: np.ndarray = None
    C: np.ndarray = None

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def architecture(self) -> str:
        return f"nmf-elu{self.depth}-clamp"

    def copy(self) -> "ThetaParams":
        return ThetaParams(self.A.copy(), [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.B.copy(), self.C.copy())

    def arrays(self) -> list:
        out = [self.A]
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out + [self.B, self.C]

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def zeros(cls, n: int, depth: int = 2) -> "ThetaParams":
        if depth < 1:
            raise ValueError("depth must be >= 1")
        shapes = layer_shapes(n, depth)
        return cls(np.zeros((n, n)), [np.zeros(s) for s in shapes],
                   [np.zeros(s[0]) for s in shapes], np.zeros(n), np.zeros(n))

    @classmethod
    def unflatten(cls, vec, n: int, depth: int = 2) -> "ThetaParams":
        vec = np.asarray(vec, dtype=float)
        if vec.size != num_params(n, depth):
            raise ValueError(f"expected {num_params(n, depth)} parameters, got {vec.size}")
        pos = 0

        def take(shape):
            nonlocal pos
            size = int(np.prod(shape))
            out = vec[pos:pos + size].reshape(shape).copy()
            pos += size
            return out

        A = take((n, n))
        weights, biases = [], []
        for s in layer_shapes(n, depth):
            weights.append(take(s))
            biases.append(take((s[0],)))
        return cls(A, weights, biases, take((n,)), take((n,)))

    @classmethod
    def init(cls, n: int, rng: np.random.Generator, depth: int = 2, a_scale: float = 0.1,
             kernel: float = 0.1) -> "ThetaParams":
        """Default initialization: small positive off-diagonal ``A``, fan-in uniform MLP."""
        A = rng.uniform(0.0, a_scale, size=(n, n))
        np.fill_diagonal(A, 0.0)
        weights, biases = [], []
        for out_dim, in_dim in layer_shapes(n, depth):
            bound = 1.0 / np.sqrt(in_dim)
            weights.append(rng.uniform(-bound, bound, size=(out_dim, in_dim)))
            biases.append(rng.uniform(-bound, bound, size=out_dim))
        return cls(A, weights, biases, np.full(n, kernel), np.full(n, kernel))

    def check(self) -> None:
        if np.any(self.A < 0) or np.any(np.diag(self.A) != 0):
            raise ValueError("A must be nonnegative with zero diagonal")
        if np.any(self.C < 0):
            raise ValueError("kernel decay rates C must be nonnegative")
        if not np.all(np.isfinite(self.flatten())):
            raise ValueError("parameters must be finite")


def layer_shapes(n: int, depth: int) -> list[tuple[int, int]]:
    return [(n, 2 * n)] + [(n, n)] * (depth - 1)


def num_params(n: int, depth: int = 2) -> int:
    return n * n + sum(o * i + o for o, i in layer_shapes(n, depth)) + 2 * n


def param_slices(n: int, depth: int = 2) -> dict[str, slice]:
    """Index ranges of the flattened vector: ``A``, ``eta`` (all MLP terms), ``B``, ``C``."""
    a = n * n
    e = a + sum(o * i + o for o, i in layer_shapes(n, depth))
    return {"A": slice(0, a), "eta": slice(a, e), "B": slice(e, e + n), "C": slice(e + n, e + 2 * n)}


# -- building blocks ------------------------------------------------------------

def elu(z):
    return np.where(z >= 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z):
    return np.where(z >= 0, 1.0, np.exp(np.minimum(z, 0.0)))


def f_meanfield(x, A):
    """``A x - diag(x) A x`` for one or a batch of states."""
    Ax = x @ A.T
    return Ax - x * Ax


class _Cache(NamedTuple):
    x: np.ndarray
    h: np.ndarray
    Ax: np.ndarray
    inputs: list  # input of each layer
    pre: list     # pre-activation of each layer
    eps: np.ndarray
    inside: np.ndarray  # clamp derivative mask


def _forward(m, theta: ThetaParams) -> _Cache:
    n = theta.n
    x, h = m[..., :n], m[..., n:]
    Ax = x @ theta.A.T
    a = np.concatenate([x, h], axis=-1)
    inputs, pre = [], []
    last = theta.depth - 1
    for k, (W, b) in enumerate(zip(theta.weights, theta.biases)):
        inputs.append(a)
        z = a @ W.T + b
        pre.append(z)
        a = elu(z) if k < last else z
    eps = np.clip(a, 0.0, 1.0)
    inside = ((a > 0.0) & (a < 1.0)).astype(float)
    return _Cache(x, h, Ax, inputs, pre, eps, inside)


def eps_net(x, h, theta: ThetaParams):
    return _forward(np.concatenate([x, h], axis=-1), theta).eps


def _field(c: _Cache, theta: ThetaParams):
    gx = c.Ax - c.x * c.Ax + c.eps
    gh = theta.B * c.x - theta.C * c.h
    return np.concatenate([gx, gh], axis=-1)


def g_dynamics(m, theta: ThetaParams):
    return _field(_forward(np.asarray(m, dtype=float), theta), theta)


def _mlp_backward(c: _Cache, theta: ThetaParams, gout):
    """Backpropagate ``gout`` (cotangent of eps) to layer signals and the MLP input."""
    deltas = [None] * theta.depth
    d = gout * c.inside
    for k in range(theta.depth - 1, -1, -1):
        if k < theta.depth - 1:
            d = d * elu_grad(c.pre[k])
        deltas[k] = d
        d = d @ theta.weights[k]
    return deltas, d


def _vjp_m(c: _Cache, theta: ThetaParams, p, din=None):
    n = theta.n
    px, ph = p[..., :n], p[..., n:]
    if din is None:
        _, din = _mlp_backward(c, theta, px)
    # d/dx of A x - x * (A x):  A^T px - (A x) * px - A^T (x * px)
    dx = (px - c.x * px) @ theta.A - c.Ax * px + din[..., :n] + theta.B * ph
    dh = din[..., n:] - theta.C * ph
    return np.concatenate([dx, dh], axis=-1)


def _vjp_theta(c: _Cache, theta: ThetaParams, p, weights=None, deltas=None) -> ThetaParams:
    """θ-gradient of ``p . g``, summed over the batch (optionally weighted per sample)."""
    n = theta.n
    px, ph = p[..., :n], p[..., n:]
    if weights is not None:
        px = px * weights[:, None]
        ph = ph * weights[:, None]
    if deltas is None:
        deltas, _ = _mlp_backward(c, theta, px)
    elif weights is not None:
        deltas = [d * weights[:, None] for d in deltas]
    if px.ndim == 1:
        gA = np.outer(px * (1.0 - c.x), c.x)
        gW = [np.outer(d, a) for d, a in zip(deltas, c.inputs)]
        gb = list(deltas)
        gB = ph * c.x
        gC = -ph * c.h
    else:
        gA = (px * (1.0 - c.x)).T @ c.x
        gW = [d.T @ a for d, a in zip(deltas, c.inputs)]
        gb = [d.sum(axis=0) for d in deltas]
        gB = (ph * c.x).sum(axis=0)
        gC = -(ph * c.h).sum(axis=0)
    np.fill_diagonal(gA, 0.0)
    return ThetaParams(gA, gW, [np.array(b) for b in gb], np.asarray(gB), np.asarray(gC))


def jac_g_m_vjp(m, theta: ThetaParams, p):
    """``(d g / d m)^T p``."""
    c = _forward(np.asarray(m, dtype=float), theta)
    return _vjp_m(c, theta, np.asarray(p, dtype=float))


def jac_g_m_jvp(m, theta: ThetaParams, v):
    """``(d g / d m) v``."""
    n = theta.n
    c = _forward(np.asarray(m, dtype=float), theta)
    v = np.asarray(v, dtype=float)
    vx, vh = v[..., :n], v[..., n:]
    Avx = vx @ theta.A.T
    dx = Avx - vx * c.Ax - c.x * Avx
    d = v
    last = theta.depth - 1
    for k, (W, z) in enumerate(zip(theta.weights, c.pre)):
        d = d @ W.T
        if k < last:
            d = d * elu_grad(z)
    dx = dx + d * c.inside
    dh = theta.B * vx - theta.C * vh
    return np.concatenate([dx, dh], axis=-1)


def grad_g_theta_vjp(m, theta: ThetaParams, p) -> ThetaParams:
    """``(d g / d theta)^T p`` (summed over a batch of states)."""
    c = _forward(np.asarray(m, dtype=float), theta)
    return _vjp_theta(c, theta, np.asarray(p, dtype=float))


def field_and_vjps(m, theta: ThetaParams, p, theta_weights=None):
    """``g(m)``, ``(dg/dm)^T p`` and the batch-summed ``(dg/dtheta)^T p`` from one forward pass.

    ``theta_weights`` (one per batch row) scales each row's contribution to the
    θ-gradient only.
    """
    c = _forward(m, theta)
    n = theta.n
    px = p[..., :n]
    deltas, din = _mlp_backward(c, theta, px)
    vjp_m = _vjp_m(c, theta, p, din)
    vjp_t = _vjp_theta(c, theta, p, theta_weights, deltas)
    return _field(c, theta), vjp_m, vjp_t


class LogGrad(NamedTuple):
    dm: np.ndarray
    dtheta: ThetaParams
    value: float
    floored: bool


def grad_log_component(m, theta: ThetaParams, i: int, floor: float = LOG_FLOOR) -> LogGrad:
    """Gradients of ``log g_i(m; theta)`` for an x-block component ``i``.

    Below ``floor`` the log is evaluated at the floor and both gradients are zero.
    """
    m = np.asarray(m, dtype=float)
    c = _forward(m, theta)
    gi = float(_field(c, theta)[i])
    if gi < floor:
        z = np.zeros_like(m)
        return LogGrad(z, _vjp_theta(c, theta, z), float(np.log(floor)), True)
    e = np.zeros_like(m)
    e[i] = 1.0 / gi
    return LogGrad(_vjp_m(c, theta, e), _vjp_theta(c, theta, e), float(np.log(gi)), False)


def initial_state(source, n: int) -> np.ndarray:
    m = np.zeros(2 * n)
    m[list(source)] = 1.0
    return m
