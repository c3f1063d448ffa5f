"""Exact infection probabilities on small exponential networks.

Two independent formulations:

* ``exact_probs_ctmc`` integrates the master equation over the 2**n infected
  sets.  A healthy node ``i`` in state ``S`` becomes infected at rate
  ``sum_{j in S} A[i, j]``.
* ``full_z_ode_oracle`` integrates the joint moments ``x_I = E[prod_{i in I} X_i]``
  written as ``x`` plus closure corrections ``e_I = x_I - prod_{i in I} x_i``.

Both are integrated by the fixed-step RK4 engine with the step count doubled
until two successive solutions agree to ``tol``.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .cascades import ProbCurve
from .network import DiffusionNetwork
from .ode import IntegratorConfig, integrate_forward


class CapacityError(ValueError):
    pass


class UnsupportedLawError(ValueError):
    pass


CTMC_MAX_NODES = 14
ZODE_MAX_NODES = 10


def _bits(n: int) -> np.ndarray:
    """``(2**n, n)`` 0/1 membership table of every subset mask."""
    masks = np.arange(2**n)
    return ((masks[:, None] >> np.arange(n)) & 1).astype(float)


def _integrate_to_tolerance(field, y0, grid, rate_bound: float, tol: float, max_doublings: int = 8):
    grid = np.asarray(grid, dtype=float)
    T = float(grid.max())
    if T <= 0:
        return np.repeat(np.asarray(y0, dtype=float)[None], grid.size, axis=0)
    # RK4 local error on a linear mode with rate r is ~ (h r)^5 / 120
    steps = max(40, math.ceil(T * max(rate_bound, 1e-12) / 0.1))
    prev = None
    for _ in range(max_doublings + 1):
        traj = integrate_forward(field, y0, IntegratorConfig("rk4", steps, T), grid)
        cur = np.array([traj.at(t) for t in grid])
        if prev is not None and np.max(np.abs(cur - prev)) <= tol:
            return cur
        prev = cur
        steps *= 2
    return cur


def _check_exponential(n: int, limit: int, law: str):
    if law != "exp":
        raise UnsupportedLawError(f"exact oracles need exponential delays, got {law!r}")
    if n > limit:
        raise CapacityError(f"n={n} exceeds the oracle capacity of {limit} nodes")


def ctmc_generator(A: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix ``Q`` with ``dP/dt = Q @ P`` over subset masks."""
    n = A.shape[0]
    bits = _bits(n)
    rates = bits @ A.T  # rates[S, i] = sum_{j in S} A[i, j]
    rows, cols, vals = [], [], []
    diag = np.zeros(2**n)
    masks = np.arange(2**n)
    for i in range(n):
        healthy = masks[(masks >> i) & 1 == 0]
        r = rates[healthy, i]
        keep = r > 0
        rows.append(healthy[keep] | (1 << i))
        cols.append(healthy[keep])
        vals.append(r[keep])
        diag[healthy] -= r
    rows.append(masks)
    cols.append(masks)
    vals.append(diag)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(2**n, 2**n))


def ctmc_state_probs(net: DiffusionNetwork, source, grid, tol: float = 1e-11, law: str = "exp"):
    """Probability of every infected set at every grid time, shape ``(len(grid), 2**n)``."""
    n = net.n
    _check_exponential(n, CTMC_MAX_NODES, law)
    Q = ctmc_generator(net.A)
    P0 = np.zeros(2**n)
    P0[sum(1 << int(s) for s in set(source))] = 1.0
    return _integrate_to_tolerance(lambda P: Q @ P, P0, grid, float(net.A.sum()), tol)


def exact_probs_ctmc(net: DiffusionNetwork, source, grid, tol: float = 1e-11,
                     law: str = "exp") -> ProbCurve:
    grid = np.asarray(grid, dtype=float)
    P = ctmc_state_probs(net, source, grid, tol, law)
    return ProbCurve(grid, P @ _bits(net.n))


class _MomentSystem:
    """Right-hand side of the joint-moment system in closure form ``z = [x; e]``."""

    def __init__(self, A: np.ndarray):
        n = A.shape[0]
        self.n = n
        N = 2**n
        masks = np.arange(N)
        self.pop = _bits(n).sum(axis=1).astype(int)
        self.high = masks[self.pop >= 2]
        self.single = 1 << np.arange(n)
        # d/dt x_I = sum_{i in I, j != i} A[i, j] (x_{(I - i) | j} - x_{I | j})
        I_idx, i_idx, j_idx = [], [], []
        for i in range(n):
            with_i = masks[(masks >> i) & 1 == 1]
            for j in range(n):
                if j != i and A[i, j] != 0:
                    I_idx.append(with_i)
                    i_idx.append(np.full(with_i.size, i))
                    j_idx.append(np.full(with_i.size, j))
        if I_idx:
            I_idx = np.concatenate(I_idx)
            i_idx = np.concatenate(i_idx)
            j_idx = np.concatenate(j_idx)
        else:
            I_idx = i_idx = j_idx = np.zeros(0, dtype=int)
        self.I_idx = I_idx
        self.gain = (I_idx & ~(1 << i_idx)) | (1 << j_idx)
        self.loss = I_idx | (1 << j_idx)
        self.coef = A[i_idx, j_idx] if I_idx.size else np.zeros(0)
        # y_{I - i} for i in I, |I| >= 2, used in d/dt prod_{i in I} x_i
        H, Hi = [], []
        for i in range(n):
            sel = self.high[(self.high >> i) & 1 == 1]
            H.append(sel)
            Hi.append(np.full(sel.size, i))
        self.prod_I = np.concatenate(H) if H else np.zeros(0, dtype=int)
        self.prod_i = np.concatenate(Hi) if Hi else np.zeros(0, dtype=int)
        self.bits = _bits(n)

    def products(self, x):
        # y_I = prod_{i in I} x_i for every mask (y_empty = 1)
        return np.prod(np.where(self.bits > 0, x[None, :], 1.0), axis=1)

    def joint(self, x, e_high):
        X = self.products(x)
        X[self.high] += e_high
        return X

    def rhs(self, z):
        n = self.n
        x, e_high = z[:n], z[n:]
        X = self.joint(x, e_high)
        dX = np.bincount(self.I_idx, weights=self.coef * (X[self.gain] - X[self.loss]),
                         minlength=2**n)
        dx = dX[self.single]
        y = self.products(x)
        chain = np.bincount(self.prod_I,
                            weights=y[self.prod_I & ~(1 << self.prod_i)] * dx[self.prod_i],
                            minlength=2**n)
        de = dX[self.high] - chain[self.high]
        return np.concatenate([dx, de])


def full_z_ode_oracle(net: DiffusionNetwork, source, grid, tol: float = 1e-11, law: str = "exp",
                      return_closure: bool = False):
    n = net.n
    _check_exponential(n, ZODE_MAX_NODES, law)
    grid = np.asarray(grid, dtype=float)
    sys_ = _MomentSystem(net.A)
    z0 = np.zeros(n + sys_.high.size)
    z0[list(set(int(s) for s in source))] = 1.0
    Z = _integrate_to_tolerance(sys_.rhs, z0, grid, float(net.A.sum()), tol)
    curve = ProbCurve(grid, Z[:, :n])
    if return_closure:
        return curve, Z[:, n:]
    return curve
