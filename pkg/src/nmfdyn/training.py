"""Point-process loss, adjoint gradients and the mini-batch training loop.

For one cascade with non-source infections ``(i_1, t_1) < ... < (i_m, t_m)``
the loss is

    sum_k -log g_{i_k}(m(t_k); theta)  +  1^T x(T)

and its gradient is obtained by integrating ``[m; p; q]`` backward from
``[m(T); [1; 0]; 0]`` with ``p' = -(dg/dm)^T p``, ``q' = -(dg/dtheta)^T p``
and subtracting the log-intensity gradients from ``p`` and ``q`` at every
event time.  The gradient is ``q(0)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from .cascades import Cascade, CascadeDataError, CascadeSet
from .dynamics import (LOG_FLOOR, ThetaParams, field_and_vjps, g_dynamics, grad_log_component,
                       initial_state, num_params, param_slices)
from .model import TrainedModel, support_mask
from .ode import (DivergenceError, IntegratorConfig, STEPPERS, integrate_backward_with_jumps,
                  integrate_forward, make_grid)

log = logging.getLogger(__name__)

BACKWARD_MODES = ("reintegrate", "checkpoint")


@dataclass(frozen=True)
class EventSchedule:
    source: tuple
    nodes: np.ndarray
    times: np.ndarray
    horizon: float

    def __len__(self):
        return self.nodes.size


def event_schedule(cascade: Cascade) -> EventSchedule:
    ev = cascade.events()
    nodes = np.array([i for i, _ in ev], dtype=int)
    times = np.array([t for _, t in ev], dtype=float)
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise CascadeDataError("two non-source infections share the same time")
    if times.size and times[-1] >= cascade.horizon:
        raise CascadeDataError("event times must lie strictly before the horizon")
    return EventSchedule(cascade.source, nodes, times, cascade.horizon)


@dataclass
class TrainConfig:
    batch_size: int = 300
    epochs: int = 50
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    reg_coeff_A: float = 0.01
    weight_decay: float = 1.0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    logsum_delta: float = 0.01
    log_floor: float = LOG_FLOOR
    depth: int = 2
    backward: str = "checkpoint"
    freeze: tuple = ()
    init_a_scale: float = 0.1

    def __post_init__(self):
        if isinstance(self.integrator, dict):
            self.integrator = IntegratorConfig.from_dict(self.integrator)
        self.freeze = tuple(self.freeze)
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not (self.lr > 0 and self.eps > 0 and self.logsum_delta > 0 and self.log_floor > 0):
            raise ValueError("lr, eps, logsum_delta and log_floor must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.reg_coeff_A < 0 or self.weight_decay < 0:
            raise ValueError("regularization coefficients must be nonnegative")
        if self.backward not in BACKWARD_MODES:
            raise ValueError(f"backward must be one of {BACKWARD_MODES}")
        bad = set(self.freeze) - {"A", "eta", "B", "C", "kernel"}
        if bad:
            raise ValueError(f"unknown parameter groups to freeze: {sorted(bad)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["freeze"] = list(self.freeze)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**d)


# -- single-cascade loss and adjoint gradient ---------------------------------

def _log_terms(g_rows, nodes, floor):
    vals = g_rows[np.arange(nodes.size), nodes] if nodes.size else np.zeros(0)
    return -np.log(np.maximum(vals, floor))


def forward_trajectory(theta: ThetaParams, cascade: Cascade, integrator: IntegratorConfig):
    sched = event_schedule(cascade)
    m0 = initial_state(cascade.source, theta.n)
    traj = integrate_forward(lambda m: g_dynamics(m, theta), m0, integrator, sched.times)
    return sched, traj


def loss_forward(theta: ThetaParams, cascade: Cascade, config: TrainConfig) -> float:
    sched, traj = forward_trajectory(theta, cascade, config.integrator)
    n = theta.n
    if len(sched):
        states = np.array([traj.at(t) for t in sched.times])
        running = _log_terms(g_dynamics(states, theta)[:, :n], sched.nodes, config.log_floor).sum()
    else:
        running = 0.0
    return float(running + traj.states[-1, :n].sum())


def grad_loss_adjoint(theta: ThetaParams, cascade: Cascade, config: TrainConfig,
                      mode: str | None = None, terminal_weight: float = 1.0):
    """Loss and its θ-gradient for one cascade.

    ``mode="reintegrate"`` re-integrates ``m`` backward jointly with the
    co-states; ``mode="checkpoint"`` restores ``m`` from the stored forward
    trajectory at every grid node.
    """
    mode = mode or config.backward
    if mode not in BACKWARD_MODES:
        raise ValueError(f"unknown backward mode {mode!r}")
    n = theta.n
    P = num_params(n, theta.depth)
    sched, traj = forward_trajectory(theta, cascade, config.integrator)
    loss = traj.states[-1, :n].sum()
    if len(sched):
        states = np.array([traj.at(t) for t in sched.times])
        loss += _log_terms(g_dynamics(states, theta)[:, :n], sched.nodes, config.log_floor).sum()

    def field(y):
        m, p = y[:2 * n], y[2 * n:4 * n]
        g, vm, vt = field_and_vjps(m, theta, p)
        return np.concatenate([g, -vm, -vt.flatten()])

    def jump(y, k):
        m = traj.at(sched.times[k]) if mode == "checkpoint" else y[:2 * n]
        lg = grad_log_component(m, theta, int(sched.nodes[k]), config.log_floor)
        y = y.copy()
        y[2 * n:4 * n] -= lg.dm
        y[4 * n:] -= lg.dtheta.flatten()
        return y

    reset = None
    if mode == "checkpoint":
        def reset(y, k):
            y = y.copy()
            y[:2 * n] = traj.states[k]
            return y

    y_T = np.concatenate([traj.states[-1], np.r_[np.full(n, terminal_weight), np.zeros(n)],
                          np.zeros(P)])
    y0 = integrate_backward_with_jumps(field, y_T, sched.times, jump, config.integrator, reset)
    grad = y0[4 * n:]
    if not np.all(np.isfinite(grad)):
        raise DivergenceError(0.0, "non-finite gradient")
    return float(loss), ThetaParams.unflatten(grad, n, theta.depth)


# -- batched path used by the training loop -----------------------------------

_RK4_WEIGHTS = (1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0)


class _BatchGrid:
    """Per-cascade grids padded with zero-length steps to a common length."""

    def __init__(self, cascades: Sequence[Cascade], integrator: IntegratorConfig):
        scheds = [event_schedule(c) for c in cascades]
        grids = [make_grid(integrator, s.times) for s in scheds]
        L = max(g.size for g in grids)
        B = len(cascades)
        self.scheds = scheds
        self.dt = np.zeros((B, L - 1))
        self.event_node = np.full((B, L), -1, dtype=int)
        for b, (g, s) in enumerate(zip(grids, scheds)):
            self.dt[b, :g.size - 1] = np.diff(g)
            for node, t in zip(s.nodes, s.times):
                self.event_node[b, int(np.flatnonzero(g == t)[0])] = node
        self.L = L


def batch_loss_and_grad(theta: ThetaParams, cascades: Sequence[Cascade], config: TrainConfig,
                        mode: str | None = None):
    """Per-cascade losses and the summed θ-gradient for a mini-batch.

    Each cascade keeps its own grid (events are grid points); the batch is
    integrated in lockstep with per-row step sizes.
    """
    mode = mode or config.backward
    n = theta.n
    B = len(cascades)
    method = config.integrator.method
    floor = config.log_floor
    grid = _BatchGrid(cascades, config.integrator)
    step = STEPPERS[method]

    def gfield(m):
        return g_dynamics(m, theta)

    m = np.zeros((B, 2 * n))
    for b, c in enumerate(cascades):
        m[b, list(c.source)] = 1.0
    M = np.empty((grid.L, B, 2 * n))
    M[0] = m
    for k in range(grid.L - 1):
        m = step(gfield, m, grid.dt[:, k:k + 1])
        M[k + 1] = m
    if not np.all(np.isfinite(M)):
        raise DivergenceError(float(config.integrator.T))

    losses = M[-1, :, :n].sum(axis=1)
    rows, cols = np.nonzero(grid.event_node >= 0)
    if rows.size:
        gx = g_dynamics(M[cols, rows], theta)[:, :n]
        losses += np.bincount(rows, weights=_log_terms(gx, grid.event_node[rows, cols], floor),
                              minlength=B)

    q = ThetaParams.zeros(n, theta.depth).flatten()
    p = np.zeros((B, 2 * n))
    p[:, :n] = 1.0
    m = M[-1].copy()
    for k in range(grid.L - 1, 0, -1):
        if mode == "checkpoint":
            m = M[k].copy()
        h = -grid.dt[:, k - 1]
        hc = h[:, None]
        if method == "rk4":
            g1, a1, c1 = field_and_vjps(m, theta, p, h * _RK4_WEIGHTS[0])
            g2, a2, c2 = field_and_vjps(m + 0.5 * hc * g1, theta, p - 0.5 * hc * a1, h * _RK4_WEIGHTS[1])
            g3, a3, c3 = field_and_vjps(m + 0.5 * hc * g2, theta, p - 0.5 * hc * a2, h * _RK4_WEIGHTS[2])
            g4, a4, c4 = field_and_vjps(m + hc * g3, theta, p - hc * a3, h * _RK4_WEIGHTS[3])
            m = m + (hc / 6.0) * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
            p = p - (hc / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            q -= c1.flatten() + c2.flatten() + c3.flatten() + c4.flatten()
        else:
            g1, a1, c1 = field_and_vjps(m, theta, p, h)
            m = m + hc * g1
            p = p - hc * a1
            q -= c1.flatten()
        ev = grid.event_node[:, k - 1]
        hit = np.flatnonzero(ev >= 0)
        if hit.size:
            me = M[k - 1, hit] if mode == "checkpoint" else m[hit]
            nodes = ev[hit]
            gi = g_dynamics(me, theta)[np.arange(hit.size), nodes]
            ok = gi >= floor
            e = np.zeros((hit.size, 2 * n))
            e[np.arange(hit.size)[ok], nodes[ok]] = 1.0 / gi[ok]
            _, dm, dt = field_and_vjps(me, theta, e)
            p[hit] -= dm
            q -= dt.flatten()
    if not np.all(np.isfinite(q)):
        raise DivergenceError(0.0, "non-finite gradient")
    return losses, ThetaParams.unflatten(q, n, theta.depth)


# -- regularization and optimizer ----------------------------------------------

def regularizer_logsum(A, delta: float):
    """``sum_{i != j} log(1 + A_ij / delta)`` and its gradient (zero on the diagonal)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    A = np.asarray(A, dtype=float)
    off = ~np.eye(A.shape[0], dtype=bool)
    value = float(np.log1p(A[off] / delta).sum())
    grad = np.where(off, 1.0 / (delta + A), 0.0)
    return value, grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def _group_mask(n: int, depth: int, groups) -> np.ndarray:
    sl = param_slices(n, depth)
    mask = np.zeros(num_params(n, depth), dtype=bool)
    for g in groups:
        for name in (("B", "C") if g == "kernel" else (g,)):
            mask[sl[name]] = True
    return mask


def project_theta(theta_flat: np.ndarray, n: int, depth: int, support=None) -> np.ndarray:
    """Clip ``A`` and ``C`` at zero, re-zero the diagonal of ``A``, apply an optional support mask."""
    sl = param_slices(n, depth)
    out = theta_flat.copy()
    A = np.maximum(out[sl["A"]].reshape(n, n), 0.0)
    np.fill_diagonal(A, 0.0)
    if support is not None:
        A *= support
    out[sl["A"]] = A.ravel()
    out[sl["C"]] = np.maximum(out[sl["C"]], 0.0)
    return out


def adam_step(theta_flat, grad_flat, state: AdamState, config: TrainConfig, n: int,
              depth: int | None = None, frozen=None, support=None) -> np.ndarray:
    """One Adam update with bias correction, decoupled weight decay and projections.

    Weight decay touches the MLP and kernel entries only; ``frozen`` entries
    are left untouched.
    """
    depth = config.depth if depth is None else depth
    g = np.asarray(grad_flat, dtype=float)
    theta = np.asarray(theta_flat, dtype=float).copy()
    if frozen is None:
        frozen = np.zeros(theta.size, dtype=bool)
    g = np.where(frozen, 0.0, g)
    state.t += 1
    state.m = config.beta1 * state.m + (1.0 - config.beta1) * g
    state.v = config.beta2 * state.v + (1.0 - config.beta2) * g * g
    m_hat = state.m / (1.0 - config.beta1 ** state.t)
    v_hat = state.v / (1.0 - config.beta2 ** state.t)
    if config.weight_decay:
        decay = _group_mask(n, depth, ("eta", "B", "C")) & ~frozen
        theta[decay] -= config.lr * config.weight_decay * theta[decay]
    update = config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    theta = np.where(frozen, theta, theta - update)
    return project_theta(theta, n, depth, support)


# -- training loop ----------------------------------------------------------------

def train(dataset: CascadeSet, config: TrainConfig, rng: np.random.Generator,
          init: ThetaParams | None = None, support=None,
          callback: Callable[[int, float, ThetaParams], None] | None = None) -> TrainedModel:
    """Mini-batch Adam on summed per-cascade losses.

    ``support`` (an edge list) restricts ``A`` to the given edges throughout.
    ``callback(epoch, mean_loss, theta)`` runs after every epoch.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    n = dataset.n
    if init is None:
        theta = ThetaParams.init(n, rng, config.depth, config.init_a_scale)
    else:
        theta = init.copy()
    depth = theta.depth
    mask = None if support is None else support_mask(n, support)
    flat = project_theta(theta.flatten(), n, depth, mask)
    theta = ThetaParams.unflatten(flat, n, depth)
    frozen = _group_mask(n, depth, config.freeze)
    sl_A = param_slices(n, depth)["A"]
    state = AdamState.zeros(flat.size)
    history = []
    K = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(K)
        total = 0.0
        for start in range(0, K, config.batch_size):
            batch = [dataset[int(k)] for k in order[start:start + config.batch_size]]
            losses, grad = batch_loss_and_grad(theta, batch, config)
            total += float(losses.sum())
            g = grad.flatten()
            if config.reg_coeff_A:
                _, rg = regularizer_logsum(theta.A, config.logsum_delta)
                g[sl_A] += config.reg_coeff_A * rg.ravel()
            if mask is not None:
                g[sl_A] *= mask.ravel()
            flat = adam_step(flat, g, state, config, n, depth, frozen, mask)
            theta = ThetaParams.unflatten(flat, n, depth)
        mean_loss = total / K
        history.append(mean_loss)
        log.info("epoch %d mean loss %.6f", epoch + 1, mean_loss)
        if callback is not None:
            callback(epoch + 1, mean_loss, theta)
    meta = {"loss_history": history, "config": config.to_dict(), "num_cascades": K}
    return TrainedModel(theta, config.integrator, meta,
                        None if support is None else sorted(map(tuple, support)))


def hamiltonian_residual(theta: ThetaParams, cascades: Sequence[Cascade], config: TrainConfig) -> float:
    """Norm of the time-integrated θ-gradient of the Hamiltonian, summed over cascades.

    At a stationary point of the loss this vanishes; away from it, it equals
    the norm of the loss gradient.
    """
    _, grad = batch_loss_and_grad(theta, cascades, config)
    return float(np.linalg.norm(grad.flatten()))
