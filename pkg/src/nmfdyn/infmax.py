"""Budgeted influence maximization by projected gradient descent on a trained model.

The binary seed vector is relaxed to ``u`` in the capped simplex
``U = {u in [0, 1]^n : sum(u) = n0}`` and

    L(u) = sum_i u_i (1 - u_i) - 1^T x(T; u)

is minimized, where ``x(T; u)`` is the model's state started from ``[u; 0]``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import g_dynamics, jac_g_m_vjp
from .evaluation import estimate_probs
from .model import TrainedModel
from .ode import IntegratorConfig, integrate_backward_with_jumps, integrate_forward

GRAD_MODES = ("paper", "exact")


class InfeasibleBudgetError(ValueError):
    pass


class CapacityError(ValueError):
    pass


@dataclass
class InfMaxConfig:
    n0: int
    T: float = 10.0
    step_size: float = 0.01
    max_iters: int = 500
    stagnation_window: int = 10
    grad_mode: str = "paper"
    integrator: IntegratorConfig | None = None
    tol: float = 1e-6

    def __post_init__(self):
        if isinstance(self.integrator, dict):
            self.integrator = IntegratorConfig.from_dict(self.integrator)
        if self.n0 < 1:
            raise ValueError("budget n0 must be >= 1")
        if not (self.T > 0 and self.step_size > 0):
            raise ValueError("T and step_size must be positive")
        if self.max_iters < 0 or self.stagnation_window < 1:
            raise ValueError("max_iters must be >= 0 and stagnation_window >= 1")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")

    def resolve_integrator(self, model: TrainedModel) -> IntegratorConfig:
        """The configured integrator, or the model's method and step size stretched to ``T``."""
        if self.integrator is not None:
            if self.integrator.T != self.T:
                raise ValueError("integrator horizon must equal T")
            return self.integrator
        base = model.integrator
        steps = max(1, math.ceil(self.T / base.max_step - 1e-9))
        return IntegratorConfig(base.method, steps, self.T)

    def to_dict(self) -> dict:
        return {"n0": self.n0, "T": self.T, "step_size": self.step_size,
                "max_iters": self.max_iters, "stagnation_window": self.stagnation_window,
                "grad_mode": self.grad_mode, "tol": self.tol,
                "integrator": None if self.integrator is None else self.integrator.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "InfMaxConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown infmax config fields: {sorted(unknown)}")
        return cls(**d)


def _start(u, n):
    u = np.asarray(u, dtype=float)
    if u.shape != (n,):
        raise ValueError(f"u must have length {n}")
    return np.concatenate([u, np.zeros(n)])


def _integrator(model: TrainedModel, T: float, integrator: IntegratorConfig | None):
    if integrator is not None:
        return integrator
    return InfMaxConfig(1, T).resolve_integrator(model)


def influence_relaxed(model: TrainedModel, u, T: float,
                      integrator: IntegratorConfig | None = None) -> float:
    """``1^T x(T)`` with the state started from ``[u; 0]`` (not clamped)."""
    cfg = _integrator(model, T, integrator)
    traj = integrate_forward(lambda m: g_dynamics(m, model.theta), _start(u, model.n), cfg)
    return float(traj.states[-1, :model.n].sum())


def sensitivity_paper(model: TrainedModel, u, T: float,
                      integrator: IntegratorConfig | None = None) -> np.ndarray:
    """Forward sensitivity ``s' = (d g_x / d x)^T s`` from ``s(0) = 1``, returning ``s(T)``.

    The memory channel ``h`` is ignored in the sensitivity, so this equals the
    exact gradient only when the x-block Jacobians along the path commute
    (e.g. frozen or scalar dynamics).
    """
    n = model.n
    theta = model.theta
    cfg = _integrator(model, T, integrator)
    zeros = np.zeros(n)

    def field(y):
        m, s = y[:2 * n], y[2 * n:]
        ds = jac_g_m_vjp(m, theta, np.concatenate([s, zeros]))[:n]
        return np.concatenate([g_dynamics(m, theta), ds])

    y0 = np.concatenate([_start(u, n), np.ones(n)])
    return integrate_forward(field, y0, cfg).states[-1, 2 * n:]


def grad_influence_exact(model: TrainedModel, u, T: float,
                         integrator: IntegratorConfig | None = None) -> np.ndarray:
    """Gradient of ``1^T x(T; u)`` with respect to ``u`` via the backward co-state."""
    n = model.n
    theta = model.theta
    cfg = _integrator(model, T, integrator)
    traj = integrate_forward(lambda m: g_dynamics(m, theta), _start(u, n), cfg)

    def field(y):
        m, p = y[:2 * n], y[2 * n:]
        return np.concatenate([g_dynamics(m, theta), -jac_g_m_vjp(m, theta, p)])

    def reset(y, k):
        y = y.copy()
        y[:2 * n] = traj.states[k]
        return y

    yT = np.concatenate([traj.states[-1], np.ones(n), np.zeros(n)])
    y0 = integrate_backward_with_jumps(field, yT, (), None, cfg, reset)
    return y0[2 * n:3 * n]


def grad_objective(model: TrainedModel, u, T: float, mode: str = "paper",
                   integrator: IntegratorConfig | None = None) -> np.ndarray:
    """``grad L(u) = (1 - 2u) - d(1^T x(T))/du`` with the influence gradient from ``mode``."""
    if mode == "paper":
        s = sensitivity_paper(model, u, T, integrator)
    elif mode == "exact":
        s = grad_influence_exact(model, u, T, integrator)
    else:
        raise ValueError(f"grad mode must be one of {GRAD_MODES}")
    return (1.0 - 2.0 * np.asarray(u, dtype=float)) - s


def objective(model: TrainedModel, u, T: float, integrator: IntegratorConfig | None = None) -> float:
    u = np.asarray(u, dtype=float)
    return float(np.sum(u * (1.0 - u))) - influence_relaxed(model, u, T, integrator)


def _phi(lam, vs, prefix):
    """``sum_i clip(v_i - lam, 0, 1)`` for sorted ``vs`` (vectorized over ``lam``)."""
    n = vs.size
    lo = np.searchsorted(vs, lam, side="right")
    hi = np.searchsorted(vs, lam + 1.0, side="left")
    hi = np.maximum(hi, lo)
    return (n - hi) + (prefix[hi] - prefix[lo]) - (hi - lo) * lam


def project_capped_simplex(v, n0: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{u in [0, 1]^n : sum(u) = n0}``.

    The solution is ``clip(v - lam, 0, 1)``; the shift ``lam`` is located
    exactly among the sorted breakpoints ``{v_i - 1, v_i}`` of the piecewise
    linear, nonincreasing map ``lam -> sum(clip(v - lam, 0, 1))``.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    if n0 < 0 or n0 > n:
        raise InfeasibleBudgetError(f"budget {n0} is infeasible for n={n}")
    if n0 == n:
        return np.ones(n)
    if n0 == 0:
        return np.zeros(n)
    vs = np.sort(v)
    prefix = np.concatenate([[0.0], np.cumsum(vs)])
    bps = np.unique(np.concatenate([vs - 1.0, vs]))
    phi = _phi(bps, vs, prefix)
    # phi is nonincreasing with phi(bps[0]) = n > n0 > 0 = phi(bps[-1])
    k = int(np.searchsorted(-phi, -n0, side="right")) - 1
    a, b = bps[k], bps[k + 1]
    fa, fb = phi[k], phi[k + 1]
    lam = a if fa == fb else a + (fa - n0) * (b - a) / (fa - fb)
    return np.clip(v - lam, 0.0, 1.0)


def round_top(u, n0: int) -> list[int]:
    """Indices of the ``n0`` largest entries; ties go to the smaller index."""
    order = np.lexsort((np.arange(len(u)), -np.asarray(u)))
    return sorted(int(i) for i in order[:n0])


@dataclass
class InfMaxResult:
    u: np.ndarray
    selected: list
    sigma: float
    iters: int
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"u": [float(v) for v in self.u], "selected": list(self.selected),
                "sigma": float(self.sigma), "iters": int(self.iters),
                "trace": [float(v) for v in self.trace]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def set_influence(model: TrainedModel, selected, T: float,
                  integrator: IntegratorConfig | None = None) -> float:
    """Clamped ``sigma(T)`` of a seed set, integrated on the same grid used by PGD."""
    cfg = _integrator(model, T, integrator)
    evaluator = TrainedModel(model.theta, cfg)
    return float(estimate_probs(evaluator, selected, [T]).values[0].sum())


def pgd_infmax(model: TrainedModel, config: InfMaxConfig, rng: np.random.Generator) -> InfMaxResult:
    """Projected gradient descent on the relaxed objective followed by top-``n0`` rounding."""
    n = model.n
    if config.n0 > n:
        raise InfeasibleBudgetError(f"budget {config.n0} exceeds n={n}")
    cfg = config.resolve_integrator(model)
    u = project_capped_simplex(rng.uniform(0.0, 1.0, size=n), config.n0)
    sigma = influence_relaxed(model, u, config.T, cfg)
    trace = [sigma]
    still = 0
    it = 0
    while it < config.max_iters:
        g = grad_objective(model, u, config.T, config.grad_mode, cfg)
        u = project_capped_simplex(u - config.step_size * g, config.n0)
        it += 1
        new = influence_relaxed(model, u, config.T, cfg)
        trace.append(new)
        still = still + 1 if abs(new - sigma) < config.tol else 0
        sigma = new
        if still >= config.stagnation_window:
            break
    selected = round_top(u, config.n0)
    return InfMaxResult(u, selected, set_influence(model, selected, config.T, cfg), it, trace)


def exhaustive_best_set(evaluator: Callable[[tuple], float], n: int, n0: int,
                        max_sets: int = 10**6):
    """Best seed set of size ``n0`` by enumeration; the lexicographically first wins ties."""
    if not 0 <= n0 <= n:
        raise InfeasibleBudgetError(f"budget {n0} is infeasible for n={n}")
    if math.comb(n, n0) > max_sets:
        raise CapacityError(f"C({n}, {n0}) exceeds {max_sets} candidate sets")
    best, best_val = None, -np.inf
    for S in itertools.combinations(range(n), n0):
        val = float(evaluator(S))
        if val > best_val:
            best, best_val = S, val
    return best, best_val
