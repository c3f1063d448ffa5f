"""Fixed-step explicit integrators (Euler, RK4).

Forward integration places every requested checkpoint on the grid exactly;
backward integration walks the same grid from ``T`` down to ``0`` and lets the
caller inject jumps at event times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable, Sequence

import numpy as np

Field = Callable[[np.ndarray], np.ndarray]


class DivergenceError(FloatingPointError):
    """Raised when an integrated state stops being finite."""

    def __init__(self, time: float, message: str | None = None):
        self.time = float(time)
        super().__init__(message or f"non-finite state at t={self.time:.6g}")


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4"
    steps: int = 40
    T: float = 20.0

    def __post_init__(self):
        if self.method not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator method {self.method!r}")
        if int(self.steps) < 1:
            raise ValueError("steps must be >= 1")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def max_step(self) -> float:
        return self.T / self.steps

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "IntegratorConfig":
        return cls(method=d.get("method", "rk4"), steps=int(d.get("steps", 40)),
                   T=float(d.get("T", 20.0)))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def at(self, t: float) -> np.ndarray:
        """State at an exact grid time (no interpolation)."""
        idx = np.flatnonzero(self.times == t)
        if idx.size == 0:
            raise KeyError(f"t={t!r} is not a grid point")
        return self.states[idx[0]]


def euler_step(field: Field, y, dt):
    return y + dt * field(y)


def rk4_step(field: Field, y, dt):
    k1 = field(y)
    k2 = field(y + 0.5 * dt * k1)
    k3 = field(y + 0.5 * dt * k2)
    k4 = field(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


STEPPERS = {"euler": euler_step, "rk4": rk4_step}


def make_grid(config: IntegratorConfig, checkpoints: Sequence[float] = ()) -> np.ndarray:
    """Grid over [0, T] containing 0, T and every checkpoint.

    Each segment between consecutive checkpoints is split into equal substeps
    no longer than ``T / steps``.
    """
    T = float(config.T)
    h = config.max_step
    pts = np.unique(np.concatenate([[0.0, T], np.asarray(checkpoints, dtype=float)]))
    if pts[0] < 0.0 or pts[-1] > T:
        raise ValueError("checkpoints must lie in [0, T]")
    grid = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        k = max(1, math.ceil((b - a) / h - 1e-9))
        seg = a + (b - a) * np.arange(1, k + 1) / k
        seg[-1] = b
        grid.append(seg)
    return np.concatenate(grid)


def _check(y, t):
    if not np.all(np.isfinite(y)):
        raise DivergenceError(t)


def integrate_forward(field: Field, y0, config: IntegratorConfig,
                      checkpoints: Sequence[float] = ()) -> Trajectory:
    step = STEPPERS[config.method]
    grid = make_grid(config, checkpoints)
    y = np.array(y0, dtype=float)
    states = np.empty((grid.size,) + y.shape)
    states[0] = y
    for k in range(grid.size - 1):
        y = step(field, y, grid[k + 1] - grid[k])
        _check(y, grid[k + 1])
        states[k + 1] = y
    return Trajectory(grid, states)


def integrate_backward_with_jumps(field: Field, terminal_state, event_times: Sequence[float],
                                  jump: Callable[[np.ndarray, int], np.ndarray] | None,
                                  config: IntegratorConfig,
                                  reset: Callable[[np.ndarray, int], np.ndarray] | None = None):
    """Integrate from ``T`` down to ``0`` over the forward grid.

    After arriving at ``event_times[i]`` the state is replaced by
    ``jump(state, i)``.  No jump is applied at ``t = 0``.  ``reset(state, k)``
    is called at every grid node ``k`` before stepping away from it, which lets
    callers restore checkpointed components of the state.
    """
    events = np.asarray(event_times, dtype=float)
    if events.size:
        if np.any(np.diff(events) <= 0):
            raise ValueError("event times must be strictly increasing")
        if events[0] <= 0.0 or events[-1] >= config.T:
            raise ValueError("event times must lie in (0, T)")
    step = STEPPERS[config.method]
    grid = make_grid(config, events)
    event_at = {int(np.flatnonzero(grid == t)[0]): i for i, t in enumerate(events)}
    y = np.array(terminal_state, dtype=float)
    for k in range(grid.size - 1, 0, -1):
        if reset is not None:
            y = reset(y, k)
        y = step(field, y, grid[k - 1] - grid[k])
        _check(y, grid[k - 1])
        if jump is not None and (k - 1) in event_at:
            y = jump(y, event_at[k - 1])
    return y
