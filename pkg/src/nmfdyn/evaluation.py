"""Probability and influence estimates from a trained model, plus evaluation metrics."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cascades import ProbCurve
from .dynamics import g_dynamics
from .model import TrainedModel
from .ode import STEPPERS, DivergenceError, make_grid


def _check_sources(sources, n):
    for s in sources:
        for i in s:
            if not 0 <= int(i) < n:
                raise ValueError(f"node id {i} out of range for n={n}")


def estimate_probs_batch(model: TrainedModel, sources, grid) -> np.ndarray:
    """Clamped infection probabilities for several source sets, shape ``(len(sources), len(grid), n)``.

    All source sets share the integration grid, which contains every
    requested evaluation time.
    """
    n = model.n
    sources = [tuple(int(i) for i in s) for s in sources]
    _check_sources(sources, n)
    grid = np.asarray(grid, dtype=float)
    T = model.T
    if grid.size and (grid.min() < 0 or grid.max() > T):
        raise ValueError(f"evaluation times must lie in [0, {T}]")
    full = make_grid(model.integrator, grid)
    step = STEPPERS[model.integrator.method]
    theta = model.theta
    m = np.zeros((len(sources), 2 * n))
    for b, s in enumerate(sources):
        m[b, list(s)] = 1.0
    want = {float(t): k for k, t in enumerate(grid)}
    out = np.empty((len(sources), grid.size, n))

    def record(k, m):
        t = float(full[k])
        for j, tj in enumerate(grid):
            if tj == t:
                out[:, j] = m[:, :n]

    record(0, m)
    for k in range(full.size - 1):
        m = step(lambda y: g_dynamics(y, theta), m, full[k + 1] - full[k])
        if not np.all(np.isfinite(m)):
            raise DivergenceError(float(full[k + 1]))
        if float(full[k + 1]) in want:
            record(k + 1, m)
    return np.clip(out, 0.0, 1.0)


def estimate_probs(model: TrainedModel, source, grid) -> ProbCurve:
    """Infection probabilities ``x(t)`` at the grid times, clamped to ``[0, 1]``."""
    grid = np.asarray(grid, dtype=float)
    return ProbCurve(grid, estimate_probs_batch(model, [source], grid)[0])


def influence(model: TrainedModel, source, t: float) -> float:
    """Expected number of infected nodes at time ``t``."""
    return float(estimate_probs(model, source, [t]).values[0].sum())


@dataclass
class MetricReport:
    grid: np.ndarray
    prob_mae: np.ndarray
    scaled_inf_mae: np.ndarray
    inference: dict = field(default_factory=dict)

    @property
    def mean_prob_mae(self) -> float:
        return float(np.mean(self.prob_mae))

    @property
    def mean_scaled_inf_mae(self) -> float:
        return float(np.mean(self.scaled_inf_mae))

    def to_csv(self, path) -> None:
        lines = ["t,prob_mae,scaled_inf_mae"]
        for row in zip(self.grid, self.prob_mae, self.scaled_inf_mae):
            lines.append(",".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")

    def summary(self) -> dict:
        return {"mean_prob_mae": self.mean_prob_mae,
                "mean_scaled_inf_mae": self.mean_scaled_inf_mae, **self.inference}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=1) + "\n")


def mae_metrics(x: ProbCurve, x_star: ProbCurve) -> MetricReport:
    """Per-time probability MAE ``|x - x*|_1 / n`` and scaled influence MAE ``|1.(x - x*)| / n``."""
    if x.values.shape != x_star.values.shape or not np.allclose(x.grid, x_star.grid):
        raise ValueError("curves must share the grid and the node count")
    diff = x.values - x_star.values
    n = diff.shape[1]
    return MetricReport(np.asarray(x.grid, dtype=float), np.abs(diff).sum(axis=1) / n,
                        np.abs(diff.sum(axis=1)) / n)


def _ratio(num, den, name):
    if den == 0:
        warnings.warn(f"{name} undefined: empty edge set", RuntimeWarning, stacklevel=3)
        return float("nan")
    return num / den


def network_metrics(E, E_star, A, A_star) -> dict:
    """Edge-set and weight agreement between an inferred and a true network.

    ``prc = |E & E*| / |E*|`` and ``rcl = |E & E*| / |E|``, i.e. the
    denominators are the reverse of the usual precision/recall convention.
    ``acc = 1 - |E ^ E*| / (|E| + |E*|)`` and ``cor`` is the absolute cosine
    similarity of the two transmission matrices.
    """
    A = np.asarray(A, dtype=float)
    A_star = np.asarray(A_star, dtype=float)
    if A.shape != A_star.shape:
        raise ValueError("transmission matrices must have the same shape")
    E, E_star = set(map(tuple, E)), set(map(tuple, E_star))
    common = len(E & E_star)
    norm = np.linalg.norm(A) * np.linalg.norm(A_star)
    return {
        "prc": _ratio(common, len(E_star), "prc"),
        "rcl": _ratio(common, len(E), "rcl"),
        "acc": 1.0 - _ratio(len(E ^ E_star), len(E) + len(E_star), "acc"),
        "cor": _ratio(abs(float(np.sum(A * A_star))), norm, "cor"),
    }
