"""Self-checks against independent oracles, shared by the ``verify`` command and the tests.

Each check returns ``Check`` records; a suite passes when every record does.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .cascades import Cascade, EdgeLaws, estimate_probs_mc, simulate_cascade
from .dynamics import LOG_FLOOR, ThetaParams, layer_shapes, param_slices
from .infmax import grad_influence_exact, influence_relaxed, project_capped_simplex
from .model import TrainedModel
from .network import DiffusionNetwork, KroneckerSpec, generate_kronecker
from .ode import IntegratorConfig, make_grid
from .oracles import exact_probs_ctmc, full_z_ode_oracle
from .training import TrainConfig, event_schedule, grad_loss_adjoint

SUITES = ("gradients", "oracles", "projection")


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _check(name, value, tol) -> Check:
    value = float(value)
    return Check(name, value, float(tol), bool(value <= tol))


# -- independent loss evaluation over many parameter vectors --------------------

def _unpack_many(flat: np.ndarray, n: int, depth: int):
    """Split a ``(P, D)`` stack of flattened parameters into batched arrays."""
    sl = param_slices(n, depth)
    P = flat.shape[0]
    A = flat[:, sl["A"]].reshape(P, n, n)
    pos = sl["eta"].start
    layers = []
    for o, i in layer_shapes(n, depth):
        W = flat[:, pos:pos + o * i].reshape(P, o, i)
        pos += o * i
        b = flat[:, pos:pos + o]
        pos += o
        layers.append((W, b))
    return A, layers, flat[:, sl["B"]], flat[:, sl["C"]]


def batched_losses(flat: np.ndarray, cascade: Cascade, n: int, depth: int,
                   integrator: IntegratorConfig, floor: float = LOG_FLOOR) -> np.ndarray:
    """Loss of one cascade under each row of ``flat`` (shape ``(P, D)``).

    Written directly from the model definition with explicit RK4/Euler
    stages, independently of the training module.
    """
    A, layers, B, C = _unpack_many(np.atleast_2d(flat), n, depth)
    P = A.shape[0]

    def field(m):
        x, h = m[:, :n], m[:, n:]
        Ax = np.einsum("pij,pj->pi", A, x)
        a = m
        for k, (W, b) in enumerate(layers):
            z = np.einsum("pij,pj->pi", W, a) + b
            a = z if k == len(layers) - 1 else np.where(z > 0, z, np.expm1(np.minimum(z, 0)))
        eps = np.clip(a, 0.0, 1.0)
        return np.concatenate([Ax - x * Ax + eps, B * x - C * h], axis=1)

    sched = event_schedule(cascade)
    grid = make_grid(integrator, sched.times)
    m = np.zeros((P, 2 * n))
    m[:, list(cascade.source)] = 1.0
    loss = np.zeros(P)
    events = dict(zip(sched.times.tolist(), sched.nodes.tolist()))
    for t0, t1 in zip(grid[:-1], grid[1:]):
        dt = t1 - t0
        if integrator.method == "rk4":
            k1 = field(m)
            k2 = field(m + 0.5 * dt * k1)
            k3 = field(m + 0.5 * dt * k2)
            k4 = field(m + dt * k3)
            m = m + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            m = m + dt * field(m)
        if float(t1) in events:
            loss -= np.log(np.maximum(field(m)[:, events[float(t1)]], floor))
    return loss + m[:, :n].sum(axis=1)


def fd_gradient(theta: ThetaParams, cascade: Cascade, integrator: IntegratorConfig,
                step: float = 1e-6, floor: float = LOG_FLOOR) -> np.ndarray:
    """Central differences over every free coordinate (the diagonal of ``A`` stays 0)."""
    n, depth = theta.n, theta.depth
    flat = theta.flatten()
    D = flat.size
    diag = np.zeros(D, dtype=bool)
    diag[param_slices(n, depth)["A"]] = np.eye(n, dtype=bool).ravel()
    free = np.flatnonzero(~diag)
    E = np.zeros((free.size, D))
    E[np.arange(free.size), free] = step
    L = batched_losses(np.vstack([flat + E, flat - E]), cascade, n, depth, integrator, floor)
    g = np.zeros(D)
    g[free] = (L[:free.size] - L[free.size:]) / (2.0 * step)
    return g


def random_instance(n: int, rng: np.random.Generator, T: float = 10.0, max_events: int = 5,
                    degree: float = 2.0):
    """Kronecker network, random parameters and a simulated cascade with 1..max_events events."""
    k = int(round(math.log2(n)))
    spec = KroneckerSpec.from_dict({"seed": "hier", "iterations": k, "degree": degree})
    net = generate_kronecker(spec, rng)
    theta = ThetaParams.init(net.n, rng)
    theta.A = rng.uniform(0.0, 0.3, size=(net.n, net.n))
    np.fill_diagonal(theta.A, 0.0)
    laws = EdgeLaws.exponential(net)
    for _ in range(10000):
        src = (int(rng.integers(net.n)),)
        c = simulate_cascade(net, src, T, laws, rng)
        if 1 <= len(event_schedule(c)) <= max_events:
            return net, theta, c
    # sparse draws: plant a synthetic cascade with one event
    times = np.full(net.n, np.inf)
    times[0], times[1] = 0.0, T / 2
    return net, theta, Cascade((0,), times, T)


def adjoint_relative_error(theta, cascade, config: TrainConfig, step: float = 1e-7) -> float:
    _, g = grad_loss_adjoint(theta, cascade, config)
    fd = fd_gradient(theta, cascade, config.integrator, step, config.log_floor)
    return float(np.max(np.abs(g.flatten() - fd)) / max(np.max(np.abs(fd)), 1e-300))


def check_gradients(n: int = 8, seed: int = 0, instances: int = 3, steps: int = 400,
                    tol: float = 1e-4) -> list[Check]:
    rng = np.random.default_rng([seed, 101])
    config = TrainConfig(integrator=IntegratorConfig("rk4", steps, 10.0))
    out = []
    for k in range(instances):
        _, theta, c = random_instance(n, rng)
        out.append(_check(f"adjoint_vs_fd[{k}]", adjoint_relative_error(theta, c, config), tol))
        model = TrainedModel(theta, config.integrator)
        u = project_capped_simplex(rng.uniform(size=theta.n), 2)
        g = grad_influence_exact(model, u, 10.0)
        h = 1e-5
        fd = np.array([(influence_relaxed(model, u + h * e, 10.0)
                        - influence_relaxed(model, u - h * e, 10.0)) / (2 * h)
                       for e in np.eye(theta.n)])
        out.append(_check(f"influence_grad_vs_fd[{k}]",
                          np.max(np.abs(g - fd)) / np.max(np.abs(fd)), tol))
    return out


def random_exponential_network(n: int, rng: np.random.Generator, p: float = 0.25,
                               lo: float = 0.1, hi: float = 1.0) -> DiffusionNetwork:
    mask = rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    return DiffusionNetwork(np.where(mask, rng.uniform(lo, hi, size=(n, n)), 0.0))


def check_oracles(n: int = 8, seed: int = 0, networks: int = 2, mc_samples: int = 100000,
                  grid=None, z_tol: float = 1e-6, num_se: float = 4.0) -> list[Check]:
    """CTMC vs moment-ODE (sup-norm) and Monte-Carlo vs CTMC (in standard errors)."""
    rng = np.random.default_rng([seed, 202])
    grid = np.arange(1.0, 21.0) if grid is None else np.asarray(grid, dtype=float)
    out = []
    for k in range(networks):
        net = random_exponential_network(n, rng)
        src = tuple(sorted(rng.choice(n, size=int(rng.integers(1, 3)), replace=False).tolist()))
        exact = exact_probs_ctmc(net, src, grid)
        z = full_z_ode_oracle(net, src, grid)
        out.append(_check(f"zode_vs_ctmc[{k}]", np.max(np.abs(z.values - exact.values)), z_tol))
        mc = estimate_probs_mc(net, src, grid, mc_samples, rng)
        out.append(_check(f"mc_vs_ctmc_se[{k}]", mc_zscore(mc.values, exact.values, mc_samples),
                          num_se))
    return out


def mc_zscore(estimate, exact, num_samples: int) -> float:
    """Largest deviation in binomial standard errors.

    The standard error is the larger of the plug-in values at the exact and
    at the estimated probability, so neither a near-certain exact value nor a
    degenerate estimate (0 or 1) collapses it to zero.
    """
    exact = np.asarray(exact, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    p = np.clip(exact, 0.0, 1.0)
    q = np.clip(estimate, 0.0, 1.0)
    se = np.sqrt(np.maximum(p * (1.0 - p), q * (1.0 - q)) / num_samples)
    diff = np.abs(estimate - exact)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > 1e-9, np.inf, 0.0))
    return float(z.max())


def kkt_violation(u, v, n0: float, atol: float = 1e-12) -> float:
    """Largest violation of feasibility and of the KKT conditions of the capped-simplex projection.

    ``u`` is optimal iff ``u = clip(v - lam, 0, 1)`` for some shift ``lam``:
    interior coordinates share ``v_i - u_i = lam``, coordinates at 0 have
    ``v_i <= lam`` and coordinates at 1 have ``v_i - 1 >= lam``.
    """
    u, v = np.asarray(u, float), np.asarray(v, float)
    viol = max(abs(u.sum() - n0), -u.min(initial=0.0), u.max(initial=0.0) - 1.0)
    lower, upper = u <= atol, u >= 1.0 - atol
    interior = ~lower & ~upper
    lam_lo = np.max(v[lower], initial=-np.inf)          # lam >= every v_i at 0
    lam_hi = np.min(v[upper] - 1.0, initial=np.inf)     # lam <= every v_i - 1 at 1
    if interior.any():
        r = v[interior] - u[interior]
        lam = float(r.mean())
        viol = max(viol, np.max(np.abs(r - lam)), lam_lo - lam, lam - lam_hi)
    else:
        viol = max(viol, lam_lo - lam_hi)
    return float(max(viol, 0.0))


def check_projection(seed: int = 0, instances: int = 1000, max_n: int = 16,
                     tol: float = 1e-9) -> list[Check]:
    rng = np.random.default_rng([seed, 303])
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, max_n + 1))
        n0 = int(rng.integers(0, n + 1))
        v = rng.normal(scale=2.0, size=n)
        worst = max(worst, kkt_violation(project_capped_simplex(v, n0), v, n0))
    return [_check("projection_kkt", worst, tol)]


def run_suite(suite: str, n: int = 8, seed: int = 0) -> list[Check]:
    if suite == "all":
        return [c for s in SUITES for c in run_suite(s, n, seed)]
    if suite == "gradients":
        return check_gradients(n, seed)
    if suite == "oracles":
        return check_oracles(n, seed)
    if suite == "projection":
        return check_projection(seed)
    raise ValueError(f"unknown suite {suite!r}")
