"""Continuous-time independent cascade simulation, datasets and Monte-Carlo estimates."""
from __future__ import annotations

import heapq
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .network import DiffusionNetwork


# -- delay laws ---------------------------------------------------------------

@dataclass(frozen=True)
class Exponential:
    rate: float

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size=size)

    def cdf(self, t):
        return 1.0 - np.exp(-self.rate * np.asarray(t))


@dataclass(frozen=True)
class Rayleigh:
    """Density ``rate * t * exp(-rate * t**2 / 2)``."""
    rate: float

    def sample(self, rng, size=None):
        return rng.rayleigh(1.0 / np.sqrt(self.rate), size=size)

    def cdf(self, t):
        return 1.0 - np.exp(-0.5 * self.rate * np.asarray(t) ** 2)


@dataclass(frozen=True)
class Weibull:
    shape: float
    scale: float

    def sample(self, rng, size=None):
        return self.scale * rng.weibull(self.shape, size=size)

    def cdf(self, t):
        return 1.0 - np.exp(-(np.asarray(t) / self.scale) ** self.shape)


def sample_delay(law, rng: np.random.Generator) -> float:
    return float(law.sample(rng))


LAW_KINDS = ("exp", "rayleigh", "weibull")


class EdgeLaws:
    """Delay law for every edge of a network, aligned with ``net.edges``.

    Parameters are stored as arrays so a whole batch of cascades can draw all
    edge delays in one call.
    """

    def __init__(self, kind: str, edges, p1, p2=None):
        if kind not in LAW_KINDS:
            raise ValueError(f"unknown delay law {kind!r}")
        self.kind = kind
        self.edges = list(edges)
        self.p1 = np.asarray(p1, dtype=float)
        self.p2 = None if p2 is None else np.asarray(p2, dtype=float)
        if np.any(self.p1 <= 0) or (self.p2 is not None and np.any(self.p2 <= 0)):
            raise ValueError("delay law parameters must be positive")

    @classmethod
    def exponential(cls, net: DiffusionNetwork) -> "EdgeLaws":
        edges = net.edges
        return cls("exp", edges, [net.A[j, i] for i, j in edges])

    @classmethod
    def rayleigh(cls, net: DiffusionNetwork) -> "EdgeLaws":
        edges = net.edges
        return cls("rayleigh", edges, [net.A[j, i] for i, j in edges])

    @classmethod
    def weibull(cls, net: DiffusionNetwork, rng, lo: float = 1.0, hi: float = 10.0) -> "EdgeLaws":
        edges = net.edges
        shape = rng.uniform(lo, hi, size=len(edges))
        scale = rng.uniform(lo, hi, size=len(edges))
        return cls("weibull", edges, shape, scale)

    @classmethod
    def for_network(cls, net: DiffusionNetwork, kind: str, rng=None) -> "EdgeLaws":
        if kind == "exp":
            return cls.exponential(net)
        if kind == "rayleigh":
            return cls.rayleigh(net)
        if kind == "weibull":
            if rng is None:
                raise ValueError("weibull laws need an rng for their parameters")
            return cls.weibull(net, rng)
        raise ValueError(f"unknown delay law {kind!r}")

    def law(self, k: int):
        if self.kind == "exp":
            return Exponential(self.p1[k])
        if self.kind == "rayleigh":
            return Rayleigh(self.p1[k])
        return Weibull(self.p1[k], self.p2[k])

    def sample(self, rng, size=None) -> np.ndarray:
        """Delays for all edges; shape ``(len(edges),)`` or ``(size, len(edges))``."""
        shape = (len(self.edges),) if size is None else (size, len(self.edges))
        if self.kind == "exp":
            return rng.exponential(size=shape) / self.p1
        if self.kind == "rayleigh":
            return rng.rayleigh(size=shape) / np.sqrt(self.p1)
        return self.p2 * rng.weibull(self.p1, size=shape)


# -- cascades -------------------------------------------------------------------

class CascadeDataError(ValueError):
    pass


@dataclass(eq=False)
class Cascade:
    source: tuple
    times: np.ndarray
    horizon: float

    def __post_init__(self):
        self.source = tuple(sorted(int(s) for s in self.source))
        self.times = np.asarray(self.times, dtype=float)
        t = self.times
        if not self.source:
            raise CascadeDataError("cascade needs a nonempty source set")
        if np.any(np.isnan(t)) or np.any(t < 0):
            raise CascadeDataError("infection times must be nonnegative")
        zero = set(np.flatnonzero(t == 0).tolist())
        if zero != set(self.source):
            raise CascadeDataError("exactly the source nodes must have time 0")
        finite = t[np.isfinite(t)]
        if np.any(finite > self.horizon):
            raise CascadeDataError("finite times must not exceed the horizon")

    @property
    def n(self) -> int:
        return self.times.size

    def events(self) -> list[tuple[int, float]]:
        """Non-source infections ``(node, time)`` sorted by time, then node."""
        t = self.times
        idx = np.flatnonzero(np.isfinite(t) & (t > 0))
        order = np.lexsort((idx, t[idx]))
        return [(int(idx[k]), float(t[idx[k]])) for k in order]

    def to_json(self) -> str:
        rec = {"source": list(self.source),
               "events": [[i, t] for i, t in self.events()],
               "horizon": float(self.horizon),
               "n": self.n}
        return json.dumps(rec)

    @classmethod
    def from_record(cls, rec: dict, n: int | None = None) -> "Cascade":
        n = rec.get("n", n)
        if n is None:
            raise CascadeDataError("node count unknown: record has no 'n' and none was given")
        times = np.full(int(n), np.inf)
        for s in rec["source"]:
            times[int(s)] = 0.0
        for node, t in rec["events"]:
            times[int(node)] = float(t)
        return cls(tuple(rec["source"]), times, float(rec["horizon"]))


@dataclass
class CascadeSet:
    cascades: list
    horizon: float

    def __post_init__(self):
        ns = {c.n for c in self.cascades}
        if len(ns) > 1:
            raise CascadeDataError("cascades disagree on node count")
        if any(c.horizon != self.horizon for c in self.cascades):
            raise CascadeDataError("cascades disagree on horizon")

    def __len__(self):
        return len(self.cascades)

    def __iter__(self):
        return iter(self.cascades)

    def __getitem__(self, k):
        return self.cascades[k]

    @property
    def n(self) -> int | None:
        return self.cascades[0].n if self.cascades else None


def save_cascades(cs: CascadeSet, path) -> None:
    Path(path).write_text("".join(c.to_json() + "\n" for c in cs))


def load_cascades(path, n: int | None = None) -> CascadeSet:
    cascades = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            cascades.append(Cascade.from_record(json.loads(line), n))
        except (KeyError, ValueError, TypeError) as exc:
            raise CascadeDataError(f"line {lineno}: {exc}") from None
    horizon = cascades[0].horizon if cascades else 0.0
    return CascadeSet(cascades, horizon)


# -- simulation -----------------------------------------------------------------

def first_passage_times(n: int, edges, delays, source) -> np.ndarray:
    """Event-queue propagation of fixed edge delays from the source set.

    Ties in the queue are broken by node index.
    """
    out_adj = [[] for _ in range(n)]
    for (i, j), d in zip(edges, delays):
        out_adj[i].append((j, d))
    times = np.full(n, np.inf)
    queue = [(0.0, int(s)) for s in sorted(source)]
    for _, s in queue:
        times[s] = 0.0
    heapq.heapify(queue)
    done = np.zeros(n, dtype=bool)
    while queue:
        t, i = heapq.heappop(queue)
        if done[i]:
            continue
        done[i] = True
        for j, d in out_adj[i]:
            tj = t + d
            if tj < times[j]:
                times[j] = tj
                heapq.heappush(queue, (tj, j))
    return times


def simulate_cascade(net: DiffusionNetwork, source, T: float, laws: EdgeLaws,
                     rng: np.random.Generator, return_delays: bool = False):
    source = tuple(sorted(set(int(s) for s in source)))
    if not source:
        raise ValueError("source set must be nonempty")
    if not T > 0:
        raise ValueError("horizon must be positive")
    delays = laws.sample(rng)
    times = first_passage_times(net.n, laws.edges, delays, source)
    times[times > T] = np.inf
    cascade = Cascade(source, times, T)
    return (cascade, delays) if return_delays else cascade


def sample_source_sets(n: int, count: int, size_range, rng) -> list[tuple]:
    """Source sets with size uniform on ``size_range`` and nodes drawn without replacement."""
    lo, hi = size_range
    if not 1 <= lo <= hi <= n:
        raise ValueError(f"size range {size_range} must lie within [1, {n}]")
    out = []
    for _ in range(count):
        k = int(rng.integers(lo, hi + 1))
        out.append(tuple(sorted(rng.choice(n, size=k, replace=False).tolist())))
    return out


def build_dataset(net: DiffusionNetwork, laws: EdgeLaws, num_sources: int, per_source: int,
                  T: float, rng: np.random.Generator, size_range=(1, 10),
                  sources: Sequence[tuple] | None = None, threads: int = 1) -> CascadeSet:
    """``num_sources * per_source`` cascades, each with its own derived rng stream."""
    if sources is None:
        hi = min(size_range[1], net.n)
        sources = sample_source_sets(net.n, num_sources, (min(size_range[0], hi), hi), rng)
    jobs = [s for s in sources for _ in range(per_source)]
    seeds = np.random.SeedSequence(int(rng.integers(2**63))).spawn(len(jobs))

    def run(k):
        return simulate_cascade(net, jobs[k], T, laws, np.random.default_rng(seeds[k]))

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            cascades = list(ex.map(run, range(len(jobs))))
    else:
        cascades = [run(k) for k in range(len(jobs))]
    return CascadeSet(cascades, T)


# -- Monte-Carlo estimation ----------------------------------------------------

@dataclass
class ProbCurve:
    grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def influence(self) -> np.ndarray:
        return self.values.sum(axis=1)

    def to_csv(self, path) -> None:
        n = self.n
        lines = ["t," + ",".join(f"x{i}" for i in range(n))]
        for t, row in zip(self.grid, self.values):
            lines.append(",".join([repr(float(t))] + [repr(float(v)) for v in row]))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ProbCurve":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])


def batch_first_passage(n: int, edges, delays: np.ndarray, source) -> np.ndarray:
    """Shortest-path infection times for a batch of delay draws (Bellman-Ford)."""
    N = delays.shape[0]
    dist = np.full((N, n), np.inf)
    dist[:, list(source)] = 0.0
    if not edges:
        return dist
    src, dst = np.array(edges).T
    order = np.argsort(dst, kind="stable")
    src, dst, delays = src[order], dst[order], delays[:, order]
    heads = np.flatnonzero(np.r_[True, dst[1:] != dst[:-1]])
    targets = dst[heads]
    for _ in range(n - 1):
        cand = np.minimum.reduceat(dist[:, src] + delays, heads, axis=1)
        new = np.minimum(dist[:, targets], cand)
        if np.array_equal(new, dist[:, targets]):
            break
        dist[:, targets] = new
    return dist


def estimate_probs_mc(net: DiffusionNetwork, source, grid, num_samples: int,
                      rng: np.random.Generator, laws: EdgeLaws | None = None,
                      chunk: int = 20000) -> ProbCurve:
    """Fraction of simulated cascades with each node infected by each grid time."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    laws = laws or EdgeLaws.exponential(net)
    grid = np.asarray(grid, dtype=float)
    counts = np.zeros((grid.size, net.n))
    done = 0
    while done < num_samples:
        m = min(chunk, num_samples - done)
        dist = batch_first_passage(net.n, laws.edges, laws.sample(rng, size=m), source)
        counts += (dist[None, :, :] <= grid[:, None, None]).sum(axis=1)
        done += m
    x = counts / num_samples
    return ProbCurve(grid, x, np.sqrt(x * (1.0 - x) / num_samples))
