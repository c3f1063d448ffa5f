"""Diffusion networks: representation, Kronecker generation, edge recovery, TSV I/O.

The transmission matrix follows the column-source convention: the rate of
edge ``(i, j)`` (``i`` infects ``j``) is stored at ``A[j, i]``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class NetworkFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class InvalidSpecError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiffusionNetwork:
    A: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("transmission matrix must be square")
        if not np.all(np.isfinite(A)) or np.any(A < 0):
            raise ValueError("transmission rates must be finite and nonnegative")
        if np.any(np.diag(A) != 0):
            raise ValueError("self-loops are not allowed")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def edges(self) -> list[tuple[int, int]]:
        """Edges ``(src, dst)`` sorted by source then destination."""
        dst, src = np.nonzero(self.A)
        order = np.lexsort((dst, src))
        return [(int(src[k]), int(dst[k])) for k in order]

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(self.A))

    def rate(self, i: int, j: int) -> float:
        return float(self.A[j, i])

    @classmethod
    def from_edges(cls, n: int, edges, rates) -> "DiffusionNetwork":
        A = np.zeros((n, n))
        for (i, j), a in zip(edges, rates):
            A[j, i] = a
        return cls(A)

    @classmethod
    def empty(cls, n: int) -> "DiffusionNetwork":
        return cls(np.zeros((n, n)))


KRONECKER_SEEDS = {
    "hier": [[0.9, 0.1], [0.1, 0.9]],
    "core": [[0.9, 0.5], [0.5, 0.3]],
    "rand": [[0.5, 0.5], [0.5, 0.5]],
}


@dataclass(frozen=True)
class KroneckerSpec:
    seed: tuple
    iterations: int
    target_edges: float
    rate_lo: float = 0.1
    rate_hi: float = 1.0

    def __post_init__(self):
        S = np.asarray(self.seed, dtype=float)
        if S.shape != (2, 2) or np.any(S < 0) or np.any(S > 1):
            raise InvalidSpecError("seed must be a 2x2 matrix with entries in [0, 1]")
        if self.iterations < 1:
            raise InvalidSpecError("iterations must be >= 1")
        n = 2 ** self.iterations
        if self.target_edges < 0 or self.target_edges > n * (n - 1):
            raise InvalidSpecError(f"target_edges must lie in [0, {n * (n - 1)}]")
        if not 0 < self.rate_lo < self.rate_hi:
            raise InvalidSpecError("rate bounds must satisfy 0 < lo < hi")

    @property
    def n(self) -> int:
        return 2 ** self.iterations

    @classmethod
    def from_dict(cls, d: dict) -> "KroneckerSpec":
        seed = d["seed"]
        if isinstance(seed, str):
            seed = KRONECKER_SEEDS[seed]
        if "iterations" in d:
            k = int(d["iterations"])
        else:
            n, size = int(d["n"]), len(seed)
            k = max(1, int(round(np.log(max(n, 1)) / np.log(size))))
            if size ** k != n:
                raise InvalidSpecError(f"n={n} is not a power of the seed size {size}")
        if "target_edges" in d:
            target = float(d["target_edges"])
        else:
            target = float(d["degree"]) * 2 ** k
        rates = d.get("rates", [0.1, 1.0])
        return cls(tuple(map(tuple, seed)), k, target, float(rates[0]), float(rates[1]))


def kronecker_probabilities(spec: KroneckerSpec) -> np.ndarray:
    """Per-pair edge probabilities, ``P[i, j]`` for edge ``(i, j)``.

    The k-fold Kronecker power of the seed is rescaled so the expected edge
    count over off-diagonal pairs equals ``target_edges``.  Pairs whose scaled
    probability would exceed 1 are capped and the remaining mass is
    redistributed over the uncapped pairs.
    """
    S = np.asarray(spec.seed, dtype=float)
    P = S
    for _ in range(spec.iterations - 1):
        P = np.kron(P, S)
    P = P.copy()
    np.fill_diagonal(P, 0.0)
    target = float(spec.target_edges)
    if target == 0 or P.sum() == 0:
        return np.zeros_like(P)
    out = np.zeros_like(P)
    free = P > 0
    remaining = target
    while True:
        scale = remaining / P[free].sum()
        over = free & (P * scale >= 1.0)
        if not over.any():
            out[free] = P[free] * scale
            return out
        out[over] = 1.0
        free &= ~over
        remaining -= over.sum()
        if not free.any() or remaining <= 0:
            return out


def sample_rates(edges, n: int, lo: float, hi: float, rng: np.random.Generator) -> np.ndarray:
    """Transmission matrix with ``A[j, i] ~ Uniform(lo, hi)`` for each edge ``(i, j)``."""
    if not 0 < lo < hi:
        raise InvalidSpecError("rate bounds must satisfy 0 < lo < hi")
    A = np.zeros((n, n))
    edges = list(edges)
    if edges:
        src, dst = np.array(edges).T
        A[dst, src] = rng.uniform(lo, hi, size=len(edges))
    return A


def generate_kronecker(spec: KroneckerSpec, rng: np.random.Generator) -> DiffusionNetwork:
    P = kronecker_probabilities(spec)
    draws = rng.random(P.shape) < P
    np.fill_diagonal(draws, False)
    src, dst = np.nonzero(draws)
    A = sample_rates(zip(src, dst), spec.n, spec.rate_lo, spec.rate_hi, rng)
    return DiffusionNetwork(A)


def threshold_edges(A, eps: float = 0.01) -> set[tuple[int, int]]:
    """Edges ``(i, j)`` with ``A[j, i] >= eps``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    dst, src = np.nonzero(np.asarray(A) >= eps)
    return {(int(i), int(j)) for i, j in zip(src, dst) if i != j}


_HEADER = re.compile(r"#\s*n\s*=\s*(\d+)\s*$")


def save_network(net: DiffusionNetwork, path) -> None:
    lines = [f"# n={net.n}"]
    for i, j in net.edges:
        lines.append(f"{i}\t{j}\t{float(net.A[j, i])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_network(path) -> DiffusionNetwork:
    n_header = None
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER.match(line)
            if m:
                n_header = int(m.group(1))
            continue
        parts = line.split()
        if len(parts) != 3:
            raise NetworkFormatError(lineno, f"expected 3 fields, got {len(parts)}")
        try:
            i, j, a = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise NetworkFormatError(lineno, str(exc)) from None
        if i < 0 or j < 0:
            raise NetworkFormatError(lineno, "negative node id")
        if i == j:
            raise NetworkFormatError(lineno, "self-loop")
        if not np.isfinite(a) or a <= 0:
            raise NetworkFormatError(lineno, f"rate must be positive and finite, got {parts[2]}")
        rows.append((lineno, i, j, a))
    n = n_header if n_header is not None else 1 + max((max(i, j) for _, i, j, _ in rows), default=-1)
    A = np.zeros((n, n))
    for lineno, i, j, a in rows:
        if i >= n or j >= n:
            raise NetworkFormatError(lineno, f"node id out of range for n={n}")
        A[j, i] = a
    return DiffusionNetwork(A)
