"""TrainedModel container and its JSON file format.

File layout (``format_version`` 1)::

    {
      "format": "nmfdyn-model",
      "format_version": 1,
      "n": <int>,
      "depth": <int>,                      # number of affine maps in the memory MLP
      "architecture": "nmf-elu<depth>-clamp",
      "integrator": {"method": "rk4", "steps": 40, "T": 20.0},
      "theta": [<float>, ...],             # flattened A, (W_k, b_k)..., B, C
      "support": [[src, dst], ...] | null, # edge mask used during training, if any
      "metadata": {...}                    # loss history, seed, training config
    }

Floats are written with ``repr`` precision so a save/load round trip is exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import ThetaParams
from .ode import IntegratorConfig

FORMAT = "nmfdyn-model"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class TrainedModel:
    theta: ThetaParams
    integrator: IntegratorConfig
    metadata: dict = field(default_factory=dict)
    support: list | None = None

    @property
    def n(self) -> int:
        return self.theta.n

    @property
    def T(self) -> float:
        return self.integrator.T

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "format_version": FORMAT_VERSION,
            "n": self.n,
            "depth": self.theta.depth,
            "architecture": self.theta.architecture,
            "integrator": self.integrator.to_dict(),
            "theta": [float(v) for v in self.theta.flatten()],
            "support": None if self.support is None else [list(map(int, e)) for e in self.support],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("format") != FORMAT:
            raise ModelFormatError("not an nmfdyn model file")
        if d.get("format_version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported format version {d.get('format_version')!r}")
        theta = ThetaParams.unflatten(d["theta"], int(d["n"]), int(d["depth"]))
        support = d.get("support")
        return cls(theta, IntegratorConfig.from_dict(d["integrator"]), d.get("metadata", {}),
                   None if support is None else [tuple(e) for e in support])


def save_model(model: TrainedModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


def load_model(path) -> TrainedModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(str(exc)) from None
    return TrainedModel.from_dict(d)


def support_mask(n: int, edges) -> np.ndarray:
    """0/1 matrix with ``mask[j, i] = 1`` for every edge ``(i, j)``."""
    mask = np.zeros((n, n))
    for i, j in edges:
        mask[j, i] = 1.0
    return mask
