"""Monte Carlo estimate records and fixed-order reductions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateWeightError
from .rng import fsum_mean, mean_and_stderr


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n: int
    seed: Optional[int] = None
    ess: Optional[float] = None
    wall_time: float = 0.0
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def rel_stderr(self) -> float:
        return self.stderr / abs(self.mean) if self.mean else math.inf


def plain_estimate(values, seed=None, wall_time=0.0, **diagnostics) -> McEstimate:
    values = np.asarray(values, dtype=float)
    m, se = mean_and_stderr(values)
    return McEstimate(m, se, values.size, seed, float(values.size), wall_time, diagnostics)


def effective_sample_size(w) -> float:
    w = np.asarray(w, dtype=float)
    s2 = math.fsum((w * w).tolist())
    return math.fsum(w.tolist()) ** 2 / s2 if s2 > 0 else 0.0


def weighted_estimate(values, w, seed=None, wall_time=0.0, **diagnostics) -> McEstimate:
    """Self-normalized ``sum(w f) / sum(w)`` with a delta-method standard error."""
    values = np.asarray(values, dtype=float)
    w = np.asarray(w, dtype=float)
    sw = math.fsum(w.tolist())
    if not sw > 0:
        raise DegenerateWeightError("all weights vanish", {"n": int(w.size)})
    r = math.fsum((w * values).tolist()) / sw
    dev = w * (values - r)
    se = math.sqrt(math.fsum((dev * dev).tolist())) / sw
    return McEstimate(r, se, w.size, seed, effective_sample_size(w), wall_time, diagnostics)


def joint_z(a: McEstimate, b: McEstimate) -> float:
    """Distance between two independent estimates in joint standard errors."""
    s = math.hypot(a.stderr, b.stderr)
    d = abs(a.mean - b.mean)
    return d / s if s > 0 else (0.0 if d == 0 else math.inf)


__all__ = ["McEstimate", "plain_estimate", "weighted_estimate", "effective_sample_size",
           "joint_z", "fsum_mean"]
