"""Dormand-Prince 5(4) for vector autonomous ODEs sharing one step size."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 2.0  # step may at most double after an accepted step


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    h: float = 0.0


def integrate(f, y0: np.ndarray, duration: float, tol: float, stats: StepStats,
              max_steps: int) -> np.ndarray:
    """Advance ``y' = f(y)`` over ``duration`` with absolute local error ``tol``.

    ``stats.h`` carries the step size between calls so consecutive segments
    warm-start; ``max_steps`` caps accepted plus rejected steps overall.
    """
    y = np.array(y0, dtype=float)
    if duration <= 0:
        return y
    k1 = f(y)
    h = stats.h
    if h <= 0:
        scale = float(np.max(np.abs(k1)))
        h = 0.5 * tol ** 0.2 / scale if scale > 0 else duration
    t = 0.0
    while t < duration:
        if stats.accepted + stats.rejected >= max_steps:
            raise NumericalError("ODE step budget exhausted",
                                 {"accepted": stats.accepted, "rejected": stats.rejected,
                                  "t_reached": t, "duration": duration, "h": h})
        last = h >= duration - t
        h_nominal = h
        if last:
            h = duration - t
        k = [k1]
        for i in range(1, 7):
            yi = y.copy()
            for j, a in enumerate(_A[i]):
                if a != 0.0:
                    yi += (h * a) * k[j]
            k.append(f(yi))
        y_new = yi  # stage 7 is evaluated at the 5th-order solution
        err_vec = h * sum(e * kj for e, kj in zip(_E, k) if e != 0.0)
        err = float(np.max(np.abs(err_vec))) / tol
        if not np.isfinite(err):
            err = np.inf
        if err <= 1.0:
            stats.accepted += 1
            t = duration if last else t + h
            y = y_new
            k1 = k[6]
            factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
            h = max(MIN_FACTOR, factor) * (h_nominal if last else h)
            stats.h = h
        else:
            stats.rejected += 1
            h *= max(MIN_FACTOR, SAFETY * err ** -0.2) if np.isfinite(err) else MIN_FACTOR
            if h <= 1e-300:
                raise NumericalError("ODE step size underflow",
                                     {"accepted": stats.accepted, "rejected": stats.rejected})
    return y
