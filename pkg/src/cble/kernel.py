"""Quenched computations on a frozen environment path.

On a segment where the environment equals the constant ``c`` the backward
equation ``d/ds v = e^{c} psi0(v e^{-c})`` becomes, for ``u = log v - c`` and
reversed time ``tau = T - s``,

    du/dtau = -Psi0(e^u),

which is autonomous and integrated in log scale: an absolute tolerance on
``u`` is a relative tolerance on ``v``. At segment boundaries ``v`` is
continuous, so only the shift ``c`` changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import ode
from .branching import BranchingMechanism, Stable, big_psi0, check_grey, rv_metadata
from .errors import DomainError, GreyConditionError, NumericalError
from .levy_env import EnvironmentPath, PathBatch

DEFAULT_TOL = 1e-9
MAX_STEPS = 1_000_000
LADDER_BASE = 10.0
LADDER_K = 12
LADDER_TOL = 1e-7


@dataclass(frozen=True)
class QuenchedSolution:
    lam: float  # math.inf for the lam -> infinity limit
    v0: float
    tol: float
    steps: int = 0
    rejected: int = 0
    trajectory: Optional[np.ndarray] = None  # v at the grid nodes t_0..t_n
    method: str = "ode"


def _levels(path: EnvironmentPath, raw: bool) -> np.ndarray:
    v = path.values[:-1]
    return v if raw else v - path.x0


def exp_functional(path: EnvironmentPath, beta: float, raw: bool = False) -> float:
    """``int_0^T exp(-beta * xi_u) du`` for the skeleton, with xi shifted to start at 0."""
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    terms = np.exp(-beta * _levels(path, raw)) * np.diff(path.times)
    return math.fsum(terms.tolist())


def exp_functional_batch(batch: PathBatch, beta: float, raw: bool = False) -> np.ndarray:
    levels = batch.values[:, :-1]
    if not raw:
        levels = levels - batch.values[:, :1]
    return np.sum(np.exp(-beta * levels) * batch.dt, axis=-1)


def stable_v(C: float, beta: float, lam, I):
    """Closed form ``(lam^-beta + beta*C*I)^(-1/beta)``; ``lam = inf`` drops the first term."""
    I_arr = np.asarray(I, dtype=float)
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(np.isinf(lam_arr) & (I_arr <= 0)):
        raise DomainError("the infinite-lambda closed form needs I > 0")
    with np.errstate(divide="ignore"):
        base = lam_arr ** -beta + beta * C * I_arr
    out = base ** (-1.0 / beta)
    return float(out) if out.ndim == 0 else out


def _solve_log(mech: BranchingMechanism, path: EnvironmentPath, lams: np.ndarray, tol: float,
               raw: bool, max_steps: int):
    """Backward sweep for several terminal values at once; returns v at every node."""
    levels = _levels(path, raw)
    dts = np.diff(path.times)
    n = dts.size
    logv = np.empty((n + 1, lams.size))
    logv[n] = np.log(lams)
    stats = ode.StepStats()

    def rhs(u):
        return -np.asarray(big_psi0(mech, np.exp(u)))

    y = logv[n].copy()
    for i in range(n - 1, -1, -1):
        c = levels[i]
        u = ode.integrate(rhs, y - c, dts[i], tol, stats, max_steps)
        y = u + c
        logv[i] = y
    return np.exp(logv), stats


def solve_v(mech: BranchingMechanism, path: EnvironmentPath, lam: float,
            tol: float = DEFAULT_TOL, raw: bool = False,
            max_steps: int = MAX_STEPS) -> QuenchedSolution:
    """Backward ODE from ``v(T) = lam`` down to ``s = 0`` on the shifted path ``xi - xi_0``."""
    if not (lam > 0 and math.isfinite(lam)):
        raise DomainError(f"lambda must be finite and positive, got {lam}")
    traj, stats = _solve_log(mech, path, np.array([float(lam)]), tol, raw, max_steps)
    v0 = float(traj[0, 0])
    if not (v0 > 0 and math.isfinite(v0)):
        raise NumericalError("backward ODE returned a nonpositive value",
                             {"v0": v0, "steps": stats.accepted})
    return QuenchedSolution(float(lam), v0, tol, stats.accepted, stats.rejected, traj[:, 0])


def _aitken(v: np.ndarray) -> np.ndarray:
    d1 = v[1:-1] - v[:-2]
    d2 = v[2:] - 2 * v[1:-1] + v[:-2]
    out = v[2:].copy()
    ok = np.abs(d2) > 1e-300
    out[ok] = v[2:][ok] - (v[2:][ok] - v[1:-1][ok]) ** 2 / d2[ok]
    return out


def v_infinity(mech: BranchingMechanism, path: EnvironmentPath, tol: float = DEFAULT_TOL,
               closed_form: bool = True, ladder_tol: float = LADDER_TOL,
               max_steps: int = MAX_STEPS) -> QuenchedSolution:
    """``v_T(0, inf, xi - xi_0)``: closed form for stable mechanisms, else a lambda ladder.

    The ladder integrates ``lam_k = 10^k`` (k = 1..12) in one sweep and applies
    Aitken's delta-squared twice; the limit is accepted once the last two
    extrapolants agree to ``ladder_tol``.
    """
    if not check_grey(mech):
        raise GreyConditionError("Grey's condition fails for this mechanism: v(0, inf) is infinite")
    if isinstance(mech, Stable) and closed_form:
        I = exp_functional(path, mech.beta)
        return QuenchedSolution(math.inf, stable_v(mech.C, mech.beta, math.inf, I), 0.0,
                                method="closed_form")
    # The relative error of v(lam) is governed by lam / v(inf); if the plain
    # ladder has not settled, rerun it rescaled by the best value so far.
    scale, steps, rejected = 1.0, 0, 0
    for attempt in range(2):
        lams = scale * LADDER_BASE ** np.arange(1, LADDER_K + 1)
        traj, stats = _solve_log(mech, path, lams, tol, False, max_steps)
        steps, rejected = steps + stats.accepted, rejected + stats.rejected
        seq = traj[0]
        acc = _aitken(_aitken(seq))
        rel = abs(acc[-1] - acc[-2]) / abs(acc[-1])
        if rel <= ladder_tol:
            break
        scale = max(1.0, float(seq[-1]))
    else:
        raise NumericalError("lambda ladder did not converge",
                             {"ladder": seq.tolist(), "extrapolated": acc.tolist(),
                              "rel_change": float(rel), "scale": scale})
    v0 = float(acc[-1])
    if not (v0 > 0 and math.isfinite(v0)):
        raise NumericalError("v(0, inf) is not positive", {"v0": v0})
    return QuenchedSolution(math.inf, v0, tol, steps, rejected, method="ladder")


def survival_prob_quenched(mech: BranchingMechanism, path: EnvironmentPath, z: float,
                           tol: float = DEFAULT_TOL) -> float:
    """``P(Z_T > 0 | xi) = 1 - exp(-z v_T(0, inf, xi - xi_0))``."""
    if z < 0:
        raise DomainError(f"z must be >= 0, got {z}")
    if z == 0:
        return 0.0
    return -math.expm1(-z * v_infinity(mech, path, tol).v0)


def quenched_laplace(mech: BranchingMechanism, path: EnvironmentPath, z: float, lam: float,
                     tol: float = DEFAULT_TOL) -> float:
    """``E[exp(-lam Z_T e^{-(xi_T - xi_0)}) | xi] = exp(-z v_T(0, lam, xi - xi_0))``."""
    if z < 0 or lam < 0:
        raise DomainError("z and lambda must be >= 0")
    if lam == 0 or z == 0:
        return 1.0
    if isinstance(mech, Stable):
        v = stable_v(mech.C, mech.beta, lam, exp_functional(path, mech.beta))
    else:
        v = solve_v(mech, path, lam, tol).v0
    return math.exp(-z * v)


def survival_batch(mech: Stable, batch: PathBatch, z: float) -> np.ndarray:
    """Vectorized quenched survival probabilities for a stable mechanism."""
    if z == 0:
        return np.zeros(batch.n)
    I = exp_functional_batch(batch, mech.beta)
    return -np.expm1(-z * stable_v(mech.C, mech.beta, math.inf, I))


def v_upper_bound(mech: BranchingMechanism, path: EnvironmentPath) -> float:
    """``(beta C I_{0,T}(beta xi))^(-1/beta)`` with (beta, C) from the lower bound on ell."""
    meta = rv_metadata(mech)
    if not meta.global_bound or not meta.ell_lower_bound:
        raise DomainError("mechanism has no global lower bound psi0 >= C lam^(1+beta)")
    I = exp_functional(path, meta.beta)
    return stable_v(meta.ell_lower_bound, meta.beta, math.inf, I)


def v_upper_bound_check(mech: BranchingMechanism, path: EnvironmentPath,
                        tol: float = 1e-6) -> bool:
    v = v_infinity(mech, path, closed_form=False).v0
    return v <= v_upper_bound(mech, path) * (1.0 + tol)
