"""Pathwise simulation of Z by Lie splitting, for cross-checks of the kernel.

Each step first applies the branching noise with the environment frozen and
then the multiplicative environment flow ``Z <- Z exp(dxi)``. Only
mechanisms with a Feller part and finitely many jump atoms are simulated.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass

import numpy as np

from .branching import BranchingMechanism, FiniteAtoms, Stable
from .errors import DomainError, UnsupportedError
from .kernel import exp_functional_batch, stable_v
from .levy_env import EnvironmentPath, LevyEnvSpec, PathBatch, sample_increments
from .rng import DEFAULT_SEED, map_blocks
from .stats import McEstimate, plain_estimate


def _feller_parts(mech: BranchingMechanism):
    if isinstance(mech, Stable):
        if mech.beta != 1.0:
            raise UnsupportedError("stable branching with beta < 1 has no pathwise scheme here")
        return mech.C, np.empty(0), np.empty(0)
    return mech.rho2, mech.locations, mech.masses


@dataclass(frozen=True)
class ZPath:
    times: np.ndarray
    z: np.ndarray
    env: EnvironmentPath
    absorbed_index: int  # -1 if never absorbed
    clamps: int

    @property
    def absorbed(self) -> bool:
        return self.absorbed_index >= 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "Z", "xi"])
            for t, z, x in zip(self.times, self.z, self.env.values):
                w.writerow([repr(float(t)), repr(float(z)), repr(float(x))])


def _branching_step(z, rho2, locs, masses, dt, rng):
    """Feller increment plus compensated atom births; returns (new z, clamp mask)."""
    new = z.copy()
    if rho2 > 0:
        new = new + np.sqrt(2.0 * rho2 * np.maximum(z, 0.0) * dt) * rng.standard_normal(z.shape)
    for x, m in zip(locs, masses):
        rate = m * z * dt
        new = new + x * (rng.poisson(rate) - rate)
    clamp = (new <= 0) & (z > 0)
    return np.maximum(new, 0.0), clamp


def simulate_z_batch(mech: BranchingMechanism, spec: LevyEnvSpec, z0: float, T: float,
                     dt: float, rng: np.random.Generator, n: int, keep_paths: bool = False):
    """Simulate ``n`` pairs ``(Z, xi)`` on a uniform grid; returns terminal arrays.

    Environment and branching noises come from two child generators so the
    environment paths do not depend on the mechanism.
    """
    if not dt > 0 or not T > 0:
        raise DomainError("need dt > 0 and T > 0")
    if z0 < 0:
        raise DomainError("z0 must be >= 0")
    rho2, locs, masses = _feller_parts(mech)
    env_rng, br_rng = rng.spawn(2)
    m = max(1, int(math.ceil(T / dt - 1e-9)))
    h = T / m
    z = np.full(n, float(z0))
    xi = np.zeros(n)
    absorbed = np.where(z == 0, 0, -1)
    pure_flow = rho2 == 0 and locs.size == 0
    clamps = np.zeros(n, dtype=int)
    hist_z = [z.copy()] if keep_paths else None
    hist_x = [xi.copy()] if keep_paths else None
    for k in range(m):
        dxi = sample_increments(spec, h, env_rng, (n,))
        xi = xi + dxi
        if pure_flow:
            # closed form, so the degenerate case is exactly z0 e^{xi}
            z = z0 * np.exp(xi)
        else:
            z, clamp = _branching_step(z, rho2, locs, masses, h, br_rng)
            clamps += clamp
            z = z * np.exp(dxi)
        newly = (z == 0) & (absorbed < 0)
        absorbed[newly] = k + 1
        if keep_paths:
            hist_z.append(z.copy())
            hist_x.append(xi.copy())
    out = {"z": z, "xi": xi, "absorbed": absorbed, "clamps": clamps, "h": h, "m": m}
    if keep_paths:
        out["z_paths"] = np.array(hist_z).T
        out["xi_paths"] = np.array(hist_x).T
    return out


def simulate_z(mech: BranchingMechanism, spec: LevyEnvSpec, z0: float, T: float, dt: float,
               rng: np.random.Generator, x0: float = 0.0) -> ZPath:
    """One joint path of ``(Z, xi)``; ``xi`` starts at ``x0``."""
    r = simulate_z_batch(mech, spec, z0, T, dt, rng, 1, keep_paths=True)
    times = np.linspace(0.0, T, r["m"] + 1)
    env = EnvironmentPath(times, x0 + r["xi_paths"][0])
    return ZPath(times, r["z_paths"][0], env, int(r["absorbed"][0]), int(r["clamps"][0]))


def martingale_samples(mech, spec, z0, T, dt, n, seed=DEFAULT_SEED, threads=1,
                       tag="martingale") -> np.ndarray:
    def block(rng, count):
        r = simulate_z_batch(mech, spec, z0, T, dt, rng, count)
        return r["z"] * np.exp(-r["xi"])

    return np.concatenate(map_blocks(block, n, seed, tag, threads))


def laplace_crosscheck(mech: BranchingMechanism, spec: LevyEnvSpec, z0: float, lam: float,
                       T: float, n: int, dt: float, seed: int = DEFAULT_SEED,
                       threads: int = 1, tag: str = "laplace") -> McEstimate:
    """Mean of ``exp(-lam Z_T e^{-(xi_T - xi_0)}) - exp(-z0 v_T(0, lam))`` per path.

    The kernel term uses the same environment path (on the simulation grid),
    so the difference isolates the branching discretization error.
    """
    rho2, locs, masses = _feller_parts(mech)
    if locs.size:
        raise UnsupportedError("the Laplace cross-check uses the Feller closed form")
    t0 = time.perf_counter()
    if lam == 0:
        return McEstimate(0.0, 0.0, n, seed, float(n), 0.0)

    def block(rng, count):
        r = simulate_z_batch(mech, spec, z0, T, dt, rng, count, keep_paths=True)
        times = np.linspace(0.0, T, r["m"] + 1)
        I = exp_functional_batch(PathBatch(times, r["xi_paths"]), 1.0)
        v = stable_v(rho2, 1.0, lam, I)
        return np.exp(-lam * r["z"] * np.exp(-r["xi"])) - np.exp(-z0 * v)

    d = np.concatenate(map_blocks(block, n, seed, tag, threads))
    return plain_estimate(d, seed, time.perf_counter() - t0)
