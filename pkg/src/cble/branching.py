"""Branching mechanisms psi_0 with analytically evaluable exponents.

Every mechanism factorizes as ``psi0(lam) = lam * Psi0(lam)`` where ``Psi0`` is
the Laplace exponent of a subordinator. ``Psi0`` is the primitive quantity
here: the backward ODE integrates in log scale and only needs ``Psi0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Stable:
    """``psi0(lam) = C * lam**(1 + beta)`` with ``C > 0`` and ``beta`` in (0, 1]."""

    C: float
    beta: float
    psi_prime0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "C", float(self.C))
        object.__setattr__(self, "beta", float(self.beta))
        if not (self.C > 0 and math.isfinite(self.C)):
            raise DomainError(f"stable mechanism needs C > 0, got {self.C}")
        if not 0.0 < self.beta <= 1.0:
            raise DomainError(f"stable index beta must lie in (0, 1], got {self.beta}")

    @property
    def kind(self) -> str:
        return "diffusive" if self.beta == 1.0 else "stable"


def diffusive(rho2: float, psi_prime0: float = 0.0) -> Stable:
    """Feller branching ``psi0 = rho2 * lam**2``, canonicalized to a stable mechanism."""
    if not rho2 > 0:
        raise DomainError(f"diffusive mechanism needs rho2 > 0, got {rho2}")
    return Stable(rho2, 1.0, psi_prime0)


@dataclass(frozen=True)
class FiniteAtoms:
    """Gaussian part ``rho2`` plus a finite Lévy measure ``sum m_i delta_{x_i}``.

    ``FiniteAtoms(0.0)`` is the zero mechanism: no branching, Z follows the environment.
    """

    rho2: float
    atoms: Tuple[Tuple[float, float], ...] = ()
    psi_prime0: float = 0.0

    def __post_init__(self):
        atoms = tuple((float(x), float(m)) for x, m in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "rho2", float(self.rho2))
        if self.rho2 < 0:
            raise DomainError(f"rho2 must be >= 0, got {self.rho2}")
        for x, m in atoms:
            if not (x > 0 and m > 0):
                raise DomainError("branching atoms need location x > 0 and mass > 0")

    @property
    def kind(self) -> str:
        return "atoms"

    @property
    def locations(self) -> np.ndarray:
        return np.array([x for x, _ in self.atoms])

    @property
    def masses(self) -> np.ndarray:
        return np.array([m for _, m in self.atoms])


BranchingMechanism = Union[Stable, FiniteAtoms]


def _g(u):
    """(e^{-u} - 1 + u) / u, accurate near 0."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = u < 1e-3
    us = u[small]
    out[small] = us * (0.5 + us * (-1.0 / 6.0 + us * (1.0 / 24.0 - us / 120.0)))
    ul = u[~small]
    out[~small] = 1.0 + np.expm1(-ul) / ul
    return out


def _check_lam(lam):
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr < 0) or np.any(np.isnan(lam_arr)):
        raise DomainError("lambda must be >= 0")
    return lam_arr


def big_psi0(mech: BranchingMechanism, lam):
    """Subordinator exponent ``Psi0(lam) = psi0(lam) / lam`` (0 at lam = 0)."""
    lam_arr = _check_lam(lam)
    if isinstance(mech, Stable):
        out = mech.C * lam_arr ** mech.beta
    else:
        out = mech.rho2 * lam_arr
        for x, m in mech.atoms:
            out = out + m * x * _g(lam_arr * x)
    return float(out) if np.ndim(lam) == 0 else out


def psi0(mech: BranchingMechanism, lam):
    lam_arr = _check_lam(lam)
    out = lam_arr * np.asarray(big_psi0(mech, lam_arr))
    return float(out) if np.ndim(lam) == 0 else out


def check_grey(mech: BranchingMechanism) -> bool:
    """Decide integrability of 1/psi0 at infinity from the variant alone."""
    if isinstance(mech, Stable):
        return True
    return mech.rho2 > 0


@dataclass(frozen=True)
class RvReport:
    """Regular-variation data at 0: ``psi0(lam) = lam**(1+beta) * ell(lam)``.

    ``ell_lower_bound`` bounds ell from below; ``global_bound`` tells whether
    the bound holds for every lam > 0 (as the decay asymptotics require) or
    only as lam -> 0.
    """

    beta: float
    ell_lower_bound: Optional[float]
    global_bound: bool
    xlog2x: bool = True


def rv_metadata(mech: BranchingMechanism) -> RvReport:
    if isinstance(mech, Stable):
        return RvReport(mech.beta, mech.C, True)
    if mech.rho2 > 0:
        # ell(lam) = rho2 + sum m x^2 h(lam x) with h decreasing from 1/2 to 0.
        return RvReport(1.0, mech.rho2, True)
    second = float(np.sum(mech.masses * mech.locations ** 2)) / 2.0
    return RvReport(1.0, second, False)
