"""Fluctuation-theory numerics for the (tilted) environment.

Renewal functions are estimated by counting ladder epochs of the skeleton
random walk ``S_k = xi(k h) - xi(0)``. Local times at the extrema are only
defined up to a constant; here one ladder epoch carries mass ``sqrt(h)``
(tag ``NORMALIZATION``), which for a Gaussian walk makes the product of the
two linear slopes equal ``2 / sigma^2`` independently of ``h``. Downstream
formulas either self-normalize or pair ``kappa`` with ``U`` so that the
constant cancels.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Union

import numpy as np

from .branching import Stable
from .errors import DomainError, TailCoverageError, UnsupportedError
from .kernel import survival_batch, survival_prob_quenched
from .levy_env import (LevyEnvSpec, PathBatch, laplace_exponent, sample_increments,
                       simulate_batch, survival_weights)
from .rng import DEFAULT_SEED, map_blocks
from .stats import McEstimate, plain_estimate, weighted_estimate

NORMALIZATION = "ladder-epoch-count*sqrt(h)"
# Mean asymptotic ladder overshoot of a Gaussian walk in units of the step
# standard deviation: -zeta(1/2) / sqrt(2 pi).
OVERSHOOT = 0.5825971579390106
TAIL_TOL = 0.01


@dataclass(frozen=True)
class RenewalEstimate:
    """Tabulated ``U_hat`` (descending ladder) and ``U`` (ascending ladder)."""

    x: np.ndarray
    u_hat: np.ndarray
    u: np.ndarray
    se_u_hat: np.ndarray
    se_u: np.ndarray
    h: float
    T_lad: float
    n_paths: int
    tag: str = NORMALIZATION
    censored_down: float = 0.0
    censored_up: float = 0.0
    halving_z: Optional[float] = None
    warnings: tuple = ()
    cov_u_hat: Optional[np.ndarray] = field(default=None, repr=False)
    cov_u: Optional[np.ndarray] = field(default=None, repr=False)

    def _eval(self, vals, x):
        x = np.asarray(x, dtype=float)
        a, b = linear_fit(self.x, vals)
        out = np.interp(x, self.x, vals)
        out = np.where(x > self.x[-1], a + b * x, out)
        out = np.where(x < 0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def u_hat_at(self, x):
        return self._eval(self.u_hat, x)

    def u_at(self, x):
        return self._eval(self.u, x)

    def scaled(self, factor: float) -> "RenewalEstimate":
        """Same estimate under a local-time normalization with U_hat scaled by ``factor``."""
        cov_h = None if self.cov_u_hat is None else self.cov_u_hat * factor ** 2
        cov_u = None if self.cov_u is None else self.cov_u / factor ** 2
        return replace(self, u_hat=self.u_hat * factor, se_u_hat=self.se_u_hat * factor,
                       u=self.u / factor, se_u=self.se_u / factor, cov_u_hat=cov_h, cov_u=cov_u,
                       tag=f"{self.tag}|U_hat*{factor!r}")

    def _interp_weights(self, x: float) -> np.ndarray:
        a = np.zeros(self.x.size)
        j = int(np.clip(np.searchsorted(self.x, x) - 1, 0, self.x.size - 2))
        t = (x - self.x[j]) / (self.x[j + 1] - self.x[j])
        if not 0.0 <= t <= 1.0:
            raise DomainError(f"x={x} lies outside the tabulated grid")
        a[j], a[j + 1] = 1.0 - t, t
        return a

    def ratio(self, x_num: float, x_den: float, ascending: bool = False):
        """``U_hat(x_num) / U_hat(x_den)`` (or U) with a delta-method standard error."""
        vals, cov = (self.u, self.cov_u) if ascending else (self.u_hat, self.cov_u_hat)
        a, b = self._interp_weights(x_num), self._interp_weights(x_den)
        num, den = float(a @ vals), float(b @ vals)
        r = num / den
        if cov is None:
            return r, math.nan
        grad = a / den - b * num / den ** 2
        return r, math.sqrt(max(float(grad @ cov @ grad), 0.0))

    @property
    def halving_ok(self) -> Optional[bool]:
        return None if self.halving_z is None else self.halving_z <= 2.0


def linear_fit(x, y):
    """Least-squares line ``a + b x`` through the upper half of the grid."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = x.size // 2
    xs, ys = x[k:], y[k:]
    if xs.size < 2 or np.ptp(xs) == 0:
        return float(ys.mean()), 0.0
    b, a = np.polyfit(xs, ys, 1)
    return float(a), float(b)


def _ladder_counts(spec, xs_shift, h, max_steps, rng, count, chunk=1024):
    g = xs_shift.size
    x_max = xs_shift[-1]
    hist_d = np.zeros((count, g + 1))
    hist_u = np.zeros((count, g + 1))
    j0 = np.searchsorted(xs_shift, 0.0, side="left")
    hist_d[:, j0] += 1.0  # epoch 0
    hist_u[:, j0] += 1.0
    pos = np.zeros(count)
    lo = np.zeros(count)
    hi = np.zeros(count)
    active = np.arange(count)
    steps = 0
    while active.size and steps < max_steps:
        L = min(chunk, max_steps - steps)
        S = pos[active, None] + np.cumsum(sample_increments(spec, h, rng, (active.size, L)), axis=1)
        for sign, run, hist in ((-1.0, lo, hist_d), (1.0, hi, hist_u)):
            D = sign * S  # records of D are descending (sign -1) or ascending records of S
            prev = np.maximum.accumulate(
                np.concatenate([sign * run[active, None], D[:, :-1]], axis=1), axis=1)
            r, c = np.nonzero(D > prev)
            depth = D[r, c]
            keep = depth <= x_max
            idx = np.searchsorted(xs_shift, depth[keep], side="left")
            np.add.at(hist, (active[r[keep]], idx), 1.0)
        pos[active] = S[:, -1]
        lo[active] = np.minimum(lo[active], S.min(axis=1))
        hi[active] = np.maximum(hi[active], S.max(axis=1))
        steps += L
        active = active[(lo[active] >= -x_max) | (hi[active] <= x_max)]
    counts_d = np.cumsum(hist_d[:, :g], axis=1)
    counts_u = np.cumsum(hist_u[:, :g], axis=1)
    return counts_d, counts_u, lo >= -x_max, hi <= x_max


def _renewal_once(spec, x, h, T_lad, n_paths, seed, threads, tag):
    shift = OVERSHOOT * spec.sigma * math.sqrt(h)
    xs_shift = x - shift
    max_steps = max(1, int(math.ceil(T_lad / h)))
    parts = map_blocks(lambda rng, c: _ladder_counts(spec, xs_shift, h, max_steps, rng, c),
                       n_paths, seed, tag, threads)
    cd = np.concatenate([p[0] for p in parts]) * math.sqrt(h)
    cu = np.concatenate([p[1] for p in parts]) * math.sqrt(h)
    cens_d = float(np.concatenate([p[2] for p in parts]).mean())
    cens_u = float(np.concatenate([p[3] for p in parts]).mean())
    n = cd.shape[0]
    cov_d = np.atleast_2d(np.cov(cd, rowvar=False)) / n
    cov_u = np.atleast_2d(np.cov(cu, rowvar=False)) / n
    sd = lambda c: np.sqrt(np.maximum(np.diag(c), 0.0))
    return (cd.mean(axis=0), cu.mean(axis=0), sd(cov_d), sd(cov_u), cens_d, cens_u,
            cov_d, cov_u)


def renewal_estimate(spec: LevyEnvSpec, x_grid, h: float, T_lad: float, n_paths: int,
                     seed: int = DEFAULT_SEED, threads: int = 1, check_halving: bool = False,
                     tag: str = "renewal") -> RenewalEstimate:
    """Monte Carlo renewal functions of ``spec`` (normally the gamma-tilted law).

    ``U_hat(x)`` counts strict descending-record epochs (epoch 0 included)
    with depth at most ``x``; ``U`` does the same for ascending records. Each
    path runs until its extrema pass the grid on both sides or ``T_lad``
    elapses; the censored fractions are reported. The grid is evaluated at
    ``x - OVERSHOOT * sigma * sqrt(h)`` to remove the leading discretization
    offset of the skeleton walk.
    """
    x = np.asarray(x_grid, dtype=float)
    if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0) or x[0] < 0:
        raise DomainError("x_grid must be increasing, nonnegative and have >= 2 points")
    if not (h > 0 and T_lad > h and n_paths >= 2):
        raise DomainError("need h > 0, T_lad > h and n_paths >= 2")
    uh, u, se_uh, se_u, cd, cu, cov_d, cov_u = _renewal_once(spec, x, h, T_lad, n_paths, seed,
                                                              threads, tag)
    warnings = []
    for name, frac in (("descending", cd), ("ascending", cu)):
        if frac > 0.5:
            warnings.append(f"{name} ladder: {frac:.0%} of paths never left the grid range "
                            f"by T_lad={T_lad}; too few records")
    halving_z = None
    if check_halving:
        uh2, _, se2, *_ = _renewal_once(spec, x, h / 2, T_lad, n_paths, seed, threads,
                                             tag + "/half")
        s = np.hypot(se_uh, se2)
        z = np.where(s > 0, np.abs(uh - uh2) / np.where(s > 0, s, 1.0), 0.0)
        halving_z = float(z.max())
    return RenewalEstimate(x, uh, u, se_uh, se_u, float(h), float(T_lad), int(n_paths),
                           NORMALIZATION, cd, cu, halving_z, tuple(warnings), cov_d, cov_u)


def _exp_integral_linear(x, f, gamma):
    """Exact ``int e^{-gamma x} f(x) dx`` for piecewise-linear ``f`` on the grid."""
    x0, x1 = x[:-1], x[1:]
    f0, f1 = f[:-1], f[1:]
    d = x1 - x0
    s = (f1 - f0) / d
    E0, E1 = np.exp(-gamma * x0), np.exp(-gamma * x1)
    terms = f0 * (E0 - E1) / gamma + s * ((E0 - E1) / gamma ** 2 - d * E1 / gamma)
    return math.fsum(terms.tolist())


@dataclass(frozen=True)
class KappaEstimate:
    value: float
    tag: str
    tail_fraction: float
    laplace_integral: float  # int e^{-gamma x} U(x) dx


def _laplace_of_table(x, u, gamma, tail_tol):
    if x[0] != 0:
        raise DomainError("the renewal grid must start at x = 0")
    body = _exp_integral_linear(x, u, gamma)
    a, b = linear_fit(x, u)
    X = x[-1]
    tail = math.exp(-gamma * X) * (max(a + b * X, 0.0) / gamma + max(b, 0.0) / gamma ** 2)
    total = body + tail
    frac = tail / total if total > 0 else math.inf
    if frac > tail_tol:
        raise TailCoverageError(
            f"the grid ends at x={X}: {frac:.2%} of the Laplace integral lies beyond it",
            {"tail_fraction": frac, "x_max": X})
    return total, frac, (a, b, X)


def kappa_gamma(renewal: RenewalEstimate, gamma: float, tail_tol: float = TAIL_TOL) -> KappaEstimate:
    """``kappa(0, gamma) = 1 / (gamma * int e^{-gamma x} U(x) dx)``, with a linear tail."""
    if not gamma > 0:
        raise DomainError("gamma must be positive")
    total, frac, _ = _laplace_of_table(renewal.x, renewal.u, gamma, tail_tol)
    return KappaEstimate(1.0 / (gamma * total), renewal.tag, frac, total)


@dataclass
class MuGammaSampler:
    """``mu_gamma(dy) = gamma kappa e^{-gamma y} U(y) dy`` on a refined table plus a linear tail."""

    gamma: float
    kappa: float
    mass: float
    x: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    tail_prob: float
    tail_line: tuple

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        v = rng.random(n)
        out = np.interp(u, self.cdf, self.x)
        in_tail = v < self.tail_prob
        k = int(in_tail.sum())
        if k:
            a, b, X = self.tail_line
            g = self.gamma
            c0, c1 = max(a + b * X, 0.0) / g, max(b, 0.0) / g ** 2
            expo = rng.random(k) < c0 / (c0 + c1)
            w = np.where(expo, rng.standard_exponential(k) / g, rng.gamma(2.0, 1.0 / g, k))
            out[in_tail] = X + w
        return out

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        return np.interp(y, self.x, self.density, left=0.0, right=np.nan)


def mu_gamma(renewal: RenewalEstimate, gamma: float, kappa: Optional[KappaEstimate] = None,
             refine: int = 8192, tail_tol: float = TAIL_TOL) -> MuGammaSampler:
    """Sampler for ``mu_gamma``; ``mass`` uses ``kappa`` (pass an independent one to test it)."""
    if kappa is None:
        kappa = kappa_gamma(renewal, gamma, tail_tol)
    total, frac, line = _laplace_of_table(renewal.x, renewal.u, gamma, tail_tol)
    mass = gamma * kappa.value * total
    xf = np.linspace(0.0, renewal.x[-1], refine + 1)
    df = np.exp(-gamma * xf) * np.interp(xf, renewal.x, renewal.u)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (df[1:] + df[:-1]) * np.diff(xf))])
    cdf /= cdf[-1]
    return MuGammaSampler(gamma, kappa.value, mass, xf, gamma * kappa.value * df, cdf, frac, line)


def a_gamma(spec: LevyEnvSpec, gamma: float) -> float:
    """``1 / sqrt(2 pi Phi''(gamma))``; the atom correction vanishes when sigma > 0."""
    if spec.sigma <= 0:
        raise UnsupportedError("A_gamma needs a Gaussian component (sigma > 0)")
    return 1.0 / math.sqrt(2.0 * math.pi * laplace_exponent(spec, gamma)[2])


# ---------------------------------------------------------------------------
# h-transforms

HarmonicLike = Union[None, Callable, RenewalEstimate]


def _harmonic(spec: LevyEnvSpec, h: HarmonicLike, up: bool) -> Callable:
    if isinstance(h, RenewalEstimate):
        return h.u_hat_at if up else h.u_at
    if callable(h):
        return h
    if spec.drift == 0 and not spec.has_jumps and spec.sigma > 0:
        return lambda y: np.maximum(np.asarray(y, dtype=float), 0.0)
    raise DomainError("no analytic renewal function for this environment; pass one explicitly")


def _weighted_run(spec, x, T, f, n, seed, h, up, max_step, threads, tag, bridge):
    hfun = _harmonic(spec, h, up)

    def block(rng, count):
        b = simulate_batch(spec, x, T, max_step, rng, count)
        kill = survival_weights(b, spec.sigma, 0.0, above=up, bridge=bridge)
        w = hfun(b.terminal if up else -b.terminal) * kill
        vals = np.asarray(f(b), dtype=float) if f is not None else np.ones(count)
        return w, vals

    parts = map_blocks(block, n, seed, tag, threads)
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def conditioned_expectation_up(spec: LevyEnvSpec, x: float, T: float,
                               f: Optional[Callable[[PathBatch], np.ndarray]], n: int,
                               seed: int = DEFAULT_SEED, u_hat: HarmonicLike = None,
                               max_step: float = 0.01, threads: int = 1,
                               tag: str = "cond-up", bridge: bool = True) -> McEstimate:
    """``E_x^up[f]`` by h-transform reweighting with ``U_hat(xi_T) 1{inf > 0}``.

    The killing indicator is replaced by its conditional probability given the
    skeleton (exact for the Gaussian part), which f never sees.
    """
    if not x > 0:
        raise DomainError("conditioning to stay positive needs x > 0")
    t0 = time.perf_counter()
    w, vals = _weighted_run(spec, x, T, f, n, seed, u_hat, True, max_step, threads, tag, bridge)
    return weighted_estimate(vals, w, seed, time.perf_counter() - t0)


def conditioned_expectation_down(spec: LevyEnvSpec, x: float, T: float,
                                 f: Optional[Callable[[PathBatch], np.ndarray]], n: int,
                                 seed: int = DEFAULT_SEED, u: HarmonicLike = None,
                                 max_step: float = 0.01, threads: int = 1,
                                 tag: str = "cond-down", bridge: bool = True) -> McEstimate:
    """``E_x^down[f]`` with weight ``U(-xi_T) 1{sup < 0}``, for ``x < 0``."""
    if not x < 0:
        raise DomainError("conditioning to stay negative needs x < 0")
    t0 = time.perf_counter()
    w, vals = _weighted_run(spec, x, T, f, n, seed, u, False, max_step, threads, tag, bridge)
    return weighted_estimate(vals, w, seed, time.perf_counter() - t0)


def harmonic_weight_mean(spec: LevyEnvSpec, x: float, T: float, n: int,
                         seed: int = DEFAULT_SEED, u_hat: HarmonicLike = None,
                         max_step: float = 0.01, threads: int = 1, up: bool = True,
                         tag: str = "harmonic", bridge: bool = True) -> McEstimate:
    """Unnormalized mean of ``U_hat(xi_T) 1{inf > 0}``; equals ``U_hat(x)`` by harmonicity."""
    t0 = time.perf_counter()
    w, _ = _weighted_run(spec, x, T, None, n, seed, u_hat, up, max_step, threads, tag, bridge)
    return plain_estimate(w, seed, time.perf_counter() - t0)


def cble_conditioned_expectation(mech, spec: LevyEnvSpec, z: float, x: float, T: float,
                                 g: Optional[Callable] = None, n: int = 10_000,
                                 seed: int = DEFAULT_SEED, u_hat: HarmonicLike = None,
                                 max_step: float = 0.01, threads: int = 1,
                                 tag: str = "cble-up") -> McEstimate:
    """Self-normalized ``E^up_(z,x)[g(P(Z_T > 0 | xi), path)]``; default g is the survival probability."""
    def functional(batch):
        if isinstance(mech, Stable):
            surv = survival_batch(mech, batch, z)
        else:
            surv = np.array([survival_prob_quenched(mech, batch.path(i), z)
                             for i in range(batch.n)])
        return surv if g is None else g(surv, batch)

    return conditioned_expectation_up(spec, x, T, functional, n, seed, u_hat, max_step,
                                      threads, tag)
