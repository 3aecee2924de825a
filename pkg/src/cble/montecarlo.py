"""Annealed estimators: survival probabilities, decay fits and limiting constants.

Branching randomness is always integrated out through the quenched kernel, so
only environment paths are sampled (Rao-Blackwellization).
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .branching import BranchingMechanism, Stable
from .errors import DegenerateWeightError, DomainError, NormalizationMismatchError
from .fluctuation import (HarmonicLike, KappaEstimate, MuGammaSampler, RenewalEstimate,
                          _harmonic)
from .kernel import exp_functional_batch, survival_batch, survival_prob_quenched
from .levy_env import (DOMAIN_INTERIOR, LevyEnvSpec, PathBatch, TwoSidedExp, esscher_tilt,
                       esscher_weight, phi, simulate_batch, survival_weights)
from .rng import DEFAULT_SEED, map_blocks
from .sde import martingale_samples
from .stats import (McEstimate, effective_sample_size, joint_z, plain_estimate,
                    weighted_estimate)

DEFAULT_MAX_STEP = 0.02
MIN_ESS = 100.0


def _survival(mech: BranchingMechanism, batch: PathBatch, z: float) -> np.ndarray:
    if isinstance(mech, Stable):
        return survival_batch(mech, batch, z)
    return np.array([survival_prob_quenched(mech, batch.path(i), z) for i in range(batch.n)])


def estimate_survival_direct(mech: BranchingMechanism, spec: LevyEnvSpec, z: float, T: float,
                             n: int, seed: int = DEFAULT_SEED,
                             max_step: float = DEFAULT_MAX_STEP, threads: int = 1,
                             tag: str = "survival") -> McEstimate:
    """Average of ``P(Z_T > 0 | xi)`` over ``n`` environment paths."""
    return estimate_survival_is(mech, spec, z, T, n, 0.0, seed, max_step, threads, tag)


def estimate_survival_is(mech: BranchingMechanism, spec: LevyEnvSpec, z: float, T: float,
                         n: int, gamma: float, seed: int = DEFAULT_SEED,
                         max_step: float = DEFAULT_MAX_STEP, threads: int = 1,
                         tag: str = "survival", survival: bool = True) -> McEstimate:
    """Sample under the Esscher tilt at ``gamma`` and reweight back to the base law.

    ``survival=False`` replaces the survival probability by 1, which estimates
    the total mass of the change of measure. ``gamma = 0`` is the direct estimator
    and draws the same random numbers.
    """
    if z < 0:
        raise DomainError("z must be >= 0")
    t0 = time.perf_counter()
    tilted = esscher_tilt(spec, gamma)
    phi_g = phi(spec, gamma)

    def block(rng, count):
        b = simulate_batch(tilted, 0.0, T, max_step, rng, count)
        w = esscher_weight(b, gamma, phi_g)
        vals = _survival(mech, b, z) if survival else np.ones(count)
        return w * vals, w

    parts = map_blocks(block, n, seed, tag, threads)
    vals = np.concatenate([p[0] for p in parts])
    w = np.concatenate([p[1] for p in parts])
    est = plain_estimate(vals, seed, time.perf_counter() - t0)
    ess = effective_sample_size(w) if gamma else float(n)
    diag = {"T": T, "gamma": gamma}
    if not survival:
        diag["exact_stderr"] = mass_stderr(spec, gamma, T, n)
    return McEstimate(est.mean, est.stderr, est.n, seed, ess, est.wall_time, diag)


def mass_stderr(spec: LevyEnvSpec, gamma: float, T: float, n: int) -> float:
    """Exact standard error of the total-mass estimator, ``sqrt((E w^2 - 1) / n)``.

    Under the tilted law ``E w^2 = exp(T (Phi(-gamma) + Phi(gamma)))``; infinite
    when ``-gamma`` lies outside the exponential-moment domain.
    """
    if gamma == 0:
        return 0.0
    law = spec.jump_law if spec.has_jumps else None
    if isinstance(law, TwoSidedExp) and gamma >= DOMAIN_INTERIOR * law.eta_down:
        return math.inf
    phi_neg = -spec.drift * gamma + 0.5 * spec.sigma ** 2 * gamma * gamma
    if law is not None:
        phi_neg += spec.jump_rate * (law.mgf(-gamma)[0] - 1.0)
    return math.sqrt(math.expm1(T * (phi_neg + phi(spec, gamma))) / n)


# ---------------------------------------------------------------------------
# decay fits


@dataclass(frozen=True)
class DecayFit:
    t: np.ndarray
    p: np.ndarray
    se: np.ndarray
    y: np.ndarray
    se_y: np.ndarray
    slope: float
    intercept: float
    slope_se: float
    intercept_se: float
    residuals: np.ndarray
    chi2: float
    drift: float
    drift_window: Tuple[float, float]
    weighted: bool
    dropped: tuple = ()

    @property
    def constant(self) -> float:
        """``exp(intercept)``, the fitted prefactor of ``t^{-3/2} e^{slope t}``."""
        return math.exp(self.intercept)

    def ci(self, z: float = 1.96) -> np.ndarray:
        return np.stack([self.y - z * self.se_y, self.y + z * self.se_y], axis=1)

    def local_intercepts(self) -> np.ndarray:
        return self.y - self.slope * self.t


def decay_fit(points: Sequence[Tuple[float, McEstimate]],
              drift_from: Optional[float] = None) -> DecayFit:
    """Fit ``log p(T) + 1.5 log T = intercept + slope * T`` by weighted least squares.

    Per-point variances of ``log p`` come from the delta method
    ``(stderr / p)^2``; if any stderr is zero the fit is unweighted. The drift
    diagnostic is ``max |exp(c_i - c_j) - 1|`` over local intercepts
    ``c_i = y_i - slope T_i`` with ``T_i >= drift_from`` (default: the
    midpoint of the T range).
    """
    dropped = []
    rows = []
    for T, est in points:
        if not est.mean > 0:
            warnings.warn(f"dropping T={T}: nonpositive estimate {est.mean}")
            dropped.append(T)
            continue
        rows.append((float(T), est.mean, est.stderr))
    if len(rows) < 4:
        raise DomainError(f"decay_fit needs at least 4 positive points, got {len(rows)}")
    rows.sort()
    t, p, se = (np.array(c) for c in zip(*rows))
    y = np.log(p) + 1.5 * np.log(t)
    se_y = se / p
    weighted = bool(np.all(se_y > 0))
    wts = 1.0 / se_y ** 2 if weighted else np.ones_like(t)
    X = np.stack([np.ones_like(t), t], axis=1)
    A = X.T @ (wts[:, None] * X)
    coef = np.linalg.solve(A, X.T @ (wts * y))
    resid = y - X @ coef
    if weighted:
        cov = np.linalg.inv(A)
    else:
        dof = max(1, t.size - 2)
        cov = np.linalg.inv(A) * float(resid @ resid) / dof
    chi2 = float(np.sum(wts * resid ** 2)) if weighted else float(resid @ resid)
    start = 0.5 * (t[0] + t[-1]) if drift_from is None else float(drift_from)
    c = (y - coef[1] * t)[t >= start]
    drift = float(np.max(np.abs(np.expm1(c[:, None] - c[None, :])))) if c.size else 0.0
    return DecayFit(t, p, se, y, se_y, float(coef[1]), float(coef[0]),
                    float(math.sqrt(cov[1, 1])), float(math.sqrt(cov[0, 0])), resid, chi2,
                    drift, (start, float(t[-1])), weighted, tuple(dropped))


def decay_study(mech, spec, z, t_grid, n, gamma, seed=DEFAULT_SEED,
                max_step=DEFAULT_MAX_STEP, threads=1, drift_from=None):
    """IS survival estimates on ``t_grid`` (independent streams per T) and their fit."""
    pts = [(T, estimate_survival_is(mech, spec, z, T, n, gamma, seed, max_step, threads,
                                    tag=f"survival/T={T!r}")) for T in t_grid]
    return decay_fit(pts, drift_from), pts


# ---------------------------------------------------------------------------
# constants


def _killed_tilted_run(spec, gamma, x, T, n, seed, max_step, threads, tag, fn):
    tilted = esscher_tilt(spec, gamma)

    def block(rng, count):
        b = simulate_batch(tilted, x, T, max_step, rng, count)
        alive = survival_weights(b, tilted.sigma, 0.0, above=True)
        w = np.exp(-gamma * (b.terminal - x)) * alive
        return w, fn(b)

    parts = map_blocks(block, n, seed, tag, threads)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def estimate_b(mech: BranchingMechanism, spec: LevyEnvSpec, z: float, x: float, T: float,
               n: int, gamma: float, seed: int = DEFAULT_SEED,
               max_step: float = DEFAULT_MAX_STEP, threads: int = 1, halving: bool = True,
               min_ess: float = MIN_ESS, tag: str = "b-const") -> McEstimate:
    """Finite-T proxy of ``b(z, x) = lim P_(z,x)(Z_T > 0 | inf xi > 0)``.

    Ratio estimator under the gamma-tilt with weight ``exp(-gamma (xi_T - x))``
    times the probability of staying positive given the skeleton. With
    ``halving`` the same estimate at ``T / 2`` is reported as a diagnostic.
    """
    if not x > 0:
        raise DomainError("x must be positive")
    t0 = time.perf_counter()
    w, surv = _killed_tilted_run(spec, gamma, x, T, n, seed, max_step, threads, tag,
                                 lambda b: _survival(mech, b, z))
    est = weighted_estimate(surv, w, seed, time.perf_counter() - t0, T=T)
    if est.ess < min_ess:
        raise DegenerateWeightError("denominator effective sample size too small",
                                    {"ess": est.ess, "min_ess": min_ess})
    if halving:
        half = estimate_b(mech, spec, z, x, T / 2, n, gamma, seed, max_step, threads,
                          halving=False, min_ess=0.0, tag=tag + "/half")
        est.diagnostics.update(half_T=T / 2, half_mean=half.mean, half_stderr=half.stderr,
                               half_z=joint_z(est, half))
    return est


@dataclass(frozen=True)
class BSequence:
    x: np.ndarray
    b: List[McEstimate]
    entries: np.ndarray
    stderr: np.ndarray
    stabilization: float  # relative change between the last two entries

    @property
    def value(self) -> float:
        return float(self.entries[-1])


def estimate_B(mech: BranchingMechanism, spec: LevyEnvSpec, z: float, x_grid, T: float,
               n: int, gamma: float, u_hat: Union[RenewalEstimate, Tuple[Callable, str]],
               kappa: KappaEstimate, a_gamma: float, seed: int = DEFAULT_SEED,
               max_step: float = DEFAULT_MAX_STEP, threads: int = 1) -> BSequence:
    """Entries ``b(z,x) e^{gamma x} U_hat(x) A_gamma / (gamma kappa)`` along ``x_grid``.

    ``u_hat`` is a renewal estimate or ``(callable, normalization tag)``; its tag
    must equal the tag carried by ``kappa``.
    """
    if isinstance(u_hat, RenewalEstimate):
        u_fn, u_tag = u_hat.u_hat_at, u_hat.tag
    else:
        u_fn, u_tag = u_hat
    if u_tag != kappa.tag:
        raise NormalizationMismatchError(
            f"U_hat normalization {u_tag!r} does not match kappa normalization {kappa.tag!r}")
    xs = np.asarray(x_grid, dtype=float)
    bs, entries, ses = [], [], []
    for x in xs:
        b = estimate_b(mech, spec, z, float(x), T, n, gamma, seed, max_step, threads,
                       halving=False, tag=f"b-const/x={float(x)!r}")
        factor = math.exp(gamma * x) * float(u_fn(x)) * a_gamma / (gamma * kappa.value)
        bs.append(b)
        entries.append(b.mean * factor)
        ses.append(b.stderr * factor)
    entries = np.array(entries)
    stab = abs(entries[-1] / entries[-2] - 1.0) if entries.size > 1 else math.nan
    return BSequence(xs, bs, entries, np.array(ses), float(stab))


def estimate_inf_survival(spec: LevyEnvSpec, x: float, T: float, n: int, gamma: float,
                          seed: int = DEFAULT_SEED, max_step: float = DEFAULT_MAX_STEP,
                          threads: int = 1, tag: str = "inf") -> McEstimate:
    """IS estimate of ``P_x(inf_{[0,T]} xi > 0)``."""
    t0 = time.perf_counter()
    phi_g = phi(spec, gamma)
    w, _ = _killed_tilted_run(spec, gamma, x, T, n, seed, max_step, threads, tag,
                              lambda b: np.zeros(b.n))
    vals = w * math.exp(T * phi_g)
    est = plain_estimate(vals, seed, time.perf_counter() - t0)
    return McEstimate(est.mean, est.stderr, n, seed, est.ess, est.wall_time, {"T": T, "x": x})


def estimate_inf_asymptotic(spec: LevyEnvSpec, x: float, t_grid, n: int, gamma: float,
                            seed: int = DEFAULT_SEED, max_step: float = DEFAULT_MAX_STEP,
                            threads: int = 1, drift_from=None):
    """Decay fit of ``P_x(inf xi > 0)`` over ``t_grid``; returns ``(fit, points)``."""
    pts = [(T, estimate_inf_survival(spec, x, T, n, gamma, seed, max_step, threads,
                                     tag=f"inf/x={float(x)!r}/T={T!r}")) for T in t_grid]
    return decay_fit(pts, drift_from), pts


# ---------------------------------------------------------------------------
# stable-case cross-check


def _g_values(z, x, beta, C, i_up, i_down):
    return -np.expm1(-z * math.exp(-x) * (beta * C * (i_up + i_down)) ** (-1.0 / beta))


def stable_G(z: float, x: float, y, spec: LevyEnvSpec, gamma: float, beta: float, C: float,
             T: float, n: int, seed: int = DEFAULT_SEED, max_step: float = DEFAULT_MAX_STEP,
             threads: int = 1, u_hat: HarmonicLike = None, u: HarmonicLike = None,
             tag: str = "stable-G") -> McEstimate:
    """``G_{z,x}(y)`` for a fixed ``y > 0``, or its mean over ``y ~ mu_gamma`` when ``y`` is a sampler.

    ``I_up`` integrates ``exp(-beta xi)`` along the tilted path started at ``x``
    and conditioned to stay positive; ``I_down`` integrates ``exp(beta xi')``
    along an independent tilted path started at ``-y`` and conditioned to stay
    negative. Both infinite-horizon functionals are truncated at ``T``; the
    diagnostics report how much of each accrued after ``T / 2``. Conditioning
    is done by h-transform weights normalized by their means ``U_hat(x)`` and
    ``U(y)``, so every pair carries a weight of mean one.
    """
    if z == 0:
        return McEstimate(0.0, 0.0, n, seed, float(n), 0.0)
    if not x > 0:
        raise DomainError("x must be positive")
    tilted = esscher_tilt(spec, gamma)
    h_up = _harmonic(tilted, u_hat, True)
    h_down = _harmonic(tilted, u, False)
    t0 = time.perf_counter()

    def block(rng, count):
        rng_up, rng_down, rng_y = rng.spawn(3)
        if isinstance(y, MuGammaSampler):
            ys = y.sample(rng_y, count)
        else:
            ys = np.full(count, float(y))
        bu = simulate_batch(tilted, x, T, max_step, rng_up, count)
        bd = simulate_batch(tilted, 0.0, T, max_step, rng_down, count)
        bd = PathBatch(bd.times, bd.values - ys[:, None], bd.n_jumps,
                       None if bd.left is None else bd.left - ys[:, None])
        w_up = h_up(bu.terminal) * survival_weights(bu, tilted.sigma, 0.0, True) / h_up(x)
        w_dn = h_down(-bd.terminal) * survival_weights(bd, tilted.sigma, 0.0, False) / h_down(ys)
        i_up = exp_functional_batch(bu, beta, raw=True)
        i_dn = exp_functional_batch(PathBatch(bd.times, -bd.values), beta, raw=True)
        half = _half_functional_share(bu, beta), _half_functional_share(
            PathBatch(bd.times, -bd.values), beta)
        return w_up * w_dn, _g_values(z, x, beta, C, i_up, i_dn), half[0], half[1]

    parts = map_blocks(block, n, seed, tag, threads)
    w = np.concatenate([p[0] for p in parts])
    g = np.concatenate([p[1] for p in parts])
    up_tail = np.concatenate([p[2] for p in parts])
    dn_tail = np.concatenate([p[3] for p in parts])
    est = weighted_estimate(g, w, seed, time.perf_counter() - t0)
    sw = w.sum()
    est.diagnostics.update(
        up_tail_share=float((w * up_tail).sum() / sw) if sw > 0 else math.nan,
        down_tail_share=float((w * dn_tail).sum() / sw) if sw > 0 else math.nan,
        weight_mean=float(w.mean()))
    return est


def _half_functional_share(batch: PathBatch, beta: float) -> np.ndarray:
    """Share of ``int_0^T exp(-beta xi)`` accrued on ``[T/2, T]``."""
    terms = np.exp(-beta * batch.values[:, :-1]) * batch.dt
    t_left = np.broadcast_to(batch.times[..., :-1], terms.shape)
    late = np.where(t_left >= 0.5 * batch.horizon, terms, 0.0).sum(axis=1)
    total = terms.sum(axis=1)
    return np.where(total > 0, late / np.where(total > 0, total, 1.0), 0.0)


def martingale_annealed_check(mech: BranchingMechanism, spec: LevyEnvSpec, z: float, T: float,
                              n: int, dt: float = 0.01, seed: int = DEFAULT_SEED,
                              threads: int = 1) -> McEstimate:
    """Mean of ``Z_T exp(-(xi_T - xi_0))`` from the SDE route; targets ``z``."""
    t0 = time.perf_counter()
    if z == 0:
        return McEstimate(0.0, 0.0, n, seed, float(n), 0.0)
    vals = martingale_samples(mech, spec, z, T, dt, n, seed, threads)
    return plain_estimate(vals, seed, time.perf_counter() - t0)
