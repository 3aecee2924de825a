"""Lévy environments: Laplace-exponent analytics, Esscher tilting, regime
classification and exact-skeleton path simulation.

The environment is parametrized directly by a drift ``a``, a Gaussian scale
``sigma`` and a finite-activity jump part (rate ``jump_rate`` and a jump law).
Finite-activity jumps need no compensation, so

    Phi(lam) = a*lam + sigma**2 * lam**2 / 2 + r * (m_J(lam) - 1)

with ``m_J`` the moment generating function of a single jump.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import BoundaryError, DomainError, RegimeError

# Fraction of the exponential-moment domain that computations may use.
DOMAIN_INTERIOR = 0.99
EPS_SIGN = 1e-10
ROOT_TOL = 1e-12


@dataclass(frozen=True)
class TwoSidedExp:
    """Double-exponential jumps: up with prob ``p_up`` and rate ``eta_up``."""

    p_up: float
    eta_up: float
    eta_down: float

    def __post_init__(self):
        if not 0.0 <= self.p_up <= 1.0:
            raise DomainError(f"p_up must lie in [0, 1], got {self.p_up}")
        if self.eta_up <= 0 or self.eta_down <= 0:
            raise DomainError("eta_up and eta_down must be strictly positive")

    @property
    def theta_max(self) -> float:
        return self.eta_up if self.p_up > 0 else math.inf

    def mgf(self, lam: float) -> Tuple[float, float, float]:
        p, q = self.p_up, 1.0 - self.p_up
        eu, ed = self.eta_up, self.eta_down
        up = p * eu / (eu - lam) if p > 0 else 0.0
        dn = q * ed / (ed + lam)
        d_up = p * eu / (eu - lam) ** 2 if p > 0 else 0.0
        d_dn = -q * ed / (ed + lam) ** 2
        dd_up = 2.0 * p * eu / (eu - lam) ** 3 if p > 0 else 0.0
        dd_dn = 2.0 * q * ed / (ed + lam) ** 3
        return up + dn, d_up + d_dn, dd_up + dd_dn

    def tilted(self, lam: float) -> "TwoSidedExp":
        p, q = self.p_up, 1.0 - self.p_up
        wu = p * self.eta_up / (self.eta_up - lam) if p > 0 else 0.0
        wd = q * self.eta_down / (self.eta_down + lam)
        eta_up = self.eta_up - lam if p > 0 else self.eta_up
        return TwoSidedExp(wu / (wu + wd), eta_up, self.eta_down + lam)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        up = rng.random(size) < self.p_up
        e = rng.standard_exponential(size)
        return np.where(up, e / self.eta_up, -e / self.eta_down)


@dataclass(frozen=True)
class Atoms:
    """Jump law with finitely many atoms ``((value, probability), ...)``."""

    atoms: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple((float(v), float(p)) for v, p in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise DomainError("Atoms jump law needs at least one atom")
        for v, p in atoms:
            if v == 0.0:
                raise DomainError("jump atoms must be nonzero")
            if p <= 0.0:
                raise DomainError("atom probabilities must be positive")
        if abs(sum(p for _, p in atoms) - 1.0) > 1e-12:
            raise DomainError("atom probabilities must sum to 1")

    @property
    def theta_max(self) -> float:
        return math.inf

    @property
    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.atoms])

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])

    def mgf(self, lam: float) -> Tuple[float, float, float]:
        v, p = self.values, self.probs
        e = p * np.exp(lam * v)
        return float(e.sum()), float((v * e).sum()), float((v * v * e).sum())

    def tilted(self, lam: float) -> "Atoms":
        v, p = self.values, self.probs
        w = p * np.exp(lam * v)
        w = w / w.sum()
        return Atoms(tuple(zip(v.tolist(), w.tolist())))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(len(self.atoms), size=size, p=self.probs)
        return self.values[idx]


JumpLaw = Union[None, TwoSidedExp, Atoms]


@dataclass(frozen=True)
class LevyEnvSpec:
    """Law of the environment: drift, Gaussian scale and finite-activity jumps."""

    drift: float
    sigma: float = 0.0
    jump_rate: float = 0.0
    jump_law: JumpLaw = None

    def __post_init__(self):
        for name in ("drift", "sigma", "jump_rate"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise DomainError(f"{name} must be finite")
            object.__setattr__(self, name, val)
        if self.sigma < 0:
            raise DomainError(f"sigma must be >= 0, got {self.sigma}")
        if self.jump_rate < 0:
            raise DomainError(f"jump_rate must be >= 0, got {self.jump_rate}")
        if self.jump_rate > 0 and self.jump_law is None:
            raise DomainError("jump_rate > 0 requires a jump law")
        if self.jump_rate > 0 and self.sigma == 0 and self.drift == 0:
            raise DomainError("the environment must not be a compound Poisson process "
                              "(need sigma > 0 or drift != 0 when jump_rate > 0)")

    @property
    def has_jumps(self) -> bool:
        return self.jump_rate > 0

    @property
    def theta_max(self) -> float:
        """Supremum of the exponents with a finite jump moment generating function."""
        if not self.has_jumps:
            return math.inf
        return self.jump_law.theta_max

    def check_domain(self, lam: float) -> None:
        if lam < 0 or not math.isfinite(lam):
            raise DomainError(f"lambda must be finite and >= 0, got {lam}")
        tm = self.theta_max
        if math.isfinite(tm) and lam > DOMAIN_INTERIOR * tm:
            raise DomainError(
                f"lambda={lam} is outside the usable moment domain [0, {DOMAIN_INTERIOR}*{tm}]")


def laplace_exponent(spec: LevyEnvSpec, lam: float) -> Tuple[float, float, float]:
    """Return ``(Phi, Phi', Phi'')`` at ``lam``."""
    spec.check_domain(lam)
    a, s2, r = spec.drift, spec.sigma ** 2, spec.jump_rate
    phi = a * lam + 0.5 * s2 * lam * lam
    d1 = a + s2 * lam
    d2 = s2
    if spec.has_jumps:
        m, dm, ddm = spec.jump_law.mgf(lam)
        phi += r * (m - 1.0)
        d1 += r * dm
        d2 += r * ddm
    return phi, d1, d2


def phi(spec: LevyEnvSpec, lam: float) -> float:
    return laplace_exponent(spec, lam)[0]


@dataclass(frozen=True)
class RegimeReport:
    dphi0: float
    dphi1: float
    label: str
    gamma: Optional[float] = None
    phi_gamma: Optional[float] = None


def _sign(x: float, eps: float) -> int:
    if abs(x) <= eps:
        return 0
    return 1 if x > 0 else -1


def classify_regime(spec: LevyEnvSpec, eps_sign: float = EPS_SIGN,
                    root_tol: float = ROOT_TOL) -> RegimeReport:
    """Classify the CBLE regime from the signs of Phi'(0) and Phi'(1)."""
    if not spec.theta_max > 1:
        raise DomainError("the environment needs exponential moments beyond 1 (theta_max > 1)")
    d0 = laplace_exponent(spec, 0.0)[1]
    d1 = laplace_exponent(spec, 1.0)[1]
    s0, s1 = _sign(d0, eps_sign), _sign(d1, eps_sign)
    if s0 == 0 and s1 == 0:
        raise BoundaryError(f"degenerate environment: Phi'(0)={d0!r} and Phi'(1)={d1!r} "
                            f"both vanish within {eps_sign}")
    if s0 > 0:
        return RegimeReport(d0, d1, "supercritical")
    if s0 == 0:
        return RegimeReport(d0, d1, "critical")
    if s1 < 0:
        return RegimeReport(d0, d1, "strongly_subcritical")
    if s1 == 0:
        return RegimeReport(d0, d1, "intermediate_subcritical")
    g = find_gamma(spec, root_tol)
    return RegimeReport(d0, d1, "weakly_subcritical", g, phi(spec, g))


def find_gamma(spec: LevyEnvSpec, tol: float = ROOT_TOL) -> float:
    """Unique root of Phi' in (0, 1): bisection down to a narrow bracket, then Newton."""
    if not spec.theta_max > 1:
        raise DomainError("the environment needs exponential moments beyond 1 (theta_max > 1)")

    def dphi(x):
        return laplace_exponent(spec, x)[1]

    lo, hi = 0.0, 1.0
    f_lo, f_hi = dphi(lo), dphi(hi)
    if not (f_lo < -tol and f_hi > tol):
        raise RegimeError(f"Phi' has no sign change on (0, 1): Phi'(0)={f_lo}, Phi'(1)={f_hi}")
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        f = dphi(mid)
        if abs(f) <= tol:
            return mid
        if f < 0:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    for _ in range(100):
        _, d1, d2 = laplace_exponent(spec, x)
        if abs(d1) <= tol:
            return x
        if d1 < 0:
            lo = x
        else:
            hi = x
        step = x - d1 / d2 if d2 > 0 else 0.5 * (lo + hi)
        x = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 4 * np.finfo(float).eps:
            break
    d1 = dphi(x)
    if abs(d1) > tol:
        raise RegimeError(f"root polish failed: |Phi'(gamma)|={abs(d1)} > {tol}")
    return x


def esscher_tilt(spec: LevyEnvSpec, lam: float) -> LevyEnvSpec:
    """Law of the environment under the exponential change of measure at ``lam``."""
    spec.check_domain(lam)
    if lam == 0:
        return spec
    drift = spec.drift + spec.sigma ** 2 * lam
    if not spec.has_jumps:
        return LevyEnvSpec(drift, spec.sigma)
    m = spec.jump_law.mgf(lam)[0]
    return LevyEnvSpec(drift, spec.sigma, spec.jump_rate * m, spec.jump_law.tilted(lam))


# ---------------------------------------------------------------------------
# paths


@dataclass(frozen=True)
class EnvironmentPath:
    """Càdlàg piecewise-constant skeleton: ``xi(t) = values[i]`` on ``[t_i, t_{i+1})``."""

    times: np.ndarray
    values: np.ndarray
    n_jumps: int = 0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise DomainError("times and values must be 1-d arrays of equal length >= 2")
        if t[0] != 0.0:
            raise DomainError("the time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise DomainError("the time grid must be strictly increasing")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def x0(self) -> float:
        return float(self.values[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def terminal(self) -> float:
        return float(self.values[-1])

    def __eq__(self, other):
        if not isinstance(other, EnvironmentPath):
            return NotImplemented
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "value"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "EnvironmentPath":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


@dataclass
class PathBatch:
    """A block of skeleton paths sharing one array layout.

    ``times`` is either a shared grid of shape ``(m+1,)`` or per-path grids of
    shape ``(n, m+1)``; per-path grids are right-padded with the horizon, which
    adds zero-length segments that no functional sees.
    """

    times: np.ndarray
    values: np.ndarray
    n_jumps: np.ndarray = field(default=None)
    left: Optional[np.ndarray] = None  # xi(t_{i+1}-), shape (n, m); None means no jumps

    def __post_init__(self):
        if self.n_jumps is None:
            self.n_jumps = np.zeros(self.values.shape[0], dtype=int)

    @property
    def left_limits(self) -> np.ndarray:
        return self.values[:, 1:] if self.left is None else self.left

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def x0(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    @property
    def horizon(self) -> float:
        return float(self.times[..., -1].max())

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times, axis=-1)

    def path(self, i: int) -> EnvironmentPath:
        t = self.times if self.times.ndim == 1 else self.times[i]
        v = self.values[i]
        keep = np.concatenate([[True], np.diff(t) > 0])
        return EnvironmentPath(t[keep], v[keep], int(self.n_jumps[i]))

    @classmethod
    def from_paths(cls, paths: Sequence[EnvironmentPath]) -> "PathBatch":
        m = max(p.times.size for p in paths)
        t = np.empty((len(paths), m))
        v = np.empty((len(paths), m))
        for i, p in enumerate(paths):
            k = p.times.size
            t[i, :k], t[i, k:] = p.times, p.times[-1]
            v[i, :k], v[i, k:] = p.values, p.values[-1]
        return cls(t, v, np.array([p.n_jumps for p in paths]))


def _uniform_grid(T: float, max_step: float) -> np.ndarray:
    if not T > 0:
        raise DomainError(f"horizon T must be positive, got {T}")
    if not max_step > 0:
        raise DomainError(f"max_step must be positive, got {max_step}")
    m = max(1, int(math.ceil(T / max_step - 1e-9)))
    grid = np.linspace(0.0, T, m + 1)
    grid[-1] = T
    return grid


def _simulate_jump_path(spec: LevyEnvSpec, x0: float, grid: np.ndarray,
                        rng: np.random.Generator):
    T = grid[-1]
    k = int(rng.poisson(spec.jump_rate * T))
    jt = np.sort(T * (1.0 - rng.random(k)))  # in (0, T]
    js = spec.jump_law.sample(rng, k) if k else np.empty(0)
    times = np.union1d(grid, jt)
    dt = np.diff(times)
    inc = spec.drift * dt
    if spec.sigma > 0:
        inc = inc + spec.sigma * np.sqrt(dt) * rng.standard_normal(dt.size)
    jumps = np.zeros(dt.size)
    if k:
        idx = np.searchsorted(times, jt) - 1  # increment ending at the jump time
        np.add.at(jumps, idx, js)
    values = np.empty(times.size)
    values[0] = x0
    np.cumsum(inc + jumps, out=values[1:])
    values[1:] += x0
    return times, values, k, values[1:] - jumps


def simulate_batch(spec: LevyEnvSpec, x0: float, T: float, max_step: float,
                   rng: np.random.Generator, n: int) -> PathBatch:
    """Simulate ``n`` exact skeletons of the environment started at ``x0``.

    Between grid points the Gaussian part is sampled exactly; jump times are
    inserted into the grid, so every gap is at most ``max_step``.
    """
    grid = _uniform_grid(T, max_step)
    if not spec.has_jumps:
        dt = np.diff(grid)
        inc = np.broadcast_to(spec.drift * dt, (n, dt.size)).copy()
        if spec.sigma > 0:
            inc += spec.sigma * np.sqrt(dt) * rng.standard_normal((n, dt.size))
        values = np.empty((n, grid.size))
        values[:, 0] = x0
        np.cumsum(inc, axis=1, out=values[:, 1:])
        values[:, 1:] += x0
        return PathBatch(grid, values)
    parts = [_simulate_jump_path(spec, x0, grid, rng) for _ in range(n)]
    m = max(p[0].size for p in parts)
    times = np.empty((n, m))
    values = np.empty((n, m))
    left = np.empty((n, m - 1))
    for i, (t, v, _, lv) in enumerate(parts):
        times[i, :t.size], times[i, t.size:] = t, T
        values[i, :v.size], values[i, v.size:] = v, v[-1]
        left[i, :lv.size], left[i, lv.size:] = lv, v[-1]
    return PathBatch(times, values, np.array([p[2] for p in parts]), left)


def simulate_path(spec: LevyEnvSpec, x0: float, T: float, max_step: float,
                  rng: np.random.Generator) -> EnvironmentPath:
    """One exact skeleton; deterministic given the generator state."""
    return simulate_batch(spec, x0, T, max_step, rng, 1).path(0)


def sample_increments(spec: LevyEnvSpec, dt: float, rng: np.random.Generator,
                      shape) -> np.ndarray:
    """Exact increments of the environment over a fixed time step ``dt``."""
    inc = np.full(shape, spec.drift * dt)
    if spec.sigma > 0:
        inc += spec.sigma * math.sqrt(dt) * rng.standard_normal(shape)
    if spec.has_jumps:
        k = rng.poisson(spec.jump_rate * dt, shape).ravel()
        total = int(k.sum())
        if total:
            owner = np.repeat(np.arange(k.size), k)
            sums = np.bincount(owner, weights=spec.jump_law.sample(rng, total),
                               minlength=k.size)
            inc += sums.reshape(shape)
    return inc


def survival_weights(batch: PathBatch, sigma: float, level: float = 0.0,
                     above: bool = True, bridge: bool = True) -> np.ndarray:
    """Probability that each path stays strictly above (or below) ``level`` on [0, T].

    With ``bridge`` and ``sigma > 0`` the Gaussian part between grid points is
    a Brownian bridge, so the continuous-time crossing probability given the
    skeleton is exact: a product of ``1 - exp(-2 a b / (sigma^2 dt))`` factors.
    Without it the skeleton indicator is returned.
    """
    sign = 1.0 if above else -1.0
    a = sign * (batch.values[:, :-1] - level)
    b = sign * (batch.left_limits - level)
    alive = (a > 0).all(axis=1) & (b > 0).all(axis=1) & (sign * (batch.terminal - level) > 0)
    if not bridge or sigma <= 0:
        return alive.astype(float)
    dt = np.broadcast_to(batch.dt, a.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = np.where(dt > 0, -2.0 * a * b / (sigma * sigma * dt), -np.inf)
        logp = np.log1p(-np.exp(np.minimum(expo, 0.0)))
    out = np.zeros(batch.n)
    out[alive] = np.exp(logp[alive].sum(axis=1))
    return out


def running_extrema(path: EnvironmentPath) -> Tuple[float, float]:
    return float(path.values.min()), float(path.values.max())


def reverse_path(path: EnvironmentPath) -> EnvironmentPath:
    """Skeleton of ``s -> xi((T-s)-) - xi(T)`` on the reflected grid, with xi(0-) = xi(0).

    On ``[s_j, s_{j+1})`` with ``s_j = T - t_{n-j}`` the reversed path equals
    ``v_{n-1-j} - v_n``; at ``s_n = T`` it equals ``v_0 - v_n``.
    """
    t, v = path.times, path.values
    T = t[-1]
    s = T - t[::-1]
    s[0] = 0.0
    w = np.empty_like(v)
    w[:-1] = v[-2::-1] - v[-1]
    w[-1] = v[0] - v[-1]
    return EnvironmentPath(s, w, path.n_jumps)


def esscher_weight(path: Union[EnvironmentPath, PathBatch], lam: float, phi_lam: float):
    """Radon-Nikodym factor exp(-lam*(xi_T - x0) + T*Phi(lam)) mapping tilted samples back."""
    if lam == 0:
        return 1.0 if isinstance(path, EnvironmentPath) else np.ones(path.n)
    incr = np.asarray(path.terminal) - np.asarray(path.x0)
    w = np.exp(-lam * incr + path.horizon * phi_lam)
    return float(w) if isinstance(path, EnvironmentPath) else w
