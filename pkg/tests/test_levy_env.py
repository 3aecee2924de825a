import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cble.errors import BoundaryError, DomainError, RegimeError
from cble.levy_env import (Atoms, EnvironmentPath, LevyEnvSpec, PathBatch, TwoSidedExp,
                           classify_regime, esscher_tilt, esscher_weight, find_gamma,
                           laplace_exponent, phi, reverse_path, running_extrema,
                           sample_increments, simulate_batch, simulate_path, survival_weights)
from cble.rng import stream

BROWNIAN = LevyEnvSpec(-0.5, 1.0)
JUMPY = LevyEnvSpec(-0.2, 0.5, 1.5, TwoSidedExp(0.4, 3.0, 2.0))
ATOMIC = LevyEnvSpec(-1.2, 1.0, 1.0, Atoms(((1.0, 0.3), (-0.5, 0.7))))

specs = st.one_of(
    st.builds(LevyEnvSpec, st.floats(-3, 3), st.floats(0.1, 2)),
    st.builds(lambda a, s, r, p, eu, ed: LevyEnvSpec(a, s, r, TwoSidedExp(p, eu, ed)),
              st.floats(-3, 3), st.floats(0.1, 2), st.floats(0.01, 3), st.floats(0, 1),
              st.floats(1.5, 8), st.floats(0.5, 8)),
)


# --- Laplace exponent -------------------------------------------------------

def test_laplace_exponent_brownian_closed_form():
    assert laplace_exponent(BROWNIAN, 1.0) == (0.0, 0.5, 1.0)


def test_laplace_exponent_zero_at_origin():
    for spec in (BROWNIAN, JUMPY, ATOMIC):
        assert laplace_exponent(spec, 0.0)[0] == 0.0


def test_laplace_exponent_with_atom():
    spec = LevyEnvSpec(0.0, 1.0, 1.0, Atoms(((1.0, 1.0),)))
    assert phi(spec, 1.0) == pytest.approx(0.5 + math.e - 1.0, rel=1e-14)


def test_laplace_exponent_two_sided_exp_matches_quadrature():
    law = TwoSidedExp(0.4, 3.0, 2.0)
    x = np.linspace(-40, 40, 800_001)
    dens = np.where(x > 0, 0.4 * 3.0 * np.exp(-3.0 * np.abs(x)), 0.6 * 2.0 * np.exp(-2.0 * np.abs(x)))
    f = np.exp(1.3 * x) * dens
    m = np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(x))
    assert law.mgf(1.3)[0] == pytest.approx(m, rel=1e-6)


@pytest.mark.parametrize("spec", [BROWNIAN, JUMPY, ATOMIC])
def test_derivatives_match_finite_differences(spec):
    lam, h = 0.37, 1e-5
    f0, d1, d2 = laplace_exponent(spec, lam)
    fp, fm = phi(spec, lam + h), phi(spec, lam - h)
    assert d1 == pytest.approx((fp - fm) / (2 * h), rel=1e-7)
    assert d2 == pytest.approx((fp - 2 * f0 + fm) / h ** 2, rel=1e-4)


@settings(max_examples=60, deadline=None)
@given(specs, st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_laplace_exponent_strictly_convex(spec, u, v, w):
    top = min(spec.theta_max * 0.99, 5.0)
    a, b = sorted((u * top, v * top))
    if b - a < 1e-3:
        return
    c = a + w * (b - a)
    chord = phi(spec, a) + (c - a) / (b - a) * (phi(spec, b) - phi(spec, a))
    assert phi(spec, c) <= chord + 1e-12 * (1 + abs(chord))
    assert laplace_exponent(spec, c)[2] > 0


def test_domain_checks():
    with pytest.raises(DomainError):
        phi(JUMPY, 2.98)
    with pytest.raises(DomainError):
        phi(BROWNIAN, -0.1)
    assert JUMPY.theta_max == 3.0
    assert ATOMIC.theta_max == math.inf


def test_spec_validation():
    with pytest.raises(DomainError):
        LevyEnvSpec(0.0, -1.0)
    with pytest.raises(DomainError):
        LevyEnvSpec(0.0, 0.0, 1.0, Atoms(((1.0, 1.0),)))  # compound Poisson
    with pytest.raises(DomainError):
        LevyEnvSpec(0.0, 1.0, 1.0, None)
    with pytest.raises(DomainError):
        Atoms(((1.0, 0.5), (2.0, 0.4)))
    with pytest.raises(DomainError):
        TwoSidedExp(0.5, -1.0, 1.0)


# --- regimes -----------------------------------------------------------------

def test_classify_benchmark():
    rep = classify_regime(BROWNIAN)
    assert rep.label == "weakly_subcritical"
    assert rep.gamma == pytest.approx(0.5, abs=1e-12)
    assert rep.phi_gamma == pytest.approx(-0.125, abs=1e-12)


@pytest.mark.parametrize("drift,label", [(0.0, "critical"), (-2.0, "strongly_subcritical"),
                                         (0.3, "supercritical"),
                                         (-1.0, "intermediate_subcritical")])
def test_classify_other_regimes(drift, label):
    rep = classify_regime(LevyEnvSpec(drift, 1.0))
    assert rep.label == label
    assert rep.gamma is None


def test_classify_needs_moments_beyond_one():
    spec = LevyEnvSpec(-1.0, 1.0, 1.0, TwoSidedExp(0.5, 0.9, 1.0))
    with pytest.raises(DomainError):
        classify_regime(spec)


def test_classify_degenerate_boundary():
    with pytest.raises(BoundaryError):
        classify_regime(LevyEnvSpec(0.0, 0.0, 0.0))


@pytest.mark.parametrize("drift,gamma", [(-0.5, 0.5), (-0.25, 0.25)])
def test_find_gamma_linear(drift, gamma):
    assert find_gamma(LevyEnvSpec(drift, 1.0)) == pytest.approx(gamma, abs=1e-12)


def test_find_gamma_boundary_error():
    with pytest.raises(RegimeError):
        find_gamma(LevyEnvSpec(-1.0, 1.0))


@settings(max_examples=60, deadline=None)
@given(specs)
def test_find_gamma_root_and_uniqueness(spec):
    if spec.theta_max <= 1:
        return
    try:
        d0 = laplace_exponent(spec, 0.0)[1]
        d1 = laplace_exponent(spec, 1.0)[1]
    except DomainError:
        return
    if not (d0 < -1e-6 and d1 > 1e-6):
        with pytest.raises(RegimeError):
            find_gamma(spec)
        return
    tol = 1e-12
    g = find_gamma(spec, tol)
    assert 0 < g < 1
    assert abs(laplace_exponent(spec, g)[1]) <= tol
    # the sign of Phi' changes across gamma (beyond the flat region of width ~tol / Phi'')
    step = max(10 * tol, 1e-9)
    assert laplace_exponent(spec, g - step)[1] < 0 < laplace_exponent(spec, g + step)[1]


def test_find_gamma_with_atoms_matches_bisection():
    spec = LevyEnvSpec(-2.0, 1.0, 1.0, Atoms(((1.0, 1.0),)))
    lo, hi = 0.0, 1.0  # Phi'(l) = -2 + l + e^l
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if -2 + mid + math.exp(mid) < 0 else (lo, mid)
    assert find_gamma(spec) == pytest.approx(lo, abs=1e-12)


# --- Esscher tilt ------------------------------------------------------------

def test_tilt_brownian_to_driftless():
    t = esscher_tilt(BROWNIAN, 0.5)
    assert (t.drift, t.sigma, t.jump_rate) == (0.0, 1.0, 0.0)


def test_tilt_identity_and_composition():
    assert esscher_tilt(JUMPY, 0.0) == JUMPY
    twice = esscher_tilt(esscher_tilt(BROWNIAN, 0.2), 0.3)
    once = esscher_tilt(BROWNIAN, 0.5)
    assert twice.drift == pytest.approx(once.drift, abs=1e-15)
    assert twice.sigma == once.sigma


@settings(max_examples=50, deadline=None)
@given(specs, st.floats(0.0, 0.9), st.floats(0.0, 0.9))
def test_tilted_exponent_is_shifted_exponent(spec, g, lam):
    """Phi_g(lam) = Phi(lam + g) - Phi(g) whenever both sides exist."""
    top = spec.theta_max * 0.99
    if g + lam > top:
        return
    tilted = esscher_tilt(spec, g)
    assert phi(tilted, lam) == pytest.approx(phi(spec, lam + g) - phi(spec, g),
                                             rel=1e-9, abs=1e-12)


def test_tilt_mean_drift_is_zero_at_gamma():
    g = find_gamma(JUMPY)
    tilted = esscher_tilt(JUMPY, g)
    x = sample_increments(tilted, 2.0, stream(5, "tilt-mean"), (100_000,))
    mean, se = x.mean() / 2.0, x.std(ddof=1) / 2.0 / math.sqrt(x.size)
    assert abs(mean - laplace_exponent(JUMPY, g)[1]) <= 4 * se


@pytest.mark.parametrize("g", [lambda x: np.ones_like(x), lambda x: x])
def test_weight_reweights_to_base_law(g):
    lam = 0.6
    tilted = esscher_tilt(JUMPY, lam)
    n = 200_000
    xt = sample_increments(tilted, 1.0, stream(6, "w-tilted"), (n,))
    xb = sample_increments(JUMPY, 1.0, stream(6, "w-base"), (n,))
    w = np.exp(-lam * xt + phi(JUMPY, lam))
    a, b = w * g(xt), g(xb)
    se = math.hypot(a.std(ddof=1), b.std(ddof=1)) / math.sqrt(n)
    assert abs(a.mean() - b.mean()) <= 4 * se


def test_esscher_weight_examples():
    p = EnvironmentPath([0.0, 8.0], [0.0, 0.0])
    assert esscher_weight(p, 0.5, -0.125) == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert esscher_weight(p, 0.0, 0.0) == 1.0
    q = EnvironmentPath([0.0, 1.0], [0.0, 1.0])
    assert esscher_weight(q, 1.0, 1.0) == 1.0


# --- paths -------------------------------------------------------------------

def test_path_validation():
    with pytest.raises(DomainError):
        EnvironmentPath([0.0, 1.0, 1.0], [0.0, 1.0, 2.0])
    with pytest.raises(DomainError):
        EnvironmentPath([0.0, 1.0], [0.0])


def test_deterministic_drift_path():
    p = simulate_path(LevyEnvSpec(1.0), 0.0, 2.0, 0.1, stream(1, "drift"))
    assert np.allclose(p.values, p.times, rtol=0, atol=1e-14)
    assert p.x0 == 0.0 and p.horizon == 2.0


def test_simulation_is_reproducible():
    a = simulate_path(JUMPY, 0.3, 5.0, 0.05, stream(11, "repro"))
    b = simulate_path(JUMPY, 0.3, 5.0, 0.05, stream(11, "repro"))
    assert a == b
    assert np.array_equal(a.times, b.times)


def test_jump_count_mean():
    spec = LevyEnvSpec(0.0, 1.0, 2.0, TwoSidedExp(0.5, 2.0, 2.0))
    batch = simulate_batch(spec, 0.0, 5.0, 1.0, stream(3, "counts"), 100_000)
    k = batch.n_jumps
    assert abs(k.mean() - 10.0) <= 4 * k.std(ddof=1) / math.sqrt(k.size)


def test_grid_respects_max_step():
    batch = simulate_batch(JUMPY, 0.0, 3.0, 0.07, stream(2, "grid"), 50)
    assert np.all(batch.dt <= 0.07 + 1e-12)
    assert np.all(batch.times[:, -1] == 3.0)


def test_running_extrema():
    p = EnvironmentPath([0, 1, 2], [0.0, 1.0, -0.5])
    assert running_extrema(p) == (-0.5, 1.0)
    c = EnvironmentPath([0, 1], [0.7, 0.7])
    assert running_extrema(c) == (0.7, 0.7)
    m = EnvironmentPath([0, 1, 2, 3], [0.1, 0.2, 0.4, 0.9])
    assert running_extrema(m) == (0.1, 0.9)


def test_reverse_single_jump():
    p = EnvironmentPath([0.0, 1.0, 2.0], [0.0, 2.0, 2.0])
    r = reverse_path(p)
    assert r.times.tolist() == [0.0, 1.0, 2.0]
    assert r.values.tolist() == [0.0, -2.0, -2.0]


def test_reverse_drift_path():
    p = EnvironmentPath([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    r = reverse_path(p)
    # s -> xi((T-s)-) - xi(T) on the skeleton: 1 - 2, 0 - 2 at s = 0, 1, then xi(0) - xi(T)
    assert r.values.tolist() == [-1.0, -2.0, -2.0]


dyadic = st.integers(-64, 64).map(lambda k: k / 8.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 16), min_size=1, max_size=20), st.data())
def test_reverse_is_involution(gaps, data):
    times = np.concatenate([[0.0], np.cumsum(np.array(gaps) / 16.0)])
    vals = data.draw(st.lists(dyadic, min_size=len(gaps), max_size=len(gaps)))
    # start at 0 with no jump at T: the reversed skeleton only keeps increments
    values = np.array([0.0] + vals)
    values[-1] = values[-2]
    p = EnvironmentPath(times, values)
    assert reverse_path(reverse_path(p)) == p


def test_csv_round_trip(tmp_path):
    p = simulate_path(JUMPY, 0.0, 2.0, 0.1, stream(9, "csv"))
    f = tmp_path / "p.csv"
    p.to_csv(f)
    q = EnvironmentPath.from_csv(f)
    assert np.array_equal(q.times, p.times) and np.array_equal(q.values, p.values)


def test_batch_from_paths():
    ps = [simulate_path(JUMPY, 0.0, 1.0, 0.25, stream(1, "b", i)) for i in range(3)]
    b = PathBatch.from_paths(ps)
    assert b.n == 3
    assert np.array_equal(b.terminal, [p.terminal for p in ps])


# --- crossing probabilities --------------------------------------------------

def test_survival_weight_matches_reflection_principle():
    """P(inf_{[0,T]} (x + W) > 0) = 2 Phi(x / sqrt T) - 1 for a single bridge segment."""
    from math import erf, sqrt
    x, T = 0.8, 1.5
    batch = simulate_batch(LevyEnvSpec(0.0, 1.0), x, T, T, stream(4, "refl"), 400_000)
    w = survival_weights(batch, 1.0)
    exact = erf(x / sqrt(2 * T))
    assert abs(w.mean() - exact) <= 4 * w.std(ddof=1) / math.sqrt(w.size)


def test_survival_weight_below():
    batch = PathBatch(np.array([0.0, 1.0]), np.array([[-1.0, -1.0], [-1.0, 0.5]]))
    w = survival_weights(batch, 1.0, above=False)
    assert w[0] == pytest.approx(-math.expm1(-2.0))
    assert w[1] == 0.0
