import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cble.branching import Stable
from cble.errors import (DegenerateWeightError, DomainError, TailCoverageError,
                         UnsupportedError)
from cble.fluctuation import (RenewalEstimate, a_gamma, cble_conditioned_expectation,
                              conditioned_expectation_down, conditioned_expectation_up,
                              harmonic_weight_mean, kappa_gamma, mu_gamma, renewal_estimate)
from cble.levy_env import Atoms, LevyEnvSpec, TwoSidedExp, esscher_tilt, find_gamma
from cble.rng import stream
from cble.stats import joint_z

DRIFTLESS = LevyEnvSpec(0.0, 1.0)
GRID = np.linspace(0.0, 16.0, 65)


def table(fn, x_max=40.0, step=0.25):
    x = np.arange(0.0, x_max + step / 2, step)
    u = fn(x)
    z = np.zeros_like(x)
    return RenewalEstimate(x, u.copy(), u.copy(), z, z, 0.0, 0.0, 0, tag="synthetic")


@pytest.fixture(scope="module")
def brownian_renewal():
    return renewal_estimate(DRIFTLESS, GRID, 0.04, 20_000.0, 1000, seed=3)


# --- renewal functions -----------------------------------------------------

def test_renewal_linear_for_brownian(brownian_renewal):
    r, se = brownian_renewal.ratio(2.0, 1.0)
    assert abs(r - 2.0) <= 4 * se
    r_up, se_up = brownian_renewal.ratio(4.0, 2.0, ascending=True)
    assert abs(r_up - 2.0) <= 4 * se_up


def test_renewal_shape_invariants(brownian_renewal):
    ren = brownian_renewal
    for vals in (ren.u_hat, ren.u):
        assert np.all(vals >= 0)
        assert np.all(np.diff(vals) >= 0)
    assert ren.u_hat_at(-0.5) == 0.0 and ren.u_at(-1e-9) == 0.0
    a, b = np.polyfit(ren.x[32:], ren.u_hat[32:], 1)
    assert math.isfinite(a) and b > 0
    assert ren.tag == "ladder-epoch-count*sqrt(h)"


def test_renewal_product_matches_gaussian_constant(brownian_renewal):
    """For Brownian motion with variance sigma^2 the slopes satisfy c_up * c_down = 2 / sigma^2."""
    x = brownian_renewal.x[4:33]
    cu = np.polyfit(x, brownian_renewal.u[4:33], 1)[0]
    cd = np.polyfit(x, brownian_renewal.u_hat[4:33], 1)[0]
    assert cu * cd == pytest.approx(2.0, rel=0.1)


def test_renewal_without_descending_ladder():
    ren = renewal_estimate(LevyEnvSpec(1.0), GRID, 0.05, 100.0, 16, seed=1)
    assert np.all(ren.u_hat == ren.u_hat[0])
    assert ren.u_hat[0] > 0


def test_renewal_reproducible_across_threads():
    a = renewal_estimate(DRIFTLESS, GRID, 0.04, 500.0, 600, seed=2, threads=1)
    b = renewal_estimate(DRIFTLESS, GRID, 0.04, 500.0, 600, seed=2, threads=3)
    assert np.array_equal(a.u_hat, b.u_hat) and np.array_equal(a.u, b.u)


def test_renewal_input_checks():
    with pytest.raises(DomainError):
        renewal_estimate(DRIFTLESS, [1.0, 0.5], 0.1, 10.0, 4)
    with pytest.raises(DomainError):
        renewal_estimate(DRIFTLESS, GRID, 0.0, 10.0, 4)


def test_renewal_halving_diagnostic():
    ren = renewal_estimate(DRIFTLESS, GRID, 0.04, 500.0, 200, seed=4, check_halving=True)
    assert ren.halving_z is not None and ren.halving_ok is not None


# --- kappa and mu_gamma ------------------------------------------------------

@pytest.mark.parametrize("fn,kappa", [(lambda x: x, 1.0), (lambda x: 2 * x, 0.5),
                                      (lambda x: np.ones_like(x), 1.0)])
def test_kappa_synthetic(fn, kappa):
    assert kappa_gamma(table(fn), 1.0).value == pytest.approx(kappa, rel=1e-12)


def test_kappa_tail_coverage():
    short = table(lambda x: x, x_max=3.0)
    with pytest.raises(TailCoverageError):
        kappa_gamma(short, 1.0)


def test_mu_gamma_gamma_two_law():
    mu = mu_gamma(table(lambda x: x), 1.0)
    assert mu.mass == pytest.approx(1.0, abs=1e-12)
    y = np.linspace(0.5, 10.0, 20)
    assert np.allclose(mu.pdf(y), y * np.exp(-y), rtol=1e-4)
    s = mu.sample(stream(1, "mu"), 200_000)
    assert abs(s.mean() - 2.0) <= 4 * s.std(ddof=1) / math.sqrt(s.size)
    mu2 = mu_gamma(table(lambda x: x), 2.0)
    s2 = mu2.sample(stream(1, "mu2"), 200_000)
    assert abs(s2.mean() - 1.0) <= 4 * s2.std(ddof=1) / math.sqrt(s2.size)


def test_mu_gamma_mass_from_monte_carlo_renewal(brownian_renewal):
    mu = mu_gamma(brownian_renewal, 1.0)
    assert mu.mass == pytest.approx(1.0, abs=1e-12)
    indep = renewal_estimate(DRIFTLESS, GRID, 0.04, 20_000.0, 1000, seed=99)
    assert mu_gamma(brownian_renewal, 1.0, kappa_gamma(indep, 1.0)).mass == pytest.approx(1.0, abs=0.05)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.3, 3.0))
def test_normalization_invariance(factor, gamma):
    base = table(lambda x: 0.7 * x + 0.3)
    scaled = base.scaled(factor)
    k0, k1 = kappa_gamma(base, gamma), kappa_gamma(scaled, gamma)
    # kappa scales like 1 / U, so kappa * U is unchanged
    assert k1.value * scaled.u[10] == pytest.approx(k0.value * base.u[10], rel=1e-12)
    assert mu_gamma(scaled, gamma).mass == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(mu_gamma(scaled, gamma).density, mu_gamma(base, gamma).density, rtol=1e-12)
    assert scaled.ratio(4.0, 2.0)[0] == pytest.approx(base.ratio(4.0, 2.0)[0], rel=1e-12)
    assert k1.tag != k0.tag


# --- A_gamma -------------------------------------------------------------------

def test_a_gamma_values():
    assert a_gamma(LevyEnvSpec(-0.5, 1.0), 0.5) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-15)
    assert a_gamma(LevyEnvSpec(-2.0, 2.0), 0.5) == pytest.approx(1 / math.sqrt(8 * math.pi), abs=1e-15)


def test_a_gamma_with_jumps():
    spec = LevyEnvSpec(-2.0, 1.0, 1.0, Atoms(((1.0, 1.0),)))
    g = find_gamma(spec)
    assert a_gamma(spec, g) == pytest.approx(1 / math.sqrt(2 * math.pi * (1 + math.exp(g))), rel=1e-14)


def test_a_gamma_needs_gaussian_part():
    spec = LevyEnvSpec(-1.0, 0.0, 1.0, TwoSidedExp(0.5, 3.0, 1.0))
    with pytest.raises(UnsupportedError):
        a_gamma(spec, 0.3)


# --- conditioned expectations ------------------------------------------------

def test_conditioned_constant_is_exact():
    est = conditioned_expectation_up(DRIFTLESS, 1.0, 1.0, None, 2000, seed=5)
    assert est.mean == 1.0
    down = conditioned_expectation_down(DRIFTLESS, -1.0, 1.0, lambda b: 3.0 * np.ones(b.n),
                                        2000, seed=5)
    assert down.mean == pytest.approx(3.0, rel=1e-15)


@pytest.mark.parametrize("x", [0.5, 1.0, 2.0])
def test_harmonicity(x):
    est = harmonic_weight_mean(DRIFTLESS, x, 1.0, 100_000, seed=6, max_step=0.05,
                               tag=f"harm/{x}")
    assert abs(est.mean - x) <= 4 * est.stderr


def test_harmonicity_without_bridge_is_biased():
    """The skeleton indicator alone overstates survival; the bridge correction removes it."""
    raw = harmonic_weight_mean(DRIFTLESS, 1.0, 1.0, 100_000, seed=7, max_step=0.25,
                               bridge=False)
    assert raw.mean - 1.0 > 4 * raw.stderr


def test_conditioned_up_matches_fine_grid_rerun():
    f = lambda b: b.terminal
    coarse = conditioned_expectation_up(DRIFTLESS, 1.0, 1.0, f, 20_000, seed=8, max_step=0.05)
    fine = conditioned_expectation_up(DRIFTLESS, 1.0, 1.0, f, 200_000, seed=9, max_step=0.005)
    assert joint_z(coarse, fine) <= 4
    # with U_hat(x) = x the conditioned mean is E_1[W_1^2; inf > 0]; by reflection
    # it is g(1) - g(-1) with g(m) = (m^2 + 1) Phi(m) + m phi(m)
    Phi = lambda m: 0.5 * (1 + math.erf(m / math.sqrt(2)))
    phi = lambda m: math.exp(-m * m / 2) / math.sqrt(2 * math.pi)
    g = lambda m: (m * m + 1) * Phi(m) + m * phi(m)
    assert abs(fine.mean - (g(1.0) - g(-1.0))) <= 4 * fine.stderr


def test_conditioned_down_reflection_symmetry():
    up = conditioned_expectation_up(DRIFTLESS, 1.0, 1.0, lambda b: b.terminal, 50_000, seed=10)
    dn = conditioned_expectation_down(DRIFTLESS, -1.0, 1.0, lambda b: -b.terminal, 50_000,
                                      seed=11)
    assert joint_z(up, dn) <= 4


def test_conditioned_down_degenerate_weights():
    spec = LevyEnvSpec(1.0, 0.0, 1.0, Atoms(((-0.5, 1.0),)))  # creeps upward at once
    with pytest.raises(DegenerateWeightError):
        conditioned_expectation_down(spec, -1e-9, 1.0, None, 256, seed=1,
                                     u=lambda y: np.maximum(y, 0.0) + 1.0)


def test_conditioned_needs_renewal_for_general_spec():
    with pytest.raises(DomainError):
        conditioned_expectation_up(LevyEnvSpec(-0.5, 1.0), 1.0, 1.0, None, 10)
    with pytest.raises(DomainError):
        conditioned_expectation_up(DRIFTLESS, -1.0, 1.0, None, 10)


def test_cble_conditioned_expectation():
    mech = Stable(1.0, 0.5)
    assert cble_conditioned_expectation(mech, DRIFTLESS, 1.0, 1.0, 1.0,
                                        g=lambda s, b: np.ones(b.n), n=1000).mean == 1.0
    small = cble_conditioned_expectation(mech, DRIFTLESS, 1e-9, 1.0, 1.0, n=2000)
    assert 0 <= small.mean < 1e-8


def test_cble_conditioned_expectation_decreases_in_horizon():
    """Quenched survival falls pathwise in T, so the conditioned mean is nonincreasing.

    Convergence is slow at desk horizons (the conditioned path escapes like
    sqrt(t)); the increments shrink but T = 20 and T = 40 are still resolvable.
    """
    mech = Stable(1.0, 0.5)
    tilted = esscher_tilt(LevyEnvSpec(-0.5, 1.0), 0.5)
    est = [cble_conditioned_expectation(mech, tilted, 1.0, 1.0, T, n=20_000, max_step=0.1,
                                        tag=f"settle/{T}") for T in (10.0, 20.0, 40.0)]
    assert est[0].mean > est[1].mean > est[2].mean
    assert est[0].mean - est[1].mean > est[1].mean - est[2].mean
