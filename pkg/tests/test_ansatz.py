import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowup4d.ansatz import (EXPANSION_CONSTANT, apply_linearized, bubble, build_ansatz, discrete_bilaplacian_at,
                             energy, energy_expansion_reference, hybrid_mass, kernel_function, kernel_residual,
                             kernel_samples, linear_weight, linear_weight_report, make_eps_rho, nonlinearity, residual,
                             sphere3_rule, star_norm, star_weight)
from blowup4d.errors import BadIndex, CoreUnderResolved, EpsOutOfRange, OverflowGuard
from blowup4d.grid import ScalarField4
from blowup4d.reduced_energy import ConfigPoint, GreensCache

from conftest import CENTRE, UNIT, unit_mask

MASS_UNIT = 64 * math.pi ** 2


@pytest.fixture(scope="module")
def single(cache17):
    return build_ansatz(ConfigPoint([CENTRE], UNIT, 0.1), 0.1, cache17, require_resolved=False)


# --- eps / rho -------------------------------------------------------------------------

def test_make_eps_rho_examples():
    assert make_eps_rho(1.0).rho4 == pytest.approx(24.0, rel=1e-14)
    assert make_eps_rho(0.1).rho4 == pytest.approx(384e-4 / 1.01 ** 4, rel=1e-14)
    assert make_eps_rho(1e-4).rho4 / 1e-16 == pytest.approx(384.0, rel=1e-7)
    for bad in (0.0, -0.1, 1.5, float("nan")):
        with pytest.raises(EpsOutOfRange):
            make_eps_rho(bad)


# --- bubble ------------------------------------------------------------------------------

def test_bubble_centre_value():
    for eps in (0.05, 0.3):
        assert bubble(CENTRE, CENTRE, 1.0, eps) == pytest.approx(4 * math.log((1 + eps ** 2) / eps ** 2), rel=1e-14)
    assert bubble(CENTRE, CENTRE, 1.0, 0.1, 2.0) == pytest.approx(bubble(CENTRE, CENTRE, 1.0, 0.1) - math.log(2))


def test_bubble_far_field_error_is_order_a_over_r2():
    mu, eps = 0.7, 0.1
    errs = []
    for r in (1.0, 2.0, 4.0):
        x = CENTRE + np.array([r, 0, 0, 0])
        errs.append(abs(bubble(x, CENTRE, mu, eps) + 8 * math.log(r) - 4 * math.log(mu * (1 + eps ** 2))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=1e-2)
    assert errs[0] <= 4 * (mu * eps) ** 2


@settings(max_examples=15)
@given(st.floats(0.5, 2.0), st.floats(0.05, 0.3))
def test_bubble_pde_identity_second_order(mu, eps):
    # discrete bilaplacian on h Z^4 shifted to random points near the core
    pts = np.random.default_rng(0).uniform(-2, 2, size=(10, 4)) * mu * eps
    rho4 = make_eps_rho(eps).rho4
    f = lambda x: bubble(x, np.zeros(4), mu, eps)
    res = []
    for h in (0.1 * mu * eps, 0.05 * mu * eps):
        r = discrete_bilaplacian_at(f, pts, h) - rho4 * np.exp(f(pts))
        res.append(np.max(np.abs(r)) / np.max(rho4 * np.exp(f(pts))))
    assert res[1] < 1e-2
    assert 3.0 <= res[0] / res[1] <= 5.0


# --- build_ansatz -------------------------------------------------------------------------

def test_build_ansatz_boundary_and_reassembly(single):
    d = single.diagnostics
    assert d["boundary_U"] < 1e-9
    assert d["boundary_lapU"] < 1e-6
    assert single.reassembly_error() < 1e-9
    assert single.mu[0] == pytest.approx(math.exp(single.greens[0].H_diag / 4), rel=1e-12)


def test_build_ansatz_enforces_resolution(cache17):
    with pytest.raises(CoreUnderResolved):
        build_ansatz(ConfigPoint([CENTRE], UNIT, 0.1), 0.1, cache17)
    with pytest.raises(EpsOutOfRange):
        build_ansatz(ConfigPoint([CENTRE], UNIT, 0.1), 1.0, cache17, require_resolved=False)


def test_far_field_discrepancy_shrinks_like_eps_squared(cache17):
    aa8 = [build_ansatz(ConfigPoint([CENTRE], UNIT, 0.1), e, cache17, require_resolved=False).diagnostics["aa8"][0]
           for e in (0.2, 0.1, 0.05)]
    slope = np.polyfit(np.log([0.2, 0.1, 0.05]), np.log(aa8), 1)[0]
    assert 1.6 <= slope <= 2.4


# --- star norm -----------------------------------------------------------------------------

def test_star_norm_of_weight_is_one(mask17):
    xi, eps = [CENTRE], 0.1
    w = star_weight(xi, eps, mask17)
    assert star_norm(w, xi, eps, mask17)[0] == pytest.approx(1.0, rel=1e-14)
    assert star_norm(np.zeros(mask17.grid.shape), xi, eps, mask17) == (0.0, 0.0)


@given(st.integers(0, 2 ** 31), st.floats(-5, 5))
def test_star_norm_is_a_norm(seed, c):
    mask = unit_mask(9)
    rng = np.random.default_rng(seed)
    xi, eps = [CENTRE], 0.2
    f, g = rng.standard_normal((2,) + mask.grid.shape)
    n = lambda v: star_norm(v, xi, eps, mask, exclude_layers=1)[0]
    assert n(c * f) == pytest.approx(abs(c) * n(f), rel=1e-12, abs=1e-300)
    assert n(f + g) <= n(f) + n(g) + 1e-12


# --- residual, linearisation, nonlinearity ----------------------------------------------

def test_residual_zero_band_report(single):
    R, norm, band = residual(single, return_band=True)
    assert np.all(R.values[~single.mask.interior] == 0.0)
    assert np.isfinite(norm) and np.isfinite(band) and norm > 0


def test_linear_weight_centre_and_far(single):
    rep = linear_weight_report(single)[0]
    # leading term 384 / mu^4, times (1 + eps^2)^-4 from rho, within O(eps)
    assert rep["centre"] / rep["centre_lead"] == pytest.approx(1.0, abs=0.1)
    W = linear_weight(single)
    far = single.mask.active & (single.r2(0) > 0.4 ** 2)
    assert np.max(W.values[far]) < 50 * single.eps ** 4


def test_apply_linearized_is_linear(single):
    rng = np.random.default_rng(3)
    m = single.mask
    a, b = (ScalarField4(m.grid, np.where(m.interior, rng.standard_normal(m.grid.shape), 0.0)) for _ in range(2))
    W = linear_weight(single)
    lhs = apply_linearized(single, ScalarField4(m.grid, 2 * a.values - 3 * b.values), W).values
    rhs = 2 * apply_linearized(single, a, W).values - 3 * apply_linearized(single, b, W).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(lhs))
    assert np.all(apply_linearized(single, np.zeros(m.grid.shape), W).values == 0.0)


def test_nonlinearity_quadratic(single):
    W = linear_weight(single)
    shape = single.mask.grid.shape
    assert np.all(nonlinearity(single, np.zeros(shape), W).values == 0.0)
    for c in (1e-1, 1e-2, 1e-3):
        N = nonlinearity(single, np.full(shape, c), W).values
        sel = W.values > 0
        assert np.allclose(N[sel] / (W.values[sel] * c * c / 2), 1.0, rtol=c)
    psi = np.random.default_rng(4).standard_normal(shape)
    assert np.all(nonlinearity(single, -psi, W).values >= 0.0)
    with pytest.raises(OverflowGuard):
        nonlinearity(single, np.full(shape, 600.0), W)


# --- kernel of the limit operator ----------------------------------------------------

def test_kernel_function_values():
    assert kernel_function(0, 0, None, np.zeros(4), mu=0.8) == -4.0
    assert kernel_function(0, 0, None, [1e6, 0, 0, 0], mu=0.8) == pytest.approx(4.0, rel=1e-9)
    z = np.random.default_rng(5).standard_normal((200, 4))
    for i in range(1, 5):
        assert np.max(np.abs(kernel_function(i, 0, None, z, mu=0.8))) <= 4 / 0.8
    with pytest.raises(BadIndex):
        kernel_function(5, 0, None, np.zeros(4), mu=1.0)


def test_kernel_annihilated_at_second_order():
    mu = 1.0
    for i in range(5):
        r = [kernel_residual(i, mu, h, kernel_samples(mu, 0.5, radius=3.0)) for h in (0.2, 0.1)]
        assert 3.2 <= r[0] / r[1] <= 4.8


# --- energy and mass ----------------------------------------------------------------------

def test_energy_examples(mask9):
    zero = np.zeros(mask9.grid.shape)
    assert energy(zero, 0.0, 1.0, mask9) == 0.0
    rho = make_eps_rho(0.3).rho
    vol = energy(zero, rho, 1.0, mask9) / -rho ** 4
    assert energy(zero, 2 * rho, 1.0, mask9) < energy(zero, rho, 1.0, mask9)
    assert vol > 0


def test_expansion_reference_example():
    ref = energy_expansion_reference(1, 0.1, 0.0)
    assert ref == pytest.approx(-128 * math.pi ** 2 + 256 * math.pi ** 2 * math.log(10), rel=1e-14)
    assert ref == pytest.approx(4554.45, abs=0.01)
    assert EXPANSION_CONSTANT == -128 * math.pi ** 2
    two = energy_expansion_reference(2, 0.1, 0.0)
    assert two == pytest.approx(2 * ref, rel=1e-14)


def test_sphere_rule_area():
    pts, w = sphere3_rule()
    assert w.sum() == pytest.approx(2 * math.pi ** 2, rel=1e-13)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)
    # second moments of the unit sphere: int x_1^2 = area / 4
    assert np.sum(w * pts[:, 0] ** 2) == pytest.approx(math.pi ** 2 / 2, rel=1e-12)


def test_hybrid_mass_single_and_pair(single, cache17):
    assert hybrid_mass(single) == pytest.approx(MASS_UNIT, rel=0.1)
    # the pair has mu about 0.34, so a smaller eps keeps its tail inside the quadrature balls
    one = build_ansatz(ConfigPoint([CENTRE], UNIT, 0.1), 0.05, cache17, require_resolved=False)
    pair = build_ansatz(ConfigPoint([[0.3, 0.5, 0.5, 0.5], [0.7, 0.5, 0.5, 0.5]], UNIT, 0.1), 0.05, cache17,
                        require_resolved=False)
    assert hybrid_mass(pair) == pytest.approx(2 * hybrid_mass(one), rel=0.05)
    assert hybrid_mass(pair) == pytest.approx(2 * MASS_UNIT, rel=0.05)
