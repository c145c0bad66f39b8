import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate as sint

from blowup4d.errors import (DegenerateDomain, HoleSeparationError, NonfiniteIntegrand, SpecOutOfGrid)
from blowup4d.grid import (Box, BoxWithHole, Grid4, ScalarField4, build_domain, integrate, interpolate, laplacian,
                           radial_integrate)

from conftest import UNIT, unit_mask


def field_of(mask, fn):
    ax = mask.grid.open_axes()
    return ScalarField4(mask.grid, np.broadcast_to(fn(*ax), mask.grid.shape).astype(float))


# --- Grid4 / build_domain ----------------------------------------------------------------

def test_node_coordinates_are_exact():
    g = Grid4((5, 6, 7, 8), 0.25, (1.0, -1.0, 0.0, 2.0))
    assert np.array_equal(g.node((1, 2, 3, 4)), np.array([1.25, -0.5, 0.75, 3.0]))


def test_grid_rejects_small_or_anisotropic():
    with pytest.raises(ValueError):
        Grid4((4, 5, 5, 5), 0.1)
    with pytest.raises(ValueError):
        Grid4((5, 5, 5, 5), (0.1, 0.1, 0.1, 0.2))


def test_unit_box_interior_count(mask17):
    assert mask17.n_interior == 15 ** 4
    assert mask17.h == pytest.approx(1 / 16)


def test_box_with_hole_interior_count():
    spec = BoxWithHole(UNIT.lo, UNIT.hi, (0.375,) * 4, (0.625,) * 4)
    mask = build_domain(spec, Grid4.for_box(UNIT.lo, UNIT.hi, 17))
    # hole-face nodes are Boundary, so the closed hole (5 nodes per axis) leaves the Interior
    assert mask.n_interior == 15 ** 4 - 5 ** 4


def test_hole_touching_outer_face_is_rejected():
    with pytest.raises(HoleSeparationError):
        BoxWithHole(UNIT.lo, UNIT.hi, (0.0, 0.4, 0.4, 0.4), (0.5, 0.6, 0.6, 0.6))
    spec = BoxWithHole(UNIT.lo, UNIT.hi, (0.125,) * 4, (0.5,) * 4)
    with pytest.raises(SpecOutOfGrid):  # 2h from the outer face < 3h
        build_domain(spec, Grid4.for_box(UNIT.lo, UNIT.hi, 17))


def test_box_exceeding_grid():
    with pytest.raises(SpecOutOfGrid):
        build_domain(Box((0,) * 4, (2,) * 4), Grid4.for_box(UNIT.lo, UNIT.hi, 9))


def test_degenerate_domain():
    g = Grid4((5, 5, 5, 5), 0.25)
    with pytest.raises(DegenerateDomain):
        build_domain(Box((0, 0, 0, 0), (0.25, 1, 1, 1)), g)


def test_interior_neighbours_are_active():
    spec = BoxWithHole(UNIT.lo, UNIT.hi, (0.375,) * 4, (0.625,) * 4)
    mask = build_domain(spec, Grid4.for_box(UNIT.lo, UNIT.hi, 17))
    inner = mask.interior
    for a in range(4):
        for s in (-1, 1):
            assert np.all(np.roll(mask.active, s, axis=a)[inner])


# --- laplacian -------------------------------------------------------------------------

def test_laplacian_of_r2_is_8(mask9):
    lap = laplacian(field_of(mask9, lambda a, b, c, d: a * a + b * b + c * c + d * d), mask9).values
    assert np.allclose(lap[mask9.interior], 8.0, atol=1e-9)
    assert np.all(lap[~mask9.interior] == 0.0)


def test_laplacian_of_constant(mask9):
    assert np.all(laplacian(field_of(mask9, lambda a, b, c, d: 3.0 + 0 * a), mask9).values == 0.0)


def sine(a, b, c, d):
    return np.sin(np.pi * a) * np.sin(np.pi * b) * np.sin(np.pi * c) * np.sin(np.pi * d)


def test_laplacian_order_two():
    errs = []
    for n in (9, 17, 33):
        m = unit_mask(n)
        f = field_of(m, sine)
        errs.append(np.max(np.abs(laplacian(f, m).values + 4 * np.pi ** 2 * f.values)[m.interior]))
    for e0, e1 in zip(errs, errs[1:]):
        assert 3.2 <= e0 / e1 <= 4.8


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_laplacian_linear(a, b, seed):
    m = unit_mask(5)
    rng = np.random.default_rng(seed)
    f, g = (ScalarField4(m.grid, rng.standard_normal(m.grid.shape)) for _ in range(2))
    lhs = laplacian(ScalarField4(m.grid, a * f.values + b * g.values), m).values
    rhs = a * laplacian(f, m).values + b * laplacian(g, m).values
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


# --- integrate -------------------------------------------------------------------------

def test_integrate_constant_and_linear(mask17):
    assert integrate(field_of(mask17, lambda a, b, c, d: 1.0 + 0 * a), mask17) == pytest.approx(1.0, abs=0.3)
    assert integrate(np.zeros(mask17.grid.shape), mask17) == 0.0
    lin = integrate(field_of(mask17, lambda a, b, c, d: a + 0 * b), mask17)
    vol = integrate(field_of(mask17, lambda a, b, c, d: 1.0 + 0 * a), mask17)
    assert lin / vol == pytest.approx(0.5, abs=1e-12)


def test_integrate_volume_converges_first_order():
    errs = [abs(integrate(np.ones(unit_mask(n).grid.shape), unit_mask(n)) - 1.0) for n in (9, 17)]
    assert errs[1] < errs[0] / 1.8


@given(st.integers(0, 2 ** 31))
def test_integrate_monotone_and_linear(seed):
    m = unit_mask(5)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(m.grid.shape)
    g = f + np.abs(rng.standard_normal(m.grid.shape))
    assert integrate(f, m) <= integrate(g, m)
    assert integrate(2 * f - g, m) == pytest.approx(2 * integrate(f, m) - integrate(g, m), abs=1e-12)


# --- radial_integrate -------------------------------------------------------------------

def test_radial_inverse_quartic():
    res = radial_integrate(lambda r: (1 + r * r) ** -4, 1e3)
    assert res.value + res.tail == pytest.approx(math.pi ** 2 / 6, rel=1e-6)
    assert 0 < res.tail < 1e-6


def test_radial_log_weight_matches_independent_quadrature():
    # independent route: adaptive quadrature of 2 pi^2 r^3 log(1+r^2)/(1+r^2)^4 on [0, inf)
    ref = 2 * math.pi ** 2 * sint.quad(lambda r: r ** 3 * math.log1p(r * r) / (1 + r * r) ** 4, 0, np.inf,
                                       epsabs=1e-14, epsrel=1e-13)[0]
    res = radial_integrate(lambda r: np.log1p(r * r) * (1 + r * r) ** -4, 1e3)
    assert res.value + res.tail == pytest.approx(ref, rel=1e-6)
    assert ref == pytest.approx(5 * math.pi ** 2 / 36, rel=1e-10)


def test_radial_zero_and_errors():
    assert radial_integrate(lambda r: 0 * r, 10.0).value == 0.0
    with pytest.raises(NonfiniteIntegrand):
        radial_integrate(lambda r: np.where(r > 5, np.inf, 1.0), 10.0)
    with pytest.raises(ValueError):
        radial_integrate(lambda r: r, 1.0, n=7)


# --- interpolation -------------------------------------------------------------------

def test_interpolation_converges():
    pts = np.random.default_rng(1).uniform(0.2, 0.8, size=(50, 4))
    want = sine(*pts.T)
    cubic, linear = [], []
    for n in (9, 17, 33):
        m = unit_mask(n)
        f = field_of(m, sine)
        cubic.append(np.max(np.abs(interpolate(f, pts) - want)))
        linear.append(np.max(np.abs(interpolate(f, pts, order=1) - want)))
    assert cubic[-1] < 1e-4 and cubic[1] / cubic[2] > 3.2
    assert linear[1] / linear[2] > 3.2
    assert all(c < l for c, l in zip(cubic, linear))


def test_interpolation_exact_at_nodes(mask9):
    f = field_of(mask9, sine)
    idx = (2, 3, 4, 5)
    assert interpolate(f, mask9.grid.node(idx)) == pytest.approx(f.values[idx], abs=1e-12)
