import numpy as np
import pytest
from hypothesis import given, strategies as st

from blowup4d.errors import NoConvergence
from blowup4d.grid import BoxWithHole, Grid4, ScalarField4, build_domain, laplacian
from blowup4d.poisson import LinearSolveParams, solve_dirichlet

from conftest import UNIT, unit_mask


def sine_field(mask):
    a, b, c, d = mask.grid.open_axes()
    return np.sin(np.pi * a) * np.sin(np.pi * b) * np.sin(np.pi * c) * np.sin(np.pi * d)


def holed_mask():
    spec = BoxWithHole(UNIT.lo, UNIT.hi, (0.375,) * 4, (0.625,) * 4)
    return build_domain(spec, Grid4.for_box(UNIT.lo, UNIT.hi, 17))


def test_params_validation():
    with pytest.raises(ValueError):
        LinearSolveParams(tol=0.0)
    with pytest.raises(ValueError):
        LinearSolveParams(tol=0.1)
    with pytest.raises(ValueError):
        LinearSolveParams(max_iter=0)
    assert LinearSolveParams().iteration_cap(15 ** 4) == 20 * 15 ** 2


def test_homogeneous_problem_is_zero(mask9):
    u = solve_dirichlet(None, None, mask9)
    assert np.all(u.values == 0.0)


@pytest.mark.parametrize("precond", ["fast", "jacobi"])
def test_manufactured_sine(mask17, precond):
    u = sine_field(mask17)
    sol = solve_dirichlet(-4 * np.pi ** 2 * u, None, mask17, LinearSolveParams(tol=1e-10, preconditioner=precond))
    assert np.max(np.abs(sol.values - u)) < 5e-3


@pytest.mark.parametrize("mask_fn", [lambda: unit_mask(9), holed_mask])
def test_linear_boundary_data_reproduced(mask_fn):
    mask = mask_fn()
    x1 = np.broadcast_to(mask.grid.open_axes()[0], mask.grid.shape)
    sol = solve_dirichlet(None, x1, mask, LinearSolveParams(tol=1e-12))
    assert np.max(np.abs(sol.values - x1)[mask.active]) < 1e-9
    assert np.array_equal(sol.values[mask.boundary], x1[mask.boundary])


def test_residual_meets_tolerance():
    mask = holed_mask()
    rng = np.random.default_rng(3)
    rhs = rng.standard_normal(mask.grid.shape)
    params = LinearSolveParams(tol=1e-8)
    sol = solve_dirichlet(rhs, None, mask, params)
    r = (laplacian(sol, mask).values - rhs)[mask.interior]
    assert np.linalg.norm(r) <= params.tol * np.linalg.norm(rhs[mask.interior]) * 1.01


def test_iteration_cap_raises(mask17):
    rhs = np.random.default_rng(0).standard_normal(mask17.grid.shape)
    with pytest.raises(NoConvergence) as info:
        solve_dirichlet(rhs, None, mask17, LinearSolveParams(tol=1e-12, max_iter=1, preconditioner="jacobi"))
    assert info.value.iterations >= 1


@given(st.integers(0, 2 ** 31))
def test_discrete_maximum_principle(seed):
    mask = unit_mask(9)
    rng = np.random.default_rng(seed)
    bdata = rng.uniform(-1, 2, size=mask.grid.shape)
    sol = solve_dirichlet(None, bdata, mask, LinearSolveParams(tol=1e-10)).values
    lo, hi = bdata[mask.boundary].min(), bdata[mask.boundary].max()
    assert sol[mask.interior].min() >= lo - 1e-8
    assert sol[mask.interior].max() <= hi + 1e-8


def test_deterministic(mask9):
    rhs = np.random.default_rng(0).standard_normal(mask9.grid.shape)
    a = solve_dirichlet(rhs, None, mask9).values
    b = solve_dirichlet(ScalarField4(mask9.grid, rhs), None, mask9).values
    assert np.array_equal(a, b)
