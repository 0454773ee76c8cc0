import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import iv, jv

from plateopt import fem
from plateopt.mesh import element_measures, mesh_from_triangles
from plateopt.oracle import (
    MAX_ASSIGNMENTS, OracleRefused, analytic_homogeneous, bessel_j0_root, clamped_disk_root,
    count_feasible,
    exhaustive_extremum, feasible_assignments,
)
from plateopt.rearrange import RearrangementClass

SQRT2 = math.sqrt(2.0)


def half_class(mesh, m=2):
    a = element_measures(mesh).areas
    return RearrangementClass.from_fractions(tuple(range(1, m + 1)), [1] * m, a)


def two_triangle_square():
    # one interior vertex is needed for any active DOF, so use a 4-triangle fan
    return mesh_from_triangles([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]],
                               [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)])


def test_two_elements_two_assignments():
    areas = np.array([0.5, 0.5])
    rc = RearrangementClass((1, 2), (0.5, 0.5))
    assert len(feasible_assignments(areas, rc)) == 2


def test_counts_are_multinomial(square8, hexagon10):
    assert len(feasible_assignments(element_measures(square8).areas, half_class(square8))) == 70
    assert len(feasible_assignments(element_measures(hexagon10).areas, half_class(hexagon10))) == 252
    a = np.ones(9)
    rc = RearrangementClass((1, 2, 3), (3, 3, 3))
    assert len(feasible_assignments(a, rc)) == math.factorial(9) // math.factorial(3) ** 3


@given(areas=st.lists(st.floats(0.5, 1.5), min_size=2, max_size=9), frac=st.floats(0.2, 0.8))
def test_count_matches_enumeration(areas, frac):
    areas = np.array(areas)
    rc = RearrangementClass.from_fractions((1, 2), (frac, 1 - frac), areas)
    assert count_feasible(areas, rc) == len(feasible_assignments(areas, rc))


def test_guard_refuses_large_instances():
    a = np.ones(26)
    rc = RearrangementClass((1, 2), (13, 13))  # C(26, 13) = 10 400 600
    with pytest.raises(OracleRefused) as err:
        feasible_assignments(a, rc)
    assert err.value.count == math.comb(26, 13)
    assert str(MAX_ASSIGNMENTS) in str(err.value)


@pytest.mark.parametrize("bc", fem.BC_KINDS)
def test_max_at_least_min(bc, square8):
    rc = half_class(square8)
    lo = exhaustive_extremum(square8, rc, bc, "minimize")
    hi = exhaustive_extremum(square8, rc, bc, "maximize")
    assert lo.count == hi.count == 70
    assert hi.optimum_value > lo.optimum_value
    assert lo.optimum_value == pytest.approx(lo.values.min())
    assert lo.density.in_class()


def test_all_ties_give_equal_extrema():
    m = two_triangle_square()
    # with one interior vertex the eigenfunction is the same hat for every layout,
    # and every quarter holds the same mass, so symmetric layouts tie
    rc = half_class(m)
    lo = exhaustive_extremum(m, rc, fem.HINGED, "minimize")
    hi = exhaustive_extremum(m, rc, fem.HINGED, "maximize")
    assert lo.count == 6
    assert hi.optimum_value == pytest.approx(lo.optimum_value, rel=1e-12)


@pytest.mark.parametrize("bc", fem.BC_KINDS)
def test_permutation_invariance(bc, hexagon10):
    rc = half_class(hexagon10)
    perm = np.random.default_rng(0).permutation(hexagon10.n_triangles)
    shuffled = mesh_from_triangles(hexagon10.vertices, hexagon10.triangles[perm])
    for direction in ("minimize", "maximize"):
        a = exhaustive_extremum(hexagon10, rc, bc, direction)
        b = exhaustive_extremum(shuffled, rc, bc, direction)
        assert a.optimum_value == pytest.approx(b.optimum_value, rel=1e-10)
        np.testing.assert_allclose(np.sort(a.values), np.sort(b.values), rtol=1e-10)


def test_no_feasible_layout(square8):
    # element areas are 1/8, so 1/16 cannot be met within a 0.01 tolerance
    rc = RearrangementClass((1, 2), (0.0625, 0.9375))
    with pytest.raises(ValueError, match="no feasible"):
        exhaustive_extremum(square8, rc, fem.HINGED, "minimize", area_tol=0.01)


def test_bessel_root():
    j = bessel_j0_root()
    assert j == pytest.approx(2.404825557695773, abs=1e-12)
    assert abs(jv(0, j)) < 1e-14


def test_clamped_root_solves_characteristic_equation():
    k = clamped_disk_root()
    assert k == pytest.approx(3.19622, abs=1e-5)
    assert abs(jv(0, k) * iv(1, k) + iv(0, k) * jv(1, k)) < 1e-12


def test_hinged_disk_value():
    assert analytic_homogeneous(("disk", SQRT2), fem.HINGED) == pytest.approx(8.3613, abs=5e-5)


def test_hinged_square_value():
    assert analytic_homogeneous(("rectangle", 4, 4), fem.HINGED) == pytest.approx(math.pi**4 / 64)
    assert math.pi**4 / 64 == pytest.approx(1.5221, abs=1e-4)


def test_clamped_unit_disk_value():
    assert analytic_homogeneous(("disk", 1.0), fem.CLAMPED) == pytest.approx(104.363, abs=5e-4)


@pytest.mark.parametrize("domain,bc", [(("disk", 1.3), fem.HINGED), (("disk", 0.7), fem.CLAMPED),
                                       (("rectangle", 2, 3), fem.HINGED)])
def test_density_doubling_halves(domain, bc):
    assert analytic_homogeneous(domain, bc, c=2.0) == analytic_homogeneous(domain, bc) / 2


def test_unsupported_domains():
    with pytest.raises(ValueError):
        analytic_homogeneous(("rectangle", 1, 1), fem.CLAMPED)
    with pytest.raises(ValueError):
        analytic_homogeneous(("ellipse", 2, 1), fem.HINGED)


def test_double_hexagon_shape(hexagon10):
    a = element_measures(hexagon10).areas
    np.testing.assert_allclose(a, math.sqrt(3) / 4)
    assert hexagon10.n_vertices - len(hexagon10.boundary_vertices) == 2
