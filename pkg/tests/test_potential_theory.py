# tests/test_potential_theory.py
import numpy as np
import pytest
from scipy.integrate import dblquad

from calculators.potential_theory import (
    MAX_CAPACITANCE_ORDER,
    capacitance,
    double_layer_operator,
    electric_polarizability,
    impedance_capacitance,
    inverse_distance_double_integral,
    magnetic_polarizability,
    shape_properties,
    single_layer_potential_integrals,
    uniform_triangle_potential,
)

TRIANGLE = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
NORMAL = np.array([0.0, 0.0, 1.0])


# =================================
# 單三角形解析積分
# =================================

@pytest.mark.parametrize("point", [[0.3, 0.2, 0.5], [0.3, 0.2, -0.4], [1.5, 1.0, 0.2]])
def test_uniform_triangle_potential_matches_quadrature(point):
    point = np.array(point)
    expected, _ = dblquad(
        lambda y, x: 1.0 / np.sqrt((x - point[0]) ** 2 + (y - point[1]) ** 2 + point[2] ** 2),
        0.0, 1.0, 0.0, lambda x: 1.0 - x, epsabs=1e-12, epsrel=1e-10,
    )
    value = uniform_triangle_potential(TRIANGLE - point, NORMAL)
    assert value == pytest.approx(expected, rel=1e-7)


def test_uniform_triangle_potential_far_field():
    point = np.array([0.2, 0.3, 200.0])
    centroid = TRIANGLE.mean(axis=0)
    value = uniform_triangle_potential(TRIANGLE - point, NORMAL)
    assert value == pytest.approx(0.5 / np.linalg.norm(point - centroid), rel=1e-5)


def test_uniform_triangle_potential_in_plane_vertex():
    # 觀測點在頂點上: 有限值
    value = uniform_triangle_potential(TRIANGLE - TRIANGLE[0], NORMAL)
    assert np.isfinite(value)
    assert value > 0


# =================================
# 電容
# =================================

def test_single_layer_integrals_sum_to_j(unit_sphere):
    phi = single_layer_potential_integrals(unit_sphere)
    assert phi.shape == (unit_sphere.n_triangles,)
    assert np.all(phi > 0)
    J = inverse_distance_double_integral(unit_sphere)
    assert J == pytest.approx(phi.sum(), rel=1e-14)
    assert J == pytest.approx(16.0 * np.pi ** 2, rel=2e-2)


def test_sphere_capacitance_coarse(unit_sphere, oracles):
    result = capacitance(unit_sphere, 0)
    assert result.value == pytest.approx(oracles.sphere_capacitance(1.0), rel=1e-2)
    assert result.series == [result.value]


@pytest.mark.slow
def test_sphere_capacitance_subdivision_4(fine_sphere, oracles):
    assert capacitance(fine_sphere, 0).value == pytest.approx(oracles.sphere_capacitance(1.0), rel=1e-2)


@pytest.mark.slow
def test_sphere_capacitance_subdivision_5(oracles):
    from calculators.mesh_geometry import generate_sphere

    mesh = generate_sphere(1.0, 5)
    assert capacitance(mesh, 0).value == pytest.approx(oracles.sphere_capacitance(1.0), rel=3e-3)


def test_capacitance_scales_with_size(coarse_sphere):
    from calculators.mesh_geometry import transform_mesh

    small = capacitance(coarse_sphere, 1).value
    large = capacitance(transform_mesh(coarse_sphere, scale=3.0), 1).value
    assert large == pytest.approx(3.0 * small, rel=1e-10)


@pytest.mark.slow
def test_spheroid_series_converges_geometrically(prolate_spheroid, oracles):
    exact = oracles.prolate_spheroid_capacitance(2.0, 1.0)
    result = capacitance(prolate_spheroid, 2)
    errors = [abs(c - exact) for c in result.series]
    assert errors[0] > errors[1] > errors[2]
    assert errors[1] / errors[0] < 0.8
    assert errors[2] / errors[1] < 0.8
    assert not result.diverging


def test_capacitance_series_reuses_operator(unit_sphere):
    operator = double_layer_operator(unit_sphere)
    phi = single_layer_potential_integrals(unit_sphere)
    shared = capacitance(unit_sphere, 2, operator=operator, potentials=phi)
    direct = capacitance(unit_sphere, 2)
    np.testing.assert_allclose(shared.series, direct.series, rtol=1e-13)
    assert len(shared.series) == 3
    assert shared.estimated_ratio is not None


def test_capacitance_order_limits(coarse_sphere):
    with pytest.raises(ValueError):
        capacitance(coarse_sphere, -1)
    with pytest.raises(ValueError, match="exceeds"):
        capacitance(coarse_sphere, MAX_CAPACITANCE_ORDER + 1)


def test_impedance_capacitance_halves_when_zeta_area_equals_c():
    assert impedance_capacitance(3.0, 1.5, 2.0) == 1.5


def test_impedance_capacitance_large_zeta():
    C = 4.0 * np.pi
    assert abs(impedance_capacitance(C, 1e12, 4.0 * np.pi) - C) / C < 1e-11
    with pytest.raises(ValueError, match="degenerate"):
        impedance_capacitance(C, 0.0, 1.0)


# =================================
# 雙層位勢與極化張量
# =================================

def test_double_layer_row_sum(unit_sphere):
    matrix = double_layer_operator(unit_sphere)
    np.testing.assert_allclose(matrix.sum(axis=1), -1.0, atol=1e-12)
    # 凸面上其他三角形的立體角皆為正
    off_diagonal = matrix[~np.eye(unit_sphere.n_triangles, dtype=bool)]
    assert np.all(off_diagonal <= 1e-12)


def test_magnetic_polarizability_sphere_coarse(unit_sphere):
    beta = magnetic_polarizability(unit_sphere)
    np.testing.assert_allclose(np.diag(beta.entries), -1.5, rtol=5e-2)
    assert np.max(np.abs(beta.entries - np.diag(np.diag(beta.entries)))) < 0.02
    assert beta.is_symmetric
    assert beta.kind == "magnetic"


@pytest.mark.slow
def test_magnetic_polarizability_sphere_fine(fine_sphere):
    beta = magnetic_polarizability(fine_sphere)
    np.testing.assert_allclose(np.diag(beta.entries), -1.5, rtol=2e-2)
    assert np.max(np.abs(beta.entries - np.diag(np.diag(beta.entries)))) < 0.02


@pytest.mark.slow
def test_electric_polarizability_conductor_limit(fine_sphere):
    alpha = electric_polarizability(fine_sphere, 1.0)
    np.testing.assert_allclose(np.diag(alpha.entries), 3.0, rtol=2e-2)


def test_conductor_limit_is_not_singular(unit_sphere):
    alpha = electric_polarizability(unit_sphere, 1.0)
    np.testing.assert_allclose(np.diag(alpha.entries), 3.0, rtol=5e-2)
    assert np.isfinite(alpha.condition_estimate)


def test_electric_polarizability_zero_contrast(coarse_sphere):
    alpha = electric_polarizability(coarse_sphere, 0.0)
    assert np.all(alpha.entries == 0.0)


def test_gamma_minus_one_matches_magnetic(unit_sphere):
    operator = double_layer_operator(unit_sphere)
    electric = electric_polarizability(unit_sphere, -1.0, operator=operator)
    magnetic = magnetic_polarizability(unit_sphere, operator=operator)
    np.testing.assert_allclose(electric.entries, magnetic.entries, atol=1e-8)


def test_intermediate_contrast_sphere(unit_sphere, oracles):
    alpha = electric_polarizability(unit_sphere, 0.5)
    np.testing.assert_allclose(np.diag(alpha.entries), oracles.sphere_polarizability(0.5), rtol=5e-2)


def test_complex_contrast_gives_complex_tensor(coarse_sphere):
    alpha = electric_polarizability(coarse_sphere, 0.5 + 0.2j)
    assert np.iscomplexobj(alpha.entries)
    assert np.all(np.diag(alpha.entries).imag > 0)


def test_contrast_outside_unit_disc(coarse_sphere):
    with pytest.raises(ValueError, match="must not exceed 1"):
        electric_polarizability(coarse_sphere, 1.5)


def test_ellipsoid_tensor_orders_axes():
    from calculators.mesh_geometry import generate_ellipsoid

    mesh = generate_ellipsoid((2.0, 1.0, 1.0), 2)
    beta = np.diag(magnetic_polarizability(mesh).entries)
    # 沿長軸的磁極化較弱
    assert abs(beta[0]) < abs(beta[1])
    assert beta[1] == pytest.approx(beta[2], rel=2e-2)


def test_shape_properties_bundle(coarse_sphere):
    bundle = shape_properties(coarse_sphere, order=1, magnetic=True, gammas=[0.5])
    data = bundle.to_dict()
    assert set(data) == {"geometry", "capacitance", "magnetic_polarizability", "electric_polarizability"}
    assert len(data["capacitance"]["series"]) == 2
    assert data["electric_polarizability"][0]["gamma"] == 0.5


# =================================
# 不變性與網格收斂
# =================================

def _tilted_ellipsoid():
    from calculators.mesh_geometry import generate_ellipsoid

    return generate_ellipsoid((1.5, 1.0, 0.7), 2)


def test_tensors_rotate_covariantly():
    from scipy.spatial.transform import Rotation

    from calculators.mesh_geometry import transform_mesh

    mesh = _tilted_ellipsoid()
    R = Rotation.from_euler("zyx", [0.4, -0.7, 1.1]).as_matrix()
    rotated = transform_mesh(mesh, rotation=R)
    for compute in (magnetic_polarizability, lambda m: electric_polarizability(m, 0.5)):
        expected = R @ compute(mesh).entries @ R.T
        actual = compute(rotated).entries
        np.testing.assert_allclose(actual, expected, rtol=0, atol=1e-6 * np.max(np.abs(expected)))


def test_tensors_are_scale_invariant():
    from calculators.mesh_geometry import transform_mesh

    mesh = _tilted_ellipsoid()
    small = magnetic_polarizability(mesh).entries
    large = magnetic_polarizability(transform_mesh(mesh, scale=4.0)).entries
    np.testing.assert_allclose(large, small, rtol=0, atol=1e-10 * np.max(np.abs(small)))


def test_j_is_translation_invariant_and_scales_cubically(coarse_sphere):
    from calculators.mesh_geometry import transform_mesh

    J = inverse_distance_double_integral(coarse_sphere)
    moved = transform_mesh(coarse_sphere, translation=[10.0, -3.0, 2.0])
    assert inverse_distance_double_integral(moved) == pytest.approx(J, rel=1e-10)
    scaled = transform_mesh(coarse_sphere, scale=2.5)
    assert inverse_distance_double_integral(scaled) == pytest.approx(2.5 ** 3 * J, rel=1e-10)


@pytest.mark.slow
def test_sphere_errors_shrink_with_refinement(oracles):
    from calculators.mesh_geometry import generate_sphere

    meshes = [generate_sphere(1.0, n) for n in (2, 3, 4)]
    capacitance_errors = [abs(capacitance(m, 0).value - oracles.sphere_capacitance(1.0)) for m in meshes]
    beta_errors = [np.max(np.abs(magnetic_polarizability(m).entries + 1.5 * np.eye(3))) for m in meshes]
    assert capacitance_errors[0] > capacitance_errors[1] > capacitance_errors[2]
    assert beta_errors[0] > beta_errors[1] > beta_errors[2]
