# tests/test_em_scattering.py
import numpy as np
import pytest

from calculators.em_scattering import (
    EXTRA_AMPLITUDE_FACTOR,
    EMBody,
    EMField6,
    apply_scattering_matrix,
    beta_tilde,
    em_amplitude,
    em_body_from_mesh,
    gamma_contrast,
    plane_wave_fields,
)
from calculators.potential_theory import double_layer_operator, magnetic_polarizability

Z = np.array([0.0, 0.0, 1.0])


def _sphere_body(position=(0.0, 0.0, 0.0), volume=1.0):
    return EMBody(volume=volume, alpha=3.0 * np.eye(3), beta_tilde=-1.5 * np.eye(3), position=position)


def _random_symmetric(rng):
    raw = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    return raw + raw.T


def test_forward_scattering_sphere():
    body = _sphere_body()
    incident = EMField6([1.0, 0.0, 0.0], np.cross(Z, [1.0, 0.0, 0.0]))
    k = 0.3
    out = apply_scattering_matrix(body, Z, incident, k)
    prefactor = k ** 2 * body.volume / (4.0 * np.pi)
    np.testing.assert_allclose(out.E, [1.5 * prefactor, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(out.H, [0.0, 1.5 * prefactor, 0.0], atol=1e-15)


def test_backscattering_sphere():
    body = _sphere_body()
    incident = EMField6([1.0, 0.0, 0.0], np.cross(Z, [1.0, 0.0, 0.0]))
    k = 0.3
    out = apply_scattering_matrix(body, -Z, incident, k)
    prefactor = k ** 2 * body.volume / (4.0 * np.pi)
    np.testing.assert_allclose(out.E, [4.5 * prefactor, 0.0, 0.0], atol=1e-15)


def test_amplitude_is_transverse():
    rng = np.random.default_rng(7)
    for _ in range(20):
        body = EMBody(volume=rng.uniform(0.1, 2.0), alpha=_random_symmetric(rng),
                      beta_tilde=_random_symmetric(rng), position=rng.normal(size=3))
        incident = EMField6(rng.normal(size=3) + 1j * rng.normal(size=3),
                            rng.normal(size=3) + 1j * rng.normal(size=3))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        out = em_amplitude([body], [incident], direction, k=1.3)
        assert abs(np.dot(direction, out.E)) <= 1e-14 * max(1.0, np.linalg.norm(out.E))


def test_doubling_k_quadruples_amplitude():
    rng = np.random.default_rng(3)
    body = EMBody(volume=0.7, alpha=_random_symmetric(rng), beta_tilde=_random_symmetric(rng),
                  position=[0.0, 0.0, 0.0])
    incident = EMField6(rng.normal(size=3), rng.normal(size=3))
    direction = np.array([0.0, 0.6, 0.8])
    single = em_amplitude([body], [incident], direction, k=0.5).as_vector()
    double = em_amplitude([body], [incident], direction, k=1.0).as_vector()
    np.testing.assert_allclose(double, 4.0 * single, rtol=1e-12)


def test_amplitude_sums_bodies_with_phase():
    bodies = [_sphere_body([0.0, 0.0, 0.0]), _sphere_body([1.0, 0.0, 0.0])]
    incident = EMField6([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    direction = np.array([1.0, 0.0, 0.0])
    k = 2.0
    total = em_amplitude(bodies, [incident, incident], direction, k)
    single = apply_scattering_matrix(bodies[0], direction, incident, k)
    expected = single.scaled((1.0 + np.exp(-1j * k)) * EXTRA_AMPLITUDE_FACTOR)
    np.testing.assert_allclose(total.as_vector(), expected.as_vector(), rtol=1e-14, atol=1e-16)


def test_field_count_must_match():
    with pytest.raises(ValueError):
        em_amplitude([_sphere_body()], [], Z, 1.0)


def test_body_rejects_asymmetric_tensor():
    alpha = np.eye(3)
    alpha[0, 1] = 0.5
    with pytest.raises(ValueError, match="not symmetric"):
        EMBody(volume=1.0, alpha=alpha, beta_tilde=np.eye(3), position=[0.0, 0.0, 0.0])


def test_body_rejects_zero_denominator():
    with pytest.raises(ValueError, match="zero denominator"):
        EMBody(volume=1.0, alpha=np.eye(3), beta_tilde=np.eye(3), position=[0.0, 0.0, 0.0], eps=-1.0)


def test_gamma_contrast():
    assert gamma_contrast(3.0, 1.0) == 0.5
    assert gamma_contrast(np.inf, 1.0) == 1.0
    assert gamma_contrast(1.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        gamma_contrast(-1.0, 1.0)


def test_plane_wave_fields():
    fields = plane_wave_fields(Z, [1.0, 0.0, 0.0], [[0.0, 0.0, 0.0], [0.0, 0.0, 0.5]], k=np.pi)
    np.testing.assert_allclose(fields[0].H, [0.0, 1.0, 0.0])
    np.testing.assert_allclose(fields[1].E, [1j, 0.0, 0.0], atol=1e-15)
    with pytest.raises(ValueError, match="perpendicular"):
        plane_wave_fields(Z, [0.0, 1.0, 1.0], [[0.0, 0.0, 0.0]], k=1.0)


def test_beta_tilde_without_magnetic_contrast(coarse_sphere):
    operator = double_layer_operator(coarse_sphere)
    effective = beta_tilde(coarse_sphere, 1.0, 1.0, operator=operator)
    np.testing.assert_allclose(effective.entries, magnetic_polarizability(coarse_sphere, operator=operator).entries,
                               atol=1e-12)


def test_body_from_sphere_mesh(unit_sphere):
    body = em_body_from_mesh(unit_sphere, eps=np.inf, mu=1.0)
    np.testing.assert_allclose(np.diag(body.alpha), 3.0, rtol=5e-2)
    np.testing.assert_allclose(np.diag(body.beta_tilde), -1.5, rtol=5e-2)
    np.testing.assert_allclose(body.position, 0.0, atol=1e-12)


def test_beta_tilde_doubles_beta_when_mu_vanishes(coarse_sphere):
    operator = double_layer_operator(coarse_sphere)
    beta = magnetic_polarizability(coarse_sphere, operator=operator).entries
    effective = beta_tilde(coarse_sphere, 0.0, 1.0, operator=operator)
    assert effective.gamma == -1.0
    np.testing.assert_allclose(effective.entries, 2.0 * beta, atol=1e-12)


def test_beta_tilde_sphere(unit_sphere):
    effective = beta_tilde(unit_sphere, 1.0, 1.0)
    np.testing.assert_allclose(np.diag(effective.entries), -1.5, rtol=5e-2)
    assert effective.kind == "magnetic-effective"


def test_beta_tilde_uses_supplied_polarizability(coarse_sphere):
    from calculators.potential_theory import electric_polarizability

    operator = double_layer_operator(coarse_sphere)
    calls = []

    def provider(gamma):
        calls.append(gamma)
        return electric_polarizability(coarse_sphere, gamma, operator=operator)

    effective = beta_tilde(coarse_sphere, 3.0, 1.0, polarizability=provider)
    assert calls == [gamma_contrast(3.0, 1.0), -1.0]
    expected = beta_tilde(coarse_sphere, 3.0, 1.0, operator=operator)
    np.testing.assert_allclose(effective.entries, expected.entries, atol=1e-12)
