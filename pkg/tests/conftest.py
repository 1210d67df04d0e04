# tests/conftest.py
from types import SimpleNamespace

import numpy as np
import pytest

from calculators.acoustic_solver import BoundaryCondition, Scatterer
from calculators.mesh_geometry import generate_ellipsoid, generate_sphere, transform_mesh

# =================================
# 解析解
# =================================

def sphere_capacitance(radius: float) -> float:
    """C = 4π r"""
    return 4.0 * np.pi * radius


def prolate_spheroid_capacitance(a: float, b: float) -> float:
    """長軸 a、短軸 b 的旋轉橢球: C = 4π · 2e / ln((a + e)/(a - e))，e = √(a² - b²)"""
    e = np.sqrt(a ** 2 - b ** 2)
    return 4.0 * np.pi * 2.0 * e / np.log((a + e) / (a - e))


def sphere_polarizability(gamma: float) -> float:
    """球體 α(γ) = 6γ / (3 - γ)，γ = 1 時為 3、γ = -1 時為 -3/2"""
    return 6.0 * gamma / (3.0 - gamma)

# =================================
# Fixtures
# =================================

@pytest.fixture(scope="session")
def oracles():
    return SimpleNamespace(sphere_capacitance=sphere_capacitance,
                           prolate_spheroid_capacitance=prolate_spheroid_capacitance,
                           sphere_polarizability=sphere_polarizability)


@pytest.fixture(scope="session")
def coarse_sphere():
    return generate_sphere(1.0, 1)


@pytest.fixture(scope="session")
def unit_sphere():
    return generate_sphere(1.0, 3)


@pytest.fixture(scope="session")
def fine_sphere():
    return generate_sphere(1.0, 4)


@pytest.fixture(scope="session")
def prolate_spheroid():
    return generate_ellipsoid((2.0, 1.0, 1.0), 4)


@pytest.fixture
def make_scatterer(coarse_sphere):
    """以粗網格決定直徑與參考點，電容 / β 直接給定"""
    def factory(center, radius=0.25, condition=BoundaryCondition.DIRICHLET, **kwargs):
        mesh = transform_mesh(coarse_sphere, translation=center, scale=radius)
        kwargs.setdefault("reference_point", center)
        return Scatterer(mesh=mesh, condition=condition, **kwargs)
    return factory


def _sphere_scenario(positions, radius=1.0, subdivisions=2, k=0.01, condition="dirichlet",
                    outputs=("charges",), order=0, **body_extra):
    """建立聲波情境 dict"""
    return {
        "units": "m",
        "medium": {"k": k},
        "incident": {"kind": "acoustic-plane", "direction": [0.0, 0.0, 1.0]},
        "bodies": [
            {"shape": {"kind": "sphere", "radius": radius, "subdivisions": subdivisions},
             "position": list(position), "condition": condition, **body_extra}
            for position in positions
        ],
        "capacitance": {"order": order},
        "outputs": list(outputs),
    }


@pytest.fixture
def scenario_dict():
    return _sphere_scenario
