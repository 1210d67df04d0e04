# calculators/em_scattering.py
"""
小物體電磁散射 (單次散射 / 入射場近似)

每個物體以 6x6 散射矩陣作用在 U = (E, H) 上，多體振幅為相位加權總和。
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .mesh_geometry import TriangleMesh, summarize
from .potential_theory import (
    SYMMETRY_TOLERANCE,
    PolarizabilityTensor,
    double_layer_operator,
    electric_polarizability,
)

logger = logging.getLogger(__name__)

# 振幅公式中額外的 1/4π 是否再除一次；1.0 表示只保留散射矩陣本身的 k²V/4π
EXTRA_AMPLITUDE_FACTOR = 1.0

Scalar = Union[float, complex]


# =================================
# Domain Types
# =================================

@dataclass(frozen=True)
class EMField6:
    """六分量場 U = (E, H)"""
    E: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        E = np.asarray(self.E, dtype=complex).reshape(3)
        H = np.asarray(self.H, dtype=complex).reshape(3)
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(H))):
            raise ValueError("field entries must be finite")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "H", H)

    @classmethod
    def zeros(cls) -> "EMField6":
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.E, self.H])

    def __add__(self, other: "EMField6") -> "EMField6":
        return EMField6(self.E + other.E, self.H + other.H)

    def scaled(self, factor: Scalar) -> "EMField6":
        return EMField6(factor * self.E, factor * self.H)

    def to_dict(self) -> Dict:
        return {
            "E": [{"re": float(x.real), "im": float(x.imag)} for x in self.E],
            "H": [{"re": float(x.real), "im": float(x.imag)} for x in self.H],
        }


@dataclass(frozen=True)
class EMBody:
    volume: float
    alpha: np.ndarray
    beta_tilde: np.ndarray
    position: np.ndarray
    eps: Scalar = 1.0
    mu: Scalar = 1.0
    eps0: Scalar = 1.0
    mu0: Scalar = 1.0

    def __post_init__(self):
        alpha = _tensor_entries(self.alpha)
        beta_tilde = _tensor_entries(self.beta_tilde)
        for name, tensor in (("alpha", alpha), ("beta_tilde", beta_tilde)):
            scale = np.max(np.abs(tensor))
            if scale > 0 and np.max(np.abs(tensor - tensor.T)) > SYMMETRY_TOLERANCE * scale:
                raise ValueError(f"{name} tensor is not symmetric")
        if self.eps + self.eps0 == 0 or self.mu + self.mu0 == 0:
            raise ValueError("material contrast has a zero denominator")
        if self.volume <= 0:
            raise ValueError("體積必須大於 0")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta_tilde", beta_tilde)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))


def _tensor_entries(tensor) -> np.ndarray:
    if isinstance(tensor, PolarizabilityTensor):
        tensor = tensor.entries
    tensor = np.asarray(tensor)
    if tensor.shape != (3, 3):
        raise ValueError("polarizability tensor must be 3x3")
    return tensor


def _unit(direction) -> np.ndarray:
    direction = np.asarray(direction, dtype=float).reshape(3)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
        raise ValueError("scattering direction must be a unit vector")
    return direction


# =================================
# Operations
# =================================

def gamma_contrast(value: Scalar, background: Scalar) -> Scalar:
    """γ = (ε - ε₀)/(ε + ε₀)，ε → ∞ 時為 1"""
    if np.isinf(value):
        return 1.0
    denominator = value + background
    if denominator == 0:
        raise ValueError("contrast denominator eps + eps0 is zero")
    gamma = (value - background) / denominator
    if isinstance(gamma, complex) and gamma.imag == 0:
        return float(gamma.real)
    return gamma


def beta_tilde(mesh: TriangleMesh, mu: Scalar, mu0: Scalar, operator: Optional[np.ndarray] = None,
               polarizability: Optional[Callable[[Scalar], PolarizabilityTensor]] = None) -> PolarizabilityTensor:
    """
    β̃ = α(γ̃) + β，β = α(-1)，γ̃ = (μ - μ₀)/(μ + μ₀)

    polarizability(γ) 可由呼叫端提供 (例如帶快取的版本)，省略時直接求解。
    """
    contrast = gamma_contrast(mu, mu0)
    if polarizability is None:
        matrix = double_layer_operator(mesh) if operator is None else operator

        def polarizability(gamma):
            return electric_polarizability(mesh, gamma, operator=matrix)

    combined = polarizability(contrast) + polarizability(-1.0)
    return PolarizabilityTensor(entries=combined.entries, kind="magnetic-effective", gamma=contrast,
                                asymmetry=combined.asymmetry, condition_estimate=combined.condition_estimate)


def apply_scattering_matrix(body: EMBody, theta_prime, incident: EMField6, k: float) -> EMField6:
    """
    散射矩陣作用 S_m U，前置係數 k²V/4π

    E = αE - θ'(θ'·αE) - (μ₀^{3/2}/ε₀^{1/2}) θ' × β̃H
    H = (ε₀/μ₀)^{1/2} θ' × αE + μ₀(β̃H - θ'(θ'·β̃H))
    """
    theta_prime = _unit(theta_prime)
    prefactor = k ** 2 * body.volume / (4.0 * np.pi)
    polarized_e = body.alpha @ incident.E
    polarized_h = body.beta_tilde @ incident.H
    eps0, mu0 = complex(body.eps0), complex(body.mu0)

    e_out = polarized_e - theta_prime * np.dot(theta_prime, polarized_e) \
        - mu0 ** 1.5 / np.sqrt(eps0) * np.cross(theta_prime, polarized_h)
    h_out = np.sqrt(eps0 / mu0) * np.cross(theta_prime, polarized_e) \
        + mu0 * (polarized_h - theta_prime * np.dot(theta_prime, polarized_h))
    return EMField6(prefactor * e_out, prefactor * h_out)


def em_amplitude(bodies: Sequence[EMBody], incident_at_bodies: Sequence[EMField6],
                 theta_prime, k: float) -> EMField6:
    """A(θ', θ) = Σ_m S_m U_m e^{-ikθ'·x_m} (單次散射近似)"""
    if len(bodies) != len(incident_at_bodies):
        raise ValueError(f"{len(bodies)} bodies but {len(incident_at_bodies)} incident fields")
    theta_prime = _unit(theta_prime)
    total = EMField6.zeros()
    for body, incident in zip(bodies, incident_at_bodies):
        phase = np.exp(-1j * k * np.dot(theta_prime, body.position))
        total = total + apply_scattering_matrix(body, theta_prime, incident, k).scaled(phase)
    return total.scaled(EXTRA_AMPLITUDE_FACTOR)


def plane_wave_fields(direction, polarization, positions, k: float,
                      eps0: Scalar = 1.0, mu0: Scalar = 1.0) -> List[EMField6]:
    """
    入射平面波在各物體位置的 (E, H)

    H₀ = √(ε₀/μ₀) θ × E₀，需 θ·E₀ = 0
    """
    theta = np.asarray(direction, dtype=float).reshape(3)
    theta = theta / np.linalg.norm(theta)
    e0 = np.asarray(polarization, dtype=complex).reshape(3)
    if np.linalg.norm(e0) == 0:
        raise ValueError("polarization must be non-zero")
    if abs(np.dot(theta, e0)) > 1e-12 * np.linalg.norm(e0):
        raise ValueError("polarization must be perpendicular to the incident direction")
    h0 = np.sqrt(complex(eps0) / complex(mu0)) * np.cross(theta, e0)
    fields = []
    for position in np.asarray(positions, dtype=float).reshape(-1, 3):
        phase = np.exp(1j * k * np.dot(theta, position))
        fields.append(EMField6(phase * e0, phase * h0))
    return fields


def em_body_from_mesh(mesh: TriangleMesh, eps: Scalar, mu: Scalar, eps0: Scalar = 1.0, mu0: Scalar = 1.0,
                      position=None, operator: Optional[np.ndarray] = None) -> EMBody:
    """由網格計算 α(γ) 與 β̃，位置預設為體積形心"""
    summary = summarize(mesh)
    matrix = double_layer_operator(mesh) if operator is None else operator
    alpha = electric_polarizability(mesh, gamma_contrast(eps, eps0), operator=matrix)
    effective = beta_tilde(mesh, mu, mu0, operator=matrix)
    logger.debug("EM body: alpha diag %s, beta~ diag %s", np.diag(alpha.entries), np.diag(effective.entries))
    return EMBody(volume=summary.volume, alpha=alpha.entries, beta_tilde=effective.entries,
                  position=summary.centroid if position is None else position,
                  eps=eps, mu=mu, eps0=eps0, mu0=mu0)
