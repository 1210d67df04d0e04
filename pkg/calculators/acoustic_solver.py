# calculators/acoustic_solver.py
"""
小物體多體聲波散射: 以電容 / 極化張量組成線性代數系統取代積分方程

Dirichlet / 阻抗: (I + B)Q = -c
Neumann: 每個物體未知量 (Δu(x_m), ∇u(x_m))，共 4M 個
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, solve
from scipy.spatial import cKDTree

from .errors import ConvergenceError, ScatteringError, SolverError
from .mesh_geometry import TriangleMesh, summarize
from .potential_theory import (
    capacitance as compute_capacitance,
    impedance_capacitance,
    magnetic_polarizability,
)

logger = logging.getLogger(__name__)

# 小物體區間的建議門檻 (ka ≪ 1, a ≪ d, 電磁另需 d ≫ λ)
KA_LIMIT = 0.2
A_OVER_D_LIMIT = 0.2
EM_KD_LIMIT = 2.0 * np.pi
# 場點距離物體小於 NEAR_FIELD_FACTOR * 直徑時提出警告
NEAR_FIELD_FACTOR = 5.0
RESIDUAL_LIMIT = 1e-10
DEFAULT_TOLERANCE = 1e-12
DEFAULT_MAX_ITER = 200


class BoundaryCondition(str, Enum):
    DIRICHLET = "dirichlet"
    IMPEDANCE = "impedance"
    NEUMANN = "neumann"


class SolveMethod(str, Enum):
    DIRECT = "direct"
    FIXED_POINT = "fixed-point"


# =================================
# Domain Types
# =================================

@dataclass(frozen=True)
class Advisory:
    """寫入結果檔的建議性警告"""
    code: str
    message: str
    module: str
    body_index: Optional[int] = None

    def to_dict(self) -> Dict:
        return {"code": self.code, "message": self.message, "module": self.module, "body_index": self.body_index}


@dataclass(frozen=True, eq=False)
class Scatterer:
    """
    單一散射體

    capacitance / volume / area / beta 可直接給定，或由 Scatterer.from_mesh 以網格計算。
    reference_point 省略時取體積形心。
    """
    mesh: TriangleMesh
    condition: BoundaryCondition = BoundaryCondition.DIRICHLET
    zeta: Optional[complex] = None
    capacitance: Optional[float] = None
    volume: Optional[float] = None
    area: Optional[float] = None
    beta: Optional[np.ndarray] = None
    reference_point: Optional[np.ndarray] = None
    diameter: float = field(init=False)

    def __post_init__(self):
        condition = BoundaryCondition(self.condition)
        object.__setattr__(self, "condition", condition)
        summary = summarize(self.mesh)
        if self.reference_point is None:
            object.__setattr__(self, "reference_point", summary.centroid)
        else:
            object.__setattr__(self, "reference_point", np.asarray(self.reference_point, dtype=float).reshape(3))
        if self.volume is None:
            object.__setattr__(self, "volume", summary.volume)
        if self.area is None:
            object.__setattr__(self, "area", summary.area)
        object.__setattr__(self, "diameter", summary.diameter)

        if condition == BoundaryCondition.IMPEDANCE and self.zeta is None:
            raise ValueError("impedance condition requires zeta")
        if condition != BoundaryCondition.IMPEDANCE and self.zeta is not None:
            raise ValueError(f"zeta given for a {condition.value} body")
        if self.capacitance is not None and self.capacitance <= 0:
            raise ValueError("電容必須大於 0")
        if self.volume <= 0:
            raise ValueError("體積必須大於 0")
        if self.beta is not None:
            beta = np.asarray(self.beta)
            if beta.shape != (3, 3):
                raise ValueError("beta must be a 3x3 tensor")
            object.__setattr__(self, "beta", beta)

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh, condition=BoundaryCondition.DIRICHLET, zeta: Optional[complex] = None,
                  order: int = 2, reference_point=None) -> "Scatterer":
        """依邊界條件計算需要的形狀性質 (電容或磁極化張量)"""
        condition = BoundaryCondition(condition)
        if condition == BoundaryCondition.NEUMANN:
            beta = magnetic_polarizability(mesh).entries
            return cls(mesh=mesh, condition=condition, beta=beta, reference_point=reference_point)
        value = compute_capacitance(mesh, order).value
        return cls(mesh=mesh, condition=condition, zeta=zeta, capacitance=value, reference_point=reference_point)

    @property
    def effective_capacitance(self) -> complex:
        """Dirichlet 取 C_m，阻抗取 C_mζ"""
        if self.capacitance is None:
            raise ScatteringError("missing capacitance", module="acoustic_solver")
        if self.condition == BoundaryCondition.IMPEDANCE:
            return impedance_capacitance(self.capacitance, self.zeta, self.area)
        return complex(self.capacitance)


@dataclass(frozen=True)
class PlaneWave:
    direction: np.ndarray
    k: float

    def __post_init__(self):
        direction = np.asarray(self.direction, dtype=float).reshape(3)
        norm = np.linalg.norm(direction)
        if norm == 0:
            raise ValueError("incident direction must be non-zero")
        direction = direction / norm
        direction.flags.writeable = False
        object.__setattr__(self, "direction", direction)
        if self.k <= 0:
            raise ValueError("波數必須大於 0")


@dataclass(frozen=True)
class Diagnostics:
    a: float
    d: float
    ka: float
    a_over_d: float
    kd: float
    overlapping_pairs: List[Tuple[int, int]]
    warnings: List[Advisory]

    def to_dict(self) -> Dict:
        return {
            "a": self.a,
            "d": _finite_or_none(self.d),
            "ka": self.ka,
            "a_over_d": self.a_over_d,
            "kd": _finite_or_none(self.kd),
            "overlapping_pairs": [list(pair) for pair in self.overlapping_pairs],
            "warnings": [w.to_dict() for w in self.warnings],
        }


class Scene:
    """散射體集合 + 介質波數；重疊只記錄，組裝時才拒絕"""

    def __init__(self, scatterers: Sequence[Scatterer], k: float):
        if len(scatterers) == 0:
            raise ValueError("scene needs at least one scatterer")
        if k <= 0:
            raise ValueError("波數必須大於 0")
        self.scatterers = list(scatterers)
        self.k = float(k)
        points = self.reference_points
        for m, j in combinations(range(len(points)), 2):
            if np.array_equal(points[m], points[j]):
                raise ScatteringError(f"coincident reference points for bodies {m} and {j}",
                                      module="acoustic_solver", body_index=j)
        self.validity = regime_diagnostics(self)

    def __len__(self) -> int:
        return len(self.scatterers)

    @property
    def reference_points(self) -> np.ndarray:
        return np.array([s.reference_point for s in self.scatterers])

    @property
    def conditions(self) -> List[BoundaryCondition]:
        return [s.condition for s in self.scatterers]


@dataclass(frozen=True)
class LinearSystem:
    """(I - K)x = rhs 形式；Dirichlet 時 K = -B、rhs = -c"""
    coupling: np.ndarray
    rhs: np.ndarray
    kind: str
    margin: float

    @property
    def matrix(self) -> np.ndarray:
        return np.eye(len(self.rhs), dtype=complex) - self.coupling


@dataclass(frozen=True)
class ChargeSolution:
    Q: np.ndarray
    residual: float
    method: str
    iterations: int = 0
    history: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "Q": [_complex_to_json(q) for q in self.Q],
            "residual": self.residual,
            "method": self.method,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class NeumannSolution:
    L: np.ndarray
    G: np.ndarray
    residual: float
    method: str
    iterations: int = 0
    history: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "laplacian": [_complex_to_json(x) for x in self.L],
            "gradient": [[_complex_to_json(x) for x in g] for g in self.G],
            "residual": self.residual,
            "method": self.method,
            "iterations": self.iterations,
        }


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def _complex_to_json(value) -> Dict[str, float]:
    value = complex(value)
    return {"re": value.real, "im": value.imag}


# =================================
# Green function and incident wave
# =================================

def green(x, y, k: float) -> complex:
    """g(x, y) = e^{ik|x-y|} / (4π|x-y|)"""
    r = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    return np.exp(1j * k * r) / (4.0 * np.pi * r)


def green_gradient(x, y, k: float) -> np.ndarray:
    """∇_x g(x, y) = (ik - 1/r) g ê，ê = (x - y)/r"""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = float(np.linalg.norm(diff))
    return (1j * k - 1.0 / r) * np.exp(1j * k * r) / (4.0 * np.pi * r) * diff / r


def incident_field(wave: PlaneWave, x) -> complex:
    return np.exp(1j * wave.k * np.dot(wave.direction, np.asarray(x, dtype=float)))


def incident_gradient(wave: PlaneWave, x) -> np.ndarray:
    return 1j * wave.k * wave.direction * incident_field(wave, x)


# =================================
# Diagnostics
# =================================

def _min_surface_distance(first: Scatterer, second: Scatterer) -> float:
    distances, _ = cKDTree(first.mesh.vertices).query(second.mesh.vertices)
    return float(distances.min())


def regime_diagnostics(scene: Scene, electromagnetic: bool = False) -> Diagnostics:
    """
    a = 最大直徑、d = 物體間最小頂點距離，並依 ka、a/d (電磁另加 kd) 提出建議性警告
    """
    scatterers = scene.scatterers
    k = scene.k
    a = max(s.diameter for s in scatterers)
    d = np.inf
    overlapping = []
    for m, j in combinations(range(len(scatterers)), 2):
        first, second = scatterers[m], scatterers[j]
        separation = np.linalg.norm(first.reference_point - second.reference_point)
        if separation <= 0.5 * (first.diameter + second.diameter):
            overlapping.append((m, j))
        d = min(d, _min_surface_distance(first, second))

    warnings = []
    ka = k * a
    a_over_d = a / d if d > 0 else np.inf
    kd = k * d
    if ka >= KA_LIMIT:
        warnings.append(Advisory("small-body-ka", f"ka = {ka:.4g} is not small (limit {KA_LIMIT})", "acoustic_solver"))
    if a_over_d >= A_OVER_D_LIMIT:
        warnings.append(Advisory("small-body-a-over-d", f"a/d = {a_over_d:.4g} is not small (limit {A_OVER_D_LIMIT})",
                                 "acoustic_solver"))
    if electromagnetic and kd < EM_KD_LIMIT:
        warnings.append(Advisory("em-wavelength-spacing", f"kd = {kd:.4g} < 2π: bodies closer than one wavelength",
                                 "em_scattering"))
    for m, j in overlapping:
        warnings.append(Advisory("overlapping-bodies", f"bounding spheres of bodies {m} and {j} intersect",
                                 "acoustic_solver", body_index=j))
    for warning in warnings:
        logger.warning("%s: %s", warning.code, warning.message)

    return Diagnostics(a=float(a), d=float(d), ka=float(ka), a_over_d=float(a_over_d), kd=float(kd),
                       overlapping_pairs=overlapping, warnings=warnings)


def diagonal_dominance_margin(scene: Scene) -> float:
    """μ = max_m Σ_{j≠m} |C_m^eff| / (4π|x_m - x_j|)；μ < 1 時系統可用迭代求解"""
    points = scene.reference_points
    margin = 0.0
    for m, scatterer in enumerate(scene.scatterers):
        if scatterer.condition == BoundaryCondition.NEUMANN:
            continue
        c = abs(scatterer.effective_capacitance)
        total = sum(c / (4.0 * np.pi * np.linalg.norm(points[m] - points[j]))
                    for j in range(len(points)) if j != m)
        margin = max(margin, total)
    return float(margin)


def _require_disjoint(scene: Scene):
    if scene.validity.overlapping_pairs:
        m, j = scene.validity.overlapping_pairs[0]
        raise ScatteringError(f"overlapping bodies {m} and {j}", module="acoustic_solver", body_index=j)


def _require_uniform_condition(scene: Scene, allowed: Tuple[BoundaryCondition, ...]):
    conditions = set(scene.conditions)
    if len(conditions & {BoundaryCondition.NEUMANN}) and len(conditions - {BoundaryCondition.NEUMANN}):
        raise ScatteringError("mixed boundary conditions unsupported", module="acoustic_solver")
    for m, condition in enumerate(scene.conditions):
        if condition not in allowed:
            raise ScatteringError(f"body has condition {condition.value}, expected one of "
                                  f"{[c.value for c in allowed]}", module="acoustic_solver", body_index=m)


# =================================
# Dirichlet / impedance
# =================================

def assemble_dirichlet(scene: Scene, wave: PlaneWave) -> LinearSystem:
    """
    組裝 (I + B)Q = -c

    B_mj = C_m^eff g(x_m, x_j) (j ≠ m)，c_m = C_m^eff u₀(x_m)
    """
    _require_uniform_condition(scene, (BoundaryCondition.DIRICHLET, BoundaryCondition.IMPEDANCE))
    _require_disjoint(scene)
    if abs(scene.k - wave.k) > 1e-12 * scene.k:
        raise ValueError("scene and incident wave use different wave numbers")
    points = scene.reference_points
    size = len(scene)
    capacitances = np.empty(size, dtype=complex)
    for m, scatterer in enumerate(scene.scatterers):
        try:
            capacitances[m] = scatterer.effective_capacitance
        except ScatteringError as exc:
            raise exc.tagged(body_index=m)

    B = np.zeros((size, size), dtype=complex)
    for m, j in combinations(range(size), 2):
        g = green(points[m], points[j], scene.k)
        B[m, j] = capacitances[m] * g
        B[j, m] = capacitances[j] * g
    c = capacitances * np.array([incident_field(wave, x) for x in points])
    logger.debug("assembled Dirichlet system for %d bodies", size)
    return LinearSystem(coupling=-B, rhs=-c, kind="dirichlet", margin=diagonal_dominance_margin(scene))


def _solve_system(system: LinearSystem, method: SolveMethod, tol: float, max_iter: int):
    """回傳 (解, 相對殘差, 迭代次數, 每步增量)"""
    method = SolveMethod(method)
    rhs = system.rhs
    scale = max(float(np.max(np.abs(rhs))), np.finfo(float).tiny)

    if method == SolveMethod.DIRECT:
        try:
            x = solve(system.matrix, rhs, check_finite=False)
        except LinAlgError as exc:
            raise SolverError(f"singular {system.kind} system: {exc}", module="acoustic_solver") from exc
        iterations, history = 0, []
    else:
        if system.margin >= 1:
            logger.warning("fixed-point iteration with margin %.4g >= 1 may not converge", system.margin)
        # 從 Born 項出發
        x = rhs.copy()
        history = []
        iterations = 0
        converged = False
        while iterations < max_iter:
            updated = rhs + system.coupling @ x
            iterations += 1
            change = float(np.max(np.abs(updated - x)) / max(float(np.max(np.abs(updated))), np.finfo(float).tiny))
            history.append(change)
            x = updated
            if change < tol:
                converged = True
                break
        if not converged:
            raise ConvergenceError(f"fixed-point iteration did not converge in {max_iter} iterations "
                                   f"(margin {system.margin:.4g})", margin=system.margin,
                                   iterations=iterations, module="acoustic_solver")
        logger.debug("fixed-point converged in %d iterations", iterations)

    residual = float(np.max(np.abs(system.matrix @ x - rhs)) / scale)
    if not np.all(np.isfinite(x)) or residual > RESIDUAL_LIMIT:
        raise SolverError(f"{system.kind} solution rejected: residual {residual:.3e}", module="acoustic_solver")
    return x, residual, iterations, history


def solve_charges(system: LinearSystem, method=SolveMethod.DIRECT, tol: float = DEFAULT_TOLERANCE,
                  max_iter: int = DEFAULT_MAX_ITER) -> ChargeSolution:
    """直接分解或不動點迭代 Q^{n+1} = -c - BQ^n"""
    Q, residual, iterations, history = _solve_system(system, method, tol, max_iter)
    return ChargeSolution(Q=Q, residual=residual, method=SolveMethod(method).value,
                          iterations=iterations, history=history)


def check_field_point(scene: Scene, x) -> List[Advisory]:
    """場點必須離每個物體超過一個直徑；小於 5 個直徑時回傳警告"""
    x = np.asarray(x, dtype=float)
    advisories = []
    for m, scatterer in enumerate(scene.scatterers):
        distance = np.linalg.norm(x - scatterer.reference_point)
        if distance <= scatterer.diameter:
            raise ScatteringError(f"field point lies within the bounding sphere of body {m}",
                                  module="acoustic_solver", body_index=m)
        if distance < NEAR_FIELD_FACTOR * scatterer.diameter:
            message = (f"field point is {distance / scatterer.diameter:.3g} diameters from body {m}; "
                       f"the small-body formula needs min|x - x_m| >> a")
            logger.warning(message)
            advisories.append(Advisory("near-field-point", message, "acoustic_solver", body_index=m))
    return advisories


def field_dirichlet(solution: ChargeSolution, scene: Scene, wave: PlaneWave, x) -> complex:
    """u(x) = u₀(x) + Σ g(x, x_m) Q_m"""
    x = np.asarray(x, dtype=float)
    check_field_point(scene, x)
    scattered = sum(green(x, point, scene.k) * q for point, q in zip(scene.reference_points, solution.Q))
    return incident_field(wave, x) + scattered


def amplitude_dirichlet(solution: ChargeSolution, scene: Scene, direction) -> complex:
    """A(α', α) = Σ (Q_m / 4π) e^{-ikα'·x_m}"""
    direction = _unit(direction)
    phases = np.exp(-1j * scene.k * scene.reference_points @ direction)
    return complex(np.sum(solution.Q * phases) / (4.0 * np.pi))


def _unit(direction) -> np.ndarray:
    direction = np.asarray(direction, dtype=float).reshape(3)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
        raise ValueError("scattering direction must be a unit vector")
    return direction


# =================================
# Neumann
# =================================

def _coupling_row(scatterer: Scatterer, unit: np.ndarray, k: float) -> np.ndarray:
    """V_j [L_j + ik Σ_pq β_pq ê_p G_q] 對 (L_j, G_j) 的係數"""
    return scatterer.volume * np.concatenate([[1.0], 1j * k * (scatterer.beta.T @ unit)])


def _neumann_blocks(scene: Scene, wave: Optional[PlaneWave]):
    points = scene.reference_points
    size = len(scene)
    k = scene.k
    coupling = np.zeros((4 * size, 4 * size), dtype=complex)
    for m in range(size):
        for j in range(size):
            if j == m:
                continue
            diff = points[m] - points[j]
            unit = diff / np.linalg.norm(diff)
            row = _coupling_row(scene.scatterers[j], unit, k)
            response = np.concatenate([[-k ** 2 * green(points[m], points[j], k)],
                                       green_gradient(points[m], points[j], k)])
            coupling[4 * m:4 * m + 4, 4 * j:4 * j + 4] = np.outer(response, row)
    rhs = None
    if wave is not None:
        rhs = np.concatenate([np.concatenate([[-k ** 2 * incident_field(wave, x)], incident_gradient(wave, x)])
                              for x in points])
    return coupling, rhs


def assemble_neumann(scene: Scene, wave: PlaneWave) -> LinearSystem:
    """
    組裝 4M x 4M 系統，未知量依序為 (L_1, G_1, ..., L_M, G_M)

    L_m = Δu₀(x_m) - k² Σ_{j≠m} g(x_m, x_j) w_j
    G_m = ∇u₀(x_m) + Σ_{j≠m} ∇g(x_m, x_j) w_j
    w_j = V_j [L_j + ik Σ_pq β_pq,j (G_j)_q ê_p(m, j)]
    """
    _require_uniform_condition(scene, (BoundaryCondition.NEUMANN,))
    _require_disjoint(scene)
    for m, scatterer in enumerate(scene.scatterers):
        if scatterer.beta is None:
            raise ScatteringError("missing magnetic polarizability", module="acoustic_solver", body_index=m)
    if abs(scene.k - wave.k) > 1e-12 * scene.k:
        raise ValueError("scene and incident wave use different wave numbers")
    coupling, rhs = _neumann_blocks(scene, wave)
    margin = float(np.max(np.sum(np.abs(coupling), axis=1))) if len(scene) > 1 else 0.0
    logger.debug("assembled Neumann system for %d bodies", len(scene))
    return LinearSystem(coupling=coupling, rhs=rhs, kind="neumann", margin=margin)


def solve_neumann(system: LinearSystem, method=SolveMethod.DIRECT, tol: float = DEFAULT_TOLERANCE,
                  max_iter: int = DEFAULT_MAX_ITER) -> NeumannSolution:
    x, residual, iterations, history = _solve_system(system, method, tol, max_iter)
    blocks = x.reshape(-1, 4)
    return NeumannSolution(L=blocks[:, 0].copy(), G=blocks[:, 1:].copy(), residual=residual,
                           method=SolveMethod(method).value, iterations=iterations, history=history)


def field_neumann(solution: NeumannSolution, scene: Scene, wave: PlaneWave, x) -> complex:
    """u(x) = u₀(x) + Σ g(x, x_m) V_m [L_m + ik Σ_pq β_pq (G_m)_q (x - x_m)_p / |x - x_m|]"""
    x = np.asarray(x, dtype=float)
    check_field_point(scene, x)
    total = incident_field(wave, x)
    for m, scatterer in enumerate(scene.scatterers):
        diff = x - scatterer.reference_point
        unit = diff / np.linalg.norm(diff)
        weight = _coupling_row(scatterer, unit, scene.k) @ np.concatenate([[solution.L[m]], solution.G[m]])
        total += green(x, scatterer.reference_point, scene.k) * weight
    return complex(total)


def amplitude_neumann(solution: NeumannSolution, scene: Scene, direction) -> complex:
    """A = (1/4π) Σ V_m e^{-ikα'·x_m} [L_m + ik Σ_pq β_pq α'_p (G_m)_q]"""
    direction = _unit(direction)
    total = 0j
    for m, scatterer in enumerate(scene.scatterers):
        weight = _coupling_row(scatterer, direction, scene.k) @ np.concatenate([[solution.L[m]], solution.G[m]])
        total += weight * np.exp(-1j * scene.k * np.dot(direction, scatterer.reference_point))
    return complex(total / (4.0 * np.pi))
