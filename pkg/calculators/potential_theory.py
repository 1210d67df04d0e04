# calculators/potential_theory.py
"""
靜電形狀性質: 電容 C^(n)、磁極化張量 β、電極化張量 α(γ)

離散方式為分片常數密度 + 三角形形心配置 (collocation)。
單位採高斯制且 ε₀ = 1，半徑 a 的球電容為 4πa。
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.linalg.lapack import get_lapack_funcs
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import SolverError
from .mesh_geometry import GeometrySummary, TriangleMesh, summarize

logger = logging.getLogger(__name__)

MAX_CAPACITANCE_ORDER = 4
# 近場判定半徑 (乘上最大三角形邊長)，範圍內改用解析積分
NEAR_FIELD_RADIUS = 3.0
# 小於此倒數條件數視為奇異
RCOND_LIMIT = 1e-13
# 對稱性容差 (相對最大分量)
SYMMETRY_TOLERANCE = 1e-6
# |γ - 1| 小於此值視為理想導體
CONDUCTOR_LIMIT_TOLERANCE = 1e-12

# 三點二階三角形積分 (重心座標, 權重總和為 1)
_BARYCENTRIC_POINTS = np.array([
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
])
_BARYCENTRIC_WEIGHTS = np.full(3, 1.0 / 3.0)

_ROW_CHUNK = 64
_TARGET_CHUNK = 256
_PAIR_CHUNK = 100_000

Scalar = Union[float, complex]

# =================================
# Domain Types
# =================================

@dataclass(frozen=True)
class CapacitanceResult:
    order: int
    value: float
    series: List[float]
    estimated_ratio: Optional[float] = None
    diverging: bool = False

    def to_dict(self) -> Dict:
        return {
            "order": self.order,
            "value": float(self.value),
            "series": [float(c) for c in self.series],
            "estimated_ratio": None if self.estimated_ratio is None else float(self.estimated_ratio),
            "diverging": self.diverging,
        }


@dataclass(frozen=True)
class PolarizabilityTensor:
    """
    3x3 極化張量 (以體積正規化)

    entries 為對稱化後的結果；asymmetry 記錄對稱化前的相對不對稱量。
    """
    entries: np.ndarray
    kind: str
    gamma: Optional[Scalar] = None
    asymmetry: float = 0.0
    condition_estimate: Optional[float] = None

    @property
    def is_symmetric(self) -> bool:
        return self.asymmetry <= SYMMETRY_TOLERANCE

    def __add__(self, other: "PolarizabilityTensor") -> "PolarizabilityTensor":
        return PolarizabilityTensor(entries=self.entries + other.entries, kind=self.kind, gamma=self.gamma,
                                    asymmetry=max(self.asymmetry, other.asymmetry),
                                    condition_estimate=_max_optional(self.condition_estimate,
                                                                     other.condition_estimate))

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind,
            "gamma": _scalar_to_json(self.gamma),
            "entries": [[_scalar_to_json(x) for x in row] for row in self.entries],
            "asymmetry": float(self.asymmetry),
            "condition_estimate": None if self.condition_estimate is None else float(self.condition_estimate),
        }


@dataclass(frozen=True)
class ShapeProperties:
    """單一網格的形狀性質組合"""
    summary: GeometrySummary
    capacitance: Optional[CapacitanceResult] = None
    magnetic: Optional[PolarizabilityTensor] = None
    electric: Dict[Scalar, PolarizabilityTensor] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        result = {"geometry": self.summary.to_dict()}
        if self.capacitance is not None:
            result["capacitance"] = self.capacitance.to_dict()
        if self.magnetic is not None:
            result["magnetic_polarizability"] = self.magnetic.to_dict()
        if self.electric:
            result["electric_polarizability"] = [tensor.to_dict() for tensor in self.electric.values()]
        return result


def _max_optional(a, b):
    values = [x for x in (a, b) if x is not None]
    return max(values) if values else None


def _scalar_to_json(value):
    if value is None:
        return None
    if isinstance(value, (complex, np.complexfloating)):
        if value.imag == 0:
            return float(value.real)
        return {"re": float(value.real), "im": float(value.imag)}
    return float(value)


# =================================
# Analytic panel integrals
# =================================

def _solid_angle(R: np.ndarray) -> np.ndarray:
    """
    三角形對觀測點張的有號立體角 (Van Oosterom & Strackee)

    R: (..., 3, 3) 頂點減觀測點。觀測點位於外法向的背面時為正。
    """
    r = np.linalg.norm(R, axis=-1)
    triple = np.einsum("...i,...i->...", R[..., 0, :], np.cross(R[..., 1, :], R[..., 2, :]))
    denom = r[..., 0] * r[..., 1] * r[..., 2]
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        denom = denom + np.einsum("...i,...i->...", R[..., i, :], R[..., j, :]) * r[..., k]
    return 2.0 * np.arctan2(triple, denom)


def _edge_line_integrals(R: np.ndarray) -> np.ndarray:
    """
    ∫_e dl / |x - s| 沿第 i 頂點對邊 (i+1 -> i+2)

    依投影位置選擇數值穩定的對數形式。
    """
    a = np.roll(R, -1, axis=-2)
    b = np.roll(R, -2, axis=-2)
    edge = b - a
    length = np.linalg.norm(edge, axis=-1)
    unit = edge / length[..., None]
    ra = np.linalg.norm(a, axis=-1)
    rb = np.linalg.norm(b, axis=-1)
    ua = np.einsum("...i,...i->...", a, unit)
    ub = np.einsum("...i,...i->...", b, unit)
    with np.errstate(divide="ignore", invalid="ignore"):
        forward = np.log((rb + ub) / (ra + ua))
        backward = np.log((ra - ua) / (rb - ub))
        result = np.where(ua + ub > 0, forward, backward)
    # 觀測點落在邊上時該項係數為零
    return np.where(np.isfinite(result), result, 0.0)


def uniform_triangle_potential(R: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """
    均勻單位密度三角形的 1/r 位勢 ∫_T ds / |x - s| (解析式)

    R: (..., 3, 3) 頂點減觀測點
    normals: (..., 3) 三角形單位法向
    """
    a = np.roll(R, -1, axis=-2)
    b = np.roll(R, -2, axis=-2)
    # 投影點到各邊所在直線的有號距離
    heights = np.einsum("...i,...ki->...k", normals, np.cross(a, b)) / np.linalg.norm(b - a, axis=-1)
    edge_terms = np.sum(_edge_line_integrals(R) * heights, axis=-1)
    offset = np.einsum("...i,...i->...", normals, R[..., 0, :])
    return edge_terms - offset * _solid_angle(R)


def _quadrature_points(mesh: TriangleMesh):
    """每個三角形的三個積分點與權重 (已乘面積)"""
    points = np.einsum("qk,tki->tqi", _BARYCENTRIC_POINTS, mesh.corners).reshape(-1, 3)
    weights = (mesh.areas[:, None] * _BARYCENTRIC_WEIGHTS[None, :]).reshape(-1)
    owners = np.repeat(np.arange(mesh.n_triangles), len(_BARYCENTRIC_WEIGHTS))
    return points, weights, owners


def _point_sum(targets: np.ndarray, sources: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Σ_k w_k / |t - s_k|，重合點的項為零"""
    distances = cdist(targets, sources)
    with np.errstate(divide="ignore"):
        inverse = np.where(distances > 0, 1.0 / distances, 0.0)
    return inverse @ weights


# =================================
# Operations
# =================================

def single_layer_potential_integrals(mesh: TriangleMesh) -> np.ndarray:
    """
    φ_j = ∫_{T_j} ∫_S ds dt / |s - t|，即 1/r 矩陣與單位密度的縮併

    遠場用三點 x 三點的張量積積分；近場與自身三角形改用解析單三角形位勢，
    外層仍以三點積分。
    """
    points, weights, owners = _quadrature_points(mesh)

    potential = np.empty(len(points))
    for start in range(0, len(points), _TARGET_CHUNK):
        stop = start + _TARGET_CHUNK
        potential[start:stop] = _point_sum(points[start:stop], points, weights)

    # 近場修正: 以解析值取代遠場近似
    radius = NEAR_FIELD_RADIUS * float(mesh.panel_sizes.max())
    neighbours = cKDTree(mesh.centroids).query_ball_point(points, r=radius)
    target_index = np.repeat(np.arange(len(points)), [len(n) for n in neighbours])
    panel_index = np.concatenate([np.asarray(n, dtype=np.int64) for n in neighbours])
    # 自身三角形一定在近場內
    per_panel = len(_BARYCENTRIC_WEIGHTS)
    source_points = points.reshape(mesh.n_triangles, per_panel, 3)
    source_weights = weights.reshape(mesh.n_triangles, per_panel)

    for start in range(0, len(target_index), _PAIR_CHUNK):
        t = target_index[start:start + _PAIR_CHUNK]
        p = panel_index[start:start + _PAIR_CHUNK]
        exact = uniform_triangle_potential(mesh.corners[p] - points[t][:, None, :], mesh.normals[p])
        distances = np.linalg.norm(source_points[p] - points[t][:, None, :], axis=-1)
        with np.errstate(divide="ignore"):
            approx = np.sum(np.where(distances > 0, source_weights[p] / distances, 0.0), axis=-1)
        np.add.at(potential, t, exact - approx)

    phi = np.bincount(owners, weights=weights * potential, minlength=mesh.n_triangles)
    logger.debug("single-layer integrals: %d panels, %d near pairs", mesh.n_triangles, len(target_index))
    return phi


def inverse_distance_double_integral(mesh: TriangleMesh) -> float:
    """J = ∫_S ∫_S ds dt / r_st"""
    return float(single_layer_potential_integrals(mesh).sum())


def double_layer_operator(mesh: TriangleMesh) -> np.ndarray:
    """
    雙層位勢矩陣 A[i, j] = ∫_{T_j} ∂/∂N_t (1 / 2π|c_i - t|) dt

    非對角元素為 -Ω_j(c_i) / 2π (平面三角形的解析立體角)；
    對角元素由列和規則決定，使離散系統精確滿足 A·1 = -1。
    """
    n = mesh.n_triangles
    matrix = np.empty((n, n))
    corners = mesh.corners
    centroids = mesh.centroids
    for start in range(0, n, _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, n)
        R = corners[None, :, :, :] - centroids[start:stop, None, None, :]
        matrix[start:stop] = -_solid_angle(R) / (2.0 * np.pi)

    diagonal = np.arange(n)
    matrix[diagonal, diagonal] = 0.0
    matrix[diagonal, diagonal] = -1.0 - matrix.sum(axis=1)
    logger.debug("double-layer operator assembled: %dx%d", n, n)
    return matrix


def capacitance(mesh: TriangleMesh, n: int = 0, operator: Optional[np.ndarray] = None,
                potentials: Optional[np.ndarray] = None) -> CapacitanceResult:
    """
    電容近似序列 C^(0) ... C^(n)

    參數:
        mesh: 合法網格
        n: 近似階數 (0 <= n <= 4)
        operator: 可重複使用的雙層位勢矩陣
        potentials: 可重複使用的 single_layer_potential_integrals 結果

    回傳:
        CapacitanceResult: value 為 C^(n)；連續兩階差值持續變大時 diverging = True

    高階項以矩陣冪形式計算: f_k = T f_{k-1}，T = -W⁻¹AᵀW (W 為三角形面積)，
    C^(k) = 4π|S|² / (φ · f_k)。
    """
    if n < 0:
        raise ValueError("近似階數不能為負數")
    if n > MAX_CAPACITANCE_ORDER:
        raise ValueError(f"capacitance order {n} exceeds the supported maximum {MAX_CAPACITANCE_ORDER}")

    areas = mesh.areas
    total_area = float(areas.sum())
    phi = single_layer_potential_integrals(mesh) if potentials is None else potentials
    numerator = 4.0 * np.pi * total_area ** 2
    series = [numerator / float(phi.sum())]

    if n >= 1:
        matrix = double_layer_operator(mesh) if operator is None else operator
        density = np.ones(mesh.n_triangles)
        for _ in range(n):
            density = -(matrix.T @ (areas * density)) / areas
            series.append(numerator / float(phi @ density))

    differences = np.abs(np.diff(series))
    estimated_ratio = None
    if len(differences) >= 2 and differences[-2] > 0:
        estimated_ratio = float(differences[-1] / differences[-2])
    diverging = any(differences[k + 1] > differences[k] > differences[k - 1]
                    for k in range(1, len(differences) - 1))
    if diverging:
        logger.warning("capacitance series diverging on a %d-panel mesh: %s", mesh.n_triangles, series)

    return CapacitanceResult(order=n, value=series[-1], series=series,
                             estimated_ratio=estimated_ratio, diverging=diverging)


def _reciprocal_condition(lu: np.ndarray, matrix: np.ndarray) -> float:
    gecon, = get_lapack_funcs(("gecon",), (lu,))
    anorm = np.linalg.norm(matrix, 1)
    rcond, _ = gecon(lu, anorm, norm="1")
    return float(rcond)


def _solve_polarizability(mesh: TriangleMesh, gamma: Scalar, kind: str,
                          operator: Optional[np.ndarray]) -> PolarizabilityTensor:
    """解 (I + γA)σ^(q) = 2γN_q，並取 V t_pq = ∫ (s_p - 形心_p) σ^(q) ds"""
    if gamma == 0:
        return PolarizabilityTensor(entries=np.zeros((3, 3)), kind=kind, gamma=gamma,
                                    asymmetry=0.0, condition_estimate=1.0)

    matrix = double_layer_operator(mesh) if operator is None else operator
    dtype = complex if isinstance(gamma, complex) else float
    system = np.eye(mesh.n_triangles, dtype=dtype) + gamma * matrix
    if abs(gamma - 1.0) <= CONDUCTOR_LIMIT_TOLERANCE:
        # A·1 = -1: 導體極限下 I + A 奇異，以 Wielandt 平移限制總電荷為零
        system = system + np.outer(np.ones(mesh.n_triangles), mesh.areas / mesh.areas.sum())
    lu, pivots = lu_factor(system, check_finite=False)
    rcond = _reciprocal_condition(lu, system)
    condition = np.inf if rcond == 0 else 1.0 / rcond
    if rcond < RCOND_LIMIT:
        raise SolverError(f"polarizability system is singular (condition estimate {condition:.3e})",
                          condition_estimate=condition, module="potential_theory")

    densities = lu_solve((lu, pivots), 2.0 * gamma * mesh.normals.astype(dtype), check_finite=False)
    summary = summarize(mesh)
    arms = mesh.centroids - summary.centroid
    raw = np.einsum("ip,iq,i->pq", arms, densities, mesh.areas) / summary.volume

    scale = float(np.max(np.abs(raw)))
    asymmetry = float(np.max(np.abs(raw - raw.T)) / scale) if scale > 0 else 0.0
    entries = 0.5 * (raw + raw.T)
    if dtype is float:
        entries = entries.real
    return PolarizabilityTensor(entries=entries, kind=kind, gamma=gamma,
                                asymmetry=asymmetry, condition_estimate=condition)


def magnetic_polarizability(mesh: TriangleMesh, operator: Optional[np.ndarray] = None) -> PolarizabilityTensor:
    """
    理想導體的磁極化張量 β，σ = Aσ - 2N_q 的解

    與 electric_polarizability(mesh, -1) 走同一條求解路徑，結果逐項相同。
    """
    return _solve_polarizability(mesh, -1.0, "magnetic", operator)


def electric_polarizability(mesh: TriangleMesh, gamma: Scalar,
                            operator: Optional[np.ndarray] = None) -> PolarizabilityTensor:
    """電極化張量 α(γ)，γ = (ε - ε₀)/(ε + ε₀)，需 |γ| <= 1"""
    if isinstance(gamma, complex) and gamma.imag == 0:
        gamma = float(gamma.real)
    if abs(gamma) > 1.0 + 1e-12:
        raise ValueError(f"contrast |gamma| must not exceed 1, got {gamma}")
    return _solve_polarizability(mesh, gamma, "electric", operator)


def impedance_capacitance(C: float, zeta: complex, area: float) -> complex:
    """阻抗邊界的有效電容 C_ζ = C / (1 + C / (ζ|S|))"""
    if C <= 0:
        raise ValueError("電容必須大於 0")
    if area <= 0:
        raise ValueError("表面積必須大於 0")
    if zeta == 0:
        raise ValueError("impedance zeta = 0 is a degenerate boundary condition")
    return C / (1.0 + C / (zeta * area))


def shape_properties(mesh: TriangleMesh, order: Optional[int] = None, magnetic: bool = False,
                     gammas: Iterable[Scalar] = ()) -> ShapeProperties:
    """一次計算所需的形狀性質，雙層位勢矩陣只組裝一次"""
    gammas = list(gammas)
    needs_operator = magnetic or any(g != 0 for g in gammas) or (order is not None and order >= 1)
    operator = double_layer_operator(mesh) if needs_operator else None
    return ShapeProperties(
        summary=summarize(mesh),
        capacitance=capacitance(mesh, order, operator=operator) if order is not None else None,
        magnetic=magnetic_polarizability(mesh, operator=operator) if magnetic else None,
        electric={g: electric_polarizability(mesh, g, operator=operator) for g in gammas},
    )
