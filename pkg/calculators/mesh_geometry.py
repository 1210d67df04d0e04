# calculators/mesh_geometry.py
import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import trimesh
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial.distance import pdist

from .errors import MeshError

logger = logging.getLogger(__name__)

# 焊接頂點的相對容差 (乘上直徑)
WELD_TOLERANCE = 1e-9
# 面積小於 DEGENERATE_AREA * 直徑² 視為退化三角形
DEGENERATE_AREA = 1e-14
ROTATION_TOLERANCE = 1e-9


class MeshFormat(str, Enum):
    STL_BINARY = "stl-binary"
    STL_ASCII = "stl-ascii"
    OBJ = "obj"


# trimesh 的讀寫檔案類型
_TRIMESH_LOAD_TYPE = {
    MeshFormat.STL_BINARY: "stl",
    MeshFormat.STL_ASCII: "stl",
    MeshFormat.OBJ: "obj",
}
_TRIMESH_EXPORT_TYPE = {
    MeshFormat.STL_BINARY: "stl",
    MeshFormat.STL_ASCII: "stl_ascii",
    MeshFormat.OBJ: "obj",
}

# =================================
# Domain Types
# =================================

@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """
    封閉、定向一致的三角網格

    vertices: (n, 3) 頂點座標
    triangles: (m, 3) 頂點索引，由外側看為逆時針

    直接建構不做驗證，請使用 validate_mesh / load_mesh / generate_* 取得合法網格。
    建構後陣列設為唯讀，可在多執行緒間共用。
    """
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float, copy=True).reshape(-1, 3)
        triangles = np.array(self.triangles, dtype=np.int64, copy=True).reshape(-1, 3)
        vertices.flags.writeable = False
        triangles.flags.writeable = False
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @cached_property
    def corners(self) -> np.ndarray:
        """(m, 3, 3) 每個三角形的三個頂點"""
        return _readonly(self.vertices[self.triangles])

    @cached_property
    def _cross(self) -> np.ndarray:
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return _readonly(0.5 * np.linalg.norm(self._cross, axis=1))

    @cached_property
    def normals(self) -> np.ndarray:
        """外法向單位向量"""
        return _readonly(self._cross / (2.0 * self.areas[:, None]))

    @cached_property
    def centroids(self) -> np.ndarray:
        return _readonly(self.corners.mean(axis=1))

    @cached_property
    def panel_sizes(self) -> np.ndarray:
        """每個三角形的最長邊"""
        c = self.corners
        edges = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 1], c[:, 0] - c[:, 2]], axis=1)
        return _readonly(np.linalg.norm(edges, axis=2).max(axis=1))

    @cached_property
    def fingerprint(self) -> str:
        """內容雜湊，用於形狀性質快取"""
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.vertices).tobytes())
        digest.update(np.ascontiguousarray(self.triangles).tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class GeometrySummary:
    area: float
    volume: float
    centroid: np.ndarray
    diameter: float

    def to_dict(self) -> Dict:
        return {
            "area": float(self.area),
            "volume": float(self.volume),
            "centroid": [float(x) for x in self.centroid],
            "diameter": float(self.diameter),
        }


def _readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


def _diameter(points: np.ndarray) -> float:
    """最大頂點距離，先取凸包頂點再兩兩比較"""
    if len(points) < 2:
        return 0.0
    try:
        hull_points = points[ConvexHull(points).vertices]
    except Exception:
        # 共面或點太少時凸包失敗，改用全部頂點
        hull_points = points
    return float(pdist(hull_points).max())


# =================================
# Validation
# =================================

def _weld(vertices: np.ndarray, triangles: np.ndarray, tolerance: float):
    """合併距離小於 tolerance 的頂點並移除未使用頂點"""
    if tolerance > 0:
        pairs = cKDTree(vertices).query_pairs(tolerance, output_type="ndarray")
        if len(pairs):
            n = len(vertices)
            graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
            _, labels = connected_components(graph, directed=False)
            # 每個群組以最小索引為代表
            representative = np.full(labels.max() + 1, n, dtype=np.int64)
            np.minimum.at(representative, labels, np.arange(n))
            triangles = representative[labels][triangles]

    used, inverse = np.unique(triangles, return_inverse=True)
    return vertices[used], inverse.reshape(-1, 3)


def _edge_report(triangles: np.ndarray) -> Dict[str, int]:
    directed = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    _, counts = np.unique(undirected, axis=0, return_counts=True)
    _, directed_counts = np.unique(directed, axis=0, return_counts=True)
    return {
        "boundary": int(np.sum(counts == 1)),
        "non_manifold": int(np.sum(counts > 2)),
        "same_direction": int(np.sum(directed_counts > 1)),
    }


def validate_mesh(vertices, triangles, weld: bool = True) -> TriangleMesh:
    """
    檢查並建立 TriangleMesh

    依序執行: 頂點焊接 (容差 1e-9 * 直徑)、退化三角形、封閉性、定向一致、體積為正。
    任何一項失敗皆拋出 MeshError，不會自動修正方向。
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles)
    if vertices.ndim != 2 or vertices.shape[1] != 3 or len(vertices) == 0:
        raise MeshError("vertices must be a non-empty (n, 3) array", module="mesh_geometry")
    if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) < 4:
        raise MeshError("a closed surface needs at least 4 triangles", module="mesh_geometry")
    if not np.all(np.isfinite(vertices)):
        raise MeshError("vertices contain non-finite coordinates", module="mesh_geometry")
    triangles = triangles.astype(np.int64)
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeshError("triangle index out of range", module="mesh_geometry")

    diameter = _diameter(vertices)
    if weld:
        vertices, triangles = _weld(vertices, triangles, WELD_TOLERANCE * diameter)

    repeated = (triangles[:, 0] == triangles[:, 1]) | (triangles[:, 1] == triangles[:, 2]) \
        | (triangles[:, 2] == triangles[:, 0])
    corners = vertices[triangles]
    areas = 0.5 * np.linalg.norm(np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1)
    degenerate = repeated | (areas <= DEGENERATE_AREA * diameter ** 2)
    if np.any(degenerate):
        raise MeshError(f"degenerate: {int(degenerate.sum())} triangles with zero area", module="mesh_geometry")

    report = _edge_report(triangles)
    if report["boundary"]:
        raise MeshError(f"non-watertight: {report['boundary']} boundary edges", module="mesh_geometry")
    if report["non_manifold"]:
        raise MeshError(f"non-manifold: {report['non_manifold']} edges shared by more than two triangles",
                        module="mesh_geometry")
    if report["same_direction"]:
        raise MeshError(f"inconsistent orientation: {report['same_direction']} edges traversed "
                        f"twice in the same direction", module="mesh_geometry")

    mesh = TriangleMesh(vertices, triangles)
    volume = summarize(mesh).volume
    if volume <= 0:
        raise MeshError(f"negative enclosed volume: {volume:.6g}", module="mesh_geometry")
    return mesh


# =================================
# Operations
# =================================

def summarize(mesh: TriangleMesh) -> GeometrySummary:
    """
    計算面積、體積、體積形心與直徑

    體積由散度定理: V = (1/3) Σ (c_T · N_T) |T|
    """
    areas = mesh.areas
    area = float(areas.sum())
    volume = float(np.sum(np.einsum("ij,ij->i", mesh.centroids, mesh.normals) * areas) / 3.0)

    # 以原點為頂點的有向四面體加權
    c = mesh.corners
    tet_volumes = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])) / 6.0
    tet_centroids = c.sum(axis=1) / 4.0
    total = tet_volumes.sum()
    if total != 0:
        centroid = (tet_volumes[:, None] * tet_centroids).sum(axis=0) / total
    else:
        centroid = mesh.centroids.mean(axis=0)

    return GeometrySummary(area=area, volume=volume, centroid=_readonly(centroid),
                           diameter=_diameter(mesh.vertices))


def _check_declared_format(path: Path, mesh_format: MeshFormat):
    data = path.read_bytes()
    if mesh_format == MeshFormat.STL_ASCII:
        if not data.lstrip().lower().startswith(b"solid") or b"facet" not in data:
            raise MeshError(f"parse failure: {path.name} is not an ASCII STL file", module="mesh_geometry")
    elif mesh_format == MeshFormat.STL_BINARY:
        if len(data) < 84:
            raise MeshError(f"parse failure: {path.name} is too short for a binary STL", module="mesh_geometry")
        n_facets = int(np.frombuffer(data[80:84], dtype="<u4")[0])
        if len(data) != 84 + 50 * n_facets:
            raise MeshError(f"parse failure: binary STL declares {n_facets} facets "
                            f"but holds {len(data)} bytes", module="mesh_geometry")


def _infer_format(path: Path) -> MeshFormat:
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return MeshFormat.OBJ
    if suffix == ".stl":
        head = path.read_bytes()[:512].lstrip().lower()
        if head.startswith(b"solid") and b"facet" in head:
            return MeshFormat.STL_ASCII
        return MeshFormat.STL_BINARY
    raise MeshError(f"cannot infer mesh format from suffix '{suffix}'", module="mesh_geometry")


def load_mesh(path: Union[str, Path], mesh_format: Optional[Union[MeshFormat, str]] = None) -> TriangleMesh:
    """
    讀取 STL (binary / ASCII) 或 OBJ 網格

    參數:
        path: 檔案路徑
        mesh_format: 宣告的格式；省略時依副檔名判斷

    回傳:
        TriangleMesh: 已焊接並通過所有不變量檢查的網格
    """
    path = Path(path)
    if not path.is_file():
        raise MeshError(f"mesh file not found: {path}", module="mesh_geometry")
    mesh_format = MeshFormat(mesh_format) if mesh_format is not None else _infer_format(path)
    _check_declared_format(path, mesh_format)

    try:
        loaded = trimesh.load(str(path), file_type=_TRIMESH_LOAD_TYPE[mesh_format],
                              force="mesh", process=False)
        vertices = np.asarray(loaded.vertices, dtype=float)
        triangles = np.asarray(loaded.faces, dtype=np.int64)
    except Exception as exc:
        raise MeshError(f"parse failure: {exc}", module="mesh_geometry") from exc

    if len(triangles) == 0:
        raise MeshError(f"parse failure: {path.name} contains no triangles", module="mesh_geometry")

    mesh = validate_mesh(vertices, triangles)
    logger.debug("loaded %s: %d vertices, %d triangles", path.name, len(mesh.vertices), mesh.n_triangles)
    return mesh


def save_mesh(mesh: TriangleMesh, path: Union[str, Path],
              mesh_format: Union[MeshFormat, str] = MeshFormat.STL_BINARY) -> Path:
    """將網格寫成 STL 或 OBJ"""
    path = Path(path)
    mesh_format = MeshFormat(mesh_format)
    exported = trimesh.Trimesh(vertices=np.array(mesh.vertices), faces=np.array(mesh.triangles), process=False)
    kwargs = {"include_normals": False} if mesh_format == MeshFormat.OBJ else {}
    exported.export(str(path), file_type=_TRIMESH_EXPORT_TYPE[mesh_format], **kwargs)
    return path


def generate_sphere(radius: float, subdivisions: int) -> TriangleMesh:
    """
    產生 icosphere，三角形數為 20 * 4^subdivisions，所有頂點與球心距離恰為 radius
    """
    if radius <= 0:
        raise ValueError("半徑必須大於 0")
    if subdivisions < 0:
        raise ValueError("細分次數不能為負數")
    ico = trimesh.creation.icosphere(subdivisions=int(subdivisions), radius=1.0)
    vertices = np.asarray(ico.vertices, dtype=float)
    vertices = radius * vertices / np.linalg.norm(vertices, axis=1, keepdims=True)
    return validate_mesh(vertices, np.asarray(ico.faces), weld=False)


def generate_ellipsoid(semi_axes: Sequence[float], subdivisions: int) -> TriangleMesh:
    """將單位 icosphere 的頂點依三個半軸做非等向縮放"""
    semi_axes = np.asarray(semi_axes, dtype=float)
    if semi_axes.shape != (3,) or np.any(semi_axes <= 0):
        raise ValueError("三個半軸都必須大於 0")
    sphere = generate_sphere(1.0, subdivisions)
    return validate_mesh(sphere.vertices * semi_axes, sphere.triangles, weld=False)


def transform_mesh(mesh: TriangleMesh, rotation=None, translation=None, scale: float = 1.0) -> TriangleMesh:
    """x -> scale * R x + t，R 必須為行列式 +1 的正交矩陣"""
    if scale <= 0:
        raise ValueError("縮放倍率必須大於 0")
    vertices = np.array(mesh.vertices) * scale
    if rotation is not None:
        rotation = np.asarray(rotation, dtype=float)
        if rotation.shape != (3, 3) \
                or not np.allclose(rotation @ rotation.T, np.eye(3), atol=ROTATION_TOLERANCE) \
                or np.linalg.det(rotation) <= 0:
            raise ValueError("rotation must be a proper orthogonal 3x3 matrix")
        vertices = vertices @ rotation.T
    if translation is not None:
        vertices = vertices + np.asarray(translation, dtype=float).reshape(3)
    return TriangleMesh(vertices, mesh.triangles)
