# calculators/scenario.py
"""
情境檔解析、完整計算流程與結果輸出

形狀性質 → 系統組裝 → 求解 → 遠場 / 場點取樣，全部結果收進一個 dict (results bundle)。
"""
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.linalg import LinAlgError

from .acoustic_solver import (
    Advisory,
    BoundaryCondition,
    PlaneWave,
    Scatterer,
    Scene,
    amplitude_dirichlet,
    amplitude_neumann,
    assemble_dirichlet,
    assemble_neumann,
    check_field_point,
    diagonal_dominance_margin,
    field_dirichlet,
    field_neumann,
    regime_diagnostics,
    solve_charges,
    solve_neumann,
)
from .em_scattering import EMBody, beta_tilde, em_amplitude, gamma_contrast, plane_wave_fields
from .errors import ScatteringError, ScenarioError
from .mesh_geometry import (
    TriangleMesh,
    generate_ellipsoid,
    generate_sphere,
    load_mesh,
    summarize,
    transform_mesh,
)
from .models import Body, FarFieldOutput, GridKind, Scenario
from .potential_theory import (
    CapacitanceResult,
    PolarizabilityTensor,
    ShapeProperties,
    capacitance as compute_capacitance,
    double_layer_operator,
    electric_polarizability,
)

logger = logging.getLogger(__name__)

MODES = ("props", "solve", "check")
RESULTS_FILE = "results.json"
FAR_FIELD_FILE = "far_field.csv"
MIN_GRID_POINTS = 6


# =================================
# Parsing
# =================================

def _format_validation_error(exc: ValidationError) -> str:
    lines = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error.get("loc", ())) or "<document>"
        lines.append(f"{location}: {error.get('msg')}")
    return "; ".join(lines)


def parse_scenario(text: Union[str, bytes]) -> Scenario:
    """
    解析 JSON 情境檔

    預設值 (solver.method = direct, tol = 1e-12, capacitance.order = 2) 會明確寫入模型。
    錯誤以 ScenarioError 回報，訊息包含欄位位置；JSON 語法錯誤附行列號。
    """
    try:
        scenario = Scenario.model_validate_json(text)
    except ValidationError as exc:
        raise ScenarioError(_format_validation_error(exc), module="scene_io_cli") from exc
    logger.info("scenario parsed: %d bodies, incident %s", len(scenario.bodies), scenario.incident.kind.value)
    return scenario


def serialize_scenario(scenario: Scenario) -> str:
    return scenario.model_dump_json(indent=2)


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}", module="scene_io_cli") from exc
    return parse_scenario(text)


# =================================
# Direction grids
# =================================

def default_direction_grid() -> np.ndarray:
    """{-1, 0, 1}³ 去掉原點: 6 面 + 12 邊 + 8 角 = 26 個單位向量"""
    values = (-1.0, 0.0, 1.0)
    directions = np.array([(x, y, z) for x in values for y in values for z in values
                           if (x, y, z) != (0.0, 0.0, 0.0)])
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def latlong_grid(n_theta: int, n_phi: int) -> np.ndarray:
    """經緯網格，兩極各只出現一次，共 2 + (n_theta - 2) * n_phi 點"""
    if n_theta < 3 or n_phi < 1:
        raise ValueError("latlong grid needs n_theta >= 3 and n_phi >= 1")
    if 2 + (n_theta - 2) * n_phi < MIN_GRID_POINTS:
        raise ValueError(f"far-field grid needs at least {MIN_GRID_POINTS} directions")
    thetas = np.linspace(0.0, np.pi, n_theta)[1:-1]
    phis = 2.0 * np.pi * np.arange(n_phi) / n_phi
    theta, phi = np.meshgrid(thetas, phis, indexing="ij")
    ring = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)
    directions = np.vstack([[0.0, 0.0, 1.0], ring.reshape(-1, 3), [0.0, 0.0, -1.0]])
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def direction_grid(request: FarFieldOutput) -> np.ndarray:
    if request.grid == GridKind.LATLONG:
        return latlong_grid(request.n_theta, request.n_phi)
    return default_direction_grid()


# =================================
# Shape property cache
# =================================

class ShapePropertyCache:
    """
    單次執行內的形狀性質快取，鍵為 (網格指紋, 性質, 階數或 γ)

    相同網格的多個物體只計算一次電容或極化張量。
    """

    def __init__(self):
        self._entries: Dict[Tuple, object] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, mesh: TriangleMesh, prop: str, param, compute: Callable[[], object]):
        key = (mesh.fingerprint, prop, param)
        with self._lock:
            if key in self._entries:
                self.hits += 1
                return self._entries[key]
        value = compute()
        with self._lock:
            if key not in self._entries:
                self._entries[key] = value
                self.misses += 1
            return self._entries[key]

    def operator(self, mesh: TriangleMesh) -> np.ndarray:
        return self.get(mesh, "double_layer", None, lambda: double_layer_operator(mesh))

    def capacitance(self, mesh: TriangleMesh, order: int) -> CapacitanceResult:
        return self.get(mesh, "capacitance", order,
                        lambda: compute_capacitance(mesh, order,
                                                    operator=self.operator(mesh) if order >= 1 else None))

    def polarizability(self, mesh: TriangleMesh, gamma) -> PolarizabilityTensor:
        """α(γ)，快取鍵只含 γ；γ = -1 與磁極化張量共用同一次求解"""
        return self.get(mesh, "polarizability", gamma,
                        lambda: electric_polarizability(mesh, gamma, operator=self.operator(mesh)))

    def magnetic(self, mesh: TriangleMesh) -> PolarizabilityTensor:
        return replace(self.polarizability(mesh, -1.0), kind="magnetic")

    def release_operators(self):
        with self._lock:
            for key in [key for key in self._entries if key[1] == "double_layer"]:
                del self._entries[key]

    def stats(self) -> Dict[str, int]:
        return {"hits": self.hits, "misses": self.misses}


# =================================
# Pipeline helpers
# =================================

@contextmanager
def _stage(module: str, body_index: Optional[int] = None):
    """把各模組丟出的錯誤標上模組名稱與物體索引"""
    try:
        yield
    except ScatteringError as exc:
        raise exc.tagged(module=module, body_index=body_index)
    except (ValueError, ArithmeticError, LinAlgError) as exc:
        raise ScatteringError(str(exc), module=module, body_index=body_index) from exc


def _complex_json(value) -> Dict[str, float]:
    value = complex(value)
    return {"re": value.real, "im": value.imag}


def _base_mesh(body: Body, base_dir: Optional[Path]) -> TriangleMesh:
    shape = body.shape
    if shape.kind == "sphere":
        return generate_sphere(shape.radius, shape.subdivisions)
    if shape.kind == "ellipsoid":
        return generate_ellipsoid(shape.semi_axes, shape.subdivisions)
    path = Path(shape.path)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    return load_mesh(path, shape.format)


def _build_meshes(scenario: Scenario, base_dir: Optional[Path]) -> List[TriangleMesh]:
    """同一個 shape 只產生一次網格，再依 position 平移"""
    generated: Dict[str, TriangleMesh] = {}
    meshes = []
    for m, body in enumerate(scenario.bodies):
        key = body.shape.model_dump_json()
        with _stage("mesh_geometry", m):
            if key not in generated:
                generated[key] = _base_mesh(body, base_dir)
            meshes.append(generated[key])
    return meshes


def _required_properties(scenario: Scenario, body: Body) -> List[Tuple[str, object]]:
    if scenario.electromagnetic:
        eps0, mu0 = scenario.medium.eps0.value, scenario.medium.mu0.value
        return [("polarizability", gamma_contrast(body.eps.value, eps0)),
                ("polarizability", gamma_contrast(body.mu.value, mu0)),
                ("polarizability", -1.0)]
    if body.condition == BoundaryCondition.NEUMANN:
        return [("polarizability", -1.0)]
    return [("capacitance", scenario.capacitance.order)]


def _compute_properties(cache: ShapePropertyCache, mesh: TriangleMesh, requests, body_index: int):
    for prop, param in requests:
        with _stage("potential_theory", body_index):
            if prop == "capacitance":
                cache.capacitance(mesh, param)
            else:
                cache.polarizability(mesh, param)


def _fill_cache(scenario: Scenario, meshes: List[TriangleMesh], cache: ShapePropertyCache, threads: int):
    """每個不同的網格交給一個工作執行緒"""
    jobs: Dict[str, Tuple[TriangleMesh, int, List]] = {}
    for m, (body, mesh) in enumerate(zip(scenario.bodies, meshes)):
        mesh_job = jobs.setdefault(mesh.fingerprint, (mesh, m, []))
        for request in _required_properties(scenario, body):
            if request not in mesh_job[2]:
                mesh_job[2].append(request)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_compute_properties, cache, mesh, requests, m)
                       for mesh, m, requests in jobs.values()]
            for future in futures:
                future.result()
    else:
        for mesh, m, requests in jobs.values():
            _compute_properties(cache, mesh, requests, m)
    cache.release_operators()
    logger.info("shape properties ready for %d distinct meshes", len(jobs))


def _translated(mesh: TriangleMesh, body: Body, m: int) -> TriangleMesh:
    with _stage("mesh_geometry", m):
        return transform_mesh(mesh, translation=body.position)


def _acoustic_scatterer(scenario: Scenario, body: Body, base: TriangleMesh, m: int,
                        cache: Optional[ShapePropertyCache]) -> Scatterer:
    zeta = body.zeta.value if body.zeta is not None else None
    kwargs = {}
    if cache is not None:
        if body.condition == BoundaryCondition.NEUMANN:
            kwargs["beta"] = cache.magnetic(base).entries
        else:
            kwargs["capacitance"] = cache.capacitance(base, scenario.capacitance.order).value
    with _stage("acoustic_solver", m):
        return Scatterer(mesh=_translated(base, body, m), condition=body.condition, zeta=zeta, **kwargs)


def _body_record(m: int, body: Body, scatterer: Scatterer) -> Dict:
    return {
        "index": m,
        "shape": body.shape.kind,
        "position": list(body.position),
        "reference_point": [float(x) for x in scatterer.reference_point],
        "diameter": float(scatterer.diameter),
    }


def _acoustic_properties(scenario: Scenario, body: Body, base: TriangleMesh, scatterer: Scatterer,
                         cache: ShapePropertyCache) -> Dict:
    if body.condition == BoundaryCondition.NEUMANN:
        properties = ShapeProperties(summary=summarize(base), magnetic=cache.magnetic(base))
        return properties.to_dict()
    series = cache.capacitance(base, scenario.capacitance.order)
    result = ShapeProperties(summary=summarize(base), capacitance=series).to_dict()
    if body.condition == BoundaryCondition.IMPEDANCE:
        result["effective_capacitance"] = _complex_json(scatterer.effective_capacitance)
    return result


def _capacitance_advisories(scenario: Scenario, meshes: List[TriangleMesh],
                            cache: ShapePropertyCache) -> List[Advisory]:
    advisories = []
    for m, (body, base) in enumerate(zip(scenario.bodies, meshes)):
        if scenario.electromagnetic or body.condition == BoundaryCondition.NEUMANN:
            continue
        series = cache.capacitance(base, scenario.capacitance.order)
        if series.diverging:
            advisories.append(Advisory("capacitance-series-diverging",
                                       f"capacitance series {series.series} is not converging; "
                                       f"refine the mesh or lower capacitance.order",
                                       "potential_theory", body_index=m))
    return advisories


def _polarizability_advisories(tensors: Dict[int, List[PolarizabilityTensor]]) -> List[Advisory]:
    advisories = []
    for m, items in tensors.items():
        for tensor in items:
            if not tensor.is_symmetric:
                advisories.append(Advisory("polarizability-asymmetry",
                                           f"{tensor.kind} tensor asymmetry {tensor.asymmetry:.3e} before "
                                           f"symmetrization", "potential_theory", body_index=m))
    return advisories


# =================================
# Run
# =================================

def run(scenario: Scenario, mode: str = "solve", threads: int = 1,
        base_dir: Optional[Union[str, Path]] = None) -> Dict:
    """
    執行情境

    參數:
        scenario: 已驗證的情境
        mode: "props" 只算形狀性質、"check" 只做區間診斷、"solve" 跑完整流程
        threads: 形狀性質計算的執行緒數
        base_dir: 網格檔相對路徑的基準目錄

    回傳:
        Dict: 可直接 JSON 序列化的結果 (bodies / diagnostics / charges / far_field / field_samples)
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode '{mode}', expected one of {MODES}")
    if threads < 1:
        raise ValueError("執行緒數必須大於 0")
    base_dir = Path(base_dir) if base_dir is not None else None

    meshes = _build_meshes(scenario, base_dir)
    cache = ShapePropertyCache() if mode != "check" else None
    if cache is not None:
        _fill_cache(scenario, meshes, cache, threads)

    if scenario.electromagnetic:
        bundle = _run_electromagnetic(scenario, meshes, cache, mode)
    else:
        bundle = _run_acoustic(scenario, meshes, cache, mode)

    bundle["mode"] = mode
    bundle["scenario"] = scenario.model_dump(mode="json")
    if cache is not None:
        bundle["diagnostics"]["shape_property_cache"] = cache.stats()
    bundle["diagnostics"]["warnings"] = [w.to_dict() for w in bundle["diagnostics"]["warnings"]]
    logger.info("run finished (%s): %d warnings", mode, len(bundle["diagnostics"]["warnings"]))
    return bundle


def _diagnostics_block(diagnostics, extra_warnings: List[Advisory]) -> Dict:
    block = diagnostics.to_dict()
    block["warnings"] = list(diagnostics.warnings) + extra_warnings
    return block


def _run_acoustic(scenario: Scenario, meshes: List[TriangleMesh], cache: Optional[ShapePropertyCache],
                  mode: str) -> Dict:
    scatterers = [_acoustic_scatterer(scenario, body, base, m, cache)
                  for m, (body, base) in enumerate(zip(scenario.bodies, meshes))]
    with _stage("acoustic_solver"):
        scene = Scene(scatterers, scenario.medium.k)
    bodies = [_body_record(m, body, scatterer) for m, (body, scatterer) in enumerate(zip(scenario.bodies, scatterers))]
    for record, body in zip(bodies, scenario.bodies):
        record["condition"] = body.condition.value
    advisories: List[Advisory] = []

    if cache is not None:
        for record, body, base, scatterer in zip(bodies, scenario.bodies, meshes, scatterers):
            with _stage("potential_theory", record["index"]):
                record["shape_properties"] = _acoustic_properties(scenario, body, base, scatterer, cache)
        advisories.extend(_capacitance_advisories(scenario, meshes, cache))
        neumann = {m: [cache.magnetic(base)] for m, (body, base) in
                   enumerate(zip(scenario.bodies, meshes)) if body.condition == BoundaryCondition.NEUMANN}
        advisories.extend(_polarizability_advisories(neumann))

    bundle = {"bodies": bodies, "diagnostics": _diagnostics_block(scene.validity, advisories)}
    if mode != "solve":
        return bundle

    wave = PlaneWave(scenario.incident.direction, scenario.medium.k)
    solver = scenario.solver
    is_neumann = BoundaryCondition.NEUMANN in scene.conditions
    with _stage("acoustic_solver"):
        if is_neumann:
            system = assemble_neumann(scene, wave)
            margin = system.margin
        else:
            margin = diagonal_dominance_margin(scene)
    bundle["diagnostics"]["diagonal_dominance_margin"] = margin
    if margin >= 1.0:
        message = f"diagonal dominance violated: margin {margin:.6g} >= 1"
        logger.warning(message)
        advisories.append(Advisory("diagonal-dominance-violated", message, "acoustic_solver"))

    with _stage("acoustic_solver"):
        if is_neumann:
            solution = solve_neumann(system, solver.method, solver.tol, solver.max_iter)
        else:
            system = assemble_dirichlet(scene, wave)
            solution = solve_charges(system, solver.method, solver.tol, solver.max_iter)
    bundle["diagnostics"]["solver"] = {
        "method": solution.method,
        "iterations": solution.iterations,
        "residual": solution.residual,
        "system": system.kind,
        "size": len(system.rhs),
    }
    bundle["diagnostics"]["warnings"] = list(scene.validity.warnings) + advisories

    amplitude = amplitude_neumann if is_neumann else amplitude_dirichlet
    field = field_neumann if is_neumann else field_dirichlet
    for request in scenario.outputs:
        if request.kind == "charges":
            bundle["neumann" if is_neumann else "charges"] = solution.to_dict()
        elif request.kind == "far_field":
            directions = direction_grid(request)
            with _stage("acoustic_solver"):
                values = [amplitude(solution, scene, direction) for direction in directions]
            bundle["far_field"] = {
                "grid": request.grid.value,
                "rows": [{"direction": [float(x) for x in direction], "amplitude": _complex_json(value)}
                         for direction, value in zip(directions, values)],
            }
        elif request.kind == "field_samples":
            samples = []
            for point in request.points:
                with _stage("acoustic_solver"):
                    bundle["diagnostics"]["warnings"].extend(check_field_point(scene, point))
                    value = field(solution, scene, wave, point)
                samples.append({"point": list(point), "value": _complex_json(value)})
            bundle["field_samples"] = samples
    return bundle


def _run_electromagnetic(scenario: Scenario, meshes: List[TriangleMesh], cache: Optional[ShapePropertyCache],
                         mode: str) -> Dict:
    medium = scenario.medium
    eps0, mu0 = medium.eps0.value, medium.mu0.value
    scatterers = []
    for m, (body, base) in enumerate(zip(scenario.bodies, meshes)):
        with _stage("acoustic_solver", m):
            scatterers.append(Scatterer(mesh=_translated(base, body, m)))
    with _stage("em_scattering"):
        scene = Scene(scatterers, medium.k)
        diagnostics = regime_diagnostics(scene, electromagnetic=True)
    bodies = [_body_record(m, body, scatterer) for m, (body, scatterer) in enumerate(zip(scenario.bodies, scatterers))]
    bundle = {"bodies": bodies, "diagnostics": _diagnostics_block(diagnostics, [])}
    if cache is None:
        return bundle

    em_bodies = []
    tensors: Dict[int, List[PolarizabilityTensor]] = {}
    for record, body, base, scatterer in zip(bodies, scenario.bodies, meshes, scatterers):
        m = record["index"]
        gamma = gamma_contrast(body.eps.value, eps0)
        alpha = cache.polarizability(base, gamma)
        magnetic = cache.magnetic(base)
        with _stage("em_scattering", m):
            effective = beta_tilde(base, body.mu.value, mu0, polarizability=lambda g: cache.polarizability(base, g))
        tensors[m] = [alpha, magnetic, effective]
        record["shape_properties"] = {
            "geometry": {"area": scatterer.area, "volume": scatterer.volume,
                         "centroid": [float(x) for x in scatterer.reference_point],
                         "diameter": scatterer.diameter},
            "electric_polarizability": alpha.to_dict(),
            "magnetic_polarizability": magnetic.to_dict(),
            "beta_tilde": [[_complex_json(x) for x in row] for row in effective.entries],
        }
        with _stage("em_scattering", m):
            em_bodies.append(EMBody(volume=scatterer.volume, alpha=alpha.entries, beta_tilde=effective.entries,
                                    position=scatterer.reference_point, eps=body.eps.value, mu=body.mu.value,
                                    eps0=eps0, mu0=mu0))
    bundle["diagnostics"]["warnings"].extend(_polarizability_advisories(tensors))
    if mode != "solve":
        return bundle

    incident = scenario.incident
    polarization = np.asarray(incident.polarization, dtype=float)
    co_polar = polarization / np.linalg.norm(polarization)
    with _stage("em_scattering"):
        fields = plane_wave_fields(incident.direction, incident.polarization,
                                   [body.position for body in em_bodies], medium.k, eps0, mu0)
    bundle["diagnostics"]["solver"] = {"method": "single-scattering", "iterations": 0, "residual": 0.0,
                                       "system": "em", "size": len(em_bodies)}
    for request in scenario.outputs:
        if request.kind != "far_field":
            continue
        rows = []
        for direction in direction_grid(request):
            with _stage("em_scattering"):
                value = em_amplitude(em_bodies, fields, direction, medium.k)
            entry = value.to_dict()
            entry["direction"] = [float(x) for x in direction]
            entry["amplitude"] = _complex_json(np.dot(co_polar, value.E))
            rows.append(entry)
        bundle["far_field"] = {"grid": request.grid.value, "rows": rows}
    return bundle


# =================================
# Output
# =================================

def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    raise TypeError(f"cannot serialize {type(value).__name__}")


def results_json(bundle: Dict) -> str:
    """排序鍵、兩格縮排；浮點數以可完整還原的最短表示輸出"""
    return json.dumps(bundle, sort_keys=True, indent=2, allow_nan=False, default=_json_default) + "\n"


def far_field_table(bundle: Dict) -> pd.DataFrame:
    rows = bundle["far_field"]["rows"]
    records = []
    for row in rows:
        amplitude = complex(row["amplitude"]["re"], row["amplitude"]["im"])
        record = {
            "direction_x": row["direction"][0],
            "direction_y": row["direction"][1],
            "direction_z": row["direction"][2],
            "re_A": amplitude.real,
            "im_A": amplitude.imag,
            "abs_A": abs(amplitude),
        }
        for name in ("E", "H"):
            if name not in row:
                continue
            for axis, component in zip("xyz", row[name]):
                record[f"{name}_{axis}_re"] = component["re"]
                record[f"{name}_{axis}_im"] = component["im"]
        records.append(record)
    return pd.DataFrame.from_records(records)


def write_results(bundle: Dict, out_dir: Union[str, Path]) -> List[Path]:
    """寫出 results.json 以及 (有遠場時) far_field.csv，回傳檔案路徑"""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        results_path = out_dir / RESULTS_FILE
        results_path.write_text(results_json(bundle), encoding="utf-8")
        written.append(results_path)
        if "far_field" in bundle:
            table_path = out_dir / FAR_FIELD_FILE
            far_field_table(bundle).to_csv(table_path, index=False, float_format="%.17g", lineterminator="\n")
            written.append(table_path)
    except OSError as exc:
        raise ScatteringError(f"cannot write results to {out_dir}: {exc}", module="scene_io_cli") from exc
    logger.info("results written: %s", ", ".join(str(p) for p in written))
    return written
