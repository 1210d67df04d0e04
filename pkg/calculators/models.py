# calculators/models.py
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Annotated, Dict, List, Literal, Optional, Union
from enum import Enum

from .acoustic_solver import BoundaryCondition, SolveMethod
from .mesh_geometry import MeshFormat

# =================================
# Enums
# =================================

class IncidentKind(str, Enum):
    ACOUSTIC_PLANE = "acoustic-plane"
    EM_PLANE = "em-plane"

class GridKind(str, Enum):
    OCTAHEDRAL_26 = "octahedral-26"
    LATLONG = "latlong"

# =================================
# Base Models
# =================================

class StrictModel(BaseModel):
    """情境檔一律拒絕未知欄位"""
    model_config = ConfigDict(extra="forbid")

class ComplexValue(StrictModel):
    re: float = Field(..., description="實部")
    im: float = Field(0.0, description="虛部")

    @model_validator(mode="before")
    @classmethod
    def accept_shorthand(cls, value):
        # 允許純數字或 [re, im]
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return {"re": value, "im": 0.0}
        if isinstance(value, (list, tuple)) and len(value) == 2:
            return {"re": value[0], "im": value[1]}
        return value

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)

Vector3 = Annotated[List[float], Field(min_length=3, max_length=3)]

# =================================
# Scenario Sections
# =================================

class Medium(StrictModel):
    k: float = Field(..., gt=0, description="波數 (1/長度)")
    eps0: ComplexValue = Field(default_factory=lambda: ComplexValue(re=1.0), description="背景介電常數")
    mu0: ComplexValue = Field(default_factory=lambda: ComplexValue(re=1.0), description="背景磁導率")

class Incident(StrictModel):
    kind: IncidentKind = Field(IncidentKind.ACOUSTIC_PLANE, description="入射波種類")
    direction: Vector3 = Field(..., description="入射方向 (會正規化)")
    polarization: Optional[Vector3] = Field(None, description="電場極化 E₀ (僅電磁)")

    @field_validator("direction")
    @classmethod
    def non_zero(cls, value):
        if sum(x * x for x in value) == 0:
            raise ValueError("direction must be non-zero")
        return value

class SphereShape(StrictModel):
    kind: Literal["sphere"] = "sphere"
    radius: float = Field(..., gt=0, description="半徑")
    subdivisions: int = Field(3, ge=0, le=6, description="icosphere 細分次數")

class EllipsoidShape(StrictModel):
    kind: Literal["ellipsoid"] = "ellipsoid"
    semi_axes: Vector3 = Field(..., description="三個半軸 (a, b, c)")
    subdivisions: int = Field(3, ge=0, le=6, description="icosphere 細分次數")

    @field_validator("semi_axes")
    @classmethod
    def positive_axes(cls, value):
        if any(x <= 0 for x in value):
            raise ValueError("semi-axes must be positive")
        return value

class MeshFileShape(StrictModel):
    kind: Literal["mesh"] = "mesh"
    path: str = Field(..., description="STL / OBJ 檔案路徑 (相對於情境檔)")
    format: Optional[MeshFormat] = Field(None, description="檔案格式，省略時依副檔名判斷")

Shape = Annotated[Union[SphereShape, EllipsoidShape, MeshFileShape], Field(discriminator="kind")]

class Body(StrictModel):
    shape: Shape
    position: Vector3 = Field(default_factory=lambda: [0.0, 0.0, 0.0], description="平移量")
    condition: Optional[BoundaryCondition] = Field(None, description="dirichlet / impedance / neumann")
    zeta: Optional[ComplexValue] = Field(None, description="阻抗 ζ (僅 impedance)")
    eps: Optional[ComplexValue] = Field(None, description="介電常數 ε (僅電磁)")
    mu: Optional[ComplexValue] = Field(None, description="磁導率 μ (僅電磁)")

    @model_validator(mode="before")
    @classmethod
    def single_condition(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        condition = data.get("condition")
        # 以旗標形式寫邊界條件 ({"dirichlet": true}) 也視為指定
        flags = [name.value for name in BoundaryCondition if data.pop(name.value, False)]
        if isinstance(condition, (list, tuple)):
            flags.extend(condition)
        elif condition is not None:
            flags.append(condition)
        if len(set(flags)) > 1:
            raise ValueError("conflicting boundary conditions")
        if flags:
            data["condition"] = flags[0]
        return data

    @model_validator(mode="after")
    def impedance_needs_zeta(self):
        if self.condition == BoundaryCondition.IMPEDANCE and self.zeta is None:
            raise ValueError("impedance condition requires zeta")
        if self.zeta is not None and self.condition not in (None, BoundaryCondition.IMPEDANCE):
            raise ValueError("conflicting boundary conditions: zeta given for a non-impedance body")
        if self.zeta is not None and self.zeta.value == 0:
            raise ValueError("impedance zeta = 0 is a degenerate boundary condition")
        return self

class Solver(StrictModel):
    method: SolveMethod = Field(SolveMethod.DIRECT, description="direct 或 fixed-point")
    tol: float = Field(1e-12, gt=0, description="不動點迭代相對容差")
    max_iter: int = Field(200, ge=1, description="最大迭代次數")

class Capacitance(StrictModel):
    order: int = Field(2, ge=0, le=4, description="電容近似階數 n")

class ChargesOutput(StrictModel):
    kind: Literal["charges"] = "charges"

class ShapePropertiesOutput(StrictModel):
    kind: Literal["shape_properties"] = "shape_properties"

class FarFieldOutput(StrictModel):
    kind: Literal["far_field"] = "far_field"
    grid: GridKind = Field(GridKind.OCTAHEDRAL_26, description="方向網格")
    n_theta: int = Field(9, ge=3, description="緯度數 (含兩極)")
    n_phi: int = Field(16, ge=4, description="每圈經度數")

class FieldSamplesOutput(StrictModel):
    kind: Literal["field_samples"] = "field_samples"
    points: List[Vector3] = Field(..., min_length=1, description="場點座標")

Output = Annotated[Union[ChargesOutput, ShapePropertiesOutput, FarFieldOutput, FieldSamplesOutput],
                   Field(discriminator="kind")]

# =================================
# Scenario
# =================================

class Scenario(StrictModel):
    units: str = Field("m", min_length=1, description="唯一的長度單位")
    medium: Medium
    incident: Incident
    bodies: List[Body] = Field(..., min_length=1)
    solver: Solver = Field(default_factory=Solver)
    capacitance: Capacitance = Field(default_factory=Capacitance)
    outputs: List[Output] = Field(..., min_length=1)

    @field_validator("outputs", mode="before")
    @classmethod
    def bare_output_names(cls, value):
        if isinstance(value, list):
            return [{"kind": item} if isinstance(item, str) else item for item in value]
        return value

    @model_validator(mode="after")
    def consistent_bodies(self):
        electromagnetic = self.incident.kind == IncidentKind.EM_PLANE
        if electromagnetic:
            if self.incident.polarization is None:
                raise ValueError("em-plane incidence requires incident.polarization")
            dot = sum(a * b for a, b in zip(self.incident.direction, self.incident.polarization))
            scale = (sum(a * a for a in self.incident.direction) * sum(p * p for p in self.incident.polarization)) ** 0.5
            if scale == 0 or abs(dot) > 1e-12 * scale:
                raise ValueError("incident.polarization must be non-zero and perpendicular to incident.direction")
            for index, body in enumerate(self.bodies):
                if body.eps is None or body.mu is None:
                    raise ValueError(f"bodies[{index}]: em-plane scenarios need eps and mu")
                if body.condition is not None or body.zeta is not None:
                    raise ValueError(f"bodies[{index}]: boundary conditions apply to acoustic scenarios only")
            for output in self.outputs:
                if output.kind in ("charges", "field_samples"):
                    raise ValueError(f"output '{output.kind}' is not available for em-plane scenarios")
        else:
            if self.incident.polarization is not None:
                raise ValueError("incident.polarization applies to em-plane scenarios only")
            for index, body in enumerate(self.bodies):
                if body.eps is not None or body.mu is not None:
                    raise ValueError(f"bodies[{index}]: eps and mu apply to em-plane scenarios only")
                if body.condition is None:
                    body.condition = BoundaryCondition.DIRICHLET
            conditions = {body.condition for body in self.bodies}
            if BoundaryCondition.NEUMANN in conditions and len(conditions) > 1:
                raise ValueError("mixed boundary conditions unsupported")
        return self

    @property
    def electromagnetic(self) -> bool:
        return self.incident.kind == IncidentKind.EM_PLANE

# =================================
# Request Models
# =================================

class SimulationRequest(BaseModel):
    scenario: Scenario
    save_to_db: bool = Field(True, description="是否儲存到資料庫")
    user_session: Optional[str] = Field(None, description="用戶會話ID")

# =================================
# Response Models (回傳資料)
# =================================

class SimulationRecord(BaseModel):
    id: str
    kind: str
    scenario: Dict
    result: Dict
    created_at: str
    updated_at: str
