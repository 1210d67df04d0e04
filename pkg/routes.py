# routes.py
from fastapi import APIRouter, HTTPException, Depends, File, Query, UploadFile
from sqlalchemy.orm import Session
from pathlib import Path
from datetime import datetime
from typing import List, Optional
import json
import logging
import os
import tempfile

# 導入計算函數
from calculators.errors import ScatteringError, ScenarioError
from calculators.mesh_geometry import MeshFormat, load_mesh, summarize
from calculators.scenario import results_json, run

# 導入資料庫相關
from database.models import DatabaseConfig, SimulationRepository, generate_unique_id

# 導入 Pydantic 模型
from calculators.models import IncidentKind, Scenario, SimulationRequest, SimulationRecord

logger = logging.getLogger(__name__)

# 創建路由器
router = APIRouter()

# 初始化資料庫配置
db_config = DatabaseConfig()

# 依賴注入：獲取資料庫會話
def get_db():
    with db_config.get_session_context() as db:
        yield db

def _run_or_raise(scenario: Scenario, mode: str) -> dict:
    """ScenarioError → 422、其他計算錯誤 → 400、未預期錯誤 → 500"""
    try:
        # 經過結果檔的 JSON 編碼，numpy 數值一律轉成內建型別
        return json.loads(results_json(run(scenario, mode=mode)))
    except ScenarioError as e:
        raise HTTPException(status_code=422, detail=e.to_dict())
    except ScatteringError as e:
        raise HTTPException(status_code=400, detail=e.to_dict())
    except Exception as e:
        logger.exception("unexpected failure in %s", mode)
        raise HTTPException(status_code=500, detail=f"計算失敗: {str(e)}")

def _to_response(record) -> SimulationRecord:
    return SimulationRecord(
        id=record.id,
        kind=record.kind,
        scenario=record.scenario,
        result=record.result,
        created_at=record.created_at.isoformat(),
        updated_at=record.updated_at.isoformat()
    )

# =================================
# 散射計算 API 路由
# =================================

@router.post("/check")
def check_scenario(scenario: Scenario):
    """只做區間診斷 (ka、a/d、kd 與重疊檢查)"""
    return _run_or_raise(scenario, "check")

@router.post("/props")
def shape_properties(scenario: Scenario):
    """只計算每個物體的形狀性質 (電容序列、極化張量)"""
    return _run_or_raise(scenario, "props")

@router.post("/solve", response_model=SimulationRecord)
def solve_scenario(request: SimulationRequest, db: Session = Depends(get_db)):
    """
    完整計算流程
    形狀性質 → 組裝 → 求解 → 遠場 / 場點取樣，可選擇儲存到資料庫
    """
    simulation_id = generate_unique_id()
    result = _run_or_raise(request.scenario, "solve")
    scenario = request.scenario.model_dump(mode="json")
    kind = request.scenario.incident.kind.value

    if request.save_to_db:
        repo = SimulationRepository(db)
        record = repo.save_simulation(
            simulation_id=simulation_id,
            kind=kind,
            scenario=scenario,
            result=result,
            user_session=request.user_session
        )
        return _to_response(record)

    # 不儲存到資料庫，直接回傳結果
    now = datetime.utcnow().isoformat()
    return SimulationRecord(id=simulation_id, kind=kind, scenario=scenario, result=result,
                            created_at=now, updated_at=now)

@router.post("/mesh/summary")
async def mesh_summary(
    file: UploadFile = File(..., description="STL 或 OBJ 網格檔"),
    mesh_format: Optional[MeshFormat] = Query(None, description="檔案格式，省略時依副檔名判斷")
):
    """上傳網格並回傳表面積、體積、形心、直徑"""
    suffix = Path(file.filename or "").suffix
    content = await file.read()
    handle, path = tempfile.mkstemp(suffix=suffix)
    try:
        with os.fdopen(handle, "wb") as stream:
            stream.write(content)
        mesh = load_mesh(path, mesh_format)
        summary = summarize(mesh).to_dict()
    except ScatteringError as e:
        raise HTTPException(status_code=422, detail=e.to_dict())
    finally:
        os.unlink(path)

    summary.update({"n_triangles": mesh.n_triangles, "fingerprint": mesh.fingerprint})
    return summary

# =================================
# 資料管理 API 路由
# =================================

@router.get("/simulation/{simulation_id}", response_model=SimulationRecord)
async def get_simulation(simulation_id: str, db: Session = Depends(get_db)):
    """根據ID獲取計算記錄"""
    repo = SimulationRepository(db)
    record = repo.get_simulation(simulation_id)

    if not record:
        raise HTTPException(status_code=404, detail="找不到指定的模擬記錄")

    return _to_response(record)

@router.get("/history", response_model=List[SimulationRecord])
async def get_user_history(
    user_session: Optional[str] = Query(None, description="用戶會話ID"),
    limit: int = Query(50, ge=1, description="回傳記錄數量限制"),
    kind: Optional[IncidentKind] = Query(None, description="篩選入射波種類"),
    db: Session = Depends(get_db)
):
    """獲取用戶計算歷史記錄"""
    repo = SimulationRepository(db)
    records = repo.get_user_history(user_session, limit)

    if kind:
        records = [r for r in records if r.kind == kind.value]

    return [_to_response(record) for record in records]
