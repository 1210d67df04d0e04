# app.py
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from contextlib import asynccontextmanager

# 導入路由
from routes import router, db_config

@asynccontextmanager
async def lifespan(app: FastAPI):
    # 啟動時建立資料表
    try:
        db_config.create_tables()
        print("✅ 資料庫初始化完成")
    except Exception as e:
        print(f"❌ 資料庫初始化失敗: {e}")

    yield

    print("🔄 應用程式正在關閉...")

# 建立 FastAPI 應用程式
app = FastAPI(
    title="Small-Body Scattering API",
    version="1.0.0",
    description="小物體多體散射計算 API - 聲波 (Dirichlet / 阻抗 / Neumann) 與電磁單次散射",
    lifespan=lifespan
)

# 設定 CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=[
        "http://localhost:3000",
        "http://127.0.0.1:3000",
        "http://localhost:8001",
        "*"
    ],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# 註冊路由
app.include_router(router, prefix="/api/v1", tags=["散射計算"])

# 基本路由
@app.get("/")
async def root():
    return {
        "message": "Small-Body Scattering API",
        "version": "1.0.0",
        "supported_incidents": ["acoustic-plane", "em-plane"],
        "endpoints": {
            "區間診斷": "/api/v1/check",
            "形狀性質": "/api/v1/props",
            "完整計算": "/api/v1/solve",
            "網格摘要": "/api/v1/mesh/summary",
            "單筆記錄": "/api/v1/simulation/{simulation_id}",
            "歷史記錄": "/api/v1/history",
            "健康檢查": "/api/v1/health"
        }
    }

@app.get("/health")
async def health_check():
    return {"status": "healthy", "database": db_config.engine.url.get_backend_name()}

@app.get("/api/v1/health")
async def health_check_v1():
    return {"status": "healthy", "database": db_config.engine.url.get_backend_name(), "api_version": "v1"}

# 啟動應用程式
if __name__ == "__main__":
    import uvicorn
    uvicorn.run(
        "app:app",
        host="0.0.0.0",
        port=8001,
        reload=True,
        log_level="info"
    )
