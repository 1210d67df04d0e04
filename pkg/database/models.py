from sqlalchemy import create_engine, Column, String, DateTime, JSON
from sqlalchemy.orm import DeclarativeBase, sessionmaker
from datetime import datetime
from contextlib import contextmanager
from typing import Optional
import os
import uuid

DATABASE_URL_ENV = "SCATTERING_DATABASE_URL"
DEFAULT_DATABASE_URL = "sqlite:///scattering_api.db"

class Base(DeclarativeBase):
    pass

# =================================
# 計算記錄表 (Simulation Records)
# =================================

class SimulationRun(Base):
    """散射計算記錄表"""
    __tablename__ = 'simulation_records'

    id = Column(String(36), primary_key=True)  # UUID
    kind = Column(String(30), nullable=False, index=True)            # acoustic-plane / em-plane
    scenario = Column(JSON, nullable=False)                          # 情境檔 (預設值已展開)
    result = Column(JSON, nullable=False)                            # results bundle
    user_session = Column(String(100), index=True)                   # 用戶會話ID (可選)
    created_at = Column(DateTime, default=datetime.utcnow, index=True)
    updated_at = Column(DateTime, default=datetime.utcnow, onupdate=datetime.utcnow)

# =================================
# Database Configuration & Setup
# =================================

class DatabaseConfig:
    """資料庫配置類，未指定網址時讀取 SCATTERING_DATABASE_URL"""

    def __init__(self, database_url: Optional[str] = None):
        self.database_url = database_url or os.environ.get(DATABASE_URL_ENV, DEFAULT_DATABASE_URL)
        connect_args = {"check_same_thread": False} if self.database_url.startswith("sqlite") else {}
        self.engine = create_engine(self.database_url, echo=False, connect_args=connect_args)
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)

    def create_tables(self):
        """創建所有資料表"""
        Base.metadata.create_all(bind=self.engine)

    @contextmanager
    def get_session_context(self):
        """獲取資料庫會話 (Context Manager)"""
        session = self.SessionLocal()
        try:
            yield session
        except Exception:
            session.rollback()
            raise
        finally:
            session.close()

# =================================
# Data Access Layer (數據存取層)
# =================================

class SimulationRepository:
    """計算記錄數據存取類"""

    def __init__(self, db_session):
        self.db = db_session

    def save_simulation(self, simulation_id: str, kind: str,
                        scenario: dict, result: dict, user_session: str = None):
        """保存計算記錄"""
        try:
            record = SimulationRun(
                id=simulation_id,
                kind=kind,
                scenario=scenario,
                result=result,
                user_session=user_session
            )
            self.db.add(record)
            self.db.commit()
            return record
        except Exception as e:
            self.db.rollback()
            raise e

    def get_simulation(self, simulation_id: str):
        """根據ID獲取計算記錄"""
        return self.db.query(SimulationRun).filter(
            SimulationRun.id == simulation_id
        ).first()

    def get_user_history(self, user_session: Optional[str], limit: int = 50):
        """獲取用戶歷史記錄，依建立時間由新到舊"""
        return self.db.query(SimulationRun).filter(
            SimulationRun.user_session == user_session
        ).order_by(SimulationRun.created_at.desc()).limit(limit).all()

# =================================
# Utility Functions
# =================================

def generate_unique_id(prefix: str = "") -> str:
    """生成唯一 ID"""
    unique_id = str(uuid.uuid4())
    return f"{prefix}{unique_id}" if prefix else unique_id

def initialize_database(database_url: Optional[str] = None) -> DatabaseConfig:
    """初始化資料庫"""
    db_config = DatabaseConfig(database_url)
    db_config.create_tables()
    return db_config
