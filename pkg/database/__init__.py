# database 模組初始化檔案
from .models import DatabaseConfig, SimulationRepository, SimulationRun, initialize_database

__all__ = [
    'DatabaseConfig',
    'SimulationRepository',
    'SimulationRun',
    'initialize_database'
]
