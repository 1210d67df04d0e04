# conftest.py
import sys
from pathlib import Path

# 讓測試可以直接 import calculators / database / routes
sys.path.insert(0, str(Path(__file__).resolve().parent))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 細網格驗收測試 (數十秒)")
