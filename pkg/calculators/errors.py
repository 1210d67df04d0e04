# calculators/errors.py
from typing import Optional


class ScatteringError(Exception):
    """所有計算錯誤的基底類別，可附帶模組名稱與物體索引"""

    def __init__(self, message: str, module: Optional[str] = None,
                 body_index: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.module = module
        self.body_index = body_index

    def tagged(self, module: Optional[str] = None, body_index: Optional[int] = None):
        """補上模組與物體索引 (已存在的標記不覆蓋)"""
        if self.module is None:
            self.module = module
        if self.body_index is None:
            self.body_index = body_index
        return self

    def to_dict(self) -> dict:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "module": self.module,
            "body_index": self.body_index,
        }

    def __str__(self) -> str:
        prefix = ""
        if self.module is not None:
            prefix += f"[{self.module}]"
        if self.body_index is not None:
            prefix += f"[body {self.body_index}]"
        return f"{prefix} {self.message}" if prefix else self.message


class MeshError(ScatteringError, ValueError):
    """網格讀取或驗證失敗"""


class SolverError(ScatteringError, RuntimeError):
    """線性系統無法求解"""

    def __init__(self, message: str, condition_estimate: Optional[float] = None, **kwargs):
        super().__init__(message, **kwargs)
        self.condition_estimate = condition_estimate


class ConvergenceError(SolverError):
    """不動點迭代在 max_iter 內未收斂"""

    def __init__(self, message: str, margin: Optional[float] = None,
                 iterations: Optional[int] = None, **kwargs):
        super().__init__(message, **kwargs)
        self.margin = margin
        self.iterations = iterations


class ScenarioError(ScatteringError, ValueError):
    """情境檔內容不合法"""
