"""
データモデル定義

問題データ（領域・行列関数 A・スカラー関数 B・コスト関数）、格子と格子関数、
実行設定と結果レポートの Pydantic モデルを定義します。
"""

from .domain import Domain, build_domain
from .grid import EllipticIterate, Grid, ScalarField
from .problem import MatrixFunction, ProblemSpec, ScalarFunction
from .registry import MODEL_NAMES, ModelBundle, build_model
from .reports import (ConditionReport, ContinuationResult, EstimateReport, RateTable,
                      SolveStatus)
from .run_config import RunConfig, load_config, parse_config_text

__all__ = [
    "Domain", "build_domain", "Grid", "ScalarField", "EllipticIterate",
    "MatrixFunction", "ScalarFunction", "ProblemSpec", "MODEL_NAMES", "ModelBundle", "build_model",
    "ConditionReport", "ContinuationResult", "EstimateReport", "RateTable", "SolveStatus",
    "RunConfig", "load_config", "parse_config_text",
]
