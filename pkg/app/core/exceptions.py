"""
例外定義

各例外は CLI の終了コード（exit_code）と、失敗箇所を示す文脈情報を持つ。
"""

from typing import Any, Dict, Optional


class MongeAmpereError(Exception):
    """本パッケージの基底例外"""

    exit_code = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = context


class ConfigError(MongeAmpereError):
    """設定ファイル・式の解析エラー"""

    exit_code = 1


class ModelEvaluationError(MongeAmpereError):
    """A(x,p), B(x,p) などの評価失敗（witness に (x,p) を持つ）"""

    exit_code = 1


class InversionError(ModelEvaluationError):
    """D_xc(x,y)=p の逆写像が収束しない"""


class DegenerateCostError(ModelEvaluationError):
    """|det D²_{x,y}c| が床値を下回った"""


class DegenerateMappingError(ModelEvaluationError):
    """|det Y_p| が床値を下回った"""


class DiffeomorphismError(MongeAmpereError):
    """座標変換のヤコビアンが非正則"""


class GridError(MongeAmpereError):
    """グリッド構築エラー"""


class EllipticityError(MongeAmpereError):
    """楕円性が失われた節点がある"""

    exit_code = 3

    def __init__(self, message: str, node: Optional[int] = None, point: Optional[Any] = None, **context: Any):
        super().__init__(message, node=node, point=point, **context)
        self.node = node
        self.point = point


class LineSearchError(MongeAmpereError):
    """直線探索で許容されるステップ幅が見つからない"""

    exit_code = 2


class ContinuationError(MongeAmpereError):
    """連続法の失敗（result に途中経過を保持）"""

    def __init__(self, message: str, result: Any = None, exit_code: int = 2):
        super().__init__(message, result=result)
        self.result = result
        self.exit_code = exit_code


class HypothesisError(MongeAmpereError):
    """仮定（劣解など）の検証に失敗"""

    exit_code = 4

    def __init__(self, message: str, reports: Any = None):
        super().__init__(message, reports=reports)
        self.reports = reports


class StudyError(MongeAmpereError):
    """収束率調査の失敗（partial に途中までの表を保持）"""

    exit_code = 2

    def __init__(self, message: str, partial: Any = None, exit_code: int = 2):
        super().__init__(message, partial=partial)
        self.partial = partial
        self.exit_code = exit_code
