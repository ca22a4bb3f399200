"""
アプリケーション設定（Pydantic V2完全対応版）

数値定数（許容誤差・差分ステップ・床値）とログ設定を環境変数 / .env から読み込む。
実行ごとのパラメータは RunConfig（app.models.run_config）で指定する。
"""

import logging
from pathlib import Path

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """アプリケーション設定クラス（Pydantic V2対応）"""

    # ログ設定
    LOG_LEVEL: str = Field(default="INFO", description="ログレベル")
    LOG_FILE: str = Field(default="logs/solver.log", description="ログファイルパス")

    # 出力設定
    OUTPUT_PATH: str = Field(default="out", description="既定の出力ディレクトリ")

    # モデル評価
    DET_FLOOR: float = Field(default=1e-8, gt=0, description="A2 / det Y_p の下限")
    Y_NEWTON_TOL: float = Field(default=1e-12, gt=0, description="Y逆写像ニュートン法の停止許容誤差")
    Y_RESIDUAL_TOL: float = Field(default=1e-10, gt=0, description="|D_xc(x,Y)-p| の合格上限")
    Y_MAX_ITER: int = Field(default=50, ge=1, le=1000, description="Y逆写像ニュートン法の最大反復回数")
    FD_STEP_P: float = Field(default=1e-4, gt=0, description="pについての中心差分の相対ステップ")
    FD_STEP_REGULARITY: float = Field(default=1e-3, gt=0, description="A3w判定用4次差分の相対ステップ")

    # グリッド
    GRID_MIN_INTERIOR: int = Field(default=3, ge=1, description="各軸の最小内部節点数")
    GRID_SNAP: float = Field(default=1e-3, ge=0, lt=0.5, description="境界節点とみなす距離（hに対する比）")

    # ソルバー
    ELLIPTICITY_FACTOR: float = Field(default=1e-10, gt=0, description="楕円性の相対下限係数")

    # 条件判定
    REPORT_TOLERANCE: float = Field(default=1e-8, ge=0, description="汎用の判定許容誤差")
    REGULARITY_TOLERANCE: float = Field(default=1e-6, ge=0, description="A3w判定の許容誤差")
    CONVEXITY_TOLERANCE: float = Field(default=1e-9, ge=0, description="多角形凸性判定の許容誤差")
    SOLUTION_CONVEXITY_TOLERANCE: float = Field(default=1e-6, ge=0, description="解のc凸性判定の許容誤差")
    COMPARISON_TOLERANCE: float = Field(default=1e-8, ge=0, description="比較原理判定の許容誤差")
    STRICT_DELTA_MIN: float = Field(default=1e-8, ge=0, description="狭義劣解とみなすδ0の下限")
    DIRECTION_COUNT: int = Field(default=64, ge=4, le=4096, description="方向サンプル数")
    BARRIER_C_CAP: float = Field(default=1.0, gt=0, description="障壁証明書の定数Cの上限")
    BARRIER_K_MAX_EXPONENT: int = Field(default=10, ge=0, le=30, description="K自動探索の最大指数")

    # 評価量モニタ
    POGORELOV_MARGIN: float = Field(default=0.125, ge=0, description="Pogorelov 汎関数の最大を取る内側領域の境界からの距離")

    # 環境設定
    ENVIRONMENT: str = Field(default="production", description="実行環境")

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v):
        """ログレベル検証"""
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"LOG_LEVELは以下のいずれかである必要があります: {', '.join(valid_levels)}")
        return v.upper()

    @field_validator("ENVIRONMENT")
    @classmethod
    def validate_environment(cls, v):
        """実行環境検証"""
        if v.lower() not in ("development", "production"):
            raise ValueError("ENVIRONMENTは development か production である必要があります")
        return v.lower()

    def is_development(self) -> bool:
        """開発環境かどうか判定"""
        return self.ENVIRONMENT == "development"

    def get_output_path(self) -> Path:
        """出力パスをPathオブジェクトで取得"""
        return Path(self.OUTPUT_PATH)

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "case_sensitive": True,
        "validate_assignment": True,
        "extra": "ignore",
    }


# 設定インスタンス作成
settings = Settings()


def log_settings_summary():
    """数値定数をログに出力（開発環境のみ）"""
    if not settings.is_development():
        return
    logger.debug("=== 数値設定 ===")
    logger.debug(f"DET_FLOOR={settings.DET_FLOOR}, FD_STEP_P={settings.FD_STEP_P}, "
                 f"FD_STEP_REGULARITY={settings.FD_STEP_REGULARITY}")
    logger.debug(f"Y_NEWTON_TOL={settings.Y_NEWTON_TOL}, Y_MAX_ITER={settings.Y_MAX_ITER}")
    logger.debug(f"ELLIPTICITY_FACTOR={settings.ELLIPTICITY_FACTOR}, DIRECTION_COUNT={settings.DIRECTION_COUNT}")
    logger.debug(f"ログレベル: {settings.LOG_LEVEL}, ログファイル: {settings.LOG_FILE}")
