import json
import logging
import logging.handlers
import os
from pathlib import Path
from typing import Any, Dict, Optional

from ..core.config import settings


def setup_logging():
    """ログ設定を初期化"""

    # ログディレクトリ作成
    log_dir = os.path.dirname(settings.LOG_FILE)
    if log_dir and not os.path.exists(log_dir):
        os.makedirs(log_dir, exist_ok=True)

    # ルートロガー設定
    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, settings.LOG_LEVEL))

    # ハンドラーが既に設定されている場合はスキップ
    if root_logger.handlers:
        return

    # フォーマッター
    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    # コンソールハンドラー
    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, settings.LOG_LEVEL))
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    # ファイルハンドラー（ローテート）
    file_handler = logging.handlers.RotatingFileHandler(
        settings.LOG_FILE,
        maxBytes=10 * 1024 * 1024,  # 10MB
        backupCount=10,
        encoding='utf-8'
    )
    file_handler.setLevel(getattr(logging, settings.LOG_LEVEL))
    file_handler.setFormatter(formatter)
    root_logger.addHandler(file_handler)

    # sympy / matplotlib は警告以上のみ
    logging.getLogger('sympy').setLevel(logging.WARNING)
    logging.getLogger('matplotlib').setLevel(logging.WARNING)

    logging.info("ログ設定が完了しました")


class SolverLogger:
    """ソルバー実行のイベントログ"""

    def __init__(self):
        self.logger = logging.getLogger('solver')
        self.logger.setLevel(logging.INFO)

        # ソルバーログ専用ファイルハンドラー
        log_dir = os.path.dirname(settings.LOG_FILE)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        solver_log_file = os.path.join(log_dir, 'solver_events.log')

        solver_handler = logging.handlers.RotatingFileHandler(
            solver_log_file,
            maxBytes=20 * 1024 * 1024,  # 20MB
            backupCount=30,
            encoding='utf-8'
        )

        solver_formatter = logging.Formatter(
            '%(asctime)s - SOLVER - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        solver_handler.setFormatter(solver_formatter)

        if not self.logger.handlers:
            self.logger.addHandler(solver_handler)

    def log_run_started(self, command: str, problem: str, h: float, seed: int):
        """実行開始をログ記録"""
        self.logger.info(f"RUN_STARTED - Command: {command}, Problem: {problem}, h: {h}, Seed: {seed}")

    def log_run_completed(self, command: str, status: str, duration: float):
        """実行完了をログ記録"""
        self.logger.info(f"RUN_COMPLETED - Command: {command}, Status: {status}, Duration: {duration:.2f}s")

    def log_run_failed(self, command: str, error: str, exit_code: int):
        """実行失敗をログ記録"""
        self.logger.error(f"RUN_FAILED - Command: {command}, Error: {error}, ExitCode: {exit_code}")

    def log_step_accepted(self, t: float, dt: float, iterations: int, residual: float):
        """t ステップ受理をログ記録"""
        self.logger.info(f"T_STEP_ACCEPTED - t: {t:.6g}, dt: {dt:.3g}, Newton: {iterations}, "
                         f"Residual: {residual:.3e}")

    def log_step_rejected(self, t: float, dt: float, reason: str):
        """t ステップ棄却をログ記録"""
        self.logger.warning(f"T_STEP_REJECTED - t: {t:.6g}, dt: {dt:.3g}, Reason: {reason}")

    def log_line_search_failed(self, t: float, iteration: int, residual: float):
        """直線探索失敗をログ記録（デバッグレベル）"""
        self.logger.debug(f"LINE_SEARCH_FAILED - t: {t:.6g}, Iter: {iteration}, Residual: {residual:.3e}")


class TraceLogger:
    """機械可読なトレース（1行1イベントの JSON、時刻は含めない）"""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        self.events: list = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def emit(self, event: str, **fields: Any):
        record: Dict[str, Any] = {"event": event}
        record.update({key: _plain(value) for key, value in fields.items()})
        self.events.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=False) + "\n")

    def newton(self, t: float, iteration: int, residual: float, min_eig: float, alpha: float):
        self.emit("newton", t=t, iter=iteration, residual=residual, min_eig=min_eig, alpha=alpha)

    def t_step(self, t: float, dt: float, accepted: bool, newton_iterations: int, residual: float,
               note: Optional[str] = None):
        self.emit("t_step", t=t, dt=dt, accepted=accepted, newton_iterations=newton_iterations,
                  residual=residual, note=note)

    def estimate(self, report: Dict[str, Any]):
        self.emit("estimate", **report)


def _plain(value: Any) -> Any:
    if hasattr(value, "item") and callable(value.item):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


# グローバルロガーインスタンス（初回取得時に生成）
_solver_logger: Optional[SolverLogger] = None


def get_solver_logger() -> SolverLogger:
    """ソルバーロガーを取得"""
    global _solver_logger
    if _solver_logger is None:
        _solver_logger = SolverLogger()
    return _solver_logger
