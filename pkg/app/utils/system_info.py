import logging
import os
import platform
from importlib import metadata
from typing import Any, Dict

import psutil

logger = logging.getLogger(__name__)

_LIBRARIES = ("numpy", "scipy", "sympy", "pydantic", "pydantic-settings", "psutil")


def _library_version(name: str) -> str:
    try:
        return metadata.version(name)
    except metadata.PackageNotFoundError:
        return "Unknown"


def collect_run_info(command: str) -> Dict[str, Any]:
    """実行環境の情報を取得（run_info.json に書き出す）"""

    # システム情報取得
    info: Dict[str, Any] = {
        "command": command,
        "os_version": f"{platform.system()} {platform.release()}",
        "python_version": platform.python_version(),
        "machine": platform.machine(),
        "cpu_count": os.cpu_count(),
        "libraries": {name: _library_version(name) for name in _LIBRARIES},
    }

    # プロセス・メモリ情報
    try:
        process = psutil.Process()
        memory_info = psutil.virtual_memory()
        info["process_rss_mb"] = process.memory_info().rss // (1024 * 1024)
        info["memory"] = {
            "used": memory_info.used // (1024 * 1024),  # MB
            "available": memory_info.available // (1024 * 1024),  # MB
            "percent": memory_info.percent,
        }
    except psutil.Error as e:
        logger.warning(f"プロセス情報取得エラー: {e}")

    return info
