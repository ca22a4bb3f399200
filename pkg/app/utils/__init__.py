"""
ユーティリティモジュール

このモジュールは共通的に使用されるヘルパー関数、
ログ設定、実行環境の記録などのユーティリティを提供します。
"""

from .helpers import format_duration, format_number, parse_number, sanitize_filename
from .logging import setup_logging

__all__ = [
    "sanitize_filename", "parse_number", "format_number", "format_duration", "setup_logging"
]
