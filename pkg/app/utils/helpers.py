import math
import re
from fractions import Fraction
from typing import Any


def sanitize_filename(filename: str) -> str:
    """ファイル名を安全な形式に変換"""

    # パス区切りや予約文字は _ に置き換える
    safe_filename = re.sub(r'[/\\:*?"<>|]', '_', filename)

    # 連続する空白を _ に
    safe_filename = re.sub(r'\s+', '_', safe_filename.strip())

    # 長すぎる場合は切り詰め
    if len(safe_filename) > 200:
        name, ext = safe_filename.rsplit('.', 1) if '.' in safe_filename else (safe_filename, '')
        max_name_length = 200 - len(ext) - 1
        safe_filename = name[:max_name_length] + ('.' + ext if ext else '')

    return safe_filename or "unnamed"


def parse_number(text: Any) -> float:
    """"1/32" のような分数表記も受け付ける数値変換"""
    if isinstance(text, str):
        try:
            return float(Fraction(text.strip()))
        except ZeroDivisionError:
            raise ValueError(f"division by zero in {text!r}")
    return float(text)


def format_number(value: Any) -> str:
    """CSV 用の決定的な数値表記（浮動小数は %.17g）"""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return "%.17g" % value
    if hasattr(value, "item") and callable(value.item):
        return format_number(value.item())
    return str(value)


def format_duration(seconds: float) -> str:
    """秒数を 分:秒 形式に変換"""

    minutes, rest = divmod(max(seconds, 0.0), 60.0)
    if minutes >= 1:
        return f"{int(minutes)}m {rest:04.1f}s"
    return f"{rest:.2f}s"
