"""
コアモジュール

数値定数の設定、例外階層、式の文法を提供します。
"""

from .config import settings
from .exceptions import ConfigError, MongeAmpereError
from .expressions import Expression, parse_expression

__all__ = ["settings", "MongeAmpereError", "ConfigError", "Expression", "parse_expression"]
