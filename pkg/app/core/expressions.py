"""
式の文法（バージョン "1"）

φ, u̲, B, A の成分, 写像 Y などの閉形式を設定ファイルから読み込むための小さな文法。
変数 x1, x2（必要に応じて p1, p2）、四則演算、^、括弧、exp / sqrt / abs / log、
および |x|^2, |p|^2 の略記を受け付ける。
"""

import logging
import re
from functools import cached_property
from tokenize import TokenError
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import sympy
from sympy.core.function import AppliedUndef
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

GRAMMAR_VERSION = "1"

X_VARIABLES: Tuple[str, ...] = ("x1", "x2")
XP_VARIABLES: Tuple[str, ...] = ("x1", "x2", "p1", "p2")
XY_VARIABLES: Tuple[str, ...] = ("x1", "x2", "y1", "y2")

_SYMBOLS: Dict[str, sympy.Symbol] = {
    name: sympy.Symbol(name, real=True) for name in ("x1", "x2", "p1", "p2", "y1", "y2")
}

_FUNCTIONS = {
    "exp": sympy.exp,
    "sqrt": sympy.sqrt,
    "abs": sympy.Abs,
    "log": sympy.log,
    "pi": sympy.pi,
}

_ALLOWED_FUNCTION_TYPES = (sympy.exp, sympy.Abs, sympy.log)

_SHORTHANDS = (
    (re.compile(r"\|\s*x\s*\|\s*(?:\^|\*\*)\s*2"), "(x1**2 + x2**2)"),
    (re.compile(r"\|\s*p\s*\|\s*(?:\^|\*\*)\s*2"), "(p1**2 + p2**2)"),
)

_TRANSFORMATIONS = standard_transformations + (convert_xor,)


def symbol(name: str) -> sympy.Symbol:
    """文法で使う実数シンボルを取得"""
    return _SYMBOLS[name]


def _expand_shorthands(source: str) -> str:
    text = source
    for pattern, replacement in _SHORTHANDS:
        text = pattern.sub(replacement, text)
    return text


class Expression:
    """コンパイル済みの式（numpy でベクトル評価、sympy で記号微分）"""

    def __init__(self, expr: sympy.Expr, variables: Sequence[str] = X_VARIABLES, source: Optional[str] = None):
        self.expr = sympy.sympify(expr)
        self.variables = tuple(variables)
        self.source = source if source is not None else str(self.expr)
        self._func = sympy.lambdify([_SYMBOLS[v] for v in self.variables], self.expr, modules="numpy")

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"

    @property
    def uses_p(self) -> bool:
        return any(_SYMBOLS[v] in self.expr.free_symbols for v in ("p1", "p2") if v in self.variables)

    def __call__(self, x, p=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        args = [x[..., 0], x[..., 1]]
        shape = x.shape[:-1]
        if len(self.variables) == 4:
            if p is None:
                p = np.zeros_like(x)
            p = np.asarray(p, dtype=float)
            args += [p[..., 0], p[..., 1]]
            shape = np.broadcast_shapes(shape, p.shape[:-1])
        with np.errstate(all="ignore"):
            value = np.asarray(self._func(*args), dtype=float)
        return np.broadcast_to(value, shape).copy()

    def diff(self, variable: str) -> "Expression":
        """1変数についての記号微分"""
        return Expression(sympy.diff(self.expr, _SYMBOLS[variable]), self.variables)

    def gradient(self, names: Sequence[str] = ("x1", "x2")) -> Tuple["Expression", ...]:
        return tuple(self.diff(name) for name in names)

    def hessian(self, names: Sequence[str] = ("x1", "x2")) -> Tuple[Tuple["Expression", ...], ...]:
        return tuple(tuple(self.diff(a).diff(b) for b in names) for a in names)

    @cached_property
    def is_constant(self) -> bool:
        return not self.expr.free_symbols


def parse_expression(source: str, variables: Sequence[str] = X_VARIABLES) -> Expression:
    """文字列を Expression に変換（未知のシンボル・関数は ConfigError）"""
    if not isinstance(source, str) or not source.strip():
        raise ConfigError("empty expression")

    text = _expand_shorthands(source)
    local_dict = {name: _SYMBOLS[name] for name in variables}
    local_dict.update(_FUNCTIONS)

    try:
        expr = parse_expr(text, local_dict=local_dict, transformations=_TRANSFORMATIONS)
    except (SyntaxError, TokenError, TypeError, ValueError, AttributeError) as e:
        raise ConfigError(f"cannot parse expression {source!r}: {e}", expression=source)

    if not isinstance(expr, sympy.Expr):
        raise ConfigError(f"expression {source!r} is not a scalar formula", expression=source)

    allowed = {_SYMBOLS[name] for name in variables}
    unknown = sorted(str(s) for s in expr.free_symbols if s not in allowed)
    if unknown:
        raise ConfigError(f"unknown symbol(s) {', '.join(unknown)} in expression {source!r}", expression=source)

    undefined = expr.atoms(AppliedUndef)
    foreign = [f for f in expr.atoms(sympy.Function) if not isinstance(f, _ALLOWED_FUNCTION_TYPES)]
    if undefined or foreign:
        names = sorted({type(f).__name__ for f in list(undefined) + foreign})
        raise ConfigError(f"unknown function(s) {', '.join(names)} in expression {source!r}", expression=source)

    logger.debug(f"式を解析: {source!r} -> {expr}")
    return Expression(expr, variables, source=source)
