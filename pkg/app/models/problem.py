"""
問題インスタンス det(D²u - A(x,Du)) = B(x,Du), u = φ on ∂Ω

行列関数 A(x,p)、スカラー関数 B(x,p)、境界値 φ、劣解 u̲ をまとめて ProblemSpec とする。
評価はすべて (..., n) 形状の配列でベクトル化されている。
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from ..core.config import settings
from ..core.exceptions import ModelEvaluationError
from ..core.expressions import XP_VARIABLES, Expression, parse_expression
from .domain import Domain

logger = logging.getLogger(__name__)

ArrayFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _witness(x: np.ndarray, p: np.ndarray, bad: np.ndarray) -> Tuple[list, list]:
    """最初の不正サンプルの (x, p)"""
    index = np.unravel_index(int(np.argmax(bad)), bad.shape) if bad.ndim else ()
    xb = np.broadcast_to(x, bad.shape + x.shape[-1:])
    pb = np.broadcast_to(p, bad.shape + p.shape[-1:])
    return xb[index].tolist(), pb[index].tolist()


def _fd_step(p: np.ndarray, relative: float) -> np.ndarray:
    return relative * (1.0 + np.linalg.norm(p, axis=-1))


class MatrixFunction:
    """対称行列関数 A(x,p) と p についての導関数"""

    def __init__(self, value: ArrayFunction, dp: Optional[ArrayFunction] = None,
                 dpp: Optional[ArrayFunction] = None, name: str = "A", dim: int = 2,
                 p_independent: bool = False, fd_step: Optional[float] = None):
        self._value = value
        self._dp = dp
        self._dpp = dpp
        self.name = name
        self.dim = dim
        self.p_independent = p_independent
        self.fd_step = fd_step if fd_step is not None else settings.FD_STEP_P

    def __repr__(self) -> str:
        return f"MatrixFunction({self.name!r})"

    @property
    def has_closed_form(self) -> bool:
        return self._dp is not None and self._dpp is not None

    def __call__(self, x, p) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        value = np.asarray(self._value(x, p), dtype=float)
        if not np.all(np.isfinite(value)):
            bad = ~np.all(np.isfinite(value), axis=(-2, -1))
            wx, wp = _witness(x, p, bad)
            raise ModelEvaluationError(f"{self.name} evaluation failed at x={wx}, p={wp}", x=wx, p=wp)
        return 0.5 * (value + np.swapaxes(value, -1, -2))

    def dp(self, x, p) -> np.ndarray:
        """D_{p_k}A_{ij}（添字順 [..., i, j, k]）"""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        if self._dp is not None:
            return np.asarray(self._dp(x, p), dtype=float)
        shape = np.broadcast_shapes(x.shape, p.shape)[:-1] + (self.dim, self.dim, self.dim)
        if self.p_independent:
            return np.zeros(shape)
        h = _fd_step(p, self.fd_step)[..., None]
        out = np.empty(shape)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            forward = self(x, p + h * e)
            backward = self(x, p - h * e)
            out[..., k] = (forward - backward) / (2 * h[..., None])
        return out

    def dpp(self, x, p) -> np.ndarray:
        """A_{ij,kl} = D²_{p_kp_l}A_{ij}（添字順 [..., i, j, k, l]）"""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        if self._dpp is not None:
            return np.asarray(self._dpp(x, p), dtype=float)
        n = self.dim
        shape = np.broadcast_shapes(x.shape, p.shape)[:-1] + (n, n, n, n)
        if self.p_independent:
            return np.zeros(shape)
        h = _fd_step(p, self.fd_step)[..., None]
        hh = h[..., None] ** 2
        center = self(x, p)
        eye = np.eye(n)
        out = np.empty(shape)
        for k in range(n):
            for l in range(k, n):
                if k == l:
                    value = (self(x, p + h * eye[k]) - 2 * center + self(x, p - h * eye[k])) / hh
                else:
                    value = (self(x, p + h * (eye[k] + eye[l])) - self(x, p + h * (eye[k] - eye[l]))
                             - self(x, p - h * (eye[k] - eye[l])) + self(x, p - h * (eye[k] + eye[l]))) / (4 * hh)
                out[..., k, l] = value
                out[..., l, k] = value
        return out


def eval_A(mf: MatrixFunction, x, p, order: int = 0):
    """A(x,p) とその p 微分を order まで評価"""
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2 (got {order})")
    A = mf(x, p)
    if order == 0:
        return (A,)
    dA = mf.dp(x, p)
    if order == 1:
        return A, dA
    return A, dA, mf.dpp(x, p)


def constant_matrix(matrix: Sequence[Sequence[float]], name: str = "const") -> MatrixFunction:
    """定数行列関数（導関数はゼロ）"""
    M = np.asarray(matrix, dtype=float)
    n = M.shape[0]

    def value(x, p):
        shape = np.broadcast_shapes(np.shape(x), np.shape(p))[:-1]
        return np.broadcast_to(M, shape + (n, n)).copy()

    def dp(x, p):
        shape = np.broadcast_shapes(np.shape(x), np.shape(p))[:-1]
        return np.zeros(shape + (n, n, n))

    def dpp(x, p):
        shape = np.broadcast_shapes(np.shape(x), np.shape(p))[:-1]
        return np.zeros(shape + (n, n, n, n))

    return MatrixFunction(value, dp, dpp, name=name, dim=n, p_independent=True)


def expression_matrix(entries: Dict[str, str], name: str = "custom-matrix") -> MatrixFunction:
    """成分 a11, a12, a22 の式から A(x,p) を作る（p 微分は記号微分）"""
    a11 = parse_expression(entries["a11"], XP_VARIABLES)
    a12 = parse_expression(entries.get("a12", "0"), XP_VARIABLES)
    a22 = parse_expression(entries["a22"], XP_VARIABLES)
    grid = ((a11, a12), (a12, a22))
    first = tuple(tuple(e.gradient(("p1", "p2")) for e in row) for row in grid)
    second = tuple(tuple(e.hessian(("p1", "p2")) for e in row) for row in grid)

    def value(x, p):
        return np.stack([np.stack([e(x, p) for e in row], axis=-1) for row in grid], axis=-2)

    def dp(x, p):
        return np.stack([np.stack([np.stack([g(x, p) for g in entry], axis=-1)
                                   for entry in row], axis=-2) for row in first], axis=-3)

    def dpp(x, p):
        return np.stack([np.stack([np.stack([np.stack([h(x, p) for h in hrow], axis=-1) for hrow in entry], axis=-2)
                                   for entry in row], axis=-3) for row in second], axis=-4)

    uses_p = any(e.uses_p for e in (a11, a12, a22))
    return MatrixFunction(value, dp, dpp, name=name, p_independent=not uses_p)


class ScalarFunction:
    """スカラー関数 B(x,p) > 0 と D_pB"""

    def __init__(self, value: ArrayFunction, dp: Optional[ArrayFunction] = None, name: str = "B",
                 p_independent: bool = False, fd_step: Optional[float] = None):
        self._value = value
        self._dp = dp
        self.name = name
        self.p_independent = p_independent
        self.fd_step = fd_step if fd_step is not None else settings.FD_STEP_P

    def __repr__(self) -> str:
        return f"ScalarFunction({self.name!r})"

    def __call__(self, x, p) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        value = np.asarray(self._value(x, p), dtype=float)
        if not np.all(np.isfinite(value)):
            wx, wp = _witness(x, p, ~np.isfinite(value))
            raise ModelEvaluationError(f"{self.name} evaluation failed at x={wx}, p={wp}", x=wx, p=wp)
        return value

    def dp(self, x, p) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        if self._dp is not None:
            return np.asarray(self._dp(x, p), dtype=float)
        shape = np.broadcast_shapes(x.shape, p.shape)
        if self.p_independent:
            return np.zeros(shape)
        h = _fd_step(p, self.fd_step)
        out = np.empty(shape)
        for k in range(p.shape[-1]):
            e = np.zeros(p.shape[-1])
            e[k] = 1.0
            out[..., k] = (self(x, p + h[..., None] * e) - self(x, p - h[..., None] * e)) / (2 * h)
        return out

    def log_gradient(self, x, p) -> np.ndarray:
        """B̃_p = D_pB / B"""
        return self.dp(x, p) / self(x, p)[..., None]

    @classmethod
    def constant(cls, c: float, name: str = "B") -> "ScalarFunction":
        def value(x, p):
            return np.full(np.broadcast_shapes(np.shape(x), np.shape(p))[:-1], float(c))

        def dp(x, p):
            return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(p)))

        return cls(value, dp, name=name, p_independent=True)

    @classmethod
    def from_expression(cls, expr: Expression, name: str = "B") -> "ScalarFunction":
        """x, p の式から（D_pB は記号微分）"""
        grad = expr.gradient(("p1", "p2")) if len(expr.variables) == 4 else None

        def value(x, p):
            return expr(x, p)

        def dp(x, p):
            if grad is None:
                return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(p)))
            return np.stack([g(x, p) for g in grad], axis=-1)

        return cls(value, dp, name=name, p_independent=not expr.uses_p)


@dataclass
class ProblemSpec:
    """Dirichlet 問題のインスタンス"""

    domain: Domain
    A: MatrixFunction
    B: ScalarFunction
    phi: Callable[[np.ndarray], np.ndarray]
    subsolution: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact: Optional[Callable[[np.ndarray], np.ndarray]] = None
    cost: Optional[Any] = None
    mapping: Optional[Any] = None
    name: str = "problem"
    metadata: Dict[str, Any] = field(default_factory=dict)

    def with_subsolution(self, subsolution: Callable[[np.ndarray], np.ndarray]) -> "ProblemSpec":
        return ProblemSpec(self.domain, self.A, self.B, self.phi, subsolution, self.exact,
                           self.cost, self.mapping, self.name, dict(self.metadata))


def manufactured_B(A: MatrixFunction, exact: Expression, floor: float = 0.0) -> ScalarFunction:
    """厳密解 u* から B(x,p) := det(D²u*(x) - A(x, Du*(x))) を作る（p には依存しない）"""
    grad = exact.gradient()
    hess = exact.hessian()

    def value(x, p):
        x = np.asarray(x, dtype=float)
        Du = np.stack([g(x) for g in grad], axis=-1)
        D2u = np.stack([np.stack([h(x) for h in row], axis=-1) for row in hess], axis=-2)
        det = np.linalg.det(D2u - A(x, Du))
        shape = np.broadcast_shapes(x.shape, np.shape(p))[:-1]
        return np.broadcast_to(np.maximum(det, floor), shape).copy()

    def dp(x, p):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(p)))

    return ScalarFunction(value, dp, name=f"manufactured({exact.source})", p_independent=True)
