"""
コスト関数 c(x,y) と生成写像 Y(x,p)

D_xc(x, Y(x,p)) = p をニュートン法で解き、A(x,p) = D²_xc(x, Y(x,p)) を作る。
写像 Y が与えられた場合は A = -Y_p⁻¹Y_x, B = ψ/|det Y_p| とする。
"""

import logging
from contextlib import contextmanager, nullcontext
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from ..core.config import settings
from ..core.exceptions import DegenerateCostError, DegenerateMappingError, InversionError
from ..core.expressions import XP_VARIABLES, XY_VARIABLES, Expression, parse_expression
from .problem import MatrixFunction, ProblemSpec, ScalarFunction, _witness

logger = logging.getLogger(__name__)


def _stack_vector(exprs, x, y) -> np.ndarray:
    return np.stack([e(x, y) for e in exprs], axis=-1)


def _stack_matrix(exprs, x, y) -> np.ndarray:
    return np.stack([_stack_vector(row, x, y) for row in exprs], axis=-2)


class CostModel:
    """コスト関数 c(x,y)（導関数は記号微分）"""

    def __init__(self, cost: Expression, name: str = "cost",
                 y_box: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
                 newton_tol: Optional[float] = None, residual_tol: Optional[float] = None,
                 max_iter: Optional[int] = None, det_floor: Optional[float] = None):
        if tuple(cost.variables) != XY_VARIABLES:
            raise ValueError("cost expression must be written in x1, x2, y1, y2")
        self.cost = cost
        self.name = name
        self.y_box = (np.asarray(y_box[0], dtype=float), np.asarray(y_box[1], dtype=float)) if y_box else \
            (np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        self.newton_tol = newton_tol if newton_tol is not None else settings.Y_NEWTON_TOL
        self.residual_tol = residual_tol if residual_tol is not None else settings.Y_RESIDUAL_TOL
        self.max_iter = max_iter if max_iter is not None else settings.Y_MAX_ITER
        self.det_floor = det_floor if det_floor is not None else settings.DET_FLOOR

        self._cx = cost.gradient(("x1", "x2"))
        self._cy = cost.gradient(("y1", "y2"))
        self._cxx = cost.hessian(("x1", "x2"))
        self._cxy = tuple(tuple(e.diff(b) for b in ("y1", "y2")) for e in self._cx)

        self._warm_cache: Optional[Dict[tuple, np.ndarray]] = None

    @classmethod
    def from_source(cls, source: str, name: str = "custom-cost", **kwargs) -> "CostModel":
        return cls(parse_expression(source, XY_VARIABLES), name=name, **kwargs)

    def __repr__(self) -> str:
        return f"CostModel({self.name!r}: {self.cost.source})"

    def c(self, x, y) -> np.ndarray:
        return self.cost(x, y)

    def c_x(self, x, y) -> np.ndarray:
        return _stack_vector(self._cx, x, y)

    def c_y(self, x, y) -> np.ndarray:
        return _stack_vector(self._cy, x, y)

    def c_xx(self, x, y) -> np.ndarray:
        return _stack_matrix(self._cxx, x, y)

    def c_xy(self, x, y) -> np.ndarray:
        """D²_{x,y}c（[..., i, j] = ∂²c/∂x_i∂y_j）"""
        return _stack_matrix(self._cxy, x, y)

    @property
    def box_center(self) -> np.ndarray:
        return 0.5 * (self.y_box[0] + self.y_box[1])

    @contextmanager
    def warm_start(self):
        """同じ形状のバッチについて前回の Y を初期値に使う（1回のソルバー実行内に限定）"""
        previous = self._warm_cache
        self._warm_cache = {}
        try:
            yield self
        finally:
            self._warm_cache = previous

    def _cached_guess(self, shape: tuple) -> Optional[np.ndarray]:
        if self._warm_cache is None:
            return None
        return self._warm_cache.get(shape)

    def _remember(self, y: np.ndarray):
        if self._warm_cache is not None:
            self._warm_cache[y.shape] = y.copy()

    def matrix_function(self) -> MatrixFunction:
        """A(x,p) = D²_xc(x, Y(x,p))（p 微分は差分）"""
        return MatrixFunction(lambda x, p: A_from_cost(self, x, p), name=f"A[{self.name}]")

    def transport_map(self, x, Du) -> np.ndarray:
        """T(x) = Y(x, Du(x))"""
        return solve_Y(self, x, Du)


def warm_started(cost: Optional[CostModel]):
    """コストが無ければ何もしないコンテキスト"""
    return cost.warm_start() if cost is not None else nullcontext()


def solve_Y(cm: CostModel, x, p, y0=None) -> np.ndarray:
    """D_xc(x,y) = p を y について解く（減衰つきニュートン法）"""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    shape = np.broadcast_shapes(x.shape, p.shape)
    x = np.broadcast_to(x, shape)
    p = np.broadcast_to(p, shape)

    warm = False
    if y0 is None:
        y0 = cm._cached_guess(shape)
        warm = y0 is not None
    if y0 is None:
        y0 = cm.box_center
    y = np.array(np.broadcast_to(np.asarray(y0, dtype=float), shape))

    residual = np.linalg.norm(cm.c_x(x, y) - p, axis=-1)
    trace = [float(np.max(residual, initial=0.0))]
    for _ in range(cm.max_iter):
        active = residual > cm.newton_tol
        if not np.any(active):
            break
        F = cm.c_x(x, y) - p
        J = cm.c_xy(x, y)
        det = np.linalg.det(J)
        singular = np.abs(det) < np.finfo(float).tiny ** 0.5
        J = np.where(singular[..., None, None], np.eye(shape[-1]), J)
        step = -np.linalg.solve(J, F[..., None])[..., 0]
        step = np.where((active & ~singular)[..., None], step, 0.0)

        alpha = np.ones(shape[:-1])
        trial_residual = residual
        for _ in range(30):
            trial = y + alpha[..., None] * step
            with np.errstate(all="ignore"):
                trial_residual = np.linalg.norm(cm.c_x(x, trial) - p, axis=-1)
            worse = active & ~(trial_residual < residual) & (alpha > 0)
            if not np.any(worse):
                break
            alpha = np.where(worse, 0.5 * alpha, alpha)
        improved = trial_residual < residual
        y = np.where(improved[..., None], y + alpha[..., None] * step, y)
        previous_max = trace[-1]
        residual = np.where(improved, trial_residual, residual)
        trace.append(float(np.max(residual, initial=0.0)))
        if not np.any(improved) or (trace[-1] <= cm.residual_tol and trace[-1] >= previous_max):
            break

    failed = ~(residual <= cm.residual_tol)
    if np.any(failed):
        if warm:
            logger.debug("前回の Y からは収束しないため作業領域の中心から解き直します")
            return solve_Y(cm, x, p, y0=cm.box_center)
        wx, wp = _witness(x, p, failed)
        logger.warning(f"Y逆写像が収束しません: x={wx}, p={wp}, 残差={trace[-1]:.3e}")
        raise InversionError(f"A1 violated or bad initial guess at x={wx}, p={wp}",
                             x=wx, p=wp, trace=trace)

    det = np.abs(np.linalg.det(cm.c_xy(x, y)))
    degenerate = det < cm.det_floor
    if np.any(degenerate):
        wx, wp = _witness(x, p, degenerate)
        raise DegenerateCostError(f"degenerate cost at x={wx}, p={wp} (|det D²xy c|={float(np.min(det)):.3e})",
                                  x=wx, p=wp)

    outside = np.any((y < cm.y_box[0]) | (y > cm.y_box[1]), axis=-1)
    if np.any(outside):
        logger.debug(f"Y が作業領域外: {int(np.sum(outside))} 点")

    cm._remember(y)
    return y


def A_from_cost(cm: CostModel, x, p) -> np.ndarray:
    """A(x,p) = D²_xc(x, Y(x,p))"""
    y = solve_Y(cm, x, p)
    A = cm.c_xx(np.broadcast_to(np.asarray(x, dtype=float), y.shape), y)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


class GeneratingMap:
    """生成写像 Y(x,p) と密度 ψ(x,p)"""

    def __init__(self, Y: Callable, Y_x: Callable, Y_p: Callable, psi: Callable,
                 name: str = "mapping", cost: Optional[CostModel] = None, det_floor: Optional[float] = None):
        self.Y = Y
        self.Y_x = Y_x
        self.Y_p = Y_p
        self.psi = psi
        self.name = name
        self.cost = cost
        self.det_floor = det_floor if det_floor is not None else settings.DET_FLOOR

    def __repr__(self) -> str:
        return f"GeneratingMap({self.name!r})"

    @classmethod
    def from_expressions(cls, y1: str, y2: str, psi: str = "1", name: str = "custom-mapping") -> "GeneratingMap":
        """x, p の式から（導関数は記号微分）"""
        comps = (parse_expression(y1, XP_VARIABLES), parse_expression(y2, XP_VARIABLES))
        density = parse_expression(psi, XP_VARIABLES)
        jac_x = tuple(e.gradient(("x1", "x2")) for e in comps)
        jac_p = tuple(e.gradient(("p1", "p2")) for e in comps)
        return cls(
            Y=lambda x, p: _stack_vector(comps, x, p),
            Y_x=lambda x, p: _stack_matrix(jac_x, x, p),
            Y_p=lambda x, p: _stack_matrix(jac_p, x, p),
            psi=lambda x, p: density(x, p),
            name=name,
        )

    @classmethod
    def from_cost(cls, cost: CostModel, psi: Optional[Callable] = None, fd_step: Optional[float] = None,
                  name: Optional[str] = None) -> "GeneratingMap":
        """コストの逆写像 Y を数値的に作る（Y_x, Y_p は中心差分）"""
        step = fd_step if fd_step is not None else settings.FD_STEP_P
        density = psi if psi is not None else (
            lambda x, p: np.ones(np.broadcast_shapes(np.shape(x), np.shape(p))[:-1]))

        def Y(x, p):
            return solve_Y(cost, x, p)

        def jacobian(x, p, wrt: str):
            x = np.asarray(x, dtype=float)
            p = np.asarray(p, dtype=float)
            base = solve_Y(cost, x, p)
            var = x if wrt == "x" else p
            h = step * (1.0 + np.linalg.norm(var, axis=-1))
            h = np.broadcast_to(h, base.shape[:-1])[..., None]
            columns = []
            for k in range(2):
                e = np.zeros(2)
                e[k] = 1.0
                if wrt == "x":
                    forward = solve_Y(cost, x + h * e, p, y0=base)
                    backward = solve_Y(cost, x - h * e, p, y0=base)
                else:
                    forward = solve_Y(cost, x, p + h * e, y0=base)
                    backward = solve_Y(cost, x, p - h * e, y0=base)
                columns.append((forward - backward) / (2 * h))
            return np.stack(columns, axis=-1)

        return cls(Y=Y, Y_x=lambda x, p: jacobian(x, p, "x"), Y_p=lambda x, p: jacobian(x, p, "p"),
                   psi=density, name=name or f"Y[{cost.name}]", cost=cost)

    def det_Yp(self, x, p) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        det = np.linalg.det(self.Y_p(x, p))
        small = ~(np.abs(det) >= self.det_floor)
        if np.any(small):
            wx, wp = _witness(x, p, small)
            raise DegenerateMappingError(f"mapping degenerate at (x,p)=({wx}, {wp})", x=wx, p=wp)
        return det


def mapping_matrix_function(gm: GeneratingMap) -> MatrixFunction:
    """A(x,p) = -Y_p⁻¹Y_x"""

    def value(x, p):
        gm.det_Yp(x, p)
        shape = np.broadcast_shapes(np.shape(x), np.shape(p))[:-1] + (2, 2)
        Yp = np.broadcast_to(gm.Y_p(x, p), shape)
        Yx = np.broadcast_to(gm.Y_x(x, p), shape)
        return -np.linalg.solve(Yp, Yx)

    return MatrixFunction(value, name=f"A[{gm.name}]")


def mapping_density(gm: GeneratingMap) -> ScalarFunction:
    """B(x,p) = ψ(x,p)/|det Y_p|"""

    def value(x, p):
        return np.asarray(gm.psi(x, p), dtype=float) / np.abs(gm.det_Yp(x, p))

    return ScalarFunction(value, name=f"B[{gm.name}]")


def problem_from_mapping(gm: GeneratingMap, domain, phi, subsolution=None, exact=None,
                         name: Optional[str] = None, check_points: Optional[Tuple[np.ndarray, np.ndarray]] = None
                         ) -> ProblemSpec:
    """写像 Y と密度 ψ から問題を作る（Y は u に依存しない）"""
    if check_points is not None:
        gm.det_Yp(*check_points)
    logger.info(f"写像から問題を生成: {gm.name}")
    return ProblemSpec(domain=domain, A=mapping_matrix_function(gm), B=mapping_density(gm), phi=phi,
                       subsolution=subsolution, exact=exact, cost=gm.cost, mapping=gm, name=name or gm.name)
