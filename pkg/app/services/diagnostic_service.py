"""
評価量モニタ

Pogorelov 型汎関数、2 階微分比 C_est、勾配評価の関数 e^{κu}|Du|、境界での接線方向 w_ξξ、
最適輸送の残差 |det DT| - ψ、および製造解に対する収束率調査。
"""

import logging
import math
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from ..core.config import settings
from ..core.exceptions import ConfigError, MongeAmpereError, StudyError
from ..models.cost import CostModel, GeneratingMap, warm_started
from ..models.domain import rotate_quarter
from ..models.grid import EllipticIterate, ScalarField
from ..models.problem import ProblemSpec
from ..models.reports import EstimateReport, RateRow, RateTable
from ..models.run_config import SolverSection
from ..utils.logging import TraceLogger
from .condition_service import direction_pairs
from .grid_service import assemble_w, build_grid, one_sided_hessian, symmetric_eigenvalues
from .solver_service import continuation_solve

logger = logging.getLogger(__name__)

# 方向インデックス E, W, N, S
_E, _W, _N, _S = 0, 1, 2, 3


class PogorelovResult(NamedTuple):
    field: np.ndarray
    maximum: float
    node: int
    direction: np.ndarray
    margin: Optional[float] = None


def _iterate(ps: ProblemSpec, u: Union[ScalarField, EllipticIterate]) -> EllipticIterate:
    return u if isinstance(u, EllipticIterate) else assemble_w(ps, u)


def pogorelov_functional(ps: ProblemSpec, u: Union[ScalarField, EllipticIterate], subsolution: ScalarField,
                         a: float = 1.0, b: float = 1.0, K: float = 1.0,
                         directions: Optional[int] = None, margin: Optional[float] = None) -> PogorelovResult:
    """節点 × 方向ごとの exp{(a/2)|Du|² + bφ}·w_ξξ（φ = e^{K(u̲-u)}）

    margin を与えると、最大は境界からの距離が margin 以上の節点（固定した内側領域）だけで取る。
    該当する節点が無ければ全内部節点に戻し、結果の margin は None になる。
    """
    iterate = _iterate(ps, u)
    grid = iterate.grid
    n_int = grid.n_interior
    xi, _ = direction_pairs(directions)
    phi = np.exp(K * (subsolution.values[:n_int] - iterate.u.values[:n_int]))
    weight = np.exp(0.5 * a * np.sum(iterate.Du ** 2, axis=-1) + b * phi)
    field = weight[:, None] * np.einsum("nij,di,dj->nd", iterate.w, xi, xi)

    candidates = np.arange(n_int)
    if margin is not None:
        inner = np.flatnonzero(grid.domain.signed_distance(grid.interior_points) >= margin * (1 - 1e-9))
        if len(inner):
            candidates = inner
        else:
            logger.warning(f"境界から {margin:g} 以上離れた節点がないため全内部節点で最大を取ります")
            margin = None
    local, d = np.unravel_index(int(np.argmax(field[candidates])), (len(candidates), field.shape[1]))
    node = int(candidates[local])
    return PogorelovResult(field=field, maximum=float(field[node, d]), node=node, direction=xi[d], margin=margin)


def boundary_w(ps: ProblemSpec, u: Union[ScalarField, EllipticIterate],
               tangents: Optional[np.ndarray] = None):
    """境界隣接節点での接線方向 w_ξξ（接線は最寄りの境界の法線から）

    戻り値は (節点番号, 値)。
    """
    iterate = _iterate(ps, u)
    grid = iterate.grid
    nodes = np.flatnonzero(grid.boundary_adjacent)
    if tangents is None:
        tangents = rotate_quarter(grid.domain.outward_normal(grid.points[nodes]))
    values = np.einsum("nij,ni,nj->n", iterate.w[nodes], tangents, tangents)
    return nodes, values


def _spectral_norm(m: np.ndarray) -> np.ndarray:
    lo, hi = symmetric_eigenvalues(m)
    return np.maximum(np.abs(lo), np.abs(hi))


def required_kappa(mu0: float, gradient_max: float) -> float:
    """κ ≥ μ0(1+G²)/G²（G = max(sup|Du|, 1)）"""
    g = max(gradient_max, 1.0)
    return mu0 * (1.0 + g * g) / (g * g)


def estimate_report(ps: ProblemSpec, u: Union[ScalarField, EllipticIterate], subsolution: ScalarField,
                    mu0: float = 1.0, phi: Optional[ScalarField] = None,
                    pogorelov: Sequence[float] = (1.0, 1.0, 1.0),
                    pogorelov_margin: Optional[float] = None) -> EstimateReport:
    """評価量をまとめて計算（境界での値は境界隣接節点で近似）

    境界の sup|D²u| は切れた腕の方向だけ片側差分に替えた D²u で測る。Pogorelov 汎関数の最大は
    境界から pogorelov_margin（既定は設定値）以上離れた節点で取る。
    """
    margin = pogorelov_margin if pogorelov_margin is not None else settings.POGORELOV_MARGIN
    iterate = _iterate(ps, u)
    grid = iterate.grid
    phi = phi if phi is not None else ScalarField.from_function(grid, ps.phi)
    adjacent = grid.boundary_adjacent
    deep = grid.deep
    notes = ["boundary quantities are evaluated at boundary-adjacent interior nodes"]

    sup_interior = float(np.max(_spectral_norm(iterate.D2u), initial=0.0))
    boundary_D2u, fallback = one_sided_hessian(iterate.u)
    sup_boundary = float(np.max(_spectral_norm(boundary_D2u), initial=0.0))
    if np.any(fallback):
        notes.append(f"{int(np.sum(fallback))} boundary-adjacent nodes lack a one-sided stencil "
                     f"and use Shortley-Weller second differences")
    _, tangential = boundary_w(ps, iterate)

    gradient = np.linalg.norm(iterate.Du, axis=-1)
    K1 = float(np.max(gradient, initial=0.0))
    kappa_required = required_kappa(mu0, K1)
    kappa = 2.0 ** math.ceil(math.log2(kappa_required)) if kappa_required > 0 else 1.0
    psi = np.exp(kappa * iterate.u.interior) * gradient
    boundary_max = float(np.max(psi[adjacent], initial=0.0))
    interior_max = float(np.max(psi[deep], initial=0.0))
    at_boundary = interior_max <= boundary_max + 1e-6
    if not at_boundary:
        notes.append(f"max of e^(kappa u)|Du| is attained in the deep interior for kappa={kappa:g}")

    a, b, K = pogorelov
    result = pogorelov_functional(ps, iterate, subsolution, a, b, K, margin=margin)
    if result.margin is None and margin > 0:
        notes.append(f"no node lies {margin:g} inside the boundary; Pogorelov maximum taken over all interior nodes")
    return EstimateReport(
        sup_D2u_interior=sup_interior, sup_D2u_boundary=sup_boundary,
        C_est=sup_interior / (1.0 + sup_boundary),
        min_boundary_w=float(np.min(tangential, initial=np.inf)),
        kappa=kappa, kappa_required=kappa_required,
        gradient_function_boundary_max=boundary_max, gradient_function_interior_max=interior_max,
        gradient_max_at_boundary=at_boundary,
        K0=float(np.max(np.abs(iterate.u.values), initial=0.0)),
        K0_bound=max(subsolution.max_norm(), phi.max_norm()),
        K1=K1,
        pogorelov_max=result.maximum, pogorelov_node=result.node, pogorelov_direction=result.direction.tolist(),
        pogorelov_margin=result.margin, pogorelov_global_max=float(np.max(result.field, initial=-np.inf)),
        notes=notes,
    )


def transport_residual(model: Union[CostModel, GeneratingMap], ps: ProblemSpec,
                       u: Union[ScalarField, EllipticIterate],
                       psi: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None):
    """深い内部節点での |det DT| - ψ(x,Du)（T = Y(·,Du) の中心差分）

    ψ を省略すると B(x,Du)·|det Y_p| を使う。戻り値は (節点番号, 値)。
    """
    cost = model if isinstance(model, CostModel) else None
    with warm_started(cost):
        iterate = _iterate(ps, u)
        grid = iterate.grid
        x = grid.interior_points
        Du = iterate.Du
        if cost is not None:
            T = cost.transport_map(x, Du)
            det_Yp = 1.0 / np.abs(np.linalg.det(cost.c_xy(x, T)))
    if cost is None:
        T = model.Y(x, Du)
        det_Yp = np.abs(model.det_Yp(x, Du))

    nodes = np.flatnonzero(grid.deep)
    nb = grid.neighbors[nodes]
    h = grid.h
    DT = np.stack([(T[nb[:, _E]] - T[nb[:, _W]]) / (2 * h), (T[nb[:, _N]] - T[nb[:, _S]]) / (2 * h)], axis=-1)
    if psi is not None:
        density = np.asarray(psi(x[nodes], Du[nodes]), dtype=float)
    elif isinstance(model, GeneratingMap):
        density = np.asarray(model.psi(x[nodes], Du[nodes]), dtype=float)
    else:
        density = ps.B(x[nodes], Du[nodes]) * det_Yp[nodes]
    return nodes, np.abs(np.linalg.det(DT)) - density


def _transport_model(ps: ProblemSpec):
    return ps.mapping if ps.mapping is not None else ps.cost


def convergence_study(ps: ProblemSpec, h_values: Sequence[float], schedule: Optional[SolverSection] = None,
                      mu0: float = 1.0, trace: Optional[TraceLogger] = None) -> RateTable:
    """格子幅ごとに解いて厳密解との最大誤差と観測次数を表にする"""
    if len(h_values) < 2:
        raise StudyError("need ≥2 resolutions", partial=None, exit_code=1)
    if ps.exact is None:
        raise ConfigError("convergence study needs an exact solution", key="exact")
    if ps.subsolution is None:
        raise ConfigError("convergence study needs a subsolution", key="subsolution")

    table = RateTable(family=ps.name)
    model = _transport_model(ps)
    previous: Optional[RateRow] = None
    for h in h_values:
        try:
            grid = build_grid(ps.domain, h)
            sub = ScalarField.from_function(grid, ps.subsolution)
            result = continuation_solve(ps, sub, schedule, trace=trace)
            error = float(np.max(np.abs(result.u.values - ps.exact(grid.points)), initial=0.0))
            report = estimate_report(ps, result.iterate, sub, mu0)
            transport = None
            if model is not None:
                _, values = transport_residual(model, ps, result.iterate)
                transport = float(np.max(np.abs(values), initial=0.0))
        except MongeAmpereError as e:
            table.complete = False
            raise StudyError(f"study aborted at h={h}: {e}", partial=table, exit_code=e.exit_code)

        order = None
        if previous is not None and previous.error > 1e-14 and error > 1e-14:
            order = math.log(previous.error / error) / math.log(previous.h / h)
        row = RateRow(h=h, nodes=grid.n_nodes, error=error, order=order, t_steps=len(result.accepted_steps),
                      newton_iterations=result.total_newton_iterations, C_est=report.C_est,
                      pogorelov_max=report.pogorelov_max, transport_residual=transport)
        table.rows.append(row)
        previous = row
        logger.info(f"収束率調査: h={h:g}, 誤差 {error:.3e}" + (f", 次数 {order:.2f}" if order is not None else ""))
    return table
