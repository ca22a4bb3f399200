"""
ソルバーサービス

線形化作用素 ℒ = F^{ij}(D_ij - D_{p_k}A_ij D_k) - s·B̃_{p_k}D_k の組み立て、
楕円性を保つ直線探索つきニュートン法、t についての連続法、比較原理の確認を提供する。
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from ..core.config import settings
from ..core.exceptions import (ContinuationError, EllipticityError, HypothesisError, LineSearchError,
                               ModelEvaluationError)
from ..models.cost import warm_started
from ..models.grid import EllipticIterate, ScalarField
from ..models.problem import ProblemSpec
from ..models.reports import ConditionReport, ContinuationResult, SolveStatus, StepRecord
from ..models.run_config import SolverSection
from ..utils.logging import TraceLogger, get_solver_logger
from .grid_service import assemble_w, boundary_target, ellipticity_floor, residual_values

logger = logging.getLogger(__name__)

# 残差がこれ以下なら直線探索は減少を要求しない
RESIDUAL_FLOOR = 1e-13


@dataclass
class LinearizedSystem:
    """ニュートン法の線形系（内部行は ℒ、境界行は恒等）"""

    operator: sparse.csr_matrix
    matrix: sparse.csc_matrix
    rhs: np.ndarray
    F: np.ndarray
    first_order: np.ndarray

    @property
    def trace_F(self) -> np.ndarray:
        """ΣF^{ii}"""
        return self.F[:, 0, 0] + self.F[:, 1, 1]

    def apply(self, delta) -> np.ndarray:
        """内部節点での ℒδ"""
        values = delta.values if isinstance(delta, ScalarField) else np.asarray(delta, dtype=float)
        return self.operator @ values

    def solve(self) -> np.ndarray:
        delta = spsolve(self.matrix, self.rhs)
        if not np.all(np.isfinite(delta)):
            raise LineSearchError("linear solve failed (singular linearized operator)", reason="singular")
        return delta


@dataclass
class StepOutcome:
    """受理されたニュートン 1 ステップ"""

    iterate: EllipticIterate
    alpha: float
    residual: float
    delta_norm: float

    @property
    def min_eig(self) -> float:
        return float(np.min(self.iterate.min_eig, initial=np.inf))


def _homotopy_weight(ps: ProblemSpec, iterate: EllipticIterate, t: float, sub_det: Optional[np.ndarray]):
    """s = tB / (tB + (1-t)det w̲)"""
    if t >= 1.0:
        return np.ones(iterate.grid.n_interior)
    if sub_det is None:
        raise HypothesisError("a subsolution is required for t < 1")
    B = ps.B(iterate.grid.interior_points, iterate.Du)
    return t * B / (t * B + (1.0 - t) * sub_det)


def assemble_linearized(ps: ProblemSpec, iterate: EllipticIterate, t: float,
                        sub_det: Optional[np.ndarray] = None, target: Optional[np.ndarray] = None,
                        factor: Optional[float] = None) -> LinearizedSystem:
    """残差の厳密なヤコビアンを組み立てる（target は境界節点の目標値）"""
    grid = iterate.grid
    floor = ellipticity_floor(iterate, factor)
    if iterate.min_eig.size and np.min(iterate.min_eig) < floor:
        node = int(np.argmin(iterate.min_eig))
        point = grid.points[node].tolist()
        raise EllipticityError(f"ellipticity floor breached at node {node} x={point} "
                               f"(min eig {iterate.min_eig[node]:.3e} < {floor:.3e})", node=node, point=point)

    x = grid.interior_points
    F = np.linalg.inv(iterate.w)
    F = 0.5 * (F + np.swapaxes(F, -1, -2))
    dA = iterate.dA if iterate.dA is not None else ps.A.dp(x, iterate.Du)
    s = _homotopy_weight(ps, iterate, t, sub_det)
    first_order = np.einsum("nij,nijk->nk", F, dA) + s[:, None] * ps.B.log_gradient(x, iterate.Du)

    ops = grid.operators
    diag = sparse.diags
    operator = (diag(F[:, 0, 0]) @ ops.Dxx + diag(2.0 * F[:, 0, 1]) @ ops.Dxy + diag(F[:, 1, 1]) @ ops.Dyy
                - diag(first_order[:, 0]) @ ops.Dx - diag(first_order[:, 1]) @ ops.Dy).tocsr()

    n_int, n = grid.n_interior, grid.n_nodes
    boundary_rows = sparse.eye(n, format="csr")[n_int:]
    matrix = sparse.vstack([operator, boundary_rows]).tocsc()

    rhs = np.zeros(n)
    rhs[:n_int] = -residual_values(ps, iterate, t, sub_det)
    if target is not None:
        rhs[n_int:] = target - iterate.u.boundary
    return LinearizedSystem(operator=operator, matrix=matrix, rhs=rhs, F=F, first_order=first_order)


def _max_residual(values: np.ndarray) -> float:
    return float(np.max(np.abs(values), initial=0.0))


def newton_step(ps: ProblemSpec, iterate: EllipticIterate, t: float, sub_det: Optional[np.ndarray] = None,
                target: Optional[np.ndarray] = None, max_halvings: int = 10, factor: Optional[float] = None,
                full_step_only: bool = False) -> StepOutcome:
    """ニュートン法 1 ステップ（α ∈ {1, 1/2, ..., 2^-max_halvings}、楕円性と残差減少を要求）

    full_step_only のときは α=1 のみ試し、楕円性だけを要求する（境界増分を持つステップ）。
    """
    system = assemble_linearized(ps, iterate, t, sub_det, target, factor)
    current = _max_residual(system.rhs[: iterate.grid.n_interior])
    delta = system.solve()
    n_int = iterate.grid.n_interior

    reasons = []
    alphas = [1.0] if full_step_only else [2.0 ** -k for k in range(max_halvings + 1)]
    for alpha in alphas:
        values = iterate.u.values + alpha * delta
        if target is not None and alpha == 1.0:
            values[n_int:] = target
        trial_u = iterate.u.with_values(values)
        try:
            trial = assemble_w(ps, trial_u, with_derivative=True)
        except ModelEvaluationError:
            reasons.append("evaluation")
            continue
        if trial.min_eig.size and np.min(trial.min_eig) < ellipticity_floor(trial, factor):
            reasons.append("ellipticity")
            continue
        try:
            value = _max_residual(residual_values(ps, trial, t, sub_det))
        except (EllipticityError, ModelEvaluationError):
            reasons.append("ellipticity")
            continue
        if full_step_only or value < current or value <= RESIDUAL_FLOOR:
            return StepOutcome(iterate=trial, alpha=alpha, residual=value,
                               delta_norm=float(np.max(np.abs(delta), initial=0.0)))
        reasons.append("residual")

    reason = "ellipticity" if reasons and all(r == "ellipticity" for r in reasons) else "residual"
    raise LineSearchError(f"line search failed at t={t:.6g} (residual {current:.3e}, "
                          f"{len(alphas)} trial step(s) rejected: {reason})", reason=reason, t=t)


class _NotConverged(Exception):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"not converged after {iterations} Newton step(s) (residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class ContinuationSolver:
    """t = 0 → 1 の連続法（Δt を適応的に倍・半分にする）"""

    def __init__(self, ps: ProblemSpec, schedule: Optional[SolverSection] = None,
                 trace: Optional[TraceLogger] = None):
        self.ps = ps
        self.schedule = schedule or SolverSection()
        self.trace = trace or TraceLogger()
        self.solver_logger = get_solver_logger()

    def _newton_at(self, iterate: EllipticIterate, t: float, sub_det: np.ndarray, target: Optional[np.ndarray]):
        """固定した t でニュートン反復（target があれば最初のステップで境界を移す）"""
        cfg = self.schedule
        residual = _max_residual(residual_values(self.ps, iterate, t, sub_det))
        iterations = 0
        while target is not None or residual > cfg.tol:
            if iterations >= cfg.max_newton:
                raise _NotConverged(iterations, residual)
            try:
                outcome = newton_step(self.ps, iterate, t, sub_det, target=target, max_halvings=cfg.max_halvings,
                                      factor=cfg.ellipticity_factor, full_step_only=target is not None)
            except LineSearchError as e:
                self.solver_logger.log_line_search_failed(t, iterations + 1, residual)
                e.context.setdefault("iterations", iterations)
                raise
            iterations += 1
            target = None
            iterate, residual = outcome.iterate, outcome.residual
            self.trace.newton(t, iterations, residual, outcome.min_eig, outcome.alpha)
        return iterate, iterations, residual

    def run(self, subsolution: ScalarField, phi: Optional[ScalarField] = None) -> ContinuationResult:
        with warm_started(self.ps.cost):
            return self._run(subsolution, phi)

    def _run(self, subsolution: ScalarField, phi: Optional[ScalarField]) -> ContinuationResult:
        ps, cfg = self.ps, self.schedule
        grid = subsolution.grid
        phi = phi if phi is not None else ScalarField.from_function(grid, ps.phi)

        start = assemble_w(ps, subsolution, with_derivative=True)
        if not start.elliptic:
            node = int(np.argmin(start.min_eig))
            raise EllipticityError(f"subsolution is not elliptic at node {node} x={grid.points[node].tolist()}",
                                   node=node, point=grid.points[node].tolist())
        sub_det = start.det_w
        homotopy = bool(np.max(np.abs(phi.boundary - subsolution.boundary), initial=0.0) > 0)
        if homotopy:
            logger.info("境界値が劣解と異なるため境界ホモトピーを使用します")

        iterate, t, dt = start, 0.0, cfg.initial_step
        steps, total, last_reason = [], 0, "residual"
        status = None
        for _ in range(cfg.max_t_steps):
            if t >= 1.0:
                break
            t_new = min(1.0, t + dt)
            target = boundary_target(phi, subsolution, t_new) if homotopy else None
            try:
                iterate_new, iterations, value = self._newton_at(iterate, t_new, sub_det, target)
            except (LineSearchError, EllipticityError, ModelEvaluationError, _NotConverged) as e:
                if isinstance(e, _NotConverged):
                    iterations, value, last_reason = e.iterations, e.residual, "residual"
                elif isinstance(e, LineSearchError):
                    iterations, value = e.context.get("iterations", 0), float("nan")
                    last_reason = e.context.get("reason", "residual")
                else:
                    iterations, value = 0, float("nan")
                    last_reason = "ellipticity" if isinstance(e, EllipticityError) else "evaluation"
                total += iterations
                steps.append(StepRecord(t=t_new, dt=dt, newton_iterations=iterations, residual=value,
                                        min_eig=float(np.min(iterate.min_eig, initial=np.inf)),
                                        accepted=False, note=str(e)))
                self.trace.t_step(t_new, dt, False, iterations, value, note=last_reason)
                self.solver_logger.log_step_rejected(t_new, dt, str(e))
                dt *= 0.5
                if dt < cfg.min_step:
                    status = SolveStatus.ELLIPTICITY_LOST if last_reason == "ellipticity" else SolveStatus.STALLED
                    break
                continue

            total += iterations
            t, iterate = t_new, iterate_new
            min_eig = float(np.min(iterate.min_eig, initial=np.inf))
            steps.append(StepRecord(t=t, dt=dt, newton_iterations=iterations, residual=value,
                                    min_eig=min_eig, accepted=True))
            self.trace.t_step(t, dt, True, iterations, value)
            self.solver_logger.log_step_accepted(t, dt, iterations, value)
            if iterations <= cfg.fast_newton_iterations:
                dt *= 2.0

        final_residual = steps[-1].residual if steps and steps[-1].accepted else float("nan")
        if t >= 1.0 and status is None:
            status = SolveStatus.CONVERGED
            final_residual = _max_residual(residual_values(ps, iterate, 1.0))
        elif status is None:
            status = SolveStatus.STALLED
        result = ContinuationResult(status=status, steps=steps, u=iterate.u, iterate=iterate, final_t=t,
                                    final_residual=final_residual, total_newton_iterations=total,
                                    boundary_homotopy=homotopy)
        if status is not SolveStatus.CONVERGED:
            exit_code = 3 if status is SolveStatus.ELLIPTICITY_LOST else 2
            raise ContinuationError(f"continuation {status.value} at t={t:.6g} "
                                    f"({len(result.accepted_steps)} accepted step(s), last dt={dt:.3g})",
                                    result=result, exit_code=exit_code)
        logger.info(f"連続法が収束: t ステップ {len(result.accepted_steps)}, ニュートン反復 {total}, "
                    f"残差 {result.final_residual:.3e}")
        return result


def continuation_solve(ps: ProblemSpec, subsolution: ScalarField, schedule: Optional[SolverSection] = None,
                       phi: Optional[ScalarField] = None, trace: Optional[TraceLogger] = None) -> ContinuationResult:
    """u̲ から出発して t = 1 の解を求める"""
    return ContinuationSolver(ps, schedule, trace).run(subsolution, phi)


def comparison_check(u: ScalarField, subsolution: ScalarField, tolerance: Optional[float] = None) -> ConditionReport:
    """比較原理 u ≥ u̲ の確認"""
    tolerance = tolerance if tolerance is not None else settings.COMPARISON_TOLERANCE
    gap = u.values - subsolution.values
    node = int(np.argmin(gap))
    return ConditionReport(name="comparison", samples=len(gap), min_margin=float(gap[node]), tolerance=tolerance,
                           worst_witness={"node": node, "x": u.grid.points[node].tolist()})
