"""
solve コマンド: 劣解を検査してから連続法で解き、u と評価量と比較原理の判定を書き出す
"""

import logging

from ..core.exceptions import ConfigError, ContinuationError, HypothesisError
from ..models.reports import ContinuationResult
from ..services.condition_service import check_subsolution
from ..services.diagnostic_service import estimate_report
from ..services.problem_service import PreparedProblem
from ..services.solver_service import comparison_check, continuation_solve
from .common import RunContext

logger = logging.getLogger(__name__)


def solve_prepared(ctx: RunContext, prepared: PreparedProblem) -> ContinuationResult:
    """劣解の確認 → 連続法（verify, transport からも使う）"""
    if prepared.subsolution is None:
        raise ConfigError("[problem] needs a subsolution to start the continuation",
                          section="problem", key="subsolution")

    gate = check_subsolution(prepared.ps, prepared.subsolution)
    if not gate.passed:
        ctx.files.write_conditions([gate])
        raise HypothesisError(f"subsolution rejected (min margin {gate.min_margin:.3e} at "
                              f"{gate.witness_text()})", reports=[gate])

    try:
        return continuation_solve(prepared.ps, prepared.subsolution, ctx.config.solver,
                                  phi=prepared.phi, trace=ctx.trace)
    except ContinuationError as e:
        # 途中経過の u は失敗時も残す
        if e.result is not None and e.result.u is not None:
            ctx.files.write_field("u", e.result.u, ctx.config.output.formats)
        raise


def cmd_solve(ctx: RunContext) -> int:
    prepared = ctx.prepare()
    result = solve_prepared(ctx, prepared)

    report = estimate_report(prepared.ps, result.iterate, prepared.subsolution, mu0=ctx.config.problem.mu0,
                             phi=prepared.phi)
    ctx.trace.estimate(report.model_dump(exclude={"notes"}))
    ctx.files.write_estimate(report)
    ctx.files.write_field("u", result.u, ctx.config.output.formats)

    comparison = comparison_check(result.u, prepared.subsolution)
    ctx.files.write_conditions([comparison])
    if not comparison.passed:
        logger.warning(f"比較原理 u ≥ u̲ が破れています: 最小差 {comparison.min_margin:.3e}")
    logger.info(f"solve 完了: 残差 {result.final_residual:.3e}, C_est {report.C_est:.4g}")
    ctx.extra["status"] = result.status.value
    return 0
