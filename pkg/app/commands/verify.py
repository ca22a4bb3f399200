"""
verify コマンド: 設定された仮定の判定を実行し、conditions.csv / conditions.txt を書き出す
"""

import logging

from ..core.exceptions import HypothesisError
from ..services.condition_service import SOLUTION_CHECKS, ConditionService
from .common import RunContext
from .solve import solve_prepared

logger = logging.getLogger(__name__)


def cmd_verify(ctx: RunContext) -> int:
    checks = ctx.config.checks
    prepared = ctx.prepare()

    # 解が必要な判定があれば先に解く
    solution = None
    if any(name in SOLUTION_CHECKS for name in checks.names):
        solution = solve_prepared(ctx, prepared).iterate

    service = ConditionService(prepared.ps, checks, seed=ctx.seed, mu0=ctx.config.problem.mu0,
                               regularity_model=prepared.bundle.regularity_model if checks.closed_form else None)
    reports = service.run(checks.names, prepared.subsolution, solution=solution)
    ctx.files.write_conditions(reports)

    failed = [r.name for r in reports if not r.passed]
    if failed:
        raise HypothesisError(f"{len(failed)} check(s) failed: {', '.join(failed)}", reports=reports)
    logger.info(f"verify 完了: {len(reports)} 件すべて合格")
    return 0
