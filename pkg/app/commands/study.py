"""
study コマンド: [study] h の各格子幅で解いて rates.csv を書き出す
"""

import logging

from ..core.exceptions import StudyError
from ..services.diagnostic_service import convergence_study
from ..services.problem_service import build_problem
from .common import RunContext

logger = logging.getLogger(__name__)


def cmd_study(ctx: RunContext) -> int:
    ps, _ = build_problem(ctx.config)
    try:
        table = convergence_study(ps, ctx.config.study.h, ctx.config.solver, mu0=ctx.config.problem.mu0,
                                  trace=ctx.trace)
    except StudyError as e:
        if e.partial is not None:
            ctx.files.write_rates(e.partial)
        raise
    ctx.files.write_rates(table)
    orders = [row.order for row in table.rows if row.order is not None]
    if orders:
        logger.info(f"study 完了: 観測次数 {', '.join(f'{o:.2f}' for o in orders)}")
    return 0
