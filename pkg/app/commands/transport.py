"""
transport コマンド: 解いたあと T = Y(·,Du) の輸送残差 |det DT| - ψ を書き出す
"""

import logging

import numpy as np

from ..core.exceptions import ConfigError
from ..services.diagnostic_service import transport_residual
from .common import RunContext
from .solve import solve_prepared

logger = logging.getLogger(__name__)


def cmd_transport(ctx: RunContext) -> int:
    prepared = ctx.prepare()
    ps = prepared.ps
    model = ps.mapping if ps.mapping is not None else ps.cost
    if model is None:
        raise ConfigError(f"model {ctx.config.problem.model!r} has no cost or generating mapping",
                          section="problem", key="model")

    result = solve_prepared(ctx, prepared)
    nodes, values = transport_residual(model, ps, result.iterate)
    ctx.files.write_transport(result.u, nodes, values)
    ctx.files.write_field("u", result.u, ctx.config.output.formats)
    logger.info(f"transport 完了: max |残差| {float(np.max(np.abs(values), initial=0.0)):.3e}")
    return 0
