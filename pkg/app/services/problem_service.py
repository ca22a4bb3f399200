"""
設定から問題インスタンスを組み立てるサービス
"""

import logging
from dataclasses import dataclass
from typing import Optional

from ..core.exceptions import ConfigError
from ..core.expressions import XP_VARIABLES, Expression, parse_expression
from ..models.cost import GeneratingMap, mapping_density
from ..models.domain import Domain, build_domain
from ..models.grid import Grid, ScalarField
from ..models.problem import ProblemSpec, ScalarFunction, manufactured_B
from ..models.registry import ModelBundle, build_model
from ..models.run_config import ProblemSection, RunConfig
from .grid_service import build_grid

logger = logging.getLogger(__name__)


@dataclass
class PreparedProblem:
    """問題・モデル・格子と格子上の φ, u̲"""

    ps: ProblemSpec
    bundle: ModelBundle
    grid: Grid
    phi: ScalarField
    subsolution: Optional[ScalarField]
    exact: Optional[ScalarField]


def domain_from_section(section: ProblemSection) -> Domain:
    return build_domain(section.domain, lower=section.lower, upper=section.upper, center=section.center,
                        radius=section.radius, corner_radius=section.corner_radius, vertices=section.vertices)


def _optional(source: Optional[str]) -> Optional[Expression]:
    return parse_expression(source) if source else None


def build_problem(config: RunConfig) -> tuple:
    """RunConfig から (ProblemSpec, ModelBundle) を作る"""
    section = config.problem
    domain = domain_from_section(section)
    lower, upper = domain.bounding_box()
    span = upper - lower
    bundle = build_model(section.model, config.model_params, y_box=(lower - span, upper + span))

    exact = _optional(section.exact)
    phi = _optional(section.phi) or exact
    if phi is None:
        raise ConfigError("[problem] needs phi or exact", section="problem", key="phi")
    subsolution = _optional(section.subsolution)

    mapping = bundle.mapping
    if section.B:
        B = ScalarFunction.from_expression(parse_expression(section.B, XP_VARIABLES))
    elif section.psi:
        density = parse_expression(section.psi, XP_VARIABLES)
        if bundle.cost is not None:
            mapping = GeneratingMap.from_cost(bundle.cost, psi=density)
        elif mapping is not None:
            mapping = GeneratingMap(mapping.Y, mapping.Y_x, mapping.Y_p, density, name=mapping.name)
        else:
            raise ConfigError("psi needs a cost or mapping model", section="problem", key="psi")
        B = mapping_density(mapping)
    elif exact is not None:
        B = manufactured_B(bundle.A, exact)
    elif mapping is not None:
        B = mapping_density(mapping)
    else:
        raise ConfigError("[problem] needs B, psi or exact", section="problem", key="B")

    ps = ProblemSpec(domain=domain, A=bundle.A, B=B, phi=phi, subsolution=subsolution, exact=exact,
                     cost=bundle.cost, mapping=mapping, name=f"{section.model}@{section.domain}",
                     metadata={"model": section.model, "model_params": bundle.params, "domain": domain.describe()})
    logger.info(f"問題を構築: {ps.name} (A={bundle.A.name}, B={B.name})")
    return ps, bundle


def prepare_problem(config: RunConfig, h: Optional[float] = None) -> PreparedProblem:
    """問題を組み立て、格子と境界値・劣解の格子関数を作る"""
    ps, bundle = build_problem(config)
    grid = build_grid(ps.domain, h if h is not None else config.problem.h)
    return PreparedProblem(
        ps=ps, bundle=bundle, grid=grid,
        phi=ScalarField.from_function(grid, ps.phi),
        subsolution=ScalarField.from_function(grid, ps.subsolution) if ps.subsolution is not None else None,
        exact=ScalarField.from_function(grid, ps.exact) if ps.exact is not None else None,
    )
