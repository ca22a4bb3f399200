from dataclasses import replace

import numpy as np
import pytest

from app.core.config import settings
from app.core.exceptions import StudyError
from app.models.cost import CostModel
from app.models.domain import DiscDomain, RectangleDomain
from app.models.registry import build_model
from app.services.diagnostic_service import (boundary_w, convergence_study, estimate_report, pogorelov_functional,
                                             required_kappa, transport_residual)
from app.services.grid_service import build_grid

from conftest import MA_EXACT, MA_SUBSOLUTION, field, identity_A, ma_problem, make_problem, sqrt_ot_problem


def test_pogorelov_without_weights_is_the_largest_eigenvalue(square_grid):
    ps = make_problem(RectangleDomain())
    u = field(square_grid, "|x|^2")
    result = pogorelov_functional(ps, u, field(square_grid, "|x|^2 - 1"), a=0.0, b=0.0)
    assert result.maximum == pytest.approx(2.0)
    assert np.linalg.norm(result.direction) == pytest.approx(1.0)


def test_pogorelov_ignores_a_common_shift(square_grid):
    ps = make_problem(RectangleDomain())
    u = field(square_grid, "|x|^2 + x1")
    sub = field(square_grid, "2*|x|^2 - 1")
    base = pogorelov_functional(ps, u, sub)
    shifted = pogorelov_functional(ps, u + 3.0, sub + 3.0)
    assert shifted.maximum == pytest.approx(base.maximum)
    assert shifted.node == base.node


def test_pogorelov_margin_keeps_the_maximum_inside(square_grid):
    ps = ma_problem(RectangleDomain())
    u = field(square_grid, MA_EXACT)
    sub = field(square_grid, MA_SUBSOLUTION)
    everywhere = pogorelov_functional(ps, u, sub)
    inner = pogorelov_functional(ps, u, sub, margin=0.25)

    assert square_grid.points[everywhere.node] == pytest.approx([0.875, 0.875])
    assert square_grid.points[inner.node] == pytest.approx([0.75, 0.75])
    assert inner.margin == 0.25
    assert inner.maximum < everywhere.maximum
    assert np.array_equal(inner.field, everywhere.field)


def test_pogorelov_margin_wider_than_the_domain_falls_back(square_grid):
    ps = ma_problem(RectangleDomain())
    u = field(square_grid, MA_EXACT)
    sub = field(square_grid, MA_SUBSOLUTION)
    result = pogorelov_functional(ps, u, sub, margin=0.75)
    assert result.margin is None
    assert result.maximum == pytest.approx(pogorelov_functional(ps, u, sub).maximum)


def test_boundary_tangential_w_on_the_disc(disc_grid):
    ps = make_problem(DiscDomain())
    nodes, values = boundary_w(ps, field(disc_grid, "|x|^2"))
    assert len(nodes) > 0
    assert values == pytest.approx(np.full(len(nodes), 2.0))


def test_required_kappa():
    assert required_kappa(1.0, 2.0) == pytest.approx(1.25)
    assert required_kappa(1.0, 0.1) == pytest.approx(2.0)


def test_estimate_report_for_a_quadratic(square_grid):
    ps = make_problem(RectangleDomain(), phi="|x|^2/2")
    sub = field(square_grid, "|x|^2/2 - 1")
    report = estimate_report(ps, field(square_grid, "|x|^2/2"), sub)
    assert report.C_est == pytest.approx(0.5)
    assert report.sup_D2u_interior == pytest.approx(1.0)
    assert report.min_boundary_w == pytest.approx(1.0)
    assert report.K1 == pytest.approx(np.hypot(0.875, 0.875))
    assert report.kappa >= report.kappa_required
    assert report.K0_bound == pytest.approx(1.0)
    assert report.pogorelov_margin == settings.POGORELOV_MARGIN
    assert report.pogorelov_global_max >= report.pogorelov_max


def test_estimate_report_uses_one_sided_boundary_hessians(disc_grid):
    ps = make_problem(DiscDomain())
    sub = field(disc_grid, "|x|^2 - 1")
    report = estimate_report(ps, field(disc_grid, "x1^3 + x2^3 + x1^2*x2 + 4*|x|^2"), sub)
    x = disc_grid.points[np.flatnonzero(disc_grid.boundary_adjacent)]
    x1, x2 = x[:, 0], x[:, 1]
    exact = np.stack([np.stack([6 * x1 + 2 * x2 + 8, 2 * x1], axis=-1),
                      np.stack([2 * x1, 6 * x2 + 8], axis=-1)], axis=-2)
    largest = np.abs(np.linalg.eigvalsh(exact)).max()
    assert report.sup_D2u_boundary == pytest.approx(largest, rel=0.05)


@pytest.mark.parametrize(("name", "A", "B"), [("quadratic-cost", identity_A(), 1.0), ("linear-cost", None, 4.0)])
def test_transport_residual_vanishes_for_linear_maps(name, A, B, square_grid):
    ps = make_problem(RectangleDomain(), A=A, B=B)
    cm = build_model(name, y_box=((-3.0, -3.0), (3.0, 3.0))).cost
    nodes, values = transport_residual(cm, ps, field(square_grid, "|x|^2"))
    assert len(nodes) == len(values) > 0
    assert np.abs(values).max() < 1e-9


def test_transport_residual_reuses_the_inverse_from_the_matrix_function(square_grid, monkeypatch):
    bundle = build_model("quadratic-cost", y_box=((-3.0, -3.0), (3.0, 3.0)))
    ps = replace(make_problem(RectangleDomain(), A=bundle.A, B=1.0), cost=bundle.cost)

    reused = []
    cached_guess = CostModel._cached_guess

    def recording(self, shape):
        guess = cached_guess(self, shape)
        reused.append(guess is not None)
        return guess

    monkeypatch.setattr(CostModel, "_cached_guess", recording)
    _, values = transport_residual(bundle.cost, ps, field(square_grid, "|x|^2"))
    assert np.abs(values).max() < 1e-9
    assert reused[-1] is True
    assert bundle.cost._warm_cache is None


def test_study_needs_two_resolutions():
    ps = make_problem(RectangleDomain(), exact="|x|^2", subsolution="1.5*|x|^2 - 1")
    with pytest.raises(StudyError) as excinfo:
        convergence_study(ps, [0.25])
    assert excinfo.value.exit_code == 1


def test_study_on_a_quadratic_solution():
    ps = make_problem(RectangleDomain(), B=4.0, exact="|x|^2", subsolution="1.5*|x|^2 - 1")
    table = convergence_study(ps, [0.25, 0.125])
    assert table.complete
    assert [row.h for row in table.rows] == [0.25, 0.125]
    assert all(row.error <= 1e-8 for row in table.rows)
    assert table.rows[0].order is None


@pytest.mark.slow
def test_manufactured_study_is_second_order_with_bounded_estimates():
    ps = ma_problem(RectangleDomain())
    table = convergence_study(ps, [1.0 / 16, 1.0 / 32, 1.0 / 64])
    orders = [row.order for row in table.rows[1:]]
    assert all(1.7 <= order <= 2.3 for order in orders)
    assert table.rows[-1].error < table.rows[0].error

    pogorelov = [row.pogorelov_max for row in table.rows]
    assert max(pogorelov) <= 1.1 * min(pogorelov)
    c_est = np.array([row.C_est for row in table.rows])
    assert np.all(np.abs(c_est - c_est.mean()) <= 0.25 * c_est.mean())


@pytest.mark.slow
def test_sqrt_cost_transport_residual_decays():
    ps = sqrt_ot_problem(1.0 / 8).ps
    table = convergence_study(ps, [1.0 / 8, 1.0 / 16, 1.0 / 32])
    residuals = [row.transport_residual for row in table.rows]
    assert all(r is not None and r > 0 for r in residuals)
    assert residuals[0] / residuals[1] >= 2.5
    assert residuals[1] / residuals[2] >= 2.5


def test_study_grid_sizes_match_the_grid():
    ps = make_problem(RectangleDomain(), B=4.0, exact="|x|^2", subsolution="1.5*|x|^2 - 1")
    table = convergence_study(ps, [0.25, 0.125])
    assert [row.nodes for row in table.rows] == [build_grid(RectangleDomain(), h).n_nodes for h in (0.25, 0.125)]
