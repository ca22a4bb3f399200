from dataclasses import replace

import numpy as np
import pytest

from app.core.exceptions import ContinuationError, EllipticityError
from app.models.cost import CostModel
from app.models.domain import RectangleDomain
from app.models.problem import expression_matrix
from app.models.registry import build_model
from app.models.reports import SolveStatus
from app.models.run_config import SolverSection
from app.services.grid_service import assemble_w, build_grid, residual_values
from app.services.solver_service import assemble_linearized, comparison_check, continuation_solve, newton_step
from app.utils.logging import TraceLogger

from conftest import field, ma_problem, make_problem


def p_dependent_problem():
    A = expression_matrix({"a11": "0.1*p1^2", "a12": "0.05*p1*p2", "a22": "0.1*p2^2"})
    return make_problem(RectangleDomain(), A=A, B="1 + 0.1*|p|^2")


def test_linearized_operator_on_the_plain_monge_ampere_equation(square_grid):
    ps = make_problem(RectangleDomain(), B=1.0)
    iterate = assemble_w(ps, field(square_grid, "|x|^2"), with_derivative=True)
    system = assemble_linearized(ps, iterate, 1.0)
    assert system.trace_F == pytest.approx(np.ones(square_grid.n_interior))
    assert system.apply(field(square_grid, "x1^2")) == pytest.approx(np.ones(square_grid.n_interior))


def test_linearized_operator_matches_directional_derivative(square_grid):
    ps = p_dependent_problem()
    t = 0.5
    u = field(square_grid, "|x|^2")
    sub_det = assemble_w(ps, field(square_grid, "1.5*|x|^2")).det_w
    system = assemble_linearized(ps, assemble_w(ps, u, with_derivative=True), t, sub_det)

    def R(values):
        return residual_values(ps, assemble_w(ps, u.with_values(values)), t, sub_det)

    rng = np.random.default_rng(7)
    eps = 1e-6
    for _ in range(20):
        delta = np.zeros(square_grid.n_nodes)
        delta[: square_grid.n_interior] = 0.1 * rng.uniform(-1.0, 1.0, square_grid.n_interior)
        numeric = (R(u.values + eps * delta) - R(u.values - eps * delta)) / (2 * eps)
        assert system.apply(delta) == pytest.approx(numeric, rel=1e-5, abs=1e-6)


def test_newton_step_from_the_exact_solution(square_grid):
    ps = make_problem(RectangleDomain(), B=4.0)
    outcome = newton_step(ps, assemble_w(ps, field(square_grid, "|x|^2"), with_derivative=True), 1.0)
    assert outcome.alpha == 1.0
    assert outcome.delta_norm <= 1e-12
    assert outcome.residual <= 1e-12


def test_newton_step_rejects_a_non_elliptic_iterate(square_grid):
    ps = make_problem(RectangleDomain())
    with pytest.raises(EllipticityError):
        newton_step(ps, assemble_w(ps, field(square_grid, "x1^2 - x2^2"), with_derivative=True), 1.0)


def test_continuation_refuses_a_non_elliptic_subsolution(square_grid):
    ps = make_problem(RectangleDomain())
    with pytest.raises(EllipticityError, match="not elliptic"):
        continuation_solve(ps, field(square_grid, "-|x|^2"))


def test_subsolution_already_solving_every_member(square_grid):
    ps = make_problem(RectangleDomain(), B=4.0)
    trace = TraceLogger()
    result = continuation_solve(ps, field(square_grid, "|x|^2"), trace=trace)
    assert result.status is SolveStatus.CONVERGED
    assert len(result.accepted_steps) == 1
    assert result.total_newton_iterations == 0
    assert not result.boundary_homotopy
    assert [e["event"] for e in trace.events] == ["t_step"]


def test_manufactured_monge_ampere_solution():
    grid = build_grid(RectangleDomain(), 1.0 / 16)
    ps = ma_problem(grid.domain)
    sub = field(grid, "2.5*|x|^2 - 2.3")
    phi = field(grid, "exp(|x|^2/2)")

    result = continuation_solve(ps, sub)
    assert result.status is SolveStatus.CONVERGED
    assert result.boundary_homotopy
    assert result.final_t == 1.0
    assert result.final_residual <= 1e-9
    assert np.abs(result.u.boundary - phi.boundary).max() <= 1e-12
    assert comparison_check(result.u, sub).min_margin >= -1e-8

    error = np.abs(result.u.interior - phi.interior).max()
    assert error < 1e-2


def test_stalled_continuation_keeps_the_partial_result(square_grid):
    ps = make_problem(RectangleDomain(), B=1.0)
    schedule = SolverSection(initial_step=0.5, max_t_steps=1)
    with pytest.raises(ContinuationError) as excinfo:
        continuation_solve(ps, field(square_grid, "|x|^2"), schedule=schedule)
    assert excinfo.value.exit_code == 2
    result = excinfo.value.result
    assert result.status is SolveStatus.STALLED
    assert result.final_t == pytest.approx(0.5)


def test_comparison_check_reports_the_worst_node(square_grid):
    u = field(square_grid, "|x|^2")
    sub = field(square_grid, "|x|^2 + x1 - 0.5")
    report = comparison_check(u, sub)
    assert not report.passed
    assert report.min_margin == pytest.approx(-0.5)
    assert report.worst_witness["x"][0] == pytest.approx(1.0)


def test_continuation_warm_starts_the_cost_inversion(square_grid, monkeypatch):
    bundle = build_model("quadratic-cost", y_box=((-3.0, -3.0), (3.0, 3.0)))
    ps = replace(make_problem(RectangleDomain(), A=bundle.A, B=1.0, exact="|x|^2"), cost=bundle.cost)

    reused = []
    cached_guess = CostModel._cached_guess

    def recording(self, shape):
        guess = cached_guess(self, shape)
        reused.append(guess is not None)
        return guess

    monkeypatch.setattr(CostModel, "_cached_guess", recording)
    result = continuation_solve(ps, field(square_grid, "1.5*|x|^2 - 1"))

    assert result.status is SolveStatus.CONVERGED
    assert np.abs(result.u.values - field(square_grid, "|x|^2").values).max() < 1e-6
    assert reused[0] is False
    assert any(reused)
    assert bundle.cost._warm_cache is None
