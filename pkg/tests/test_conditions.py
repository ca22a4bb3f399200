import numpy as np
import pytest

from app.core.exceptions import ConfigError
from app.models.domain import DiscDomain, PolygonDomain, RectangleDomain, RoundedRectangleDomain
from app.models.problem import MatrixFunction, expression_matrix
from app.models.registry import build_model
from app.models.run_config import ChecksSection
from app.services.condition_service import (ConditionService, barrier_report, check_A0_eigenvalue, check_A_bounded,
                                            check_B_positive, check_barrier, check_domain_c_convexity,
                                            check_regularity, check_solution_c_convexity, check_structure,
                                            check_subsolution, check_uniform_A_convexity, sample_momenta,
                                            sample_points, strictify)
from app.services.grid_service import assemble_w, build_grid
from app.services.solver_service import assemble_linearized, continuation_solve

from conftest import MA_SUBSOLUTION, field, identity_A, ma_problem, make_problem, sqrt_ot_problem, zero_A

RNG_SEED = 11


@pytest.fixture
def samples():
    rng = np.random.default_rng(RNG_SEED)
    return sample_points(RectangleDomain(), 20, rng), sample_momenta(20, 0.5, rng)


def test_samples_stay_inside():
    rng = np.random.default_rng(RNG_SEED)
    disc = DiscDomain()
    x = sample_points(disc, 200, rng)
    assert x.shape == (200, 2)
    assert np.all(disc.signed_distance(x) > 0)
    assert np.all(np.linalg.norm(sample_momenta(200, 0.3, rng), axis=-1) <= 0.3)


# ------------------------------------------------------------------ 正則性

@pytest.mark.parametrize("mf", [zero_A(), identity_A()])
def test_regularity_of_constant_matrices_is_borderline(mf, samples):
    report = check_regularity(mf, *samples, directions=16)
    assert report.min_margin == pytest.approx(0.0, abs=1e-12)
    assert report.passed
    assert report.details["method"] == "closed-form"


def test_regularity_of_the_sqrt_cost(samples):
    report = check_regularity(build_model("sqrt-cost", {"sigma": -1}).closed_form, *samples, directions=16)
    assert report.passed
    assert report.min_margin > 0


def test_regularity_violation_has_a_witness(samples):
    mf = expression_matrix({"a11": "-p2^4", "a12": "0", "a22": "0"})
    report = check_regularity(mf, *samples, directions=16)
    assert not report.passed
    assert set(report.worst_witness) == {"x", "p", "xi", "eta"}


def test_regularity_finite_differences_agree_with_closed_form(samples):
    closed = build_model("sqrt-cost", {"sigma": -1}).closed_form
    numeric = MatrixFunction(lambda x, p: closed(x, p), name="numeric")
    exact = check_regularity(closed, *samples, directions=16)
    approx = check_regularity(numeric, *samples, directions=16)
    assert approx.details["method"] == "finite-difference"
    assert approx.min_margin == pytest.approx(exact.min_margin, rel=1e-3, abs=1e-5)


# ------------------------------------------------------------------ 構造条件・固有値

def test_structure_condition(samples):
    assert check_structure(identity_A(), 0.1, *samples).passed
    violator = expression_matrix({"a11": "-2*(1 + |p|^2)", "a12": "0", "a22": "-2*(1 + |p|^2)"})
    report = check_structure(violator, 1.0, *samples)
    assert not report.passed
    assert report.min_margin <= -1.0


@pytest.mark.parametrize(("matrix", "margin"), [(np.zeros((2, 2)), 0.0), (np.eye(2), 1.0), (-np.eye(2), -1.0)])
def test_A0_eigenvalue(matrix, margin, samples):
    mf = MatrixFunction(lambda x, p: np.broadcast_to(matrix, np.shape(x)[:-1] + (2, 2)).copy())
    assert check_A0_eigenvalue(mf, samples[0]).min_margin == pytest.approx(margin)


def test_B_positive(samples):
    ps = make_problem(RectangleDomain(), B="1 + |p|^2")
    report = check_B_positive(ps.B, *samples)
    assert report.passed
    assert report.details["min_B"] >= 1.0


# ------------------------------------------------------------------ 劣解

def test_manufactured_subsolution_is_strict(square_grid):
    ps = ma_problem(RectangleDomain())
    sub = field(square_grid, MA_SUBSOLUTION)
    report = check_subsolution(ps, sub)
    assert report.passed
    assert report.details["delta0"] > 2.0
    assert check_subsolution(ps, sub, strict=True).passed


def test_failing_subsolution(square_grid):
    ps = ma_problem(RectangleDomain())
    report = check_subsolution(ps, field(square_grid, "|x|^2"))
    assert not report.passed
    assert report.worst_witness["node"] >= 0


def test_strictify_in_x1(square_grid):
    ps = make_problem(RectangleDomain(), B=4.0)
    sub = field(square_grid, "|x|^2")
    assert check_subsolution(ps, sub).passed
    assert not check_subsolution(ps, sub, strict=True).passed

    bumped = strictify(sub, 0.01, 2.0, mode="x1")
    report = check_subsolution(ps, bumped, strict=True)
    assert report.passed
    assert report.details["delta0"] >= 0.08


def test_strictify_margin_grows_with_a(square_grid):
    ps = make_problem(RectangleDomain(), B=4.0)
    sub = field(square_grid, "|x|^2")
    assert strictify(sub, 0.0, 2.0, mode="x1").values == pytest.approx(sub.values)

    margins = [check_subsolution(ps, strictify(sub, a, 2.0, mode="x1"), strict=True).details["delta0"]
               for a in (0.005, 0.01, 0.02)]
    assert 0.0 < margins[0] < margins[1] < margins[2]


def test_strictify_along_the_boundary(disc_grid):
    ps = make_problem(DiscDomain(), B=4.0)
    sub = field(disc_grid, "|x|^2")
    collar = disc_grid.domain.signed_distance(disc_grid.interior_points) < 0.2

    bumped = strictify(sub, 0.05, 3.0, mode="boundary")
    assert bumped.boundary == pytest.approx(sub.boundary)
    assert check_subsolution(ps, bumped, strict=True, mask=collar).passed


def test_strictify_rejects_unknown_mode(square_grid):
    with pytest.raises(ConfigError):
        strictify(field(square_grid, "|x|^2"), 0.1, 1.0, mode="radial")


# ------------------------------------------------------------------ 障壁

def test_barrier_at_the_subsolution_is_constant(square_grid):
    ps = ma_problem(RectangleDomain())
    sub = field(square_grid, MA_SUBSOLUTION)
    iterate = assemble_w(ps, sub, with_derivative=True)
    certificate = check_barrier(ps, iterate, sub, K=1.0)
    assert certificate.valid

    trace_F = assemble_linearized(ps, iterate, 1.0).trace_F
    assert certificate.C == pytest.approx(1.0)
    assert certificate.C == pytest.approx(certificate.eps1 * trace_F.max(), rel=1e-9)


def test_barrier_search_starts_at_one(square_grid):
    ps = ma_problem(RectangleDomain())
    sub = field(square_grid, MA_SUBSOLUTION)
    certificate = check_barrier(ps, assemble_w(ps, sub, with_derivative=True), sub)
    assert certificate.valid
    assert certificate.K == 1.0
    assert len(certificate.trace) == 1


@pytest.mark.slow
def test_barrier_after_a_converged_solve(unit_square):
    ps = ma_problem(unit_square)
    grid = build_grid(unit_square, 1.0 / 16)
    sub = field(grid, MA_SUBSOLUTION)
    result = continuation_solve(ps, sub)

    certificate = check_barrier(ps, result.iterate, sub)
    assert certificate.valid
    assert certificate.K <= 2.0 ** 10
    assert certificate.eps1 > 0
    assert certificate.C >= 0
    assert barrier_report(certificate).passed


def test_barrier_needs_positive_K(square_grid):
    ps = ma_problem(RectangleDomain())
    sub = field(square_grid, MA_SUBSOLUTION)
    certificate = check_barrier(ps, assemble_w(ps, sub, with_derivative=True), sub, K=0.0)
    assert not certificate.valid
    assert "K too small" in certificate.notes
    assert barrier_report(certificate).min_margin <= -1.0


# ------------------------------------------------------------------ A 有界性・境界の凸性

@pytest.mark.parametrize(("A", "phi_bar", "margin"), [
    (zero_A(), "|x|^2", 1.0),
    (zero_A(), "0", -1.0),
    (expression_matrix({"a11": "-p1", "a12": "0", "a22": "-p1"}), "|x|^2", 1.25),
])
def test_A_bounded(A, phi_bar, margin, square_grid):
    ps = make_problem(RectangleDomain(), A=A)
    iterate = assemble_w(ps, field(square_grid, "|x|^2"), with_derivative=True)
    report = check_A_bounded(ps, iterate, field(square_grid, phi_bar))
    assert report.min_margin == pytest.approx(margin, abs=1e-9)


def test_uniform_A_convexity_on_the_disc():
    report = check_uniform_A_convexity(make_problem(DiscDomain()), None)
    assert report.passed
    assert report.min_margin == pytest.approx(1.0)
    assert report.notes


def test_uniform_A_convexity_fails_on_flat_edges():
    ps = make_problem(RoundedRectangleDomain((0.0, 0.0), (1.0, 1.0), 0.2))
    report = check_uniform_A_convexity(ps, None, delta0=0.1)
    assert not report.passed
    assert report.min_margin == pytest.approx(-0.1, abs=1e-9)


@pytest.mark.parametrize("name", ["linear-cost", "quadratic-cost"])
def test_domain_c_convexity_for_linear_images(name):
    cm = build_model(name).cost
    ys = np.random.default_rng(RNG_SEED).uniform(-1.0, 1.0, size=(8, 2))
    assert check_domain_c_convexity(cm, RectangleDomain(), ys, boundary_points=64).passed


def test_domain_c_convexity_fails_on_the_l_shape():
    cm = build_model("sqrt-cost", {"sigma": 1}).cost
    ys = np.random.default_rng(RNG_SEED).uniform(-1.0, 1.0, size=(4, 2))
    report = check_domain_c_convexity(cm, PolygonDomain.l_shape(), ys, boundary_points=64)
    assert not report.passed
    assert report.worst_witness["x"] == pytest.approx([0.5, 0.5])


@pytest.mark.parametrize(("u", "passes"), [("|x|^2", True), ("-|x|^2", False)])
def test_solution_c_convexity_with_linear_cost(u, passes, square_grid):
    cm = build_model("linear-cost").cost
    ps = make_problem(RectangleDomain())
    report = check_solution_c_convexity(cm, assemble_w(ps, field(square_grid, u)))
    assert report.passed is passes


@pytest.mark.slow
def test_solution_c_convexity_of_a_solved_transport_problem():
    prepared = sqrt_ot_problem(1.0 / 8)
    result = continuation_solve(prepared.ps, prepared.subsolution, phi=prepared.phi)
    report = check_solution_c_convexity(prepared.ps.cost, result.iterate)
    assert report.passed
    assert report.min_margin == pytest.approx(0.0, abs=1e-6)
    assert report.samples == prepared.grid.n_interior * prepared.grid.n_nodes


# ------------------------------------------------------------------ ConditionService

def test_service_runs_the_default_checks(square_grid):
    ps = ma_problem(RectangleDomain())
    service = ConditionService(ps, ChecksSection(x_samples=10, p_samples=10, directions=8), seed=3)
    reports = service.run(ChecksSection().names, subsolution=field(square_grid, MA_SUBSOLUTION))
    assert [r.name for r in reports] == ["regularity", "structure", "A0-eigenvalue", "subsolution"]
    assert all(r.passed for r in reports)
    assert reports[0].sample_range["seed"] == 3


def test_service_is_deterministic(square_grid):
    ps = make_problem(RectangleDomain(), A=build_model("sqrt-cost", {"sigma": -1}).closed_form)
    checks = ChecksSection(x_samples=10, p_samples=10, directions=8, p_radius=0.5)
    first = ConditionService(ps, checks, seed=5).run(["regularity", "structure"])
    second = ConditionService(ps, checks, seed=5).run(["regularity", "structure"])
    assert [r.model_dump() for r in first] == [r.model_dump() for r in second]


def test_service_rejects_unknown_or_unsatisfiable_checks(square_grid):
    service = ConditionService(make_problem(RectangleDomain()), ChecksSection())
    with pytest.raises(ConfigError):
        service.run(["warp-drive"])
    with pytest.raises(ConfigError, match="needs a solution"):
        service.run(["barrier"], subsolution=field(square_grid, "|x|^2"))
    with pytest.raises(ConfigError, match="cost model"):
        service.run(["domain-c-convexity"])
