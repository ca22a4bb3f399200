import numpy as np
import pytest

from app.core.exceptions import (ConfigError, DegenerateMappingError, DiffeomorphismError, InversionError,
                                 ModelEvaluationError)
from app.models.cost import A_from_cost, GeneratingMap, problem_from_mapping, solve_Y
from app.models.domain import RectangleDomain
from app.models.problem import MatrixFunction, eval_A
from app.models.registry import MODEL_NAMES, build_model
from app.models.transform import AffineMap, transform_problem
from app.services.condition_service import check_regularity, sample_momenta

from conftest import expr, identity_A, make_problem, zero_A

RNG_SEED = 20240601


def sqrt_cost(sigma=1, y_box=((-3.0, -3.0), (3.0, 3.0))):
    return build_model("sqrt-cost", {"sigma": sigma}, y_box=y_box)


def sqrt_closed_form(p, sigma=1.0):
    s = np.sqrt(1.0 - np.sum(p ** 2, axis=-1))
    return sigma * s[..., None, None] * (np.eye(2) - p[..., :, None] * p[..., None, :])


# ------------------------------------------------------------------ eval_A

def test_eval_A_zero_model_all_orders():
    A, dA, ddA = eval_A(zero_A(), np.array([0.3, 0.4]), np.array([1.0, 2.0]), order=2)
    assert not A.any() and not dA.any() and not ddA.any()
    assert dA.shape == (2, 2, 2) and ddA.shape == (2, 2, 2, 2)


def test_eval_A_identity():
    A, dA = eval_A(identity_A(), np.array([0.3, 0.4]), np.array([1.0, 2.0]), order=1)
    assert np.array_equal(A, np.eye(2))
    assert not dA.any()


def test_eval_A_rejects_bad_order():
    with pytest.raises(ValueError):
        eval_A(zero_A(), np.zeros(2), np.zeros(2), order=3)


def test_sqrt_closed_form_at_zero_momentum():
    mf = sqrt_cost().closed_form
    A, _, ddA = eval_A(mf, np.zeros(2), np.zeros(2), order=2)
    assert A == pytest.approx(np.eye(2))

    numeric = MatrixFunction(lambda x, p: sqrt_closed_form(p), name="numeric")
    assert ddA == pytest.approx(numeric.dpp(np.zeros(2), np.zeros(2)), abs=1e-5)


def test_closed_form_derivatives_match_finite_differences():
    rng = np.random.default_rng(RNG_SEED)
    mf = sqrt_cost(sigma=-1).closed_form
    numeric = MatrixFunction(lambda x, p: mf(x, p), name="numeric")
    x = rng.uniform(0.0, 1.0, size=(100, 2))
    p = sample_momenta(100, 0.8, rng)
    assert mf.dp(x, p) == pytest.approx(numeric.dp(x, p), rel=1e-5, abs=1e-7)
    assert mf.dpp(x, p) == pytest.approx(numeric.dpp(x, p), rel=1e-5, abs=1e-5)


def test_matrix_function_symmetrises_and_reports_witness():
    mf = MatrixFunction(lambda x, p: np.where(p[..., :1, None] > 1.0, np.nan, 1.0) * np.array([[1.0, 2.0], [0.0, 1.0]]))
    assert mf(np.zeros(2), np.zeros(2)) == pytest.approx(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(ModelEvaluationError) as excinfo:
        mf(np.zeros((2, 2)), np.array([[0.0, 0.0], [2.0, 0.0]]))
    assert excinfo.value.context["p"] == [2.0, 0.0]


# ------------------------------------------------------------------ solve_Y / A_from_cost

def test_solve_Y_linear_costs():
    x = np.array([[0.3, -0.2], [1.0, 2.0]])
    p = np.array([[0.5, 0.1], [-1.0, 0.25]])
    linear = build_model("linear-cost").cost
    quadratic = build_model("quadratic-cost").cost
    assert solve_Y(linear, x, p) == pytest.approx(-p)
    assert solve_Y(quadratic, x, p) == pytest.approx(x - p)


def test_solve_Y_sqrt_cost_closed_form():
    cm = sqrt_cost().cost
    x = np.array([0.2, 0.1])
    p = np.array([0.5, -0.3])
    y = solve_Y(cm, x, p)
    s = np.sqrt(1.0 - p @ p)
    assert y == pytest.approx(x - p / s, abs=1e-9)
    assert np.linalg.norm(cm.c_x(x, y) - p) <= 1e-10


def test_solve_Y_outside_A1_region():
    cm = sqrt_cost().cost
    with pytest.raises(InversionError) as excinfo:
        solve_Y(cm, np.zeros(2), np.array([1.5, 0.0]))
    assert "A1 violated" in str(excinfo.value)
    assert excinfo.value.context["trace"]


@pytest.mark.parametrize(("name", "expected"), [("linear-cost", np.zeros((2, 2))), ("quadratic-cost", np.eye(2))])
def test_A_from_linear_costs(name, expected):
    rng = np.random.default_rng(RNG_SEED)
    cm = build_model(name).cost
    x = rng.uniform(-1.0, 1.0, size=(20, 2))
    p = rng.uniform(-1.0, 1.0, size=(20, 2))
    assert A_from_cost(cm, x, p) == pytest.approx(np.broadcast_to(expected, (20, 2, 2)), abs=1e-9)


def test_A_from_sqrt_cost():
    cm = sqrt_cost().cost
    p = np.array([0.5, 0.0])
    A = A_from_cost(cm, np.array([0.1, 0.2]), p)
    assert A == pytest.approx(sqrt_closed_form(p), abs=1e-8)


def test_warm_start_reuses_previous_batch():
    cm = sqrt_cost().cost
    x = np.zeros((3, 2))
    p = np.array([[0.1, 0.0], [0.0, 0.2], [0.3, 0.3]])
    with cm.warm_start():
        first = solve_Y(cm, x, p)
        second = solve_Y(cm, x, p + 1e-3)
    assert second == pytest.approx(solve_Y(cm, x, p + 1e-3), abs=1e-9)
    assert cm._warm_cache is None
    assert first.shape == (3, 2)


def test_unusable_cached_guess_restarts_from_the_box_center():
    cm = sqrt_cost().cost
    x = np.zeros((2, 2))
    p = np.array([[0.1, 0.0], [0.0, 0.2]])
    with cm.warm_start():
        cm._remember(np.full((2, 2), np.nan))
        y = solve_Y(cm, x, p)
    assert np.abs(cm.c_x(x, y) - p).max() <= 1e-10
    assert y == pytest.approx(solve_Y(cm, x, p), abs=1e-12)


# ------------------------------------------------------------------ 生成写像

def test_problem_from_mapping_constant_jacobians():
    square = RectangleDomain()
    x = np.array([[0.2, 0.3], [0.7, 0.1]])
    p = np.array([[0.5, -0.5], [1.0, 2.0]])
    quadratic = GeneratingMap.from_expressions("x1 - p1", "x2 - p2", psi="2")
    ps = problem_from_mapping(quadratic, square, expr("|x|^2"), check_points=(x, p))
    assert ps.A(x, p) == pytest.approx(np.broadcast_to(np.eye(2), (2, 2, 2)))
    assert ps.B(x, p) == pytest.approx([2.0, 2.0])

    linear = GeneratingMap.from_expressions("-p1", "-p2")
    ps = problem_from_mapping(linear, square, expr("|x|^2"))
    assert ps.A(x, p) == pytest.approx(np.zeros((2, 2, 2)))


def test_mapping_from_cost_agrees_with_A_from_cost():
    rng = np.random.default_rng(RNG_SEED)
    cm = sqrt_cost().cost
    ps = problem_from_mapping(GeneratingMap.from_cost(cm), RectangleDomain(), expr("|x|^2"))
    x = rng.uniform(0.0, 1.0, size=(100, 2))
    p = sample_momenta(100, 0.8, rng)
    assert ps.A(x, p) == pytest.approx(A_from_cost(cm, x, p), abs=1e-4)


def test_degenerate_mapping():
    gm = GeneratingMap.from_expressions("x1 + p1", "x2 + p1")
    with pytest.raises(DegenerateMappingError, match="mapping degenerate"):
        problem_from_mapping(gm, RectangleDomain(), expr("|x|^2"),
                             check_points=(np.array([0.5, 0.5]), np.array([0.0, 0.0])))


# ------------------------------------------------------------------ 座標変換

def test_transform_scaling():
    ps = make_problem(RectangleDomain(), B=1.0)
    out = transform_problem(ps, AffineMap(2 * np.eye(2)))
    y = np.array([[0.5, 1.0], [1.5, 0.2]])
    q = np.array([[1.0, 2.0], [-0.3, 0.0]])
    assert out.A(y, q) == pytest.approx(np.zeros((2, 2, 2)))
    assert out.B(y, q) == pytest.approx([1 / 16, 1 / 16])


def test_transform_identity_is_exact():
    ps = make_problem(RectangleDomain(), A=sqrt_cost(sigma=-1).closed_form, B="1 + x1*p2")
    out = transform_problem(ps, AffineMap.identity())
    rng = np.random.default_rng(RNG_SEED)
    x = rng.uniform(0.0, 1.0, size=(30, 2))
    p = sample_momenta(30, 0.8, rng)
    assert np.array_equal(out.A(x, p), ps.A(x, p))
    assert np.array_equal(out.B(x, p), ps.B(x, p))


def test_transform_round_trip_and_regularity_invariance():
    rng = np.random.default_rng(RNG_SEED)
    ps = make_problem(RectangleDomain(), A=sqrt_cost(sigma=-1).closed_form, B="1 + 0.5*|p|^2")
    x = rng.uniform(0.0, 1.0, size=(20, 2))
    p = sample_momenta(20, 0.3, rng)
    base = check_regularity(ps.A, x, p, directions=16)
    assert base.passed

    for _ in range(5):
        diffeo = AffineMap.random(rng, condition_limit=3.0)
        forward = transform_problem(ps, diffeo)
        back = transform_problem(forward, diffeo.inverse_map())
        assert back.A(x, p) == pytest.approx(ps.A(x, p), rel=1e-8, abs=1e-12)
        assert back.B(x, p) == pytest.approx(ps.B(x, p), rel=1e-8)

        # 変換後の運動量 q = J⁻ᵀp が A1 の範囲に入るように選ぶ
        y = diffeo.forward(x)
        q = p @ diffeo.M_inv
        report = check_regularity(forward.A, y, q, directions=16)
        assert report.passed == base.passed


@pytest.mark.parametrize(("name", "params", "regular"), [
    ("zero", {}, True),
    ("const-I", {}, True),
    ("quadratic-cost", {}, True),
    ("linear-cost", {}, True),
    ("sqrt-cost", {"sigma": -1}, True),
    ("sqrt-cost", {"sigma": 1}, False),
    ("log-cost", {}, True),
])
def test_regularity_verdict_survives_affine_changes_of_variables(name, params, regular):
    rng = np.random.default_rng(RNG_SEED)
    bundle = build_model(name, params, y_box=((-3.0, -3.0), (3.0, 3.0)))
    ps = make_problem(RectangleDomain(), A=bundle.regularity_model)
    x = rng.uniform(0.0, 1.0, size=(20, 2))
    p = sample_momenta(20, 0.3, rng)
    assert check_regularity(ps.A, x, p, directions=16).passed is regular

    for _ in range(3):
        diffeo = AffineMap.random(rng, condition_limit=3.0)
        forward = transform_problem(ps, diffeo)
        report = check_regularity(forward.A, diffeo.forward(x), p @ diffeo.M_inv, directions=16)
        assert report.passed is regular


def test_transform_rejects_singular_map():
    with pytest.raises(DiffeomorphismError):
        AffineMap([[1.0, 2.0], [2.0, 4.0]])


# ------------------------------------------------------------------ レジストリ

def test_registry_names_and_parameters():
    assert {"zero", "const-I", "quadratic-cost", "sqrt-cost", "log-cost", "custom-mapping"} <= set(MODEL_NAMES)
    assert build_model("sqrt-cost").params["sigma"] == -1.0
    with pytest.raises(ConfigError):
        build_model("sqrt-cost", {"sigma": 2})
    with pytest.raises(ConfigError):
        build_model("zero", {"sigma": 1})
    with pytest.raises(ConfigError):
        build_model("warp-drive")


def test_quadratic_cost_is_constant_identity():
    rng = np.random.default_rng(RNG_SEED)
    bundle = build_model("quadratic-cost", y_box=((-3, -3), (3, 3)))
    x = rng.uniform(0.0, 1.0, size=(50, 2))
    p = rng.uniform(-2.0, 2.0, size=(50, 2))
    assert np.abs(bundle.A(x, p) - np.eye(2)).max() <= 1e-8
