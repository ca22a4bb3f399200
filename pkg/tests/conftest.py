import numpy as np
import pytest

from app.core.config import settings
from app.core.expressions import XP_VARIABLES, parse_expression
from app.models.domain import DiscDomain, RectangleDomain
from app.models.grid import ScalarField
from app.models.problem import ProblemSpec, ScalarFunction, constant_matrix, manufactured_B
from app.models.run_config import parse_config_text
from app.services.grid_service import build_grid
from app.services.problem_service import prepare_problem

MA_EXACT = "exp(|x|^2/2)"
MA_SUBSOLUTION = "2.5*|x|^2 - 2.3"

# c(x,y) = -sqrt(1 + |x-y|²) の輸送問題（製造解 0.2 e^{|x|²/2}）
SQRT_OT = """
[problem]
model = sqrt-cost
domain = rectangle
lower = -0.5, -0.5
upper = 0.5, 0.5
exact = 0.2*exp(|x|^2/2)
subsolution = 0.5*|x|^2 - 0.1

[model]
sigma = -1
"""


@pytest.fixture(autouse=True, scope="session")
def _isolated_logs(tmp_path_factory):
    """ログファイルと既定の出力先をテスト用ディレクトリに向ける"""
    base = tmp_path_factory.mktemp("logs")
    settings.LOG_FILE = str(base / "solver.log")
    settings.OUTPUT_PATH = str(base / "out")
    yield


@pytest.fixture
def unit_square():
    return RectangleDomain((0.0, 0.0), (1.0, 1.0))


@pytest.fixture
def unit_disc():
    return DiscDomain((0.0, 0.0), 1.0)


def zero_A():
    return constant_matrix(np.zeros((2, 2)), name="zero")


def identity_A():
    return constant_matrix(np.eye(2), name="const-I")


def expr(source, variables=None):
    return parse_expression(source) if variables is None else parse_expression(source, variables)


def make_problem(domain, A=None, B=1.0, phi="|x|^2", subsolution=None, exact=None):
    """テスト用の ProblemSpec（B は定数か x, p の式）"""
    A = A if A is not None else zero_A()
    if isinstance(B, str):
        B = ScalarFunction.from_expression(parse_expression(B, XP_VARIABLES))
    elif not isinstance(B, ScalarFunction):
        B = ScalarFunction.constant(B)
    return ProblemSpec(domain=domain, A=A, B=B, phi=expr(phi),
                       subsolution=expr(subsolution) if subsolution else None,
                       exact=expr(exact) if exact else None)


def ma_problem(domain):
    """製造解 u* = e^{|x|²/2} の標準 Monge-Ampère 問題"""
    exact = expr(MA_EXACT)
    return ProblemSpec(domain=domain, A=zero_A(), B=manufactured_B(zero_A(), exact), phi=exact,
                       subsolution=expr(MA_SUBSOLUTION), exact=exact, name="ma")


def field(grid, source):
    return ScalarField.from_function(grid, expr(source))


@pytest.fixture
def square_grid(unit_square):
    return build_grid(unit_square, 1.0 / 8)


@pytest.fixture
def disc_grid(unit_disc):
    return build_grid(unit_disc, 1.0 / 8)


def sqrt_ot_problem(h):
    return prepare_problem(parse_config_text(SQRT_OT), h=h)
