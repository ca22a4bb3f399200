import pytest

from app.commands.common import apply_overrides
from app.core.exceptions import ConfigError
from app.models.run_config import RunConfig, load_config, parse_config_text
from app.services.problem_service import build_problem, prepare_problem

MA_CONFIG = """
[run]
seed = 7

[problem]
model = zero
domain = rectangle
h = 1/16
exact = exp(|x|^2/2)
subsolution = 2.5*|x|^2 - 2.3

[checks]
names = regularity, subsolution
x_samples = 12

[study]
h = 1/8, 1/16
"""


def test_defaults_and_fractions():
    config = parse_config_text(MA_CONFIG)
    assert config.run.seed == 7
    assert config.problem.h == 1.0 / 16
    assert config.study.h == [0.125, 0.0625]
    assert config.checks.names == ["regularity", "subsolution"]
    assert config.checks.p_samples == 50
    assert config.solver.tol == 1e-9
    assert config.output.formats == ["csv", "vtk"]


def test_model_parameters_pass_through():
    config = parse_config_text("[problem]\nmodel = sqrt-cost\nexact = |x|^2\n[model]\nsigma = -1\n")
    assert config.model_params == {"sigma": "-1"}
    _, bundle = build_problem(config)
    assert bundle.params["sigma"] == -1.0


@pytest.mark.parametrize(("text", "fragment"), [
    ("[problem\nh = 1", "syntax error"),
    ("[plotting]\ncolor = red\n", "unknown section"),
    ("[solver]\ntolerance = 1e-9\n", "solver.tolerance"),
    ("[solver]\ntol = -1\n", "solver.tol"),
    ("[problem]\nh = 1/0\n", "problem.h"),
    ("[checks]\nnames = regularity, telepathy\n", "checks.names"),
    ("[output]\nformats = csv, pdf\n", "output.formats"),
    ("[checks]\nstrictify_mode = sideways\n", "checks.strictify_mode"),
])
def test_malformed_configs(text, fragment):
    with pytest.raises(ConfigError) as excinfo:
        parse_config_text(text)
    assert fragment in excinfo.value.message
    assert excinfo.value.exit_code == 1


def test_unknown_model_key_is_rejected():
    config = parse_config_text("[problem]\nmodel = zero\nexact = |x|^2\n[model]\nsigma = 1\n")
    with pytest.raises(ConfigError, match="does not accept"):
        build_problem(config)


def test_problem_needs_boundary_data():
    with pytest.raises(ConfigError, match="phi or exact"):
        build_problem(parse_config_text("[problem]\nmodel = zero\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.ini")


def test_resolved_ini_round_trip():
    config = parse_config_text(MA_CONFIG)
    again = parse_config_text(config.to_ini(), source="resolved.ini")
    assert again.model_dump() == config.model_dump()


def test_round_trip_keeps_polygons_and_model_parameters():
    text = ("[problem]\nmodel = sqrt-cost\ndomain = polygon\nvertices = 0,0; 1,0; 1,1; 0,1\n"
            "exact = |x|^2\n[model]\nsigma = 1\n")
    config = parse_config_text(text)
    again = parse_config_text(config.to_ini())
    assert again.problem.vertices == [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    assert again.model_params == {"sigma": "1"}


def test_command_line_overrides(tmp_path):
    config = apply_overrides(RunConfig(), out=str(tmp_path), seed=42, formats=["csv"])
    assert config.output.directory == str(tmp_path)
    assert config.run.seed == 42
    assert config.output.formats == ["csv"]
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), formats=["png"])


def test_prepare_problem_evaluates_boundary_data():
    prepared = prepare_problem(parse_config_text(MA_CONFIG))
    assert prepared.grid.h == 1.0 / 16
    assert prepared.phi.values == pytest.approx(prepared.exact.values)
    assert prepared.subsolution is not None
    assert prepared.ps.B.p_independent
