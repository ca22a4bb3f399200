"""
実行設定（INI 形式、[section] ごとに pydantic で検証）

未知のセクション・キーは拒否し、既定値を含めた解決済み設定を resolved.ini として書き出す。
"""

import configparser
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..core.config import settings
from ..core.exceptions import ConfigError
from ..utils.helpers import parse_number

logger = logging.getLogger(__name__)

CHECK_NAMES = (
    "regularity", "structure", "A0-eigenvalue", "B-positive", "subsolution", "strict-subsolution",
    "A-bounded", "uniform-A-convexity", "domain-c-convexity", "solution-c-convexity",
    "barrier", "comparison",
)


def _split(value: Any) -> List[str]:
    if isinstance(value, str):
        return [item.strip() for item in value.replace(";", ",").split(",") if item.strip()]
    return list(value)


_number = parse_number


def _points(value: Any) -> List[List[float]]:
    """"x,y; x,y; ..." 形式の点列"""
    if isinstance(value, str):
        return [[_number(c) for c in item.split(",")] for item in value.split(";") if item.strip()]
    return [list(map(float, item)) for item in value]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class RunSection(_Section):
    """[run]"""
    seed: int = Field(0, ge=0, description="サンプリングの乱数シード")


class ProblemSection(_Section):
    """[problem]"""
    model: str = Field("zero", description="登録済みモデル名")
    domain: str = Field("rectangle", description="rectangle | disc | rounded-rectangle | polygon")
    lower: List[float] = Field(default_factory=lambda: [0.0, 0.0])
    upper: List[float] = Field(default_factory=lambda: [1.0, 1.0])
    center: List[float] = Field(default_factory=lambda: [0.0, 0.0])
    radius: float = Field(1.0, gt=0)
    corner_radius: float = Field(0.1, gt=0)
    vertices: Optional[List[List[float]]] = None
    h: float = Field(1.0 / 32, gt=0, description="格子幅")
    phi: Optional[str] = Field(None, description="境界値 φ の式（省略時は exact）")
    subsolution: Optional[str] = Field(None, description="劣解 u̲ の式")
    B: Optional[str] = Field(None, description="B(x,p) の式")
    exact: Optional[str] = Field(None, description="厳密解 u*（B を製造する）")
    psi: Optional[str] = Field(None, description="輸送密度 ψ(x,p)（B = ψ/|det Y_p|）")
    mu0: float = Field(1.0, ge=0, description="構造条件の定数 μ0")

    @field_validator("lower", "upper", "center", mode="before")
    @classmethod
    def parse_vector(cls, v):
        return [_number(c) for c in _split(v)]

    @field_validator("vertices", mode="before")
    @classmethod
    def parse_vertices(cls, v):
        return None if v in (None, "") else _points(v)

    @field_validator("h", "radius", "corner_radius", mode="before")
    @classmethod
    def parse_fraction(cls, v):
        return _number(v)


class ModelSection(_Section):
    """[model]（モデルごとのパラメータ）"""
    model_config = ConfigDict(extra="allow")


class SolverSection(_Section):
    """[solver]"""
    tol: float = Field(1e-9, gt=0, description="残差の最大ノルム許容値")
    max_newton: int = Field(20, ge=1, description="t ステップごとの最大ニュートン反復")
    initial_step: float = Field(1.0, gt=0, le=1, description="最初の Δt")
    min_step: float = Field(1e-4, gt=0, description="Δt の下限")
    fast_newton_iterations: int = Field(3, ge=1, description="この回数以下で収束したら Δt を倍にする")
    max_t_steps: int = Field(200, ge=1, description="t ステップ試行回数の上限")
    ellipticity_factor: float = Field(default_factory=lambda: settings.ELLIPTICITY_FACTOR, gt=0)
    max_halvings: int = Field(10, ge=0, le=30, description="直線探索の最大半減回数")


class ChecksSection(_Section):
    """[checks]"""
    names: List[str] = Field(default_factory=lambda: ["regularity", "structure", "A0-eigenvalue", "subsolution"])
    x_samples: int = Field(50, ge=1)
    p_samples: int = Field(50, ge=1)
    directions: int = Field(default_factory=lambda: settings.DIRECTION_COUNT, ge=4)
    p_radius: Optional[float] = Field(None, gt=0, description="p のサンプル半径（省略時は 1.5·max|Du|）")
    y_samples: int = Field(16, ge=1)
    boundary_samples: int = Field(256, ge=8)
    delta0: float = Field(0.0, ge=0, description="一様 A 凸性の δ0")
    A_bounded_phi: str = Field("|x|^2", description="A 有界性の補助関数")
    K: Optional[float] = Field(None, description="障壁の K（省略時は自動探索）")
    strictify_a: float = Field(0.0, ge=0)
    strictify_b: float = Field(1.0)
    strictify_mode: str = Field("x1", description="x1 | boundary")
    closed_form: bool = Field(True, description="閉形式の A があれば正則性判定に使う")

    @field_validator("names", mode="before")
    @classmethod
    def parse_names(cls, v):
        names = _split(v)
        unknown = [n for n in names if n not in CHECK_NAMES]
        if unknown:
            raise ValueError(f"unknown check(s): {', '.join(unknown)}")
        return names

    @field_validator("strictify_mode")
    @classmethod
    def validate_mode(cls, v):
        if v not in ("x1", "boundary"):
            raise ValueError("strictify_mode must be x1 or boundary")
        return v


class StudySection(_Section):
    """[study]"""
    h: List[float] = Field(default_factory=lambda: [1.0 / 16, 1.0 / 32, 1.0 / 64])

    @field_validator("h", mode="before")
    @classmethod
    def parse_ladder(cls, v):
        return [_number(c) for c in _split(v)]


class OutputSection(_Section):
    """[output]"""
    directory: str = Field(default_factory=lambda: settings.OUTPUT_PATH)
    formats: List[str] = Field(default_factory=lambda: ["csv", "vtk"])
    trace: bool = True

    @field_validator("formats", mode="before")
    @classmethod
    def parse_formats(cls, v):
        formats = _split(v)
        unknown = [f for f in formats if f not in ("csv", "vtk")]
        if unknown:
            raise ValueError(f"unknown format(s): {', '.join(unknown)}")
        return formats


class RunConfig(_Section):
    """実行設定"""
    run: RunSection = Field(default_factory=RunSection)
    problem: ProblemSection = Field(default_factory=ProblemSection)
    model: ModelSection = Field(default_factory=ModelSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    checks: ChecksSection = Field(default_factory=ChecksSection)
    study: StudySection = Field(default_factory=StudySection)
    output: OutputSection = Field(default_factory=OutputSection)

    @property
    def model_params(self) -> Dict[str, Any]:
        return dict(self.model.model_extra or {})

    def to_ini(self) -> str:
        """解決済み設定の INI テキスト（既定値を含む）"""
        lines = []
        for section in SECTIONS:
            block: BaseModel = getattr(self, section)
            values = block.model_extra if section == "model" else block.model_dump()
            lines.append(f"[{section}]")
            for key, value in (values or {}).items():
                if value is None:
                    continue
                lines.append(f"{key} = {_format_value(value)}")
            lines.append("")
        return "\n".join(lines)


SECTIONS = ("run", "problem", "model", "solver", "checks", "study", "output")


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        if value and isinstance(value[0], list):
            return "; ".join(", ".join(_format_value(c) for c in item) for item in value)
        return ", ".join(_format_value(item) for item in value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """INI テキストを RunConfig に変換（エラーはセクション・キー・行を示す ConfigError）"""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        raise ConfigError(f"{source}: syntax error{f' at line {line}' if line else ''}: {e.message}",
                          line=line)

    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) [{'], ['.join(unknown)}]", section=unknown[0])

    data: Dict[str, Dict[str, str]] = {s: dict(parser.items(s)) for s in parser.sections()}
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"{source}: invalid value for {location}: {first['msg']}", key=location)
    logger.debug(f"設定読み込み: {source}")
    return config


def load_config(path: Union[str, Path]) -> RunConfig:
    """設定ファイルを読み込む"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}", path=str(path))
    return parse_config_text(text, source=str(path))
