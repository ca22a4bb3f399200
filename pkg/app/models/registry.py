"""
組み込みモデルの登録

名前とパラメータから行列関数 A（必要ならコスト・写像も）を構築する。
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional

import numpy as np

from ..core.exceptions import ConfigError
from .cost import CostModel, GeneratingMap, mapping_matrix_function
from .problem import MatrixFunction, constant_matrix, expression_matrix

logger = logging.getLogger(__name__)


@dataclass
class ModelBundle:
    """構築済みモデル"""

    name: str
    A: MatrixFunction
    cost: Optional[CostModel] = None
    mapping: Optional[GeneratingMap] = None
    closed_form: Optional[MatrixFunction] = None
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def regularity_model(self) -> MatrixFunction:
        """正則性判定用（閉形式があればそちら）"""
        return self.closed_form if self.closed_form is not None else self.A


_DIFF2 = "(x1 - y1)^2 + (x2 - y2)^2"


def _cost_bundle(name: str, source: str, params: Dict[str, Any], y_box,
                 closed_form: Optional[Dict[str, str]] = None) -> ModelBundle:
    cost = CostModel.from_source(source, name=name, y_box=y_box)
    closed = expression_matrix(closed_form, name=f"{name}(closed)") if closed_form else None
    return ModelBundle(name=name, A=cost.matrix_function(), cost=cost, closed_form=closed, params=params)


def _zero(params, y_box):
    return ModelBundle("zero", constant_matrix(np.zeros((2, 2)), name="zero"), params=params)


def _const_identity(params, y_box):
    return ModelBundle("const-I", constant_matrix(np.eye(2), name="const-I"), params=params)


def _custom_matrix(params, y_box):
    try:
        entries = {key: str(params[key]) for key in ("a11", "a22")}
    except KeyError as e:
        raise ConfigError(f"custom-matrix needs key {e.args[0]}", key=e.args[0])
    entries["a12"] = str(params.get("a12", "0"))
    return ModelBundle("custom-matrix", expression_matrix(entries), params=params)


def _quadratic_cost(params, y_box):
    return _cost_bundle("quadratic-cost", f"({_DIFF2})/2", params, y_box,
                        {"a11": "1", "a12": "0", "a22": "1"})


def _linear_cost(params, y_box):
    return _cost_bundle("linear-cost", "-(x1*y1 + x2*y2)", params, y_box,
                        {"a11": "0", "a12": "0", "a22": "0"})


def _sqrt_cost(params, y_box):
    sigma = float(params.get("sigma", -1))
    if sigma not in (1.0, -1.0):
        raise ConfigError(f"sqrt-cost sigma must be +1 or -1 (got {sigma})", key="sigma")
    s = f"({sigma:+g})*sqrt(1 - |p|^2)"
    closed = {"a11": f"{s}*(1 - p1^2)", "a12": f"-{s}*p1*p2", "a22": f"{s}*(1 - p2^2)"}
    return _cost_bundle("sqrt-cost", f"({sigma:+g})*sqrt(1 + {_DIFF2})", {**params, "sigma": sigma},
                        y_box, closed)


def _log_cost(params, y_box):
    closed = {"a11": "p2^2 - p1^2", "a12": "-2*p1*p2", "a22": "p1^2 - p2^2"}
    return _cost_bundle("log-cost", f"log({_DIFF2})/2", params, y_box, closed)


def _custom_cost(params, y_box):
    if "c" not in params:
        raise ConfigError("custom-cost needs key c", key="c")
    return _cost_bundle("custom-cost", str(params["c"]), params, y_box)


def _custom_mapping(params, y_box):
    missing = [key for key in ("Y1", "Y2") if key not in params]
    if missing:
        raise ConfigError(f"custom-mapping needs key(s) {', '.join(missing)}", key=missing[0])
    gm = GeneratingMap.from_expressions(str(params["Y1"]), str(params["Y2"]), str(params.get("psi", "1")))
    return ModelBundle("custom-mapping", mapping_matrix_function(gm), mapping=gm, params=params)


MODEL_BUILDERS: Dict[str, Callable[[Dict[str, Any], Any], ModelBundle]] = {
    "zero": _zero,
    "const-I": _const_identity,
    "custom-matrix": _custom_matrix,
    "quadratic-cost": _quadratic_cost,
    "linear-cost": _linear_cost,
    "sqrt-cost": _sqrt_cost,
    "log-cost": _log_cost,
    "custom-cost": _custom_cost,
    "custom-mapping": _custom_mapping,
}

MODEL_NAMES = tuple(MODEL_BUILDERS)


def build_model(name: str, params: Optional[Dict[str, Any]] = None, y_box=None) -> ModelBundle:
    """登録名からモデルを構築"""
    builder = MODEL_BUILDERS.get(name)
    if builder is None:
        raise ConfigError(f"unknown model {name!r} (choose from {', '.join(MODEL_NAMES)})", key="model")
    validate_model_params(name, dict(params or {}))
    bundle = builder(dict(params or {}), y_box)
    logger.debug(f"モデル構築: {name} {bundle.params}")
    return bundle


MODEL_PARAMS: Dict[str, tuple] = {
    "zero": (),
    "const-I": (),
    "custom-matrix": ("a11", "a12", "a22"),
    "quadratic-cost": (),
    "linear-cost": (),
    "sqrt-cost": ("sigma",),
    "log-cost": (),
    "custom-cost": ("c",),
    "custom-mapping": ("Y1", "Y2", "psi"),
}


def validate_model_params(name: str, params: Dict[str, Any]):
    """モデルが受け付けないパラメータを拒否"""
    allowed = MODEL_PARAMS.get(name, ())
    unknown = sorted(key for key in params if key not in allowed)
    if unknown:
        raise ConfigError(f"model {name!r} does not accept key(s) {', '.join(unknown)} in [model]",
                          section="model", key=unknown[0])
