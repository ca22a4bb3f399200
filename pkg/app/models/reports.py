from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field


class SolveStatus(str, Enum):
    """連続法の終了状態"""
    CONVERGED = "converged"
    STALLED = "stalled"
    ELLIPTICITY_LOST = "ellipticity-lost"


class ConditionReport(BaseModel):
    """条件判定の結果"""
    name: str = Field(..., description="判定名")
    samples: int = Field(0, ge=0, description="サンプル数")
    min_margin: float = Field(..., description="最小余裕（0以上で合格）")
    tolerance: float = Field(0.0, ge=0, description="許容誤差")
    worst_witness: Dict[str, Any] = Field(default_factory=dict, description="最悪サンプル (x, p, ξ, η など)")
    sample_range: Dict[str, Any] = Field(default_factory=dict, description="サンプリング範囲")
    details: Dict[str, Any] = Field(default_factory=dict, description="補助的な値")
    notes: List[str] = Field(default_factory=list, description="注記")

    model_config = {
        "json_schema_extra": {
            "example": {
                "name": "regularity",
                "samples": 12800,
                "min_margin": 0.0,
                "tolerance": 1e-6,
                "worst_witness": {"x": [0.5, 0.5], "p": [0.0, 0.0], "xi": [1.0, 0.0], "eta": [0.0, 1.0]},
            }
        }
    }

    @computed_field
    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.min_margin) and self.min_margin >= -self.tolerance)

    def witness_text(self) -> str:
        return "; ".join(f"{key}={_compact(value)}" for key, value in self.worst_witness.items())


def _compact(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return "(" + ",".join(_compact(v) for v in value) + ")"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


class BarrierCertificate(BaseModel):
    """障壁不等式 ℒφ ≥ ε₁ΣF^{ii} - C の証明書"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    K: float = Field(..., description="φ = exp(K(u̲-u)) の K")
    eps1: float = Field(..., description="ε₁")
    C: float = Field(..., ge=0, description="定数 C")
    margin_field: Optional[Any] = Field(None, description="ℒφ - ε₁ΣF^{ii} + C（内部節点）")
    min_margin: float = Field(0.0, description="margin_field の最小値")
    valid: bool = Field(False, description="証明書が有効か")
    notes: List[str] = Field(default_factory=list)
    trace: List[Dict[str, float]] = Field(default_factory=list, description="K 探索の履歴")


class StepRecord(BaseModel):
    """連続法の1ステップ"""
    t: float
    dt: float
    newton_iterations: int
    residual: float
    min_eig: float
    accepted: bool
    note: Optional[str] = None


class ContinuationResult(BaseModel):
    """連続法の結果"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    status: SolveStatus
    steps: List[StepRecord] = Field(default_factory=list)
    u: Optional[Any] = Field(None, description="最終反復の格子関数")
    iterate: Optional[Any] = Field(None, description="最終反復（EllipticIterate）")
    final_t: float = 0.0
    final_residual: float = float("inf")
    total_newton_iterations: int = 0
    boundary_homotopy: bool = False

    @property
    def accepted_steps(self) -> List[StepRecord]:
        return [s for s in self.steps if s.accepted]


class EstimateReport(BaseModel):
    """評価量のモニタ"""
    sup_D2u_interior: float = Field(..., description="sup_Ω|D²u|")
    sup_D2u_boundary: float = Field(..., description="境界隣接節点での sup|D²u|")
    C_est: float = Field(..., description="sup_Ω|D²u| / (1 + sup_∂Ω|D²u|)")
    min_boundary_w: float = Field(..., description="境界隣接節点での接線方向 w_ξξ の最小値")
    kappa: float = Field(..., description="勾配評価の κ")
    kappa_required: float = Field(..., description="必要な κ の下限")
    gradient_function_boundary_max: float = Field(..., description="境界隣接節点での max e^{κu}|Du|")
    gradient_function_interior_max: float = Field(..., description="深い内部での max e^{κu}|Du|")
    gradient_max_at_boundary: bool = Field(..., description="e^{κu}|Du| の最大が境界隣接節点にあるか")
    K0: float = Field(..., description="観測された sup|u|")
    K0_bound: float = Field(..., description="max(‖u̲‖, ‖φ‖)")
    K1: float = Field(..., description="観測された sup|Du|")
    pogorelov_max: Optional[float] = Field(None, description="境界から pogorelov_margin 以上離れた節点での最大")
    pogorelov_node: Optional[int] = None
    pogorelov_direction: Optional[List[float]] = None
    pogorelov_margin: Optional[float] = Field(None, description="最大を取った内側領域の幅（None は全内部節点）")
    pogorelov_global_max: Optional[float] = Field(None, description="全内部節点での最大")
    notes: List[str] = Field(default_factory=list)


class RateRow(BaseModel):
    """収束率表の1行"""
    h: float
    nodes: int
    error: float
    order: Optional[float] = None
    t_steps: int
    newton_iterations: int
    C_est: float
    pogorelov_max: float
    transport_residual: Optional[float] = None


class RateTable(BaseModel):
    """収束率表"""
    family: str
    rows: List[RateRow] = Field(default_factory=list)
    complete: bool = True
