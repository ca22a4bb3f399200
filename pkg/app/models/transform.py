"""
座標変換 y = ψ(x) による (A, B) の変換

J_ij = D_jψ_i, p = Jᵀq として
A'(y,q) = J⁻ᵀ[A(x, Jᵀq) - Σ_s q_s D²ψ_s(x)]J⁻¹, B'(y,q) = det(J)⁻² B(x, Jᵀq), x = ψ⁻¹(y)
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, Optional, Sequence

import numpy as np

from ..core.config import settings
from ..core.exceptions import DiffeomorphismError
from .domain import MappedDomain
from .problem import MatrixFunction, ProblemSpec, ScalarFunction

logger = logging.getLogger(__name__)


class Diffeomorphism(ABC):
    """Ω̄ 上の微分同相写像"""

    @abstractmethod
    def forward(self, x) -> np.ndarray: ...

    @abstractmethod
    def inverse(self, y) -> np.ndarray: ...

    @abstractmethod
    def jacobian(self, x) -> np.ndarray:
        """J[..., i, j] = D_jψ_i"""

    @abstractmethod
    def hessians(self, x) -> np.ndarray:
        """H[..., s, k, l] = D_kD_lψ_s"""

    @abstractmethod
    def describe(self) -> Dict[str, Any]: ...


class AffineMap(Diffeomorphism):
    """ψ(x) = Mx + b"""

    def __init__(self, M: Sequence[Sequence[float]], b: Optional[Sequence[float]] = None):
        self.M = np.asarray(M, dtype=float)
        self.b = np.zeros(self.M.shape[0]) if b is None else np.asarray(b, dtype=float)
        det = float(np.linalg.det(self.M))
        if not abs(det) >= settings.DET_FLOOR:
            raise DiffeomorphismError(f"affine map is not invertible (det={det:.3e})", det=det)
        self.M_inv = np.linalg.inv(self.M)

    @classmethod
    def identity(cls, n: int = 2) -> "AffineMap":
        return cls(np.eye(n))

    @classmethod
    def random(cls, rng: np.random.Generator, condition_limit: float = 10.0) -> "AffineMap":
        """条件数が condition_limit 以下のランダムなアフィン写像"""
        while True:
            M = rng.uniform(-1.0, 1.0, size=(2, 2)) + np.eye(2)
            if np.linalg.cond(M) <= condition_limit and abs(np.linalg.det(M)) > 0.1:
                return cls(M, rng.uniform(-0.5, 0.5, size=2))

    def inverse_map(self) -> "AffineMap":
        return AffineMap(self.M_inv, -self.M_inv @ self.b)

    def forward(self, x):
        return np.asarray(x, dtype=float) @ self.M.T + self.b

    def inverse(self, y):
        return (np.asarray(y, dtype=float) - self.b) @ self.M_inv.T

    def jacobian(self, x):
        shape = np.shape(x)[:-1]
        return np.broadcast_to(self.M, shape + self.M.shape).copy()

    def hessians(self, x):
        n = self.M.shape[0]
        return np.zeros(np.shape(x)[:-1] + (n, n, n))

    def describe(self):
        return {"map": "affine", "M": self.M.tolist(), "b": self.b.tolist()}


def _checked_jacobian(diffeo: Diffeomorphism, x: np.ndarray) -> np.ndarray:
    J = diffeo.jacobian(x)
    det = np.linalg.det(J)
    bad = ~(np.abs(det) >= settings.DET_FLOOR)
    if np.any(bad):
        index = np.unravel_index(int(np.argmax(bad)), bad.shape) if bad.ndim else ()
        point = np.broadcast_to(x, bad.shape + x.shape[-1:])[index].tolist()
        raise DiffeomorphismError(f"non-invertible Jacobian at x={point}", x=point)
    return J


def transform_problem(ps: ProblemSpec, diffeo: Diffeomorphism,
                      check_points: Optional[np.ndarray] = None) -> ProblemSpec:
    """座標変換後の問題 (A', B', ψ(Ω), φ∘ψ⁻¹, u̲∘ψ⁻¹)"""
    if check_points is None:
        lower, upper = ps.domain.bounding_box()
        check_points = np.vstack([ps.domain.boundary_polygon(64), 0.5 * (lower + upper)])
    _checked_jacobian(diffeo, np.asarray(check_points, dtype=float))

    A, B = ps.A, ps.B

    def pullback(y, q):
        y = np.asarray(y, dtype=float)
        q = np.asarray(q, dtype=float)
        shape = np.broadcast_shapes(y.shape, q.shape)
        x = diffeo.inverse(np.broadcast_to(y, shape))
        J = _checked_jacobian(diffeo, x)
        p = np.einsum("...ki,...k->...i", J, np.broadcast_to(q, shape))
        return x, np.broadcast_to(q, shape), J, p

    def A_value(y, q):
        x, q, J, p = pullback(y, q)
        M = A(x, p) - np.einsum("...s,...skl->...kl", q, diffeo.hessians(x))
        J_inv = np.linalg.inv(J)
        return np.einsum("...ki,...kl,...lj->...ij", J_inv, M, J_inv)

    def A_dp(y, q):
        x, q, J, p = pullback(y, q)
        dM = np.einsum("...klr,...mr->...klm", A.dp(x, p), J) - np.einsum("...mkl->...klm", diffeo.hessians(x))
        J_inv = np.linalg.inv(J)
        return np.einsum("...ki,...klm,...lj->...ijm", J_inv, dM, J_inv)

    def A_dpp(y, q):
        x, q, J, p = pullback(y, q)
        d2M = np.einsum("...klrt,...mr,...nt->...klmn", A.dpp(x, p), J, J)
        J_inv = np.linalg.inv(J)
        return np.einsum("...ki,...klmn,...lj->...ijmn", J_inv, d2M, J_inv)

    def B_value(y, q):
        x, q, J, p = pullback(y, q)
        return B(x, p) / np.linalg.det(J) ** 2

    def B_dp(y, q):
        x, q, J, p = pullback(y, q)
        return np.einsum("...k,...mk->...m", B.dp(x, p), J) / (np.linalg.det(J) ** 2)[..., None]

    A_new = MatrixFunction(A_value, A_dp, A_dpp, name=f"{A.name}'", dim=A.dim, p_independent=False)
    B_new = ScalarFunction(B_value, B_dp, name=f"{B.name}'", p_independent=B.p_independent)

    def compose(f):
        if f is None:
            return None
        return lambda y: f(diffeo.inverse(y))

    logger.info(f"座標変換: {ps.name} <- {diffeo.describe().get('map')}")
    metadata = dict(ps.metadata)
    metadata["transform"] = diffeo.describe()
    return ProblemSpec(domain=MappedDomain(ps.domain, diffeo), A=A_new, B=B_new, phi=compose(ps.phi),
                       subsolution=compose(ps.subsolution), exact=compose(ps.exact), cost=None, mapping=None,
                       name=f"{ps.name}'", metadata=metadata)
