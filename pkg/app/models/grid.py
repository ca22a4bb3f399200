"""
構造格子・格子関数・楕円型反復
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from .domain import Domain

# 節点種別
INTERIOR = 0
LATTICE_BOUNDARY = 1
OFF_LATTICE_BOUNDARY = 2

# 方向: E, W, N, S, NE, SW, NW, SE（対になる方向が隣り合う）
OFFSETS = np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1], [-1, 1], [1, -1]])
UNIT_DIRECTIONS = OFFSETS / np.linalg.norm(OFFSETS, axis=1)[:, None]
DIRECTION_NAMES = ("E", "W", "N", "S", "NE", "SW", "NW", "SE")


@dataclass(frozen=True)
class StencilOperators:
    """内部節点 × 全節点の差分作用素"""

    Dx: sparse.csr_matrix
    Dy: sparse.csr_matrix
    Dxx: sparse.csr_matrix
    Dyy: sparse.csr_matrix
    Dxy: sparse.csr_matrix


@dataclass(frozen=True)
class Grid:
    """一様格子 h による Ω の離散化（内部節点が先頭 n_interior 個）"""

    domain: Domain
    h: float
    origin: np.ndarray
    shape: tuple
    points: np.ndarray
    kind: np.ndarray
    lattice_index: np.ndarray
    neighbors: np.ndarray
    arms: np.ndarray
    operators: StencilOperators
    n_interior: int
    lattice_map: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def interior_points(self) -> np.ndarray:
        return self.points[: self.n_interior]

    @property
    def boundary_slice(self) -> slice:
        return slice(self.n_interior, self.n_nodes)

    @property
    def boundary_points(self) -> np.ndarray:
        return self.points[self.boundary_slice]

    @property
    def boundary_adjacent(self) -> np.ndarray:
        """ステンシルが境界節点に触れる内部節点"""
        return np.any(self.kind[self.neighbors] != INTERIOR, axis=1)

    @property
    def deep(self) -> np.ndarray:
        """8近傍がすべて内部節点"""
        return ~self.boundary_adjacent

    @property
    def interior_counts(self) -> tuple:
        index = self.lattice_index[: self.n_interior]
        return len(np.unique(index[:, 0])), len(np.unique(index[:, 1]))


@dataclass
class ScalarField:
    """格子関数（外部節点を除く全節点で値を持つ）"""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError(f"field has shape {self.values.shape}, grid has {self.grid.n_nodes} nodes")

    @classmethod
    def from_function(cls, grid: Grid, f: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        return cls(grid, np.asarray(f(grid.points), dtype=float))

    @property
    def interior(self) -> np.ndarray:
        return self.values[: self.grid.n_interior]

    @property
    def boundary(self) -> np.ndarray:
        return self.values[self.grid.boundary_slice]

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __add__(self, other) -> "ScalarField":
        other_values = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.grid, self.values + other_values)

    def __sub__(self, other) -> "ScalarField":
        other_values = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.grid, self.values - other_values)

    def max_norm(self) -> float:
        return float(np.max(np.abs(self.values), initial=0.0))


@dataclass
class EllipticIterate:
    """u と Du, D²u, w = D²u - A(x,Du) および最小固有値"""

    u: ScalarField
    Du: np.ndarray
    D2u: np.ndarray
    A: np.ndarray
    w: np.ndarray
    min_eig: np.ndarray
    max_eig: np.ndarray
    dA: Optional[np.ndarray] = None

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @property
    def elliptic(self) -> bool:
        return bool(self.min_eig.size == 0 or np.min(self.min_eig) > 0)

    @property
    def det_w(self) -> np.ndarray:
        return self.w[:, 0, 0] * self.w[:, 1, 1] - self.w[:, 0, 1] ** 2

    @property
    def w_scale(self) -> float:
        """max |w| （固有値の絶対値の最大）"""
        return float(np.max(np.maximum(np.abs(self.min_eig), np.abs(self.max_eig)), initial=0.0))
