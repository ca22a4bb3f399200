"""
離散化サービス

格子の構築、Shortley–Weller 型の不等間隔ステンシル、w = D²u - A(x,Du) の組み立て、
連続法の残差 log det w - log[tB + (1-t)det w̲] を提供する。
"""

import logging
from typing import Optional

import numpy as np
from scipy import sparse

from ..core.config import settings
from ..core.exceptions import EllipticityError, GridError, HypothesisError
from ..models.domain import Domain
from ..models.grid import (INTERIOR, LATTICE_BOUNDARY, OFF_LATTICE_BOUNDARY, OFFSETS, UNIT_DIRECTIONS,
                           EllipticIterate, Grid, ScalarField, StencilOperators)
from ..models.problem import ProblemSpec

logger = logging.getLogger(__name__)


def build_grid(domain: Domain, h: float, min_interior: Optional[int] = None, snap: Optional[float] = None) -> Grid:
    """一様格子を作り、節点を内部・境界に分類する"""
    if not h > 0:
        raise GridError(f"grid spacing must be positive (h={h})", h=h)
    min_interior = min_interior if min_interior is not None else settings.GRID_MIN_INTERIOR
    tol = (snap if snap is not None else settings.GRID_SNAP) * h

    lower, upper = domain.bounding_box()
    nx, ny = (np.floor((upper - lower) / h + 1e-9).astype(int) + 1).tolist()
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    lattice = lower + h * np.stack([ii, jj], axis=-1)
    d = domain.signed_distance(lattice)

    interior_mask = d >= tol
    boundary_mask = np.abs(d) < tol

    interior_ij = np.argwhere(interior_mask)
    counts = (len(np.unique(interior_ij[:, 0])), len(np.unique(interior_ij[:, 1]))) if len(interior_ij) else (0, 0)
    if min(counts) < min_interior:
        raise GridError(f"grid too coarse: h={h} gives {counts[0]}x{counts[1]} interior columns/rows "
                        f"(need at least {min_interior} per axis)", h=h, counts=counts)

    boundary_ij = np.argwhere(boundary_mask)
    lattice_map = -np.ones((nx, ny), dtype=int)
    n_int = len(interior_ij)
    lattice_map[interior_ij[:, 0], interior_ij[:, 1]] = np.arange(n_int)
    lattice_map[boundary_ij[:, 0], boundary_ij[:, 1]] = n_int + np.arange(len(boundary_ij))

    points = [lattice[interior_ij[:, 0], interior_ij[:, 1]], lattice[boundary_ij[:, 0], boundary_ij[:, 1]]]
    kinds = [np.full(n_int, INTERIOR), np.full(len(boundary_ij), LATTICE_BOUNDARY)]
    lattice_index = [interior_ij, boundary_ij]

    neighbors = np.empty((n_int, 8), dtype=int)
    arms = np.empty((n_int, 8))
    extra_points = []
    next_index = n_int + len(boundary_ij)
    for k, offset in enumerate(OFFSETS):
        full = h * float(np.linalg.norm(offset))
        target = interior_ij + offset
        inside = (target[:, 0] >= 0) & (target[:, 0] < nx) & (target[:, 1] >= 0) & (target[:, 1] < ny)
        index = np.full(n_int, -1)
        index[inside] = lattice_map[target[inside, 0], target[inside, 1]]
        neighbors[:, k] = index
        arms[:, k] = full
        for node in np.flatnonzero(index < 0):
            x = points[0][node]
            arm = domain.ray_exit(x, UNIT_DIRECTIONS[k], max_dist=full)
            if arm is None or not arm > 0:
                raise GridError(f"no boundary crossing from interior node {node} at {x.tolist()} "
                                f"towards an exterior neighbour", node=int(node))
            arms[node, k] = min(arm, full)
            extra_points.append(x + arms[node, k] * UNIT_DIRECTIONS[k])
            neighbors[node, k] = next_index
            next_index += 1

    if extra_points:
        points.append(np.array(extra_points))
        kinds.append(np.full(len(extra_points), OFF_LATTICE_BOUNDARY))
        lattice_index.append(-np.ones((len(extra_points), 2), dtype=int))

    all_points = np.vstack(points)
    operators = _stencil_operators(neighbors, arms, len(all_points))
    grid = Grid(domain=domain, h=float(h), origin=np.asarray(lower, dtype=float), shape=(nx, ny),
                points=all_points, kind=np.concatenate(kinds), lattice_index=np.vstack(lattice_index),
                neighbors=neighbors, arms=arms, operators=operators, n_interior=n_int, lattice_map=lattice_map)
    logger.info(f"格子構築: {domain.kind}, h={h}, 内部節点 {n_int}, 境界節点 {grid.n_nodes - n_int} "
                f"(格子外 {len(extra_points)})")
    return grid


def _pair_weights(a_plus: np.ndarray, a_minus: np.ndarray):
    """不等間隔3点ステンシルの係数 (1階, 2階)"""
    total = a_plus + a_minus
    first = (a_minus / (a_plus * total), -a_plus / (a_minus * total))
    second = (2.0 / (a_plus * total), 2.0 / (a_minus * total))
    return first, second


def _stencil_operators(neighbors: np.ndarray, arms: np.ndarray, n_nodes: int) -> StencilOperators:
    n_int = len(neighbors)
    rows = np.arange(n_int)

    def assemble(terms):
        data, r, c = [], [], []
        for column, weight in terms:
            data.append(weight)
            r.append(rows)
            c.append(column)
        matrix = sparse.coo_matrix((np.concatenate(data), (np.concatenate(r), np.concatenate(c))),
                                   shape=(n_int, n_nodes))
        return matrix.tocsr()

    def pair(k_plus: int, k_minus: int):
        (f_plus, f_minus), (s_plus, s_minus) = _pair_weights(arms[:, k_plus], arms[:, k_minus])
        first = [(neighbors[:, k_plus], f_plus), (neighbors[:, k_minus], f_minus), (rows, -(f_plus + f_minus))]
        second = [(neighbors[:, k_plus], s_plus), (neighbors[:, k_minus], s_minus), (rows, -(s_plus + s_minus))]
        return first, second

    dx, dxx = pair(0, 1)
    dy, dyy = pair(2, 3)
    _, de1 = pair(4, 5)
    _, de2 = pair(6, 7)
    # u_xy = (u_e1e1 - u_e2e2)/2, e1 = (1,1)/√2, e2 = (-1,1)/√2
    dxy = [(col, 0.5 * w) for col, w in de1] + [(col, -0.5 * w) for col, w in de2]
    return StencilOperators(Dx=assemble(dx), Dy=assemble(dy), Dxx=assemble(dxx), Dyy=assemble(dyy),
                            Dxy=assemble(dxy))


def derivatives(u: ScalarField):
    """内部節点での Du (n,2) と D²u (n,2,2)"""
    ops = u.grid.operators
    Du = np.stack([ops.Dx @ u.values, ops.Dy @ u.values], axis=-1)
    uxx, uyy, uxy = ops.Dxx @ u.values, ops.Dyy @ u.values, ops.Dxy @ u.values
    D2u = np.stack([np.stack([uxx, uxy], axis=-1), np.stack([uxy, uyy], axis=-1)], axis=-2)
    return Du, D2u


_PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7))


def _inward_chain(grid: Grid, nodes: np.ndarray, k: np.ndarray, whole: np.ndarray):
    # nodes から方向 k に等間隔で並ぶ3節点（途中の2点は内部節点）
    n_int = grid.n_interior
    n1 = grid.neighbors[nodes, k]
    ok = whole[nodes, k] & (n1 < n_int)
    n1 = np.where(ok, n1, 0)
    n2 = grid.neighbors[n1, k]
    ok &= whole[n1, k] & (n2 < n_int)
    n2 = np.where(ok, n2, 0)
    n3 = grid.neighbors[n2, k]
    ok &= whole[n2, k]
    return n1, n2, n3, ok


def one_sided_hessian(u: ScalarField, nodes: Optional[np.ndarray] = None):
    """境界隣接節点での D²u（腕が境界で切れる方向は反対側の片側4点差分）

    両腕とも格子幅どおりの方向は中心差分のまま使う。片側差分に必要な節点列が取れない方向は
    Shortley–Weller に戻し、その節点を fallback に記録する。戻り値は (D²u (m,2,2), fallback (m,))。
    """
    grid = u.grid
    nodes = np.flatnonzero(grid.boundary_adjacent) if nodes is None else np.asarray(nodes, dtype=int)
    values = u.values
    full = grid.h * np.linalg.norm(OFFSETS, axis=1)
    whole = np.isclose(grid.arms, full[None, :], rtol=1e-12, atol=0.0)
    u0 = values[nodes]
    nb = grid.neighbors[nodes]
    fallback = np.zeros(len(nodes), dtype=bool)

    directional = []
    for k_plus, k_minus in _PAIRS:
        _, (s_plus, s_minus) = _pair_weights(grid.arms[nodes, k_plus], grid.arms[nodes, k_minus])
        d = s_plus * (values[nb[:, k_plus]] - u0) + s_minus * (values[nb[:, k_minus]] - u0)

        cut = ~(whole[nodes, k_plus] & whole[nodes, k_minus])
        # 切れていない側へ向かう
        side = np.where(whole[nodes, k_plus], k_plus, k_minus)
        n1, n2, n3, ok = _inward_chain(grid, nodes, side, whole)
        one_sided = (2 * u0 - 5 * values[n1] + 4 * values[n2] - values[n3]) / full[side] ** 2
        d = np.where(cut & ok, one_sided, d)
        fallback |= cut & ~ok
        directional.append(d)

    d11, d22, de1, de2 = directional
    d12 = 0.5 * (de1 - de2)
    D2u = np.stack([np.stack([d11, d12], axis=-1), np.stack([d12, d22], axis=-1)], axis=-2)
    return D2u, fallback


def symmetric_eigenvalues(m: np.ndarray):
    """2×2 対称行列の固有値 (min, max)（閉形式）"""
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 1, 1]
    mean = 0.5 * (a + c)
    radius = np.hypot(0.5 * (a - c), b)
    return mean - radius, mean + radius


def assemble_w(ps: ProblemSpec, u: ScalarField, with_derivative: bool = False) -> EllipticIterate:
    """w = D²u - A(x,Du) と楕円性"""
    Du, D2u = derivatives(u)
    x = u.grid.interior_points
    A = ps.A(x, Du)
    w = D2u - A
    lo, hi = symmetric_eigenvalues(w)
    dA = ps.A.dp(x, Du) if with_derivative else None
    return EllipticIterate(u=u, Du=Du, D2u=D2u, A=A, w=w, min_eig=lo, max_eig=hi, dA=dA)


def ellipticity_floor(iterate: EllipticIterate, factor: Optional[float] = None) -> float:
    """ε_ell = factor·(1 + max|w|)"""
    factor = factor if factor is not None else settings.ELLIPTICITY_FACTOR
    return factor * (1.0 + iterate.w_scale)


def homotopy_rhs(ps: ProblemSpec, iterate: EllipticIterate, t: float, sub_det: Optional[np.ndarray]) -> np.ndarray:
    """tB(x,Du) + (1-t)det w̲"""
    B = ps.B(iterate.grid.interior_points, iterate.Du)
    if t >= 1.0:
        return B
    if sub_det is None:
        raise HypothesisError("a subsolution is required for t < 1")
    return t * B + (1.0 - t) * sub_det


def residual_values(ps: ProblemSpec, iterate: EllipticIterate, t: float,
                    sub_det: Optional[np.ndarray] = None) -> np.ndarray:
    """内部節点での log det w - log[tB + (1-t)det w̲]"""
    det = iterate.det_w
    bad = (iterate.min_eig <= 0) | ~(det > 0)
    if np.any(bad):
        node = int(np.argmax(bad))
        point = iterate.grid.points[node].tolist()
        raise EllipticityError(f"non-elliptic node {node} at x={point} (min eig {iterate.min_eig[node]:.3e}); "
                               f"log det w undefined", node=node, point=point)
    rhs = homotopy_rhs(ps, iterate, t, sub_det)
    if not np.all(rhs > 0):
        node = int(np.argmax(~(rhs > 0)))
        point = iterate.grid.points[node].tolist()
        raise EllipticityError(f"right-hand side not positive at node {node} x={point}", node=node, point=point)
    return np.log(det) - np.log(rhs)


def residual(ps: ProblemSpec, u: ScalarField, t: float, subsolution: Optional[ScalarField] = None) -> ScalarField:
    """連続法族の残差（境界節点では 0）"""
    sub_det = None
    if t < 1.0:
        if subsolution is None:
            raise HypothesisError("a subsolution is required for t < 1")
        sub_det = assemble_w(ps, subsolution).det_w
    values = np.zeros(u.grid.n_nodes)
    values[: u.grid.n_interior] = residual_values(ps, assemble_w(ps, u), t, sub_det)
    return ScalarField(u.grid, values)


def boundary_target(phi: ScalarField, subsolution: ScalarField, t: float) -> np.ndarray:
    """境界値 φ_t = φ + (1-t)(u̲ - φ)"""
    return phi.boundary + (1.0 - t) * (subsolution.boundary - phi.boundary)
