"""
領域 Ω の定義

符号付き距離 d(x)（内部で正）、外向き単位法線 γ、境界サンプル（点・法線・接線・曲率）、
境界多角形、半直線と境界の交点を提供する。
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from ..core.exceptions import ConfigError

logger = logging.getLogger(__name__)


class BoundarySamples(NamedTuple):
    """境界上のサンプル点"""

    points: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    curvature: np.ndarray


def rotate_quarter(v: np.ndarray) -> np.ndarray:
    """反時計回りに90度回転（法線 → 接線）"""
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(norm > 0, norm, 1.0)


def signed_area(polygon: np.ndarray) -> float:
    """多角形の符号付き面積（反時計回りで正）"""
    x, y = polygon[:, 0], polygon[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


class Domain(ABC):
    """有界領域の基底クラス"""

    kind: str = "abstract"

    @abstractmethod
    def signed_distance(self, x) -> np.ndarray:
        """符号付き距離（内部で正、境界で0、外部で負）"""

    @abstractmethod
    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        """外接矩形 (lower, upper)"""

    @abstractmethod
    def boundary_polygon(self, m: int) -> np.ndarray:
        """反時計回りの境界多角形（頂点を含む）"""

    @abstractmethod
    def describe(self) -> Dict[str, Any]:
        """設定出力用の辞書"""

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        return self.signed_distance(x) > -tol

    @property
    def scale(self) -> float:
        lower, upper = self.bounding_box()
        return float(np.max(upper - lower))

    def outward_normal(self, x) -> np.ndarray:
        """外向き単位法線 γ = -∇d/|∇d|（中心差分）"""
        x = np.asarray(x, dtype=float)
        h = 1e-6 * self.scale
        grad = np.zeros_like(x)
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            grad[..., k] = (self.signed_distance(x + e) - self.signed_distance(x - e)) / (2 * h)
        return _unit(-grad)

    def boundary_curvature(self, points: np.ndarray, tangents: np.ndarray) -> np.ndarray:
        """D_iγ_jτ_iτ_j = -τᵀ(D²d)τ / |∇d|（差分近似）"""
        h = 1e-4 * self.scale
        d0 = self.signed_distance(points)
        d_tt = (self.signed_distance(points + h * tangents) - 2 * d0
                + self.signed_distance(points - h * tangents)) / h ** 2
        normals = self.outward_normal(points)
        d_n = (self.signed_distance(points + h * normals) - self.signed_distance(points - h * normals)) / (2 * h)
        return -d_tt / np.maximum(np.abs(d_n), 1e-300)

    def boundary_samples(self, m: int) -> BoundarySamples:
        """境界上の m 点（法線・接線・曲率つき）"""
        polygon = self.boundary_polygon(m)
        points = 0.5 * (polygon + np.roll(polygon, -1, axis=0))
        normals = self.outward_normal(points)
        tangents = rotate_quarter(normals)
        return BoundarySamples(points, normals, tangents, self.boundary_curvature(points, tangents))

    def ray_exit(self, x, e, max_dist: Optional[float] = None) -> Optional[float]:
        """x から方向 e に進んで境界に達するまでの距離（max_dist 以内になければ None）"""
        x = np.asarray(x, dtype=float)
        e = _unit(np.asarray(e, dtype=float))
        limit = max_dist if max_dist is not None else 2 * self.scale * np.sqrt(2)

        def f(s: float) -> float:
            return float(self.signed_distance(x + s * e))

        if f(0.0) <= 0:
            return 0.0
        steps = np.linspace(0.0, limit, 17)
        values = [f(s) for s in steps]
        for k in range(1, len(steps)):
            if values[k] <= 0:
                if values[k] == 0:
                    return float(steps[k])
                return float(brentq(f, steps[k - 1], steps[k], xtol=1e-14, rtol=4 * np.finfo(float).eps))
        return None


class RectangleDomain(Domain):
    """矩形領域"""

    kind = "rectangle"

    def __init__(self, lower: Sequence[float] = (0.0, 0.0), upper: Sequence[float] = (1.0, 1.0)):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.upper <= self.lower):
            raise ValueError(f"invalid rectangle: lower={lower}, upper={upper}")

    def _excess(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.maximum(self.lower - x, x - self.upper)

    def signed_distance(self, x) -> np.ndarray:
        q = self._excess(x)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return -(outside + inside)

    def outward_normal(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        axis = np.argmax(self._excess(x), axis=-1)
        sign = np.where(x - self.upper > self.lower - x, 1.0, -1.0)
        return np.where(np.arange(2) == np.asarray(axis)[..., None], sign, 0.0)

    def bounding_box(self):
        return self.lower.copy(), self.upper.copy()

    def vertices(self) -> np.ndarray:
        (x0, y0), (x1, y1) = self.lower, self.upper
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def boundary_polygon(self, m: int) -> np.ndarray:
        return _densify(self.vertices(), m)

    def boundary_samples(self, m: int) -> BoundarySamples:
        points, normals = _perimeter_samples(self.vertices(), m)
        return BoundarySamples(points, normals, rotate_quarter(normals), np.zeros(len(points)))

    def ray_exit(self, x, e, max_dist=None):
        x = np.asarray(x, dtype=float)
        e = _unit(np.asarray(e, dtype=float))
        exits = []
        for k in range(2):
            if e[k] > 0:
                exits.append((self.upper[k] - x[k]) / e[k])
            elif e[k] < 0:
                exits.append((self.lower[k] - x[k]) / e[k])
        s = max(min(exits), 0.0)
        if max_dist is not None and s > max_dist:
            return None
        return float(s)

    def describe(self):
        return {"domain": self.kind, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


class DiscDomain(Domain):
    """円板領域"""

    kind = "disc"

    def __init__(self, center: Sequence[float] = (0.0, 0.0), radius: float = 1.0):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError(f"invalid disc radius: {radius}")

    def signed_distance(self, x) -> np.ndarray:
        return self.radius - np.linalg.norm(np.asarray(x, dtype=float) - self.center, axis=-1)

    def outward_normal(self, x) -> np.ndarray:
        return _unit(np.asarray(x, dtype=float) - self.center)

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def boundary_polygon(self, m: int) -> np.ndarray:
        theta = 2 * np.pi * np.arange(m) / m
        return self.center + self.radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    def boundary_samples(self, m: int) -> BoundarySamples:
        theta = 2 * np.pi * np.arange(m) / m
        normals = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        points = self.center + self.radius * normals
        return BoundarySamples(points, normals, rotate_quarter(normals), np.full(m, 1.0 / self.radius))

    def ray_exit(self, x, e, max_dist=None):
        z = np.asarray(x, dtype=float) - self.center
        e = _unit(np.asarray(e, dtype=float))
        b = float(z @ e)
        disc = b * b - (float(z @ z) - self.radius ** 2)
        if disc < 0:
            return None
        s = -b + np.sqrt(disc)
        if s < 0 or (max_dist is not None and s > max_dist):
            return None
        return float(s)

    def describe(self):
        return {"domain": self.kind, "center": self.center.tolist(), "radius": self.radius}


class RoundedRectangleDomain(Domain):
    """角を半径 r で丸めた矩形"""

    kind = "rounded-rectangle"

    def __init__(self, lower=(0.0, 0.0), upper=(1.0, 1.0), corner_radius: float = 0.1):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.corner_radius = float(corner_radius)
        half = 0.5 * (self.upper - self.lower)
        if np.any(half <= 0) or not 0 < self.corner_radius <= float(np.min(half)):
            raise ValueError(f"invalid rounded rectangle: lower={lower}, upper={upper}, r={corner_radius}")
        self._center = 0.5 * (self.lower + self.upper)
        self._inner_half = half - self.corner_radius

    def signed_distance(self, x) -> np.ndarray:
        q = np.abs(np.asarray(x, dtype=float) - self._center) - self._inner_half
        outer = np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(np.max(q, axis=-1), 0.0)
        return self.corner_radius - outer

    def bounding_box(self):
        return self.lower.copy(), self.upper.copy()

    def _pieces(self) -> List[Tuple[str, np.ndarray, Any]]:
        """境界を直線と四分円に分割（反時計回り）"""
        r = self.corner_radius
        (x0, y0), (x1, y1) = self.lower, self.upper
        return [
            ("line", np.array([x0 + r, y0]), np.array([x1 - r, y0])),
            ("arc", np.array([x1 - r, y0 + r]), -np.pi / 2),
            ("line", np.array([x1, y0 + r]), np.array([x1, y1 - r])),
            ("arc", np.array([x1 - r, y1 - r]), 0.0),
            ("line", np.array([x1 - r, y1]), np.array([x0 + r, y1])),
            ("arc", np.array([x0 + r, y1 - r]), np.pi / 2),
            ("line", np.array([x0, y1 - r]), np.array([x0, y0 + r])),
            ("arc", np.array([x0 + r, y0 + r]), np.pi),
        ]

    def _walk(self, m: int, offset: float) -> BoundarySamples:
        r = self.corner_radius
        pieces = self._pieces()
        lengths = np.array([np.linalg.norm(b - a) if kind == "line" else 0.5 * np.pi * r
                            for kind, a, b in pieces])
        starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
        total = float(lengths.sum())
        points, normals, curvature = [], [], []
        for s in (np.arange(m) + offset) * total / m:
            k = int(np.searchsorted(starts, s, side="right") - 1)
            kind, a, b = pieces[k]
            local = s - starts[k]
            if kind == "line":
                direction = (b - a) / lengths[k]
                points.append(a + local * direction)
                normals.append(np.array([direction[1], -direction[0]]))
                curvature.append(0.0)
            else:
                angle = b + local / r
                n = np.array([np.cos(angle), np.sin(angle)])
                points.append(a + r * n)
                normals.append(n)
                curvature.append(1.0 / r)
        normals = np.array(normals)
        return BoundarySamples(np.array(points), normals, rotate_quarter(normals), np.array(curvature))

    def boundary_polygon(self, m: int) -> np.ndarray:
        return self._walk(m, 0.0).points

    def boundary_samples(self, m: int) -> BoundarySamples:
        return self._walk(m, 0.5)

    def describe(self):
        return {"domain": self.kind, "lower": self.lower.tolist(), "upper": self.upper.tolist(),
                "corner_radius": self.corner_radius}


class PolygonDomain(Domain):
    """単純多角形領域（L字型など）"""

    kind = "polygon"

    def __init__(self, vertices: Sequence[Sequence[float]]):
        vertices = np.asarray(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[0] < 3 or vertices.shape[1] != 2:
            raise ValueError("polygon needs at least 3 vertices in the plane")
        if signed_area(vertices) < 0:
            vertices = vertices[::-1].copy()
        self.vertices = vertices

    @classmethod
    def l_shape(cls, size: float = 1.0, notch: float = 0.5) -> "PolygonDomain":
        """[0,size]² から右上の角 notch×notch を除いたL字領域"""
        a, b = size, size - notch
        return cls([[0, 0], [a, 0], [a, b], [b, b], [b, a], [0, a]])

    def _segments(self):
        a = self.vertices
        b = np.roll(self.vertices, -1, axis=0)
        return a, b

    def _nearest(self, x: np.ndarray):
        a, b = self._segments()
        ab = b - a
        ap = x[..., None, :] - a
        t = np.clip(np.sum(ap * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0.0, 1.0)
        closest = a + t[..., None] * ab
        dist = np.linalg.norm(x[..., None, :] - closest, axis=-1)
        return dist, t

    def _inside(self, x: np.ndarray) -> np.ndarray:
        a, b = self._segments()
        px, py = x[..., 0:1], x[..., 1:2]
        crosses = (a[:, 1] > py) != (b[:, 1] > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = a[:, 0] + (py - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
        return (np.sum(crosses & (px < xcross), axis=-1) % 2) == 1

    def signed_distance(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dist, _ = self._nearest(x)
        d = np.min(dist, axis=-1)
        return np.where(self._inside(x), d, -d)

    def outward_normal(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dist, _ = self._nearest(x)
        k = np.argmin(dist, axis=-1)
        a, b = self._segments()
        ab = b[k] - a[k]
        return _unit(np.stack([ab[..., 1], -ab[..., 0]], axis=-1))

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def boundary_polygon(self, m: int) -> np.ndarray:
        return _densify(self.vertices, m)

    def boundary_samples(self, m: int) -> BoundarySamples:
        points, normals = _perimeter_samples(self.vertices, m)
        return BoundarySamples(points, normals, rotate_quarter(normals), np.zeros(len(points)))

    def describe(self):
        return {"domain": self.kind, "vertices": self.vertices.tolist()}


class MappedDomain(Domain):
    """微分同相写像 ψ による領域の像 ψ(Ω)"""

    kind = "mapped"

    def __init__(self, base: Domain, diffeo):
        self.base = base
        self.diffeo = diffeo
        polygon = diffeo.forward(base.boundary_polygon(2048))
        extent = polygon.max(axis=0) - polygon.min(axis=0)
        self._box = (polygon.min(axis=0) - 0.01 * extent, polygon.max(axis=0) + 0.01 * extent)

    def signed_distance(self, y) -> np.ndarray:
        return self.base.signed_distance(self.diffeo.inverse(np.asarray(y, dtype=float)))

    def outward_normal(self, y) -> np.ndarray:
        x = self.diffeo.inverse(np.asarray(y, dtype=float))
        gamma = self.base.outward_normal(x)
        jac_inv = np.linalg.inv(self.diffeo.jacobian(x))
        return _unit(np.einsum("...ki,...k->...i", jac_inv, gamma))

    def bounding_box(self):
        return self._box[0].copy(), self._box[1].copy()

    def boundary_polygon(self, m: int) -> np.ndarray:
        polygon = self.diffeo.forward(self.base.boundary_polygon(m))
        return polygon if signed_area(polygon) >= 0 else polygon[::-1].copy()

    def boundary_samples(self, m: int) -> BoundarySamples:
        base = self.base.boundary_samples(m)
        points = self.diffeo.forward(base.points)
        normals = self.outward_normal(points)
        tangents = rotate_quarter(normals)
        return BoundarySamples(points, normals, tangents, self.boundary_curvature(points, tangents))

    def describe(self):
        return {"domain": self.kind, "base": self.base.describe(), "map": self.diffeo.describe()}


def _densify(vertices: np.ndarray, m: int) -> np.ndarray:
    """各辺を長さに比例して分割した多角形（頂点を含む）"""
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    lengths = np.linalg.norm(b - a, axis=-1)
    total = lengths.sum()
    points = []
    for start, end, length in zip(a, b, lengths):
        pieces = max(1, int(round(m * length / total)))
        for k in range(pieces):
            points.append(start + (end - start) * k / pieces)
    return np.array(points)


def _perimeter_samples(vertices: np.ndarray, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """周上を等間隔に（頂点を避けて）サンプリング"""
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    lengths = np.linalg.norm(b - a, axis=-1)
    starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
    s = (np.arange(m) + 0.5) * lengths.sum() / m
    k = np.searchsorted(starts, s, side="right") - 1
    direction = (b[k] - a[k]) / lengths[k][:, None]
    points = a[k] + (s - starts[k])[:, None] * direction
    normals = np.stack([direction[:, 1], -direction[:, 0]], axis=-1)
    return points, normals


def build_domain(kind: str, **params) -> Domain:
    """種類名と幾何パラメータから領域を生成"""
    try:
        if kind == "rectangle":
            return RectangleDomain(params.get("lower", (0.0, 0.0)), params.get("upper", (1.0, 1.0)))
        if kind == "disc":
            return DiscDomain(params.get("center", (0.0, 0.0)), params.get("radius", 1.0))
        if kind == "rounded-rectangle":
            return RoundedRectangleDomain(params.get("lower", (0.0, 0.0)), params.get("upper", (1.0, 1.0)),
                                          params.get("corner_radius", 0.1))
        if kind == "polygon":
            vertices = params.get("vertices")
            if vertices is None:
                return PolygonDomain.l_shape()
            return PolygonDomain(vertices)
    except ValueError as e:
        raise ConfigError(str(e), key="domain")
    raise ConfigError(f"unknown domain kind {kind!r}", key="domain")
