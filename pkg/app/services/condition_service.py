"""
仮定の検証サービス

正則性 (A3w)、構造条件、A(x,0) の固有値条件、劣解（非狭義・狭義）、狭義化、障壁不等式、
A 有界性、一様 A 凸性、領域と解の c 凸性をサンプリングで判定し ConditionReport を返す。
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from ..core.config import settings
from ..core.exceptions import ConfigError, EllipticityError
from ..core.expressions import parse_expression
from ..models.cost import CostModel
from ..models.domain import Domain
from ..models.grid import EllipticIterate, ScalarField
from ..models.problem import MatrixFunction, ProblemSpec, ScalarFunction
from ..models.reports import BarrierCertificate, ConditionReport
from ..models.run_config import ChecksSection
from .grid_service import assemble_w, derivatives, symmetric_eigenvalues
from .solver_service import assemble_linearized, comparison_check

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- サンプリング

def sample_points(domain: Domain, n: int, rng: np.random.Generator) -> np.ndarray:
    """領域内の一様サンプル（外接矩形からの棄却法）"""
    lower, upper = domain.bounding_box()
    found: List[np.ndarray] = []
    count = 0
    while count < n:
        batch = lower + (upper - lower) * rng.random((max(2 * n, 16), 2))
        batch = batch[domain.signed_distance(batch) > 0]
        found.append(batch)
        count += len(batch)
    return np.vstack(found)[:n]


def sample_momenta(n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """半径 radius の円板内の一様サンプル"""
    r = radius * np.sqrt(rng.random(n))
    theta = 2.0 * np.pi * rng.random(n)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def direction_pairs(count: Optional[int] = None):
    """直交単位ベクトル対 ξ=(cosθ, sinθ), η=(-sinθ, cosθ)（θ は [0,π) の等分点）"""
    count = count or settings.DIRECTION_COUNT
    theta = np.pi * np.arange(count) / count
    xi = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return xi, np.stack([-xi[:, 1], xi[:, 0]], axis=-1)


def default_p_radius(iterate: Optional[EllipticIterate]) -> float:
    """現在の反復の max|Du| を 1.5 倍したもの"""
    if iterate is None or iterate.Du.size == 0:
        return 1.0
    peak = float(np.max(np.linalg.norm(iterate.Du, axis=-1)))
    return 1.5 * peak if peak > 0 else 1.0


def _pairs(x: np.ndarray, p: np.ndarray):
    shape = (len(x), len(p), 2)
    return np.broadcast_to(x[:, None, :], shape), np.broadcast_to(p[None, :, :], shape)


def _argmin(values: np.ndarray):
    return np.unravel_index(int(np.argmin(values)), values.shape)


# ---------------------------------------------------------------- 行列関数の条件

def check_regularity(mf: MatrixFunction, x_samples: np.ndarray, p_samples: np.ndarray,
                     directions: Optional[int] = None, tolerance: Optional[float] = None,
                     use_closed_form: bool = True) -> ConditionReport:
    """A_{ij,kl}ξ_iξ_jη_kη_l ≥ 0（ξ⊥η）の判定

    閉形式の D²_pA があればそれを使い、なければ η 方向の 4 次精度 5 点差分で
    ξᵀA(x, p+sη)ξ の 2 階微分を求める。
    """
    tolerance = tolerance if tolerance is not None else settings.REGULARITY_TOLERANCE
    xi, eta = direction_pairs(directions)
    X, P = _pairs(np.asarray(x_samples, dtype=float), np.asarray(p_samples, dtype=float))

    if use_closed_form and mf.has_closed_form:
        tensor = mf.dpp(X, P)
        values = np.einsum("mnijkl,di,dj,dk,dl->mnd", tensor, xi, xi, eta, eta)
        method = "closed-form"
    else:
        step = settings.FD_STEP_REGULARITY * (1.0 + np.linalg.norm(P, axis=-1))
        center = np.einsum("mnij,di,dj->mnd", mf(X, P), xi, xi)
        values = np.empty(center.shape)
        for d in range(len(xi)):
            def along(s):
                A = mf(X, P + (s * step)[..., None] * eta[d])
                return np.einsum("mnij,i,j->mn", A, xi[d], xi[d])
            values[..., d] = (-along(2) + 16 * along(1) - 30 * center[..., d] + 16 * along(-1) - along(-2)) \
                / (12 * step ** 2)
        method = "finite-difference"

    i, j, d = _argmin(values)
    return ConditionReport(
        name="regularity", samples=int(values.size), min_margin=float(values[i, j, d]), tolerance=tolerance,
        worst_witness={"x": X[i, j].tolist(), "p": P[i, j].tolist(), "xi": xi[d].tolist(), "eta": eta[d].tolist()},
        sample_range={"p_radius": float(np.max(np.linalg.norm(p_samples, axis=-1), initial=0.0)),
                      "directions": len(xi)},
        details={"method": method},
    )


def check_structure(mf: MatrixFunction, mu0: float, x_samples: np.ndarray, p_samples: np.ndarray,
                    tolerance: Optional[float] = None) -> ConditionReport:
    """λ_min(A(x,p)) + μ0(1+|p|²) ≥ 0"""
    tolerance = tolerance if tolerance is not None else settings.REPORT_TOLERANCE
    X, P = _pairs(np.asarray(x_samples, dtype=float), np.asarray(p_samples, dtype=float))
    lo, _ = symmetric_eigenvalues(mf(X, P))
    margin = lo + mu0 * (1.0 + np.sum(P ** 2, axis=-1))
    i, j = _argmin(margin)
    return ConditionReport(name="structure", samples=int(margin.size), min_margin=float(margin[i, j]),
                           tolerance=tolerance, worst_witness={"x": X[i, j].tolist(), "p": P[i, j].tolist()},
                           details={"mu0": mu0})


def check_A0_eigenvalue(mf: MatrixFunction, x_samples: np.ndarray,
                        tolerance: Optional[float] = None) -> ConditionReport:
    """λ_max(A(x,0)) ≥ 0"""
    tolerance = tolerance if tolerance is not None else settings.REPORT_TOLERANCE
    x = np.asarray(x_samples, dtype=float)
    _, hi = symmetric_eigenvalues(mf(x, np.zeros_like(x)))
    k = int(np.argmin(hi))
    return ConditionReport(name="A0-eigenvalue", samples=len(x), min_margin=float(hi[k]), tolerance=tolerance,
                           worst_witness={"x": x[k].tolist()})


def check_B_positive(B: ScalarFunction, x_samples: np.ndarray, p_samples: np.ndarray) -> ConditionReport:
    """B(x,p) > 0（DET_FLOOR を下限とする）"""
    X, P = _pairs(np.asarray(x_samples, dtype=float), np.asarray(p_samples, dtype=float))
    values = B(X, P)
    i, j = _argmin(values)
    return ConditionReport(name="B-positive", samples=int(values.size),
                           min_margin=float(values[i, j] - settings.DET_FLOOR),
                           worst_witness={"x": X[i, j].tolist(), "p": P[i, j].tolist()},
                           details={"min_B": float(values[i, j])})


# ---------------------------------------------------------------- 劣解

def check_subsolution(ps: ProblemSpec, subsolution: ScalarField, strict: bool = False,
                      mask: Optional[np.ndarray] = None, tolerance: Optional[float] = None) -> ConditionReport:
    """det w̲ ≥ B(x,Du̲)（strict なら δ₀ > 0 の余裕を要求）と w̲ > 0"""
    iterate = assemble_w(ps, subsolution)
    x = iterate.grid.interior_points
    gap = iterate.det_w - ps.B(x, iterate.Du)
    ellipticity = iterate.min_eig
    if strict:
        tolerance = 0.0 if tolerance is None else tolerance
        margin = np.minimum(ellipticity, gap - settings.STRICT_DELTA_MIN)
    else:
        tolerance = settings.REPORT_TOLERANCE if tolerance is None else tolerance
        margin = np.minimum(ellipticity, gap)

    nodes = np.flatnonzero(mask) if mask is not None else np.arange(len(margin))
    if len(nodes) == 0:
        raise ConfigError("subsolution check has no nodes to inspect")
    node = int(nodes[np.argmin(margin[nodes])])
    notes = []
    if np.min(ellipticity[nodes]) <= 0:
        bad = int(nodes[np.argmin(ellipticity[nodes])])
        notes.append(f"subsolution not elliptic at node {bad} x={x[bad].tolist()}")
    return ConditionReport(
        name="strict-subsolution" if strict else "subsolution", samples=len(nodes),
        min_margin=float(margin[node]), tolerance=tolerance,
        worst_witness={"node": node, "x": x[node].tolist(), "Du": iterate.Du[node].tolist()},
        details={"delta0": float(np.min(gap[nodes])), "ellipticity_margin": float(np.min(ellipticity[nodes]))},
        notes=notes,
    )


def strictify(subsolution: ScalarField, a: float, b: float, mode: str = "x1") -> ScalarField:
    """u̲ + a·e^{b x1}（mode="x1"）または u̲ + a(e^{b d(x)} - 1)（mode="boundary"）"""
    points = subsolution.grid.points
    if mode == "x1":
        bump = a * np.exp(b * points[:, 0])
    elif mode == "boundary":
        d = subsolution.grid.domain.signed_distance(points)
        bump = a * np.expm1(b * np.maximum(d, 0.0))
    else:
        raise ConfigError(f"unknown strictify mode {mode!r} (x1 | boundary)", key="strictify_mode")
    return subsolution.with_values(subsolution.values + bump)


# ---------------------------------------------------------------- 障壁

def _fit_barrier(L_phi: np.ndarray, trace_F: np.ndarray, cap: float):
    """C(ε) = max(0, max(εΣF^{ii} - ℒφ)) ≤ cap となる最大の ε"""

    def C_of(eps: float) -> float:
        return max(0.0, float(np.max(eps * trace_F - L_phi, initial=0.0)))

    if C_of(0.0) > cap:
        return 0.0, C_of(0.0)
    lo, hi = 0.0, 1.0
    while C_of(hi) <= cap and hi < 2.0 ** 60:
        lo, hi = hi, 2.0 * hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if C_of(mid) <= cap:
            lo = mid
        else:
            hi = mid
    return lo, C_of(lo)


def barrier_certificate(ps: ProblemSpec, iterate: EllipticIterate, subsolution: ScalarField, K: float,
                        cap: Optional[float] = None) -> BarrierCertificate:
    """固定した K について ℒφ ≥ ε₁ΣF^{ii} - C を当てはめる（φ = e^{K(u̲-u)}）"""
    cap = cap if cap is not None else settings.BARRIER_C_CAP
    phi = np.exp(K * (subsolution.values - iterate.u.values))
    system = assemble_linearized(ps, iterate, 1.0)
    L_phi = system.apply(phi)
    trace_F = system.trace_F
    eps1, C = _fit_barrier(L_phi, trace_F, cap)
    margin = L_phi - eps1 * trace_F + C
    notes = []
    if K <= 0:
        notes.append("K too small")
    if eps1 <= 0:
        notes.append(f"no positive eps1 with C <= {cap:g}")
    min_margin = float(np.min(margin)) if len(margin) else 0.0
    valid = K > 0 and eps1 > 0 and min_margin >= 0
    return BarrierCertificate(K=float(K), eps1=float(eps1), C=float(C), margin_field=margin,
                              min_margin=min_margin, valid=valid, notes=notes)


def check_barrier(ps: ProblemSpec, iterate: EllipticIterate, subsolution: ScalarField, K: Optional[float] = None,
                  cap: Optional[float] = None, max_exponent: Optional[int] = None) -> BarrierCertificate:
    """障壁不等式の証明書（K 省略時は 1, 2, 4, ... を順に試す）"""
    if not iterate.elliptic:
        node = int(np.argmin(iterate.min_eig))
        raise EllipticityError(f"barrier check needs an elliptic iterate (node {node})", node=node,
                               point=iterate.grid.points[node].tolist())
    if K is not None:
        certificate = barrier_certificate(ps, iterate, subsolution, K, cap)
        certificate.trace = [{"K": certificate.K, "eps1": certificate.eps1, "C": certificate.C}]
        return certificate

    max_exponent = max_exponent if max_exponent is not None else settings.BARRIER_K_MAX_EXPONENT
    trace: List[Dict[str, float]] = []
    best: Optional[BarrierCertificate] = None
    for exponent in range(max_exponent + 1):
        certificate = barrier_certificate(ps, iterate, subsolution, 2.0 ** exponent, cap)
        trace.append({"K": certificate.K, "eps1": certificate.eps1, "C": certificate.C})
        if certificate.valid:
            certificate.trace = trace
            logger.info(f"障壁証明書: K={certificate.K:g}, ε₁={certificate.eps1:.3e}, C={certificate.C:.3e}")
            return certificate
        if best is None or certificate.eps1 > best.eps1:
            best = certificate
    best.trace = trace
    best.notes.append(f"no valid certificate for K <= 2^{max_exponent}")
    return best


def barrier_report(certificate: BarrierCertificate) -> ConditionReport:
    margin = certificate.margin_field if certificate.margin_field is not None else np.zeros(0)
    node = int(np.argmin(margin)) if len(margin) else -1
    return ConditionReport(
        name="barrier", samples=len(margin),
        min_margin=certificate.min_margin if certificate.valid else min(certificate.min_margin, -1.0),
        worst_witness={"node": node, "K": certificate.K},
        details={"K": certificate.K, "eps1": certificate.eps1, "C": certificate.C},
        notes=list(certificate.notes),
    )


# ---------------------------------------------------------------- A 有界性・境界の凸性

def check_A_bounded(ps: ProblemSpec, iterate: EllipticIterate, phi_bar: ScalarField,
                    tolerance: Optional[float] = None) -> ConditionReport:
    """[D_ijφ̄ - D_{p_k}A_ij(x,Du)D_kφ̄]ξ_iξ_j ≥ |ξ|²"""
    tolerance = tolerance if tolerance is not None else settings.REPORT_TOLERANCE
    x = iterate.grid.interior_points
    Dphi, D2phi = derivatives(phi_bar)
    dA = iterate.dA if iterate.dA is not None else ps.A.dp(x, iterate.Du)
    M = D2phi - np.einsum("nijk,nk->nij", dA, Dphi)
    lo, _ = symmetric_eigenvalues(M)
    node = int(np.argmin(lo))
    xi = np.linalg.eigh(M[node])[1][:, 0]
    return ConditionReport(name="A-bounded", samples=len(lo), min_margin=float(lo[node] - 1.0), tolerance=tolerance,
                           worst_witness={"node": node, "x": x[node].tolist(), "xi": xi.tolist()})


def _nearest_gradient(iterate: Optional[EllipticIterate], points: np.ndarray) -> np.ndarray:
    if iterate is None:
        return np.zeros_like(points)
    _, index = cKDTree(iterate.grid.interior_points).query(points)
    return iterate.Du[index]


def check_uniform_A_convexity(ps: ProblemSpec, iterate: Optional[EllipticIterate], delta0: float = 0.0,
                              samples: Optional[int] = None, tolerance: Optional[float] = None) -> ConditionReport:
    """[D_iγ_j + D_{p_k}A_ij(x,Du)γ_k]τ_iτ_j ≥ δ0（境界サンプル上）"""
    tolerance = tolerance if tolerance is not None else settings.REPORT_TOLERANCE
    boundary = ps.domain.boundary_samples(samples or 256)
    p = _nearest_gradient(iterate, boundary.points)
    dA = ps.A.dp(boundary.points, p)
    term = boundary.curvature + np.einsum("mijk,mk,mi,mj->m", dA, boundary.normals, boundary.tangents,
                                          boundary.tangents)
    margin = term - delta0
    k = int(np.argmin(margin))
    notes = [] if iterate is not None else ["no iterate given, evaluated at p = 0"]
    return ConditionReport(name="uniform-A-convexity", samples=len(margin), min_margin=float(margin[k]),
                           tolerance=tolerance,
                           worst_witness={"x": boundary.points[k].tolist(), "p": p[k].tolist(),
                                          "tau": boundary.tangents[k].tolist()},
                           details={"delta0": delta0, "min_curvature": float(np.min(boundary.curvature))},
                           notes=notes)


def check_domain_c_convexity(cm: CostModel, domain: Domain, y_samples: np.ndarray, boundary_points: int = 256,
                             tolerance: Optional[float] = None) -> ConditionReport:
    """c_y(·,y)(Ω) の凸性（写した境界多角形の正規化外積の最小値）"""
    tolerance = tolerance if tolerance is not None else settings.CONVEXITY_TOLERANCE
    polygon = domain.boundary_polygon(boundary_points)
    ys = np.asarray(y_samples, dtype=float)
    image = cm.c_y(polygon[None, :, :], ys[:, None, :])

    edges = np.roll(image, -1, axis=1) - image
    following = np.roll(edges, -1, axis=1)
    lengths = np.linalg.norm(edges, axis=-1) * np.linalg.norm(following, axis=-1)
    cross = edges[..., 0] * following[..., 1] - edges[..., 1] * following[..., 0]
    tiny = np.finfo(float).eps * np.max(lengths, initial=1.0)
    normalized = np.where(lengths > tiny, cross / np.where(lengths > tiny, lengths, 1.0), 0.0)

    x, y = image[..., 0], image[..., 1]
    area = 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)
    margin = np.sign(area)[:, None] * normalized
    s, k = _argmin(margin)
    corner = (k + 1) % len(polygon)
    return ConditionReport(name="domain-c-convexity", samples=int(margin.size), min_margin=float(margin[s, k]),
                           tolerance=tolerance, worst_witness={"y": ys[s].tolist(), "x": polygon[corner].tolist()},
                           sample_range={"y_box": [cm.y_box[0].tolist(), cm.y_box[1].tolist()]})


def check_solution_c_convexity(cm: CostModel, iterate: EllipticIterate, chunk: int = 256,
                               tolerance: Optional[float] = None) -> ConditionReport:
    """各内部節点 x₀ で y₀ = Y(x₀, Du(x₀)) とし、min_x u(x) - u(x₀) - c(x,y₀) + c(x₀,y₀) ≥ 0"""
    tolerance = tolerance if tolerance is not None else settings.SOLUTION_CONVEXITY_TOLERANCE
    grid = iterate.grid
    u = iterate.u.values
    u_int = u[:grid.n_interior]
    points = grid.points
    x0 = grid.interior_points
    y0 = cm.transport_map(x0, iterate.Du)
    c00 = cm.c(x0, y0)

    worst, witness = np.inf, {}
    for start in range(0, len(x0), chunk):
        block = slice(start, start + chunk)
        values = (u[None, :] - u_int[block, None] - cm.c(points[None, :, :], y0[block, None, :])
                  + c00[block, None])
        i, j = _argmin(values)
        if values[i, j] < worst:
            worst = float(values[i, j])
            witness = {"x0": x0[start + i].tolist(), "y0": y0[start + i].tolist(), "x": points[j].tolist()}
    return ConditionReport(name="solution-c-convexity", samples=len(x0) * len(points), min_margin=worst,
                           tolerance=tolerance, worst_witness=witness)


# ---------------------------------------------------------------- まとめて実行

SOLUTION_CHECKS = ("barrier", "comparison", "solution-c-convexity")


class ConditionService:
    """設定された判定を順に実行する（サンプルは seed から決定的に生成）"""

    def __init__(self, ps: ProblemSpec, checks: ChecksSection, seed: int = 0, mu0: float = 1.0,
                 regularity_model: Optional[MatrixFunction] = None):
        self.ps = ps
        self.checks = checks
        self.seed = seed
        self.mu0 = mu0
        self.regularity_model = regularity_model or ps.A
        self.rng = np.random.default_rng(seed)
        self._x: Optional[np.ndarray] = None
        self._p: Optional[np.ndarray] = None
        self.p_radius: Optional[float] = None

    def samples(self, iterate: Optional[EllipticIterate]):
        if self._x is None:
            radius = self.checks.p_radius or default_p_radius(iterate)
            self._x = sample_points(self.ps.domain, self.checks.x_samples, self.rng)
            self._p = sample_momenta(self.checks.p_samples, radius, self.rng)
            self.p_radius = radius
        return self._x, self._p

    def _sampled(self, report: ConditionReport) -> ConditionReport:
        report.sample_range.setdefault("p_radius", self.p_radius)
        report.sample_range["x_samples"] = self.checks.x_samples
        report.sample_range["seed"] = self.seed
        return report

    def _require(self, name: str, value, what: str = "a solution"):
        if value is None:
            raise ConfigError(f"check {name} needs {what}", key="names")
        return value

    def run(self, names: Sequence[str], subsolution: Optional[ScalarField] = None,
            iterate: Optional[EllipticIterate] = None,
            solution: Optional[EllipticIterate] = None) -> List[ConditionReport]:
        """判定を実行（iterate は p の範囲と A 依存の判定に使う反復）"""
        ps, cfg = self.ps, self.checks
        current = solution or iterate
        if current is None and subsolution is not None:
            current = assemble_w(ps, subsolution, with_derivative=True)

        def lower_barrier() -> ScalarField:
            field = self._require(name, subsolution, "a subsolution")
            if cfg.strictify_a > 0 and name != "subsolution":
                field = strictify(field, cfg.strictify_a, cfg.strictify_b, cfg.strictify_mode)
            return field

        reports: List[ConditionReport] = []
        for name in names:
            if name == "regularity":
                x, p = self.samples(current)
                report = self._sampled(check_regularity(self.regularity_model, x, p, cfg.directions,
                                                        use_closed_form=cfg.closed_form))
            elif name == "structure":
                x, p = self.samples(current)
                report = self._sampled(check_structure(ps.A, self.mu0, x, p))
            elif name == "A0-eigenvalue":
                x, _ = self.samples(current)
                report = self._sampled(check_A0_eigenvalue(ps.A, x))
            elif name == "B-positive":
                x, p = self.samples(current)
                report = self._sampled(check_B_positive(ps.B, x, p))
            elif name in ("subsolution", "strict-subsolution"):
                report = check_subsolution(ps, lower_barrier(), strict=name == "strict-subsolution")
            elif name == "A-bounded":
                base = self._require(name, current, "an iterate")
                phi_bar = ScalarField.from_function(base.grid, parse_expression(cfg.A_bounded_phi))
                report = check_A_bounded(ps, base, phi_bar)
            elif name == "uniform-A-convexity":
                report = check_uniform_A_convexity(ps, current, cfg.delta0, cfg.boundary_samples)
            elif name == "domain-c-convexity":
                cm = self._require(name, ps.cost, "a cost model")
                ys = cm.y_box[0] + (cm.y_box[1] - cm.y_box[0]) * self.rng.random((cfg.y_samples, 2))
                report = check_domain_c_convexity(cm, ps.domain, ys, cfg.boundary_samples)
            elif name == "solution-c-convexity":
                report = check_solution_c_convexity(self._require(name, ps.cost, "a cost model"),
                                                    self._require(name, solution))
            elif name == "barrier":
                solved = self._require(name, solution)
                report = barrier_report(check_barrier(ps, solved, lower_barrier(), cfg.K))
            elif name == "comparison":
                report = comparison_check(self._require(name, solution).u,
                                          self._require(name, subsolution, "a subsolution"))
            else:
                raise ConfigError(f"unknown check {name!r}", key="names")
            logger.info(f"判定 {report.name}: {'合格' if report.passed else '不合格'} "
                        f"(最小余裕 {report.min_margin:.3e})")
            reports.append(report)
        return reports
