import numpy as np
import pytest

from app.core.exceptions import ConfigError
from app.models.domain import (DiscDomain, PolygonDomain, RectangleDomain, RoundedRectangleDomain, build_domain,
                               signed_area)


@pytest.mark.parametrize("domain", [
    RectangleDomain((0.0, 0.0), (1.0, 1.0)),
    DiscDomain((0.0, 0.0), 1.0),
    RoundedRectangleDomain((0.0, 0.0), (1.0, 1.0), 0.2),
    PolygonDomain.l_shape(),
])
def test_signed_distance_signs_and_unit_normals(domain):
    samples = domain.boundary_samples(64)
    assert np.abs(domain.signed_distance(samples.points)).max() < 1e-9
    assert np.linalg.norm(samples.normals, axis=-1) == pytest.approx(np.ones(64))

    inside = samples.points - 0.05 * samples.normals
    outside = samples.points + 0.05 * samples.normals
    assert np.all(domain.signed_distance(inside) > 0)
    assert np.all(domain.signed_distance(outside) < 0)


@pytest.mark.parametrize("domain", [RectangleDomain((0.0, 0.0), (1.0, 1.0)), DiscDomain((0.0, 0.0), 1.0)])
def test_distance_gradient_has_unit_length_near_boundary(domain):
    samples = domain.boundary_samples(32)
    x = samples.points - 0.01 * samples.normals
    h = 1e-6
    grad = np.stack([
        (domain.signed_distance(x + [h, 0]) - domain.signed_distance(x - [h, 0])) / (2 * h),
        (domain.signed_distance(x + [0, h]) - domain.signed_distance(x - [0, h])) / (2 * h),
    ], axis=-1)
    assert np.abs(np.linalg.norm(grad, axis=-1) - 1.0).max() < 1e-6


def test_disc_curvature_and_ray_exit():
    disc = DiscDomain((0.0, 0.0), 2.0)
    samples = disc.boundary_samples(16)
    assert samples.curvature == pytest.approx(np.full(16, 0.5))
    assert disc.ray_exit([0.0, 0.0], [1.0, 1.0]) == pytest.approx(2.0)
    assert disc.ray_exit([0.0, 0.0], [1.0, 0.0], max_dist=1.0) is None


def test_rectangle_ray_exit_closed_form():
    square = RectangleDomain((0.0, 0.0), (1.0, 1.0))
    assert square.ray_exit([0.25, 0.5], [1.0, 0.0]) == pytest.approx(0.75)
    assert square.ray_exit([0.5, 0.5], [1.0, 1.0]) == pytest.approx(np.sqrt(0.5))


def test_generic_ray_exit_by_root_finding():
    l_shape = PolygonDomain.l_shape()
    assert l_shape.ray_exit([0.25, 0.25], [1.0, 0.0]) == pytest.approx(0.75, abs=1e-10)
    assert l_shape.ray_exit([0.25, 0.75], [1.0, 0.0]) == pytest.approx(0.25, abs=1e-10)


def test_rounded_rectangle_is_flat_on_edges():
    domain = RoundedRectangleDomain((0.0, 0.0), (1.0, 1.0), 0.2)
    samples = domain.boundary_samples(200)
    assert samples.curvature.min() == pytest.approx(0.0, abs=1e-3)
    assert samples.curvature.max() == pytest.approx(5.0, rel=1e-2)


def test_polygons_are_counter_clockwise():
    clockwise = PolygonDomain([[0, 0], [0, 1], [1, 1], [1, 0]])
    assert signed_area(clockwise.vertices) > 0
    assert signed_area(DiscDomain().boundary_polygon(32)) > 0


def test_build_domain():
    assert build_domain("disc", center=[1.0, 0.0], radius=0.5).describe()["radius"] == 0.5
    assert build_domain("polygon").kind == "polygon"
    with pytest.raises(ConfigError):
        build_domain("torus")
    with pytest.raises(ConfigError):
        build_domain("disc", radius=-1.0)
