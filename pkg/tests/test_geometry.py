"""Tests for spherical/equirectangular geometry primitives."""

import math

import numpy as np
import pytest

from vq360.geometry import (
    CartesianVector,
    FieldOfView,
    Resolution,
    SphericalPoint,
    angular_distance_deg,
    cartesian_to_spherical,
    cartesian_to_spherical_arrays,
    equivalent_pixels_picture,
    equivalent_pixels_viewport,
    pixel_to_spherical,
    rotate_phi,
    rotate_phi_inverse,
    rotate_theta,
    row_centers_deg,
    solid_angle_sr,
    spherical_to_cartesian,
    spherical_to_cartesian_arrays,
    spherical_to_pixel,
)

RES_4K = Resolution(3840, 1920)
FOV_DEFAULT = FieldOfView(100.0, 85.0)


def wrap_delta_deg(a, b):
    """Smallest absolute azimuth difference, wraparound-aware."""
    d = np.abs(np.asarray(a) - np.asarray(b)) % 360.0
    return np.minimum(d, 360.0 - d)


def test_spherical_to_cartesian_axes():
    center = spherical_to_cartesian(SphericalPoint(180.0, 90.0))
    assert np.allclose([center.x, center.y, center.z], [0.0, -1.0, 0.0], atol=1e-15)
    north = spherical_to_cartesian(SphericalPoint(180.0, 0.0))
    assert np.allclose([north.x, north.y, north.z], [0.0, 0.0, 1.0], atol=1e-15)
    east = spherical_to_cartesian(SphericalPoint(90.0, 90.0))
    assert np.allclose([east.x, east.y, east.z], [1.0, 0.0, 0.0], atol=1e-15)


def test_cartesian_to_spherical_examples():
    p = cartesian_to_spherical(CartesianVector(0.0, -1.0, 0.0))
    assert p.theta_deg == pytest.approx(180.0, abs=1e-12)
    assert p.phi_deg == pytest.approx(90.0, abs=1e-12)
    south = cartesian_to_spherical(CartesianVector(0.0, 0.0, -1.0))
    assert south.theta_deg == 0.0
    assert south.phi_deg == pytest.approx(180.0, abs=1e-12)


def test_cartesian_to_spherical_rejects_zero_vector():
    with pytest.raises(ValueError):
        cartesian_to_spherical(CartesianVector(0.0, 0.0, 0.0))


def test_round_trip_property():
    rng = np.random.default_rng(7)
    n = 200_000
    theta = rng.uniform(0.0, 360.0, n)
    phi = np.degrees(np.arccos(rng.uniform(-1.0, 1.0, n)))
    x, y, z = spherical_to_cartesian_arrays(theta, phi)
    assert np.allclose(x * x + y * y + z * z, 1.0, atol=1e-12)
    theta_back, phi_back = cartesian_to_spherical_arrays(x, y, z)
    assert wrap_delta_deg(theta, theta_back).max() < 1e-9
    assert np.abs(phi - phi_back).max() < 1e-9


def test_spherical_point_normalization():
    assert SphericalPoint(365.0, 90.0).theta_deg == pytest.approx(5.0)
    assert SphericalPoint(-10.0, 90.0).theta_deg == pytest.approx(350.0)
    assert SphericalPoint(0.0, 200.0).phi_deg == 180.0
    assert SphericalPoint(0.0, -5.0).phi_deg == 0.0


def test_pixel_center_examples():
    p = pixel_to_spherical(1919, 959, RES_4K)
    assert p.theta_deg == pytest.approx(179.953125, abs=1e-12)
    assert p.phi_deg == pytest.approx(89.953125, abs=1e-12)
    q = pixel_to_spherical(0, 0, Resolution(4, 2))
    assert (q.theta_deg, q.phi_deg) == (45.0, 45.0)


def test_pixel_round_trip_identity():
    res = Resolution(64, 32)
    for row in range(res.n_v):
        for col in range(res.n_h):
            assert spherical_to_pixel(pixel_to_spherical(col, row, res), res) == (col, row)


def test_pixel_out_of_range():
    with pytest.raises(ValueError):
        pixel_to_spherical(3840, 0, RES_4K)
    with pytest.raises(ValueError):
        pixel_to_spherical(0, -1, RES_4K)


def test_solid_angle_examples():
    assert solid_angle_sr(FieldOfView(90.0, 90.0)) == pytest.approx(2.0 * math.pi / 3.0, rel=1e-14)
    assert solid_angle_sr(FOV_DEFAULT) == pytest.approx(2.1758570461483835, rel=1e-12)
    near_hemisphere = solid_angle_sr(FieldOfView(179.999, 179.999))
    assert near_hemisphere == pytest.approx(2.0 * math.pi, rel=1e-4)


def test_solid_angle_quadrature_oracle():
    """Numerical integration of the pyramid's spherical footprint.

    A direction (x, y, z) with forward component -y lies in the pyramid
    iff |arctan(x / -y)| <= theta_vp/2 and |arctan(z / -y)| <= phi_vp/2.
    Summing sin(phi) dtheta dphi over member pixel centers approximates
    the solid angle.
    """
    fov = FOV_DEFAULT
    res = Resolution(2880, 1440)
    half_t = math.radians(fov.theta_deg / 2.0)
    half_p = math.radians(fov.phi_deg / 2.0)
    theta = np.deg2rad((np.arange(res.n_h) + 0.5) * 360.0 / res.n_h)
    phi = np.deg2rad((np.arange(res.n_v) + 0.5) * 180.0 / res.n_v)
    x = np.sin(phi)[:, None] * np.sin(theta)[None, :]
    forward = -np.sin(phi)[:, None] * np.cos(theta)[None, :]
    z = np.broadcast_to(np.cos(phi)[:, None], x.shape)
    inside = (forward > 0.0) & (np.abs(np.arctan2(x, forward)) <= half_t) & (
        np.abs(np.arctan2(z, forward)) <= half_p
    )
    cell_sr = (2.0 * math.pi / res.n_h) * (math.pi / res.n_v)
    quadrature = float(np.sum(np.sin(phi)[:, None] * inside) * cell_sr)
    assert quadrature == pytest.approx(solid_angle_sr(fov), rel=2e-3)


def test_solid_angle_monotone_in_each_angle():
    rng = np.random.default_rng(11)
    for _ in range(200):
        t, p = rng.uniform(1.0, 178.0, 2)
        bump = rng.uniform(0.1, 1.9)
        base = solid_angle_sr(FieldOfView(t, p))
        assert solid_angle_sr(FieldOfView(min(t + bump, 179.9), p)) > base
        assert solid_angle_sr(FieldOfView(t, min(p + bump, 179.9))) > base


def test_equivalent_pixels_picture_matches_row_sum():
    """The closed form is the continuous limit of summing sin(phi)."""
    exact = RES_4K.n_h * float(np.sum(np.sin(np.deg2rad(row_centers_deg(RES_4K)))))
    closed = equivalent_pixels_picture(RES_4K)
    assert abs(closed - exact) / exact < 1e-3
    assert closed == pytest.approx(2.0 / math.pi * 3840 * 1920, rel=1e-14)


def test_equivalent_pixels_viewport_hemisphere_limit():
    res = RES_4K
    wide = equivalent_pixels_viewport(res, FieldOfView(179.999, 179.999))
    assert wide == pytest.approx(equivalent_pixels_picture(res) / 2.0, rel=1e-4)


def test_rotate_phi_examples():
    center = np.array([0.0, -1.0, 0.0])
    assert np.allclose(rotate_phi(center, 90.0), center, atol=1e-15)
    assert np.allclose(rotate_phi(center, 0.0), [0.0, 0.0, 1.0], atol=1e-15)


def test_rotations_preserve_norm_and_invert():
    rng = np.random.default_rng(3)
    vecs = rng.normal(size=(500, 3))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    for target in (0.0, 17.0, 90.0, 141.5, 180.0):
        rotated = rotate_phi(vecs, target)
        assert np.abs(np.linalg.norm(rotated, axis=1) - 1.0).max() < 1e-12
        back = rotate_phi_inverse(rotated, target)
        assert np.abs(back - vecs).max() < 1e-12


def test_rotate_theta_wraps():
    assert rotate_theta(180.0, 140.0) == pytest.approx(320.0)
    assert rotate_theta(350.0, 20.0) == pytest.approx(10.0)
    values = np.array([0.0, 90.0, 359.5])
    shifted = rotate_theta(values, 1.0)
    assert np.allclose(shifted, [1.0, 91.0, 0.5])


def test_angular_distance_examples():
    a = SphericalPoint(0.0, 90.0)
    assert angular_distance_deg(a, a) == 0.0
    assert angular_distance_deg(a, SphericalPoint(180.0, 90.0)) == pytest.approx(180.0)
    assert angular_distance_deg(
        SphericalPoint(180.0, 90.0), SphericalPoint(180.0, 45.0)
    ) == pytest.approx(45.0)


def test_angular_distance_symmetry_and_triangle():
    rng = np.random.default_rng(5)
    for _ in range(300):
        pts = [
            SphericalPoint(rng.uniform(0, 360), np.degrees(np.arccos(rng.uniform(-1, 1))))
            for _ in range(3)
        ]
        ab = angular_distance_deg(pts[0], pts[1])
        ba = angular_distance_deg(pts[1], pts[0])
        assert ab == pytest.approx(ba, abs=1e-12)
        bc = angular_distance_deg(pts[1], pts[2])
        ac = angular_distance_deg(pts[0], pts[2])
        assert ac <= ab + bc + 1e-9


def test_field_of_view_bounds():
    with pytest.raises(ValueError):
        FieldOfView(0.0, 90.0)
    with pytest.raises(ValueError):
        FieldOfView(100.0, 180.0)


def test_resolution_validation():
    with pytest.raises(ValueError):
        Resolution(1, 2)
    with pytest.warns(UserWarning):
        Resolution(100, 100)
