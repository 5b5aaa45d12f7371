"""Projected-viewport masks on equirectangular frames.

The viewport is the spherical rectangle cut on the viewing sphere by a
right rectangular pyramid (apex at the sphere center, apex angles given
by the field of view).  Its four sides are great-circle arcs.  A mask is
built in three steps: sample the boundary of the base viewport (centered
at theta=180, phi=90), rotate the samples to the requested point of gaze
(PoG), then rasterize the closed polyline on the pixel grid and fill the
interior, weighting each pixel row by sin(phi) to compensate the uneven
spherical sampling of the equirectangular mapping.

Masks may wrap around the theta=0/360 seam (splitting into two raster
components) and may contain a pole, in which case every column's span
extends to the corresponding frame edge.  An exact per-pixel membership
test against the pyramid half-spaces serves as the independent oracle
for the rasterized path, and a bank of precomputed masks on a uniform
grid of centers supports the approximated evaluation method.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import (
    CartesianVector,
    FieldOfView,
    Resolution,
    SphericalPoint,
    cartesian_to_spherical_arrays,
    column_centers_deg,
    equivalent_pixels_viewport,
    phi_rotation_matrix,
    row_centers_deg,
    spherical_to_cartesian,
    spherical_to_cartesian_arrays,
    theta_rotation_matrix,
)

DEFAULT_SAMPLES_PER_SIDE = 64
BOUNDARY_EPS = 1e-12
# The projection stretches azimuth spans by ~1/sin(phi), so straight chords
# between rotated boundary samples under-resolve pole-adjacent stretches of
# the boundary.  Segments whose azimuth span exceeds both the per-sample cap
# (SUBDIVISION_REF_DEG / samples_per_side) and SUBDIVISION_STRETCH times
# their true arc length get true boundary points inserted before span
# filling; un-stretched segments are left alone so samples_per_side remains
# the accuracy knob away from the poles.
SUBDIVISION_REF_DEG = 64.0
SUBDIVISION_STRETCH = 1.8
MAX_SUBDIVISION_PASSES = 32
MIN_SUBDIVISION_PARAM_DEG = 1e-5

BANK_FORMAT_VERSION = 1
BANK_MANIFEST_NAME = "manifest.json"

_SIDE_TOP = 0
_SIDE_RIGHT = 1
_SIDE_BOTTOM = 2
_SIDE_LEFT = 3


@dataclass(frozen=True)
class BoundarySampleSet:
    """Boundary of the base viewport: corners, side midpoints, side samples.

    ``corners`` holds A (top-left), B (top-right), C (bottom-left) and
    D (bottom-right).  ``side_midpoints`` holds E (top), F (bottom),
    G (left), H (right).  ``side_samples`` maps side name to the ordered
    interior samples of that side (``samples_per_side`` points each).
    """

    corners: tuple[SphericalPoint, SphericalPoint, SphericalPoint, SphericalPoint]
    side_midpoints: tuple[SphericalPoint, SphericalPoint, SphericalPoint, SphericalPoint]
    side_samples: dict[str, tuple[SphericalPoint, ...]]
    samples_per_side: int


@dataclass(frozen=True)
class ViewportMask:
    """Weighted raster of the projected viewport.

    ``weights`` is a dense float32 raster, zero outside the viewport and
    sin(phi_row) (optionally scaled by a center weight <= 1) inside.
    ``area`` is the equivalent-pixel sum of weights.
    """

    resolution: Resolution
    weights: np.ndarray
    pog: SphericalPoint
    fov: FieldOfView
    area: float


@dataclass(frozen=True)
class MaskBank:
    """Precomputed masks at uniformly spaced centers (cell-centered grid)."""

    grid_rows: int
    grid_cols: int
    fov: FieldOfView
    resolution: Resolution
    samples_per_side: int
    centers: tuple[SphericalPoint, ...]
    masks: tuple[ViewportMask, ...]


# ---------------------------------------------------------------------------
# base viewport boundary
# ---------------------------------------------------------------------------


def corner_colatitudes_deg(fov: FieldOfView) -> tuple[float, float]:
    """Polar angles of the base viewport's top and bottom corners.

    The corner is the intersection of adjacent pyramid face planes; its
    elevation above the equator is arctan(tan(phi_vp/2) * cos(theta_vp/2)).
    """
    half_t = math.radians(fov.theta_deg / 2.0)
    half_p = math.radians(fov.phi_deg / 2.0)
    elev = math.degrees(math.atan(math.tan(half_p) * math.cos(half_t)))
    return 90.0 - elev, 90.0 + elev


def arc_coefficients(p1: SphericalPoint, p2: SphericalPoint) -> tuple[float, float, float]:
    """Coefficients (alpha, beta, gamma) of the great circle through two points.

    The circle satisfies tan(phi) = -gamma / (alpha sin(theta) + beta cos(theta)).
    """
    t1, p1r = math.radians(p1.theta_deg), math.radians(p1.phi_deg)
    t2, p2r = math.radians(p2.theta_deg), math.radians(p2.phi_deg)
    alpha = math.sin(p1r) * math.cos(t1) * math.cos(p2r) - math.sin(p2r) * math.cos(t2) * math.cos(p1r)
    beta = -math.sin(p1r) * math.sin(t1) * math.cos(p2r) + math.sin(p2r) * math.sin(t2) * math.cos(p1r)
    gamma = (
        math.sin(p1r) * math.sin(t1) * math.sin(p2r) * math.cos(t2)
        - math.sin(p2r) * math.sin(t2) * math.sin(p1r) * math.cos(t1)
    )
    return alpha, beta, gamma


def arc_phi_deg(coeffs: tuple[float, float, float], theta_deg: float) -> float:
    """Polar angle of a great circle at a given azimuth, in [0, 180].

    Quadrant-correct form of the arc equation: the two-argument
    arctangent resolves the tangent's sign, and the half-turn period
    folds the result into the valid polar range (the equator degenerate
    case alpha = beta = 0 lands on 90).
    """
    alpha, beta, gamma = coeffs
    t = math.radians(theta_deg)
    phi = math.degrees(math.atan2(-gamma, alpha * math.sin(t) + beta * math.cos(t)))
    if phi < 0.0:
        phi += 180.0
    return phi


def base_viewport_boundary(fov: FieldOfView, samples_per_side: int = DEFAULT_SAMPLES_PER_SIDE) -> BoundarySampleSet:
    """Corners, midpoints and per-side samples of the base viewport.

    Left/right sides are meridians (vertical lines on the frame) sampled
    uniformly in phi; top/bottom sides are great-circle arcs sampled at
    uniformly spaced azimuths between the corner abscissas.
    """
    if samples_per_side < 1:
        raise ValueError(f"samples_per_side must be >= 1, got {samples_per_side}")
    half_t = fov.theta_deg / 2.0
    half_p = fov.phi_deg / 2.0
    theta_left = 180.0 - half_t
    theta_right = 180.0 + half_t
    phi_top, phi_bottom = corner_colatitudes_deg(fov)

    a = SphericalPoint(theta_left, phi_top)
    b = SphericalPoint(theta_right, phi_top)
    c = SphericalPoint(theta_left, phi_bottom)
    d = SphericalPoint(theta_right, phi_bottom)
    e = SphericalPoint(180.0, 90.0 - half_p)
    f = SphericalPoint(180.0, 90.0 + half_p)
    g = SphericalPoint(theta_left, 90.0)
    h = SphericalPoint(theta_right, 90.0)

    top_coeffs = arc_coefficients(a, b)
    bottom_coeffs = arc_coefficients(c, d)
    interior = np.linspace(0.0, 1.0, samples_per_side + 2)[1:-1]

    top = tuple(
        SphericalPoint(t, arc_phi_deg(top_coeffs, t))
        for t in theta_left + interior * (theta_right - theta_left)
    )
    bottom = tuple(
        SphericalPoint(t, arc_phi_deg(bottom_coeffs, t))
        for t in theta_right + interior * (theta_left - theta_right)
    )
    right = tuple(
        SphericalPoint(theta_right, p) for p in phi_top + interior * (phi_bottom - phi_top)
    )
    left = tuple(
        SphericalPoint(theta_left, p) for p in phi_bottom + interior * (phi_top - phi_bottom)
    )

    return BoundarySampleSet(
        corners=(a, b, c, d),
        side_midpoints=(e, f, g, h),
        side_samples={"top": top, "right": right, "bottom": bottom, "left": left},
        samples_per_side=samples_per_side,
    )


@lru_cache(maxsize=32)
def _base_polyline(fov_theta: float, fov_phi: float, samples_per_side: int):
    """Closed base-frame polyline with per-vertex side id and side parameter.

    Corner vertices are duplicated so that every segment lies on a single
    side (the duplicate pairs form zero-length segments the rasterizer
    skips).  Returns (theta, phi, side, param) float64/int8 arrays.
    """
    fov = FieldOfView(fov_theta, fov_phi)
    bset = base_viewport_boundary(fov, samples_per_side)
    a, b, c, d = bset.corners
    theta: list[float] = []
    phi: list[float] = []
    side: list[int] = []
    param: list[float] = []

    def add(point: SphericalPoint, side_id: int, par: float) -> None:
        theta.append(point.theta_deg)
        phi.append(point.phi_deg)
        side.append(side_id)
        param.append(par)

    add(a, _SIDE_TOP, a.theta_deg)
    for p in bset.side_samples["top"]:
        add(p, _SIDE_TOP, p.theta_deg)
    add(b, _SIDE_TOP, b.theta_deg)

    add(b, _SIDE_RIGHT, b.phi_deg)
    for p in bset.side_samples["right"]:
        add(p, _SIDE_RIGHT, p.phi_deg)
    add(d, _SIDE_RIGHT, d.phi_deg)

    add(d, _SIDE_BOTTOM, d.theta_deg)
    for p in bset.side_samples["bottom"]:
        add(p, _SIDE_BOTTOM, p.theta_deg)
    add(c, _SIDE_BOTTOM, c.theta_deg)

    add(c, _SIDE_LEFT, c.phi_deg)
    for p in bset.side_samples["left"]:
        add(p, _SIDE_LEFT, p.phi_deg)
    add(a, _SIDE_LEFT, a.phi_deg)

    return (
        np.array(theta, dtype=np.float64),
        np.array(phi, dtype=np.float64),
        np.array(side, dtype=np.int8),
        np.array(param, dtype=np.float64),
    )


def _side_points(fov: FieldOfView, side_ids: np.ndarray, params: np.ndarray):
    """Evaluate true base-frame boundary points for (side, parameter) pairs."""
    bset_corners = base_viewport_boundary(fov, 1)
    a, b, c, d = bset_corners.corners
    top_coeffs = arc_coefficients(a, b)
    bottom_coeffs = arc_coefficients(c, d)
    theta = np.empty_like(params)
    phi = np.empty_like(params)
    for i, (s, par) in enumerate(zip(side_ids, params)):
        if s == _SIDE_TOP:
            theta[i], phi[i] = par, arc_phi_deg(top_coeffs, par)
        elif s == _SIDE_BOTTOM:
            theta[i], phi[i] = par, arc_phi_deg(bottom_coeffs, par)
        elif s == _SIDE_RIGHT:
            theta[i], phi[i] = b.theta_deg, par
        else:
            theta[i], phi[i] = a.theta_deg, par
    return theta, phi


# ---------------------------------------------------------------------------
# exact membership oracle
# ---------------------------------------------------------------------------


def _base_face_normals(fov: FieldOfView) -> np.ndarray:
    """Inward normals of the four pyramid faces plus the forward direction.

    A direction v is inside the base viewport iff v . n >= 0 for all rows.
    """
    half_t = math.radians(fov.theta_deg / 2.0)
    half_p = math.radians(fov.phi_deg / 2.0)
    sin_t, cos_t = math.sin(half_t), math.cos(half_t)
    sin_p, cos_p = math.sin(half_p), math.cos(half_p)
    return np.array(
        [
            [0.0, -sin_p, -cos_p],  # top
            [0.0, -sin_p, cos_p],  # bottom
            [-cos_t, -sin_t, 0.0],  # left
            [cos_t, -sin_t, 0.0],  # right
            [0.0, -1.0, 0.0],  # forward hemisphere
        ],
        dtype=np.float64,
    )


def _world_face_normals(pog: SphericalPoint, fov: FieldOfView) -> np.ndarray:
    """Face normals rotated from the base frame to the PoG frame."""
    normals = _base_face_normals(fov)
    rot = theta_rotation_matrix(pog.theta_deg - 180.0) @ phi_rotation_matrix(pog.phi_deg)
    return normals @ rot.T


def exact_membership(pixel_dir: CartesianVector, pog: SphericalPoint, fov: FieldOfView) -> bool:
    """True iff a direction lies inside the viewing pyramid (boundary inclusive).

    The direction is rotated by the inverse of the PoG rotation into the
    base frame, where each pyramid face is the plane of a great circle
    through the sphere center; membership is the conjunction of the four
    face half-space tests and the forward-hemisphere test.
    """
    v = pixel_dir.as_array()
    rot = theta_rotation_matrix(pog.theta_deg - 180.0) @ phi_rotation_matrix(pog.phi_deg)
    v_base = rot.T @ v
    normals = _base_face_normals(fov)
    return bool(np.all(normals @ v_base >= -BOUNDARY_EPS))


def _membership_raster(pog: SphericalPoint, fov: FieldOfView, res: Resolution) -> np.ndarray:
    """Boolean raster of per-pixel-center membership, vectorized."""
    normals = _world_face_normals(pog, fov)
    theta = np.deg2rad(column_centers_deg(res))
    phi = np.deg2rad(row_centers_deg(res))
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    sin_p, cos_p = np.sin(phi), np.cos(phi)
    inside = np.ones((res.n_v, res.n_h), dtype=bool)
    for nx, ny, nz in normals:
        azimuthal = nx * sin_t + ny * cos_t
        inside &= np.outer(sin_p, azimuthal) + nz * cos_p[:, None] >= -BOUNDARY_EPS
    return inside


def _pole_containment(pog: SphericalPoint, fov: FieldOfView) -> tuple[bool, bool]:
    north = exact_membership(CartesianVector(0.0, 0.0, 1.0), pog, fov)
    south = exact_membership(CartesianVector(0.0, 0.0, -1.0), pog, fov)
    return north, south


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


def _short_way_deg(delta: np.ndarray) -> np.ndarray:
    """Wrap azimuth differences to [-180, 180)."""
    return (delta + 180.0) % 360.0 - 180.0


def _rotate_xyz_to_pog(xyz_base: np.ndarray, pog: SphericalPoint):
    xyz = xyz_base @ phi_rotation_matrix(pog.phi_deg).T
    t, p = cartesian_to_spherical_arrays(xyz[..., 0], xyz[..., 1], xyz[..., 2])
    return (t + (pog.theta_deg - 180.0)) % 360.0, p


def _subdivided_polyline(pog: SphericalPoint, fov: FieldOfView, samples_per_side: int, gap_cap_deg: float):
    """Rotated boundary polyline with pole-stretched segments refined.

    A segment is bisected (inserting the true boundary point at the
    midpoint of its base-frame side parameter) while its rotated azimuth
    span exceeds both the cap and SUBDIVISION_STRETCH times its arc
    length; arc length is rotation-invariant, so un-stretched segments
    keep the sampling density chosen by samples_per_side.
    """
    theta_b, phi_b, side, param = _base_polyline(fov.theta_deg, fov.phi_deg, samples_per_side)
    xyz_b = np.stack(spherical_to_cartesian_arrays(theta_b, phi_b), axis=-1)
    theta, phi = _rotate_xyz_to_pog(xyz_b, pog)
    for _ in range(MAX_SUBDIVISION_PASSES):
        gaps = np.abs(_short_way_deg(np.diff(theta)))
        arcs = np.rad2deg(np.arccos(np.clip(np.sum(xyz_b[:-1] * xyz_b[1:], axis=1), -1.0, 1.0)))
        same_side = side[:-1] == side[1:]
        wide_param = np.abs(param[1:] - param[:-1]) > MIN_SUBDIVISION_PARAM_DEG
        split = (gaps > gap_cap_deg) & (gaps > SUBDIVISION_STRETCH * arcs) & same_side & wide_param
        if not split.any():
            break
        idx = np.nonzero(split)[0]
        mid_param = 0.5 * (param[idx] + param[idx + 1])
        mid_side = side[idx]
        mid_theta_b, mid_phi_b = _side_points(fov, mid_side, mid_param)
        mid_xyz_b = np.stack(spherical_to_cartesian_arrays(mid_theta_b, mid_phi_b), axis=-1)
        mid_theta, mid_phi = _rotate_xyz_to_pog(mid_xyz_b, pog)
        theta = np.insert(theta, idx + 1, mid_theta)
        phi = np.insert(phi, idx + 1, mid_phi)
        side = np.insert(side, idx + 1, mid_side)
        param = np.insert(param, idx + 1, mid_param)
        xyz_b = np.insert(xyz_b, idx + 1, mid_xyz_b, axis=0)
    return theta, phi


def _column_spans(
    theta: np.ndarray,
    phi: np.ndarray,
    res: Resolution,
    north_inside: bool,
    south_inside: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-column row spans [top, bot] of the filled polyline interior.

    Returns int32 arrays of shape (n_h,); empty columns have top = n_v
    and bot = -1.  Columns wrap modulo n_h; if a pole is inside the
    viewport the spans extend to the corresponding frame edge.
    """
    col_pitch = res.column_pitch_deg
    row_pitch = res.row_pitch_deg

    theta_closed = np.append(theta, theta[0])
    phi_closed = np.append(phi, phi[0])
    a = theta_closed[:-1]
    dt = _short_way_deg(theta_closed[1:] - theta_closed[:-1])
    dp = phi_closed[1:] - phi_closed[:-1]
    moving = dt != 0.0
    a, dt, dp, pa = a[moving], dt[moving], dp[moving], phi_closed[:-1][moving]

    lo = np.minimum(a, a + dt)
    hi = np.maximum(a, a + dt)
    c_first = np.ceil(lo / col_pitch - 0.5).astype(np.int64)
    c_last = np.floor(hi / col_pitch - 0.5).astype(np.int64)
    counts = np.maximum(c_last - c_first + 1, 0)

    seg_idx = np.repeat(np.arange(a.size), counts)
    within = np.arange(counts.sum()) - np.repeat(np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
    cols_unwrapped = c_first[seg_idx] + within
    x = (cols_unwrapped + 0.5) * col_pitch
    t = np.clip((x - a[seg_idx]) / dt[seg_idx], 0.0, 1.0)
    phi_cross = pa[seg_idx] + t * dp[seg_idx]
    cols = cols_unwrapped % res.n_h

    min_phi = np.full(res.n_h, np.inf)
    max_phi = np.full(res.n_h, -np.inf)
    np.minimum.at(min_phi, cols, phi_cross)
    np.maximum.at(max_phi, cols, phi_cross)
    crossed = np.isfinite(min_phi)

    top = np.where(crossed, np.ceil(min_phi / row_pitch - 0.5), res.n_v)
    bot = np.where(crossed, np.floor(max_phi / row_pitch - 0.5), -1)
    if north_inside:
        top = np.where(crossed, 0, top)
    if south_inside:
        bot = np.where(crossed, res.n_v - 1, bot)
    top = np.clip(top, 0, res.n_v).astype(np.int32)
    bot = np.clip(bot, -1, res.n_v - 1).astype(np.int32)
    empty = top > bot
    top[empty] = res.n_v
    bot[empty] = -1
    return top, bot


def _project_spans(
    pog: SphericalPoint,
    fov: FieldOfView,
    res: Resolution,
    samples_per_side: int,
) -> tuple[np.ndarray, np.ndarray]:
    if samples_per_side < 1:
        raise ValueError(f"samples_per_side must be >= 1, got {samples_per_side}")
    gap_cap = SUBDIVISION_REF_DEG / samples_per_side
    theta, phi = _subdivided_polyline(pog, fov, samples_per_side, gap_cap)
    north, south = _pole_containment(pog, fov)
    return _column_spans(theta, phi, res, north, south)


def _center_weight_raster(pog: SphericalPoint, res: Resolution, sigma_deg: float) -> np.ndarray:
    """Gaussian weight exp(-d^2 / 2 sigma^2) of each pixel's distance to the PoG."""
    p = spherical_to_cartesian(pog)
    theta = np.deg2rad(column_centers_deg(res))
    phi = np.deg2rad(row_centers_deg(res))
    azimuthal = p.x * np.sin(theta) + p.y * np.cos(theta)
    cos_d = np.outer(np.sin(phi), azimuthal) + p.z * np.cos(phi)[:, None]
    d = np.rad2deg(np.arccos(np.clip(cos_d, -1.0, 1.0)))
    return np.exp(-0.5 * (d / sigma_deg) ** 2)


def _weighted_mask(
    inside: np.ndarray,
    pog: SphericalPoint,
    fov: FieldOfView,
    res: Resolution,
    center_sigma_deg: float | None,
) -> ViewportMask:
    weights = inside * np.sin(np.deg2rad(row_centers_deg(res)))[:, None]
    if center_sigma_deg is not None:
        if center_sigma_deg <= 0.0:
            raise ValueError(f"center weight sigma must be positive, got {center_sigma_deg}")
        weights = weights * _center_weight_raster(pog, res, center_sigma_deg)
    weights = weights.astype(np.float32)
    area = float(np.sum(weights, dtype=np.float64))
    return ViewportMask(resolution=res, weights=weights, pog=pog, fov=fov, area=area)


def _spans_to_raster(top: np.ndarray, bot: np.ndarray, res: Resolution) -> np.ndarray:
    rows = np.arange(res.n_v, dtype=np.int32)[:, None]
    return (rows >= top[None, :]) & (rows <= bot[None, :])


def project_viewport(
    pog: SphericalPoint,
    fov: FieldOfView,
    res: Resolution,
    samples_per_side: int = DEFAULT_SAMPLES_PER_SIDE,
    center_sigma_deg: float | None = None,
) -> ViewportMask:
    """Rasterized viewport mask for an arbitrary point of gaze.

    Parameters
    ----------
    pog : SphericalPoint
        Point of gaze (viewport center).
    fov : FieldOfView
        Horizontal and vertical apex angles.
    res : Resolution
        Frame size in pixels.
    samples_per_side : int
        Boundary samples per viewport side (accuracy knob).
    center_sigma_deg : float, optional
        When given, additionally weight pixels by a Gaussian of their
        angular distance to the PoG (peak weight 1 at the center).

    Returns
    -------
    ViewportMask
        Dense sin(phi)-weighted raster; may wrap around the horizontal
        seam and extends to the frame edge when a pole is inside.
    """
    top, bot = _project_spans(pog, fov, res, samples_per_side)
    inside = _spans_to_raster(top, bot, res)
    return _weighted_mask(inside, pog, fov, res, center_sigma_deg)


def exact_mask(
    pog: SphericalPoint,
    fov: FieldOfView,
    res: Resolution,
    center_sigma_deg: float | None = None,
) -> ViewportMask:
    """Oracle mask: per-pixel-center membership against the viewing pyramid."""
    inside = _membership_raster(pog, fov, res)
    return _weighted_mask(inside, pog, fov, res, center_sigma_deg)


def jaccard_index(a: ViewportMask, b: ViewportMask) -> float:
    """Jaccard index of two masks' supports (pixel sets, unweighted)."""
    sa = a.weights > 0.0
    sb = b.weights > 0.0
    union = np.count_nonzero(sa | sb)
    if union == 0:
        return 1.0
    return np.count_nonzero(sa & sb) / union


# ---------------------------------------------------------------------------
# mask bank
# ---------------------------------------------------------------------------


def bank_centers(grid_rows: int, grid_cols: int) -> tuple[SphericalPoint, ...]:
    """Cell-centered grid of PoG centers, row-major from the north edge."""
    if grid_rows < 1 or grid_cols < 1:
        raise ValueError(f"bank grid must be at least 1x1, got {grid_rows}x{grid_cols}")
    phi_step = 180.0 / grid_rows
    theta_step = 360.0 / grid_cols
    return tuple(
        SphericalPoint((j + 0.5) * theta_step, (i + 0.5) * phi_step)
        for i in range(grid_rows)
        for j in range(grid_cols)
    )


def build_mask_bank(
    grid_rows: int,
    grid_cols: int,
    fov: FieldOfView,
    res: Resolution,
    samples_per_side: int = DEFAULT_SAMPLES_PER_SIDE,
) -> MaskBank:
    """Project one mask per grid center (deterministic, row-major order)."""
    centers = bank_centers(grid_rows, grid_cols)
    masks = tuple(project_viewport(c, fov, res, samples_per_side) for c in centers)
    return MaskBank(
        grid_rows=grid_rows,
        grid_cols=grid_cols,
        fov=fov,
        resolution=res,
        samples_per_side=samples_per_side,
        centers=centers,
        masks=masks,
    )


def nearest_center_index(centers: tuple[SphericalPoint, ...], pog: SphericalPoint) -> int:
    """Index of the center with smallest great-circle distance to the PoG.

    Ties resolve to the lowest (row, col) index because the centers are
    stored row-major and the scan keeps the first minimum.
    """
    xyz = np.array(
        [spherical_to_cartesian_arrays(np.float64(c.theta_deg), np.float64(c.phi_deg)) for c in centers],
        dtype=np.float64,
    )
    p = spherical_to_cartesian(pog)
    dots = xyz @ p.as_array()
    return int(np.argmax(dots))


def nearest_mask(bank: MaskBank, pog: SphericalPoint) -> ViewportMask:
    """The bank mask whose center is nearest to the PoG on the sphere."""
    if not bank.masks:
        raise ValueError("mask bank is empty")
    return bank.masks[nearest_center_index(bank.centers, pog)]


# ---------------------------------------------------------------------------
# persistence and export
# ---------------------------------------------------------------------------


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_mask_pgm(mask: ViewportMask, path: str) -> None:
    """Export weights as an 8-bit binary PGM (values scaled by 255)."""
    levels = np.rint(np.clip(mask.weights, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{mask.resolution.n_h} {mask.resolution.n_v}\n255\n".encode("ascii")
    _atomic_write_bytes(path, header + levels.tobytes())


def write_mask_npz(mask: ViewportMask, path: str) -> None:
    """Export the mask losslessly (compressed raster plus metadata)."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        with open(tmp, "wb") as handle:
            np.savez_compressed(
                handle,
                weights=mask.weights,
                pog=np.array([mask.pog.theta_deg, mask.pog.phi_deg]),
                fov=np.array([mask.fov.theta_deg, mask.fov.phi_deg]),
                resolution=np.array([mask.resolution.n_h, mask.resolution.n_v]),
            )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_mask_npz(path: str) -> ViewportMask:
    with np.load(path) as data:
        res = Resolution(int(data["resolution"][0]), int(data["resolution"][1]))
        weights = data["weights"]
        return ViewportMask(
            resolution=res,
            weights=weights,
            pog=SphericalPoint(float(data["pog"][0]), float(data["pog"][1])),
            fov=FieldOfView(float(data["fov"][0]), float(data["fov"][1])),
            area=float(np.sum(weights, dtype=np.float64)),
        )


def bank_manifest(bank: MaskBank) -> dict:
    return {
        "format_version": BANK_FORMAT_VERSION,
        "grid_rows": bank.grid_rows,
        "grid_cols": bank.grid_cols,
        "fov": [bank.fov.theta_deg, bank.fov.phi_deg],
        "resolution": [bank.resolution.n_h, bank.resolution.n_v],
        "samples_per_side": bank.samples_per_side,
    }


def _bank_mask_filename(row: int, col: int) -> str:
    return f"mask_r{row:03d}_c{col:03d}.npz"


def save_mask_bank(bank: MaskBank, directory: str) -> None:
    """Persist a bank as a manifest plus one compressed raster per center."""
    os.makedirs(directory, exist_ok=True)
    for i, mask in enumerate(bank.masks):
        row, col = divmod(i, bank.grid_cols)
        write_mask_npz(mask, os.path.join(directory, _bank_mask_filename(row, col)))
    manifest = json.dumps(bank_manifest(bank), indent=2, sort_keys=True) + "\n"
    _atomic_write_bytes(os.path.join(directory, BANK_MANIFEST_NAME), manifest.encode("ascii"))


def load_mask_bank(directory: str) -> MaskBank:
    """Reload a persisted bank bit-exactly."""
    with open(os.path.join(directory, BANK_MANIFEST_NAME), "r", encoding="ascii") as handle:
        manifest = json.load(handle)
    version = manifest.get("format_version")
    if version != BANK_FORMAT_VERSION:
        raise ValueError(f"unsupported mask bank format version: {version!r}")
    rows, cols = int(manifest["grid_rows"]), int(manifest["grid_cols"])
    fov = FieldOfView(float(manifest["fov"][0]), float(manifest["fov"][1]))
    res = Resolution(int(manifest["resolution"][0]), int(manifest["resolution"][1]))
    masks = []
    for i in range(rows * cols):
        row, col = divmod(i, cols)
        masks.append(load_mask_npz(os.path.join(directory, _bank_mask_filename(row, col))))
    return MaskBank(
        grid_rows=rows,
        grid_cols=cols,
        fov=fov,
        resolution=res,
        samples_per_side=int(manifest["samples_per_side"]),
        centers=bank_centers(rows, cols),
        masks=tuple(masks),
    )
