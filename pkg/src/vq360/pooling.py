"""Spatial and temporal pooling of masked quality.

The per-frame quality is the Hadamard product of the weighted viewport
mask and the grade map, summed and normalized.  Dividing by the actual
mask weight sum (mode "mask-area", the default) keeps the value in
[0, 1] despite rasterization error; mode "analytic" divides by the
closed-form equivalent-pixel count of the viewport instead.  Temporal
pooling over a window reports the mean frame quality and the percentage
of frames strictly above a threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import equivalent_pixels_viewport
from .grade import GradeMap
from .mask import ViewportMask, _atomic_write_bytes

DEFAULT_T_Q = 0.8
NORMALIZATION_MASK_AREA = "mask-area"
NORMALIZATION_ANALYTIC = "analytic"


@dataclass(frozen=True)
class FrameQuality:
    """Quality perceived inside the viewport of one frame."""

    frame_index: int
    q_frame: float
    mask_area_used: float


@dataclass(frozen=True)
class QualityTimeline:
    """Per-frame series with its temporal aggregates."""

    frames: tuple[FrameQuality, ...]
    q_window: float
    f_window: float
    threshold: float


def _q_values(frames: Iterable) -> np.ndarray:
    values = np.array([float(getattr(f, "q_frame", f)) for f in frames])
    if values.size == 0:
        raise ValueError("empty window")
    return values


def frame_quality(
    mask: ViewportMask,
    grade: GradeMap,
    normalization: str = NORMALIZATION_MASK_AREA,
    frame_index: int = 0,
) -> FrameQuality:
    """Weighted mean grade over the viewport.

    The sum runs over the full raster; entries outside the mask carry
    zero weight, so it equals the sum over the mask support.
    """
    if mask.resolution != grade.resolution:
        raise ValueError(f"mask {mask.resolution} and grade {grade.resolution} resolutions differ")
    if normalization == NORMALIZATION_MASK_AREA:
        denominator = mask.area
    elif normalization == NORMALIZATION_ANALYTIC:
        denominator = equivalent_pixels_viewport(mask.resolution, mask.fov)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    if denominator <= 0.0:
        raise ValueError("mask has zero area")
    numerator = float(np.sum(mask.weights * grade.grades, dtype=np.float64))
    return FrameQuality(frame_index, numerator / denominator, denominator)


def window_mean(frames: Sequence) -> float:
    """Arithmetic mean of the frame qualities."""
    return float(_q_values(frames).mean())


def window_fraction(frames: Sequence, t_q: float = DEFAULT_T_Q) -> float:
    """Percentage of frames whose quality strictly exceeds the threshold."""
    if not 0.0 <= t_q <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t_q}")
    values = _q_values(frames)
    return float(100.0 * np.count_nonzero(values > t_q) / values.size)


def make_timeline(frames: Sequence[FrameQuality], t_q: float = DEFAULT_T_Q) -> QualityTimeline:
    """Aggregate a per-frame series into a QualityTimeline."""
    return QualityTimeline(tuple(frames), window_mean(frames), window_fraction(frames, t_q), t_q)


def write_frame_csv(frames: Sequence[FrameQuality], path: str) -> None:
    """Per-frame series as CSV with header frame,q_frame."""
    lines = ["frame,q_frame"]
    lines.extend(f"{f.frame_index},{f.q_frame!r}" for f in frames)
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))


def write_summary_json(timeline: QualityTimeline, normalization: str, path: str) -> None:
    """Window aggregates as a small JSON document."""
    payload = {
        "q_window": timeline.q_window,
        "f_window": timeline.f_window,
        "t_q": timeline.threshold,
        "n_frames": len(timeline.frames),
        "normalization": normalization,
    }
    _atomic_write_bytes(path, (json.dumps(payload, indent=2) + "\n").encode("ascii"))
