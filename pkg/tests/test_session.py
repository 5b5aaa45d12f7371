"""Tests for trace handling, segment adaptation and session evaluation."""

import json
import math

import numpy as np
import pytest

from vq360.geometry import (
    FieldOfView,
    Resolution,
    SphericalPoint,
    angular_distance_deg,
)
from vq360.grade import variant_layout_26
from vq360.mask import build_mask_bank
from vq360.session import (
    SessionConfig,
    SessionTrace,
    _evaluate_session_dense,
    active_variant,
    approximation_error_study,
    evaluate_session,
    load_batch_manifest,
    parse_trace,
    segment_frames,
    session_report,
    synthetic_trace,
    write_trace_csv,
)

RES = Resolution(960, 480)
FOV = FieldOfView(100.0, 85.0)
LAYOUT = variant_layout_26(RES)


def base_config(**overrides):
    kwargs = dict(segment_ms=500.0, fov=FOV, resolution=RES, layout=LAYOUT)
    kwargs.update(overrides)
    return SessionConfig(**kwargs)


# ---------------------------------------------------------------------------
# synthetic traces
# ---------------------------------------------------------------------------


def test_synthetic_trace_is_deterministic():
    first = synthetic_trace(duration_s=2.0, fps=30.0, seed=5)
    second = synthetic_trace(duration_s=2.0, fps=30.0, seed=5)
    assert first.samples == second.samples
    other = synthetic_trace(duration_s=2.0, fps=30.0, seed=6)
    assert first.samples != other.samples


def test_synthetic_trace_step_sizes():
    """Each frame either dwells or advances by speed / fps degrees."""
    speed, fps = 45.0, 30.0
    trace = synthetic_trace(duration_s=4.0, fps=fps, speed_deg_per_s=speed, seed=9)
    assert trace.n_frames == 120
    assert trace.duration_s == pytest.approx(4.0)
    step = speed / fps
    moved = dwelled = 0
    for a, b in zip(trace.samples, trace.samples[1:]):
        d = angular_distance_deg(a, b)
        if d < 1e-6:
            dwelled += 1
        else:
            assert d == pytest.approx(step, abs=1e-5)
            moved += 1
    assert moved > 0 and dwelled > 0


def test_synthetic_trace_start_and_validation():
    start = SphericalPoint(200.0, 60.0)
    trace = synthetic_trace(duration_s=1.0, fps=10.0, seed=1, start=start)
    assert trace.samples[0].theta_deg == pytest.approx(200.0)
    assert trace.samples[0].phi_deg == pytest.approx(60.0)
    with pytest.raises(ValueError):
        synthetic_trace(duration_s=0.0, fps=30.0)
    with pytest.raises(ValueError):
        synthetic_trace(dwell_probability=1.5)
    with pytest.raises(ValueError):
        synthetic_trace(speed_deg_per_s=-1.0)


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------


def test_trace_csv_round_trip(tmp_path):
    trace = synthetic_trace(duration_s=1.0, fps=25.0, seed=3)
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, str(path))
    loaded = parse_trace(str(path), fps=25.0)
    assert loaded.frames_per_second == 25.0
    assert loaded.n_frames == trace.n_frames
    for a, b in zip(trace.samples, loaded.samples):
        assert a.theta_deg == pytest.approx(b.theta_deg, abs=1e-12)
        assert a.phi_deg == pytest.approx(b.phi_deg, abs=1e-12)


def test_parse_trace_errors(tmp_path):
    path = tmp_path / "trace.csv"

    path.write_text("frame,theta_deg,phi_deg\n0,10,45\n0,11,46\n")
    with pytest.raises(ValueError, match="duplicate frame"):
        parse_trace(str(path))

    path.write_text("frame,theta_deg,phi_deg\n0,10,45\n2,11,46\n")
    with pytest.raises(ValueError, match="missing frame 1"):
        parse_trace(str(path))

    path.write_text("frame,theta_deg,phi_deg\n0,ten,45\n")
    with pytest.raises(ValueError, match="malformed"):
        parse_trace(str(path))

    path.write_text("frame,theta_deg,phi_deg\n")
    with pytest.raises(ValueError, match="empty trace"):
        parse_trace(str(path))

    path.write_text("time,yaw,pitch\n0,0,0\n")
    with pytest.raises(ValueError, match="unrecognized header"):
        parse_trace(str(path))

    path.write_text("frame,theta_deg,phi_deg\n0,10,45\n")
    with pytest.raises(ValueError, match="axis convention"):
        parse_trace(str(path), convention="x-up")


def test_quaternion_identity_maps_to_frame_center(tmp_path):
    path = tmp_path / "quat.csv"
    path.write_text("frame,qw,qx,qy,qz\n0,1,0,0,0\n")
    for convention in ("y-up", "z-up"):
        trace = parse_trace(str(path), convention=convention)
        assert trace.samples[0].theta_deg == pytest.approx(180.0)
        assert trace.samples[0].phi_deg == pytest.approx(90.0)


def test_quaternion_yaw_turns_left(tmp_path):
    """+90 degrees about the up axis moves the gaze to theta = 90."""
    half = math.sqrt(0.5)
    path = tmp_path / "quat.csv"
    path.write_text(f"frame,qw,qx,qy,qz\n0,{half},0,{half},0\n")
    trace = parse_trace(str(path), convention="y-up")
    assert trace.samples[0].theta_deg == pytest.approx(90.0, abs=1e-9)
    assert trace.samples[0].phi_deg == pytest.approx(90.0, abs=1e-9)

    path.write_text(f"frame,qw,qx,qy,qz\n0,{half},0,0,{half}\n")
    trace = parse_trace(str(path), convention="z-up")
    assert trace.samples[0].theta_deg == pytest.approx(90.0, abs=1e-9)
    assert trace.samples[0].phi_deg == pytest.approx(90.0, abs=1e-9)


def test_quaternion_pitch_up(tmp_path):
    """+45 degrees about the right axis (y-up x) raises the gaze."""
    c, s = math.cos(math.radians(22.5)), math.sin(math.radians(22.5))
    path = tmp_path / "quat.csv"
    path.write_text(f"frame,qw,qx,qy,qz\n0,{c},{s},0,0\n")
    trace = parse_trace(str(path), convention="y-up")
    assert trace.samples[0].theta_deg == pytest.approx(180.0, abs=1e-9)
    assert trace.samples[0].phi_deg == pytest.approx(45.0, abs=1e-9)


def test_quaternion_norm_validation(tmp_path):
    path = tmp_path / "quat.csv"
    path.write_text("frame,qw,qx,qy,qz\n0,1,0,0,0\n1,2,0,0,0\n")
    with pytest.raises(ValueError, match="frame 1"):
        parse_trace(str(path))
    # a slightly off-unit quaternion is renormalized, not rejected
    path.write_text("frame,qw,qx,qy,qz\n0,1.0005,0,0,0\n")
    trace = parse_trace(str(path))
    assert trace.samples[0].phi_deg == pytest.approx(90.0)


# ---------------------------------------------------------------------------
# segments
# ---------------------------------------------------------------------------


def test_segment_frames():
    assert segment_frames(500.0, 30.0) == 15
    assert segment_frames(2000.0, 30.0) == 60
    assert segment_frames(100.0, 30.0) == 3
    with pytest.raises(ValueError):
        segment_frames(250.0, 30.0)
    with pytest.raises(ValueError):
        segment_frames(10.0, 30.0)


def test_active_variant_is_a_step_function():
    """The variant follows the PoG sampled at each segment's first frame."""
    north = SphericalPoint(0.0, 10.0)
    middle = SphericalPoint(180.0, 90.0)
    south = SphericalPoint(90.0, 170.0)
    samples = [north] * 5 + [middle] * 5
    samples[2] = south  # mid-segment movement must not retrigger adaptation
    trace = SessionTrace(10.0, tuple(samples))
    config = base_config(segment_ms=500.0)
    for frame in range(5):
        assert active_variant(trace, config, frame) == LAYOUT.area_containing(north)
    for frame in range(5, 10):
        assert active_variant(trace, config, frame) == LAYOUT.area_containing(middle)
    with pytest.raises(ValueError):
        active_variant(trace, config, 10)


def test_session_config_validation():
    with pytest.raises(ValueError):
        base_config(segment_ms=0.0)
    with pytest.raises(ValueError):
        base_config(method="exactly")
    with pytest.raises(ValueError):
        base_config(method="avaqm")
    with pytest.raises(ValueError):
        base_config(resolution=Resolution(1920, 960))


# ---------------------------------------------------------------------------
# session evaluation
# ---------------------------------------------------------------------------


def test_vaqm_matches_dense_reference():
    trace = synthetic_trace(duration_s=2.0, fps=10.0, speed_deg_per_s=60.0, seed=21)
    config = base_config()
    fast = evaluate_session(trace, config)
    dense = _evaluate_session_dense(trace, config)
    assert fast.q_window == pytest.approx(dense.q_window, rel=1e-5)
    for a, b in zip(fast.frames, dense.frames):
        assert a.q_frame == pytest.approx(b.q_frame, rel=1e-5, abs=1e-7)


def test_avaqm_matches_dense_reference():
    trace = synthetic_trace(duration_s=2.0, fps=10.0, speed_deg_per_s=60.0, seed=22)
    config = base_config(method="avaqm", avaqm_grid=(3, 6))
    fast = evaluate_session(trace, config)
    dense = _evaluate_session_dense(trace, config)
    for a, b in zip(fast.frames, dense.frames):
        assert a.q_frame == pytest.approx(b.q_frame, rel=1e-5, abs=1e-7)


def test_avaqm_accepts_prebuilt_bank():
    trace = synthetic_trace(duration_s=1.0, fps=10.0, seed=23)
    config = base_config(method="avaqm", avaqm_grid=(3, 6))
    bank = build_mask_bank(3, 6, FOV, RES)
    with_bank = evaluate_session(trace, config, mask_source=bank)
    without = evaluate_session(trace, config)
    for a, b in zip(with_bank.frames, without.frames):
        assert a.q_frame == pytest.approx(b.q_frame, rel=1e-5, abs=1e-7)


def test_avaqm_rejects_mismatched_bank():
    trace = synthetic_trace(duration_s=1.0, fps=10.0, seed=24)
    config = base_config(method="avaqm", avaqm_grid=(3, 6))
    bank = build_mask_bank(3, 6, FOV, Resolution(192, 96))
    with pytest.raises(ValueError, match="mask bank"):
        evaluate_session(trace, config, mask_source=bank)


def test_all_tiles_high_quality_gives_unit_quality():
    all_tiles = [(r, c) for r in range(5) for c in range(8)]
    footprint = {v: all_tiles for v in range(LAYOUT.variant_count)}
    trace = synthetic_trace(duration_s=1.0, fps=10.0, seed=25)
    timeline = evaluate_session(trace, base_config(hq_footprint=footprint))
    assert timeline.q_window == pytest.approx(1.0, abs=1e-12)
    assert timeline.f_window == pytest.approx(100.0)


def test_quality_bounds_and_timeline_length():
    trace = synthetic_trace(duration_s=3.0, fps=10.0, seed=26)
    timeline = evaluate_session(trace, base_config())
    assert len(timeline.frames) == 30
    for frame in timeline.frames:
        assert 0.0 <= frame.q_frame <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# approximation error study
# ---------------------------------------------------------------------------


def test_error_is_zero_when_trace_sits_on_bank_centers():
    from vq360.mask import bank_centers

    samples = bank_centers(3, 6)
    trace = SessionTrace(2.0, samples)  # one frame per 500 ms segment
    config = base_config()
    reports = approximation_error_study([trace], config, [(3, 6)])
    assert reports[0].mean_relative_error == 0.0
    assert reports[0].excluded_frames == 0


def test_error_decreases_with_finer_grids():
    traces = [
        synthetic_trace(duration_s=3.0, fps=30.0, speed_deg_per_s=45.0, seed=s) for s in (1, 2)
    ]
    reports = approximation_error_study(traces, base_config(), [(3, 6), (10, 20)])
    assert reports[0].grid_rows == 3 and reports[1].grid_rows == 10
    assert reports[1].mean_relative_error < reports[0].mean_relative_error
    for report in reports:
        assert report.per_frame_errors.size + report.excluded_frames == 180


def test_error_study_requires_traces():
    with pytest.raises(ValueError):
        approximation_error_study([], base_config(), [(3, 6)])


# ---------------------------------------------------------------------------
# manifests and reports
# ---------------------------------------------------------------------------


def test_load_batch_manifest(tmp_path):
    path = tmp_path / "manifest.json"
    entries = [
        {"trace": "a.csv", "content": "roller"},
        {"synthetic": {"seed": 1, "duration_s": 2.0}, "content": "walk"},
    ]
    path.write_text(json.dumps(entries))
    assert load_batch_manifest(str(path)) == entries

    path.write_text(json.dumps({"sessions": entries}))
    with pytest.raises(ValueError, match="non-empty JSON list"):
        load_batch_manifest(str(path))

    path.write_text(json.dumps([]))
    with pytest.raises(ValueError, match="non-empty JSON list"):
        load_batch_manifest(str(path))

    path.write_text(json.dumps([{"content": "nameless"}]))
    with pytest.raises(ValueError, match="entry 0"):
        load_batch_manifest(str(path))


def test_session_report_contents():
    trace = synthetic_trace(duration_s=1.0, fps=10.0, seed=27)
    config = base_config(method="avaqm", avaqm_grid=(3, 6))
    timeline = evaluate_session(trace, config)
    report = session_report(timeline, config, trace, frame_csv="frames.csv")
    assert report["q_window"] == timeline.q_window
    assert report["f_window"] == timeline.f_window
    assert report["n_frames"] == 10
    assert report["fps"] == 10.0
    assert report["segment_ms"] == 500.0
    assert report["method"] == "avaqm"
    assert report["avaqm_grid"] == [3, 6]
    assert report["frame_series"] == "frames.csv"
    assert report["hq_footprint"] == "area+neighbors"
    json.dumps(report)
