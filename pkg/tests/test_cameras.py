"""Camera projection, PnP, triangulation, and track time alignment."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinfuse.cameras import (CONFIDENCE_FLOOR, CameraIntrinsics, CameraModel,
                              PixelObservation, estimate_time_offset,
                              pixels_to_normalized, project, project_points,
                              solve_pnp, triangulate, unproject)
from twinfuse.errors import (BehindCameraError, DegenerateGeometryError,
                             InsufficientCorrespondencesError,
                             InsufficientViewsError, NoOverlapError,
                             ParameterError)

from conftest import look_at_camera_pose, quat_angle_deg, random_transform

seeds = st.integers(min_value=0, max_value=2**32 - 1)

INTR = CameraIntrinsics(fx=900.0, fy=920.0, cx=640.0, cy=360.0,
                        width=1280, height=720)
DIST = (-0.28, 0.07, 0.0008, -0.0005, 0.01)
INTR_DIST = CameraIntrinsics(fx=900.0, fy=920.0, cx=640.0, cy=360.0,
                             width=1280, height=720, dist=DIST)


def _cam(cam_id="cam0", position=(0.0, 0.0, 3.0), target=(0.0, 0.0, 0.0),
         intr=INTR):
    pose = look_at_camera_pose(position, target,
                               from_frame=f"camera:{cam_id}", to_frame="world")
    return CameraModel(cam_id, intr, pose)


def _frustum_points(cam, rng, n, depth_range=(1.5, 4.0)):
    pts = []
    for _ in range(n):
        u = rng.uniform(80, cam.intrinsics.width - 80)
        v = rng.uniform(60, cam.intrinsics.height - 60)
        pts.append(unproject(cam, (u, v), rng.uniform(*depth_range)))
    return np.array(pts)


# ---------------------------------------------------------------------------
# intrinsics / observation validation

def test_intrinsics_validation():
    with pytest.raises(ParameterError):
        CameraIntrinsics(fx=-1, fy=900, cx=640, cy=360, width=1280, height=720)
    with pytest.raises(ParameterError):
        CameraIntrinsics(fx=900, fy=900, cx=2000, cy=360, width=1280, height=720)
    with pytest.raises(ParameterError):
        CameraIntrinsics(fx=900, fy=900, cx=640, cy=360, width=1280, height=720,
                         dist=(0.0, 0.0))


def test_observation_validation():
    with pytest.raises(ParameterError):
        PixelObservation("cam0", 1.0, 2.0, confidence=1.5)
    with pytest.raises(ParameterError):
        PixelObservation("cam0", np.nan, 2.0)


def test_camera_json_round_trip():
    cam = _cam(intr=INTR_DIST)
    back = CameraModel.from_json(cam.to_json())
    assert back.id == cam.id
    assert back.intrinsics == cam.intrinsics
    assert np.allclose(back.world_from_camera.t, cam.world_from_camera.t)
    assert quat_angle_deg(back.world_from_camera.q,
                          cam.world_from_camera.q) < 1e-9


# ---------------------------------------------------------------------------
# projection

def test_project_optical_axis_hits_principal_point():
    cam = _cam()
    uv = project(cam, [0.0, 0.0, 0.0])
    assert np.allclose(uv, [INTR.cx, INTR.cy], atol=1e-9)


def test_project_known_offset():
    # camera at origin looking along +x; world +x is camera +z.
    cam = _cam(position=(0, 0, 0), target=(1, 0, 0))
    p_cam = np.array([0.1, 0.05, 2.0])  # in camera coords
    world = cam.world_from_camera.apply_points(p_cam.reshape(1, 3))[0]
    uv = project(cam, world)
    assert uv[0] == pytest.approx(INTR.cx + INTR.fx * 0.05, abs=1e-9)
    assert uv[1] == pytest.approx(INTR.cy + INTR.fy * 0.025, abs=1e-9)


def test_project_behind_camera_raises():
    cam = _cam()
    with pytest.raises(BehindCameraError):
        project(cam, [0.0, 0.0, 10.0])


@given(seeds)
@settings(max_examples=30, deadline=None)
def test_unproject_project_round_trip(seed):
    rng = np.random.default_rng(seed)
    cam = _cam(intr=INTR_DIST)
    u = rng.uniform(50, 1230)
    v = rng.uniform(40, 680)
    d = rng.uniform(0.5, 8.0)
    world = unproject(cam, (u, v), d)
    assert np.allclose(project(cam, world), [u, v], atol=1e-6)


def test_unproject_depth_consistency():
    cam = _cam()
    world = unproject(cam, (700.0, 400.0), 2.0)
    from twinfuse.geometry import invert
    cam_pt = invert(cam.world_from_camera).apply_points(world.reshape(1, 3))[0]
    assert cam_pt[2] == pytest.approx(2.0, abs=1e-12)


def test_unproject_invalid_depth():
    with pytest.raises(BehindCameraError):
        unproject(_cam(), (640.0, 360.0), 0.0)


def test_distortion_changes_off_center_pixels():
    cam_a = _cam()
    cam_b = _cam(intr=INTR_DIST)
    p = unproject(cam_a, (1000.0, 600.0), 2.0)
    uv_a = project(cam_a, p)
    uv_b = project(cam_b, p)
    assert np.linalg.norm(uv_a - uv_b) > 5.0


def test_normalized_coords_invert_distortion():
    rng = np.random.default_rng(0)
    xn_true = rng.uniform(-0.4, 0.4, size=(20, 2))
    from twinfuse.cameras import _distort
    xd = _distort(xn_true, DIST)
    pix = np.column_stack([INTR_DIST.fx * xd[:, 0] + INTR_DIST.cx,
                           INTR_DIST.fy * xd[:, 1] + INTR_DIST.cy])
    xn = pixels_to_normalized(INTR_DIST, pix)
    assert np.max(np.abs(xn - xn_true)) < 1e-10


def test_project_points_batch_matches_single():
    cam = _cam(intr=INTR_DIST)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.5, 0.5, size=(15, 3))
    batch = project_points(cam, pts)
    singles = np.array([project(cam, p) for p in pts])
    assert np.array_equal(batch, singles)


# ---------------------------------------------------------------------------
# PnP

def test_pnp_zero_noise_exact():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        cam = _cam(intr=INTR_DIST)
        pts = _frustum_points(cam, rng, 15)
        pix = project_points(cam, pts)
        pose, mean_px = solve_pnp(pts, pix, cam.intrinsics)
        assert mean_px < 1e-6
        assert np.linalg.norm(pose.t - cam.world_from_camera.t) < 1e-6
        assert quat_angle_deg(pose.q, cam.world_from_camera.q) < 1e-5


def test_pnp_half_pixel_noise_accuracy():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        cam = _cam(position=(2.5, -1.5, 2.8), target=(0.2, 0.1, 1.0),
                   intr=INTR_DIST)
        pts = _frustum_points(cam, rng, 21)
        pix = project_points(cam, pts) + rng.normal(0, 0.5, size=(21, 2))
        pose, mean_px = solve_pnp(pts, pix, cam.intrinsics)
        assert mean_px <= 1.5
        assert quat_angle_deg(pose.q, cam.world_from_camera.q) < 0.3
        assert np.linalg.norm(pose.t - cam.world_from_camera.t) < 0.02


def test_pnp_minimum_count():
    rng = np.random.default_rng(0)
    cam = _cam()
    pts = _frustum_points(cam, rng, 5)
    pix = project_points(cam, pts)
    with pytest.raises(InsufficientCorrespondencesError):
        solve_pnp(pts, pix, cam.intrinsics)


def test_pnp_length_mismatch():
    with pytest.raises(InsufficientCorrespondencesError):
        solve_pnp(np.zeros((7, 3)), np.zeros((6, 2)), INTR)


def test_pnp_degenerate_coplanar_line():
    # all points on one 3D line: pose is not recoverable
    pts = np.column_stack([np.linspace(-1, 1, 8), np.zeros(8), np.zeros(8)])
    cam = _cam()
    pix = project_points(cam, pts)
    with pytest.raises((DegenerateGeometryError, Exception)):
        solve_pnp(pts, pix, cam.intrinsics)


def test_pnp_refinement_reduces_error():
    # with noise, the refined mean error should be comparable to the noise
    rng = np.random.default_rng(7)
    cam = _cam(intr=INTR_DIST)
    pts = _frustum_points(cam, rng, 30)
    pix = project_points(cam, pts) + rng.normal(0, 1.0, size=(30, 2))
    _, mean_px = solve_pnp(pts, pix, cam.intrinsics)
    assert mean_px < 2.5


# ---------------------------------------------------------------------------
# triangulation

def _ring_cameras(n=4, radius=3.0, height=2.5):
    cams = []
    for i in range(n):
        ang = 2 * np.pi * i / n
        cams.append(_cam(f"cam{i}",
                         position=(radius * np.cos(ang), radius * np.sin(ang),
                                   height),
                         target=(0.0, 0.0, 1.0)))
    return cams


def test_triangulate_exact_recovery():
    cams = _ring_cameras()
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = rng.uniform(-0.6, 0.6, size=3) + [0, 0, 1.0]
        obs = [PixelObservation(c.id, *project(c, p)) for c in cams]
        est, res = triangulate(obs, cams)
        assert np.linalg.norm(est - p) < 1e-9
        assert res < 1e-9


def test_triangulate_noise_accuracy():
    cams = _ring_cameras()
    rng = np.random.default_rng(1)
    errs = []
    for _ in range(100):
        p = rng.uniform(-0.6, 0.6, size=3) + [0, 0, 1.0]
        obs = []
        for c in cams:
            uv = project(c, p) + rng.normal(0, 1.0, size=2)
            obs.append(PixelObservation(c.id, uv[0], uv[1]))
        est, _ = triangulate(obs, cams)
        errs.append(np.linalg.norm(est - p) * 1000.0)
    assert np.median(errs) < 5.0


def test_triangulate_ignores_low_confidence():
    cams = _ring_cameras()
    p = np.array([0.1, -0.2, 1.1])
    obs = [PixelObservation(c.id, *project(c, p)) for c in cams]
    # a wildly wrong observation with confidence below the floor
    obs.append(PixelObservation("cam0", 10.0, 10.0,
                                confidence=CONFIDENCE_FLOOR / 2))
    est, res = triangulate(obs, cams)
    assert np.linalg.norm(est - p) < 1e-9
    assert res < 1e-9


def test_triangulate_confidence_weighting():
    cams = _ring_cameras()
    p = np.array([0.0, 0.0, 1.0])
    biased = project(cams[0], p) + [40.0, 0.0]
    def solve(conf):
        obs = [PixelObservation(cams[0].id, biased[0], biased[1],
                                confidence=conf)]
        obs += [PixelObservation(c.id, *project(c, p)) for c in cams[1:]]
        est, _ = triangulate(obs, cams)
        return np.linalg.norm(est - p)
    assert solve(0.15) < solve(1.0)


def test_triangulate_needs_two_cameras():
    cams = _ring_cameras()
    p = np.array([0.0, 0.0, 1.0])
    obs = [PixelObservation("cam0", *project(cams[0], p)),
           PixelObservation("cam0", *(project(cams[0], p) + 1.0))]
    with pytest.raises(InsufficientViewsError):
        triangulate(obs, cams)
    with pytest.raises(InsufficientViewsError):
        triangulate([obs[0]], cams)


def test_triangulate_parallel_rays_degenerate():
    # two cameras at the same position see the same ray
    c0 = _cam("cam0", position=(0, 0, 3.0))
    c1 = _cam("cam1", position=(0, 1e-6, 3.0))
    p = np.array([0.05, 0.05, 0.5])
    obs = [PixelObservation(c.id, *project(c, p)) for c in (c0, c1)]
    with pytest.raises(DegenerateGeometryError):
        triangulate(obs, [c0, c1])


# ---------------------------------------------------------------------------
# time offset

def _wiggle_track(t, phase=0.0):
    pos = np.column_stack([0.3 * np.sin(1.3 * (t + phase)),
                           0.2 * np.cos(2.1 * (t + phase)),
                           1.0 + 0.1 * np.sin(0.7 * (t + phase))])
    return pos


def test_offset_zero_for_aligned_tracks():
    t = np.arange(0, 10, 1 / 30)
    pos = _wiggle_track(t)
    res = estimate_time_offset(t, pos, t, pos)
    assert res.offset_s == 0.0 and not res.ambiguous


def test_offset_recovers_shift():
    t = np.arange(0, 10, 1 / 30)
    shift = 0.5
    res = estimate_time_offset(t, _wiggle_track(t),
                               t - shift, _wiggle_track(t))
    assert abs(res.offset_s - shift) <= 0.5 / 30 + 1e-9


def test_offset_subsample_grid_resolution():
    # 33 ms true offset between a 30 Hz and a 60 Hz track
    shift = 0.033
    ta = np.arange(0, 12, 1 / 30)
    tb = np.arange(0, 12, 1 / 60)
    res = estimate_time_offset(ta, _wiggle_track(ta),
                               tb - shift, _wiggle_track(tb))
    assert abs(res.offset_s - shift) <= 0.0167


def test_offset_motionless_ambiguous():
    t = np.arange(0, 5, 1 / 30)
    pos = np.tile([1.0, 2.0, 3.0], (len(t), 1))
    res = estimate_time_offset(t, pos, t, pos)
    assert res.ambiguous and res.offset_s == 0.0


def test_offset_too_short():
    t = np.arange(0, 1.0, 1 / 30)
    with pytest.raises(ParameterError):
        estimate_time_offset(t, _wiggle_track(t), t, _wiggle_track(t))


def test_offset_disjoint_tracks():
    ta = np.arange(0, 5, 1 / 30)
    tb = np.arange(100, 105, 1 / 30)
    with pytest.raises(NoOverlapError):
        estimate_time_offset(ta, _wiggle_track(ta), tb, _wiggle_track(tb),
                             min_overlap_s=10.0)
