"""Pinhole camera model, PnP pose recovery, multi-view triangulation, and
temporal-offset estimation between tracks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (BehindCameraError, ConvergenceError, DegenerateGeometryError,
                     InsufficientCorrespondencesError, InsufficientViewsError,
                     NoOverlapError, ParameterError)
from .geometry import (RigidTransform, compose, identity, invert, kabsch,
                       matrix_to_quat, quat_to_matrix, transform_from_matrix)

CONFIDENCE_FLOOR = 0.1  # observations below this weight are discarded


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with Brown-Conrady distortion (k1,k2,p1,p2,k3)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    dist: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ParameterError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ParameterError("principal point must lie inside the image")
        object.__setattr__(self, "dist", tuple(float(d) for d in self.dist))
        if len(self.dist) != 5:
            raise ParameterError("distortion must have 5 coefficients")


@dataclass(frozen=True)
class CameraModel:
    id: str
    intrinsics: CameraIntrinsics
    world_from_camera: RigidTransform

    def to_json(self) -> str:
        intr = self.intrinsics
        return json.dumps({
            "id": self.id,
            "width": intr.width, "height": intr.height,
            "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "dist": list(intr.dist),
            "world_from_camera": {
                "t_m": [float(x) for x in self.world_from_camera.t],
                "q_wxyz": [float(x) for x in self.world_from_camera.q],
            },
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CameraModel":
        o = json.loads(text)
        intr = CameraIntrinsics(fx=o["fx"], fy=o["fy"], cx=o["cx"], cy=o["cy"],
                                width=o["width"], height=o["height"],
                                dist=tuple(o["dist"]))
        wfc = o["world_from_camera"]
        pose = RigidTransform(np.asarray(wfc["q_wxyz"], dtype=float),
                              np.asarray(wfc["t_m"], dtype=float),
                              from_frame=f"camera:{o['id']}", to_frame="reference")
        return cls(o["id"], intr, pose)


@dataclass(frozen=True)
class PixelObservation:
    camera_id: str
    u: float
    v: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ParameterError("confidence must be in [0, 1]")
        if not (np.isfinite(self.u) and np.isfinite(self.v)):
            raise ParameterError("pixel coordinates must be finite")


# ---------------------------------------------------------------------------
# projection

def _distort(xn: np.ndarray, dist) -> np.ndarray:
    """Apply Brown-Conrady distortion to normalized coords (N, 2)."""
    k1, k2, p1, p2, k3 = dist
    x, y = xn[..., 0], xn[..., 1]
    r2 = x * x + y * y
    radial = 1 + k1 * r2 + k2 * r2 ** 2 + k3 * r2 ** 3
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def _undistort(xd: np.ndarray, dist, iterations: int = 30) -> np.ndarray:
    """Invert the distortion numerically (fixed point + Newton-style update)."""
    xn = np.array(xd, dtype=float, copy=True)
    for _ in range(iterations):
        err = _distort(xn, dist) - xd
        xn -= err
        if np.max(np.abs(err)) < 1e-14:
            break
    return xn


def project_points(cam: CameraModel, points_world: np.ndarray) -> np.ndarray:
    """Project world points (N, 3) to pixels (N, 2)."""
    points_world = np.asarray(points_world, dtype=float).reshape(-1, 3)
    cam_from_world = invert(cam.world_from_camera)
    pc = cam_from_world.apply_points(points_world)
    if np.any(pc[:, 2] <= 0):
        raise BehindCameraError("point(s) with non-positive depth")
    xn = pc[:, :2] / pc[:, 2:3]
    xd = _distort(xn, cam.intrinsics.dist)
    intr = cam.intrinsics
    return np.column_stack([intr.fx * xd[:, 0] + intr.cx,
                            intr.fy * xd[:, 1] + intr.cy])


def project(cam: CameraModel, point_world) -> np.ndarray:
    """Project one world point to a pixel (u, v)."""
    return project_points(cam, np.asarray(point_world, dtype=float).reshape(1, 3))[0]


def unproject(cam: CameraModel, pixel, depth_m: float) -> np.ndarray:
    """Lift a pixel to the world point at the given camera-frame depth."""
    if depth_m <= 0:
        raise BehindCameraError("depth must be positive")
    intr = cam.intrinsics
    xd = np.array([(pixel[0] - intr.cx) / intr.fx, (pixel[1] - intr.cy) / intr.fy])
    xn = _undistort(xd, intr.dist)
    pc = np.array([xn[0] * depth_m, xn[1] * depth_m, depth_m])
    return cam.world_from_camera.apply_points(pc.reshape(1, 3))[0]


def pixels_to_normalized(intr: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    """Undistorted normalized image coordinates for pixels (N, 2)."""
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    xd = np.column_stack([(pixels[:, 0] - intr.cx) / intr.fx,
                          (pixels[:, 1] - intr.cy) / intr.fy])
    return _undistort(xd, intr.dist)


# ---------------------------------------------------------------------------
# PnP

def _rotvec_to_matrix(r: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(r)
    if angle < 1e-12:
        k = np.array([[0, -r[2], r[1]], [r[2], 0, -r[0]], [-r[1], r[0], 0]])
        return np.eye(3) + k
    axis = r / angle
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def _matrix_to_rotvec(m: np.ndarray) -> np.ndarray:
    q = matrix_to_quat(m)
    w = np.clip(q[0], -1.0, 1.0)
    angle = 2.0 * np.arccos(w)
    s = np.sqrt(max(0.0, 1.0 - w * w))
    if s < 1e-12:
        return np.zeros(3)
    return angle * q[1:] / s


def _dlt_pose(points: np.ndarray, xn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear camera pose [R|t] from world points and normalized coords."""
    n = len(points)
    a = np.zeros((2 * n, 12))
    for i in range(n):
        X = np.concatenate([points[i], [1.0]])
        a[2 * i, 0:4] = X
        a[2 * i, 8:12] = -xn[i, 0] * X
        a[2 * i + 1, 4:8] = X
        a[2 * i + 1, 8:12] = -xn[i, 1] * X
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] <= 1e-12 * sv[0]:
        raise DegenerateGeometryError("DLT system is rank-deficient")
    p = vt[-1].reshape(3, 4)
    # enforce positive depth for the centroid
    centroid_h = np.concatenate([points.mean(axis=0), [1.0]])
    if (p @ centroid_h)[2] < 0:
        p = -p
    u, s, vt3 = np.linalg.svd(p[:, :3])
    scale = s.mean()
    rot = u @ vt3
    if np.linalg.det(rot) < 0:
        rot = -rot
        scale = -scale
    t = p[:, 3] / scale
    return rot, t


def _pose_residuals(rotvec, t, points, pixels, intr):
    rot = _rotvec_to_matrix(rotvec)
    pc = points @ rot.T + t
    depth = pc[:, 2]
    if np.any(depth <= 1e-9):
        return None
    xn = pc[:, :2] / depth[:, None]
    xd = _distort(xn, intr.dist)
    proj = np.column_stack([intr.fx * xd[:, 0] + intr.cx,
                            intr.fy * xd[:, 1] + intr.cy])
    return (proj - pixels).ravel()


def _numeric_jacobian(fun, x, eps=1e-7):
    f0 = fun(x)
    jac = np.zeros((len(f0), len(x)))
    for i in range(len(x)):
        xp = x.copy()
        xp[i] += eps
        fp = fun(xp)
        if fp is None:
            xp[i] = x[i] - eps
            fp = fun(xp)
            jac[:, i] = (f0 - fp) / eps
        else:
            jac[:, i] = (fp - f0) / eps
    return jac


def solve_pnp(points, pixels, intr: CameraIntrinsics,
              max_iterations: int = 100,
              improvement_tol: float = 1e-10) -> tuple[RigidTransform, float]:
    """Camera pose from 3D-2D correspondences: DLT init + damped
    least-squares refinement of the pixel reprojection error.

    Returns ``(world_from_camera, mean reprojection error px)``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(points) != len(pixels):
        raise InsufficientCorrespondencesError("points/pixels length mismatch")
    if len(points) < 6:
        raise InsufficientCorrespondencesError(
            f"PnP needs >= 6 correspondences, got {len(points)}")

    xn = pixels_to_normalized(intr, pixels)
    rot, t = _dlt_pose(points, xn)
    x = np.concatenate([_matrix_to_rotvec(rot), t])

    def residuals(params):
        return _pose_residuals(params[:3], params[3:], points, pixels, intr)

    r = residuals(x)
    if r is None:
        raise DegenerateGeometryError("DLT initialization puts points behind camera")
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(max_iterations):
        jac = _numeric_jacobian(lambda p: residuals(p) if residuals(p) is not None
                                else np.full_like(r, 1e6), x)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        accepted = False
        for _ in range(12):
            try:
                step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj) + 1e-12), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = x + step
            r_new = residuals(x_new)
            if r_new is not None:
                cost_new = float(r_new @ r_new)
                if cost_new < cost:
                    x, r, cost_prev, cost = x_new, r_new, cost, cost_new
                    lam = max(lam / 10, 1e-12)
                    accepted = True
                    break
            lam *= 10
        if not accepted:
            break
        if cost_prev - cost < improvement_tol:
            break
    mean_px = float(np.mean(np.linalg.norm(r.reshape(-1, 2), axis=1)))
    if mean_px > 0.25 * max(intr.width, intr.height):
        cam_from_world = transform_from_matrix(
            _rotvec_to_matrix(x[:3]), x[3:], from_frame="world", to_frame="camera")
        raise ConvergenceError(
            f"PnP refinement did not converge (mean error {mean_px:.1f} px)",
            last_iterate=invert(cam_from_world))
    cam_from_world = transform_from_matrix(_rotvec_to_matrix(x[:3]), x[3:],
                                           from_frame="world", to_frame="camera")
    return invert(cam_from_world), mean_px


# ---------------------------------------------------------------------------
# triangulation

def _projection_matrix(cam: CameraModel) -> np.ndarray:
    """Normalized-coordinate projection matrix [R|t] (camera from world)."""
    cfw = invert(cam.world_from_camera)
    m = np.zeros((3, 4))
    m[:, :3] = quat_to_matrix(cfw.q)
    m[:, 3] = cfw.t
    return m


def triangulate(observations: list[PixelObservation],
                cameras: list[CameraModel],
                min_ray_angle_deg: float = 0.25,
                max_iterations: int = 50) -> tuple[np.ndarray, float]:
    """Confidence-weighted linear triangulation plus reprojection refinement.

    Observations with confidence below ``CONFIDENCE_FLOOR`` are discarded.
    Returns ``(point_xyz, mean weighted reprojection residual px)``.
    """
    by_id = {c.id: c for c in cameras}
    used = [o for o in observations if o.confidence >= CONFIDENCE_FLOOR]
    cam_ids = {o.camera_id for o in used}
    if len(cam_ids) < 2:
        raise InsufficientViewsError(
            f"need observations from >= 2 cameras, got {len(cam_ids)}")

    rows = []
    for o in used:
        cam = by_id[o.camera_id]
        xn = pixels_to_normalized(cam.intrinsics, [(o.u, o.v)])[0]
        p = _projection_matrix(cam)
        w = o.confidence
        rows.append(w * (xn[0] * p[2] - p[0]))
        rows.append(w * (xn[1] * p[2] - p[1]))
    a = np.vstack(rows)
    _, _, vt = np.linalg.svd(a)
    h = vt[-1]
    if abs(h[3]) < 1e-12:
        raise DegenerateGeometryError("triangulated point at infinity")
    point = h[:3] / h[3]

    # ray-parallelism check
    dirs = []
    for cid in cam_ids:
        c = by_id[cid].world_from_camera.t
        d = point - c
        nd = np.linalg.norm(d)
        if nd > 1e-12:
            dirs.append(d / nd)
    max_angle = 0.0
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            ang = np.degrees(np.arccos(np.clip(abs(dirs[i] @ dirs[j]), -1, 1)))
            max_angle = max(max_angle, ang)
    if max_angle < min_ray_angle_deg:
        raise DegenerateGeometryError(
            f"near-parallel viewing rays (max angle {max_angle:.3f} deg)")

    weights = np.array([o.confidence for o in used])
    weights = weights / weights.sum()

    def residuals(p):
        res = []
        for o in used:
            cam = by_id[o.camera_id]
            try:
                uv = project(cam, p)
            except BehindCameraError:
                return None
            res.append(uv - (o.u, o.v))
        return np.asarray(res)

    r = residuals(point)
    if r is None:
        raise DegenerateGeometryError("triangulated point behind a camera")
    cost = float(np.sum(weights[:, None] * r ** 2))
    lam = 1e-6
    x = point.copy()
    for _ in range(max_iterations):
        jac = np.zeros((len(used) * 2, 3))
        f0 = r.ravel()
        for i in range(3):
            xp = x.copy()
            xp[i] += 1e-8
            rp = residuals(xp)
            if rp is None:
                jac = None
                break
            jac[:, i] = (rp.ravel() - f0) / 1e-8
        if jac is None:
            break
        wfull = np.repeat(weights, 2)
        jtj = (jac * wfull[:, None]).T @ jac
        jtr = (jac * wfull[:, None]).T @ f0
        accepted = False
        for _ in range(8):
            step = np.linalg.solve(jtj + lam * np.eye(3), -jtr)
            x_new = x + step
            r_new = residuals(x_new)
            if r_new is not None:
                cost_new = float(np.sum(weights[:, None] * r_new ** 2))
                if cost_new < cost:
                    x, r, cost_prev, cost = x_new, r_new, cost, cost_new
                    lam = max(lam / 10, 1e-12)
                    accepted = True
                    break
            lam *= 10
        if not accepted:
            break
        if cost_prev - cost < 1e-14:
            break
    residual_px = float(np.sum(weights * np.linalg.norm(r, axis=1)))
    return x, residual_px


# ---------------------------------------------------------------------------
# temporal synchronization

@dataclass(frozen=True)
class TimeOffsetResult:
    offset_s: float
    ambiguous: bool = False


def _speed_profile(times: np.ndarray, positions: np.ndarray):
    dt = np.diff(times)
    speeds = np.linalg.norm(np.diff(positions, axis=0), axis=1) / dt
    mid = 0.5 * (times[:-1] + times[1:])
    return mid, speeds


def estimate_time_offset(times_a, positions_a, times_b, positions_b,
                         min_overlap_s: float = 1.0) -> TimeOffsetResult:
    """Offset to add to track-b timestamps so its motion aligns with track a.

    Grid search (step = half the finer sample interval) minimizing the mean
    absolute difference of linearly resampled speed profiles. Motionless
    tracks are ambiguous and yield offset 0 with the flag set.
    """
    ta = np.asarray(times_a, dtype=float)
    tb = np.asarray(times_b, dtype=float)
    pa = np.asarray(positions_a, dtype=float).reshape(-1, 3)
    pb = np.asarray(positions_b, dtype=float).reshape(-1, 3)
    if len(ta) < 3 or len(tb) < 3:
        raise ParameterError("tracks too short for offset estimation")
    if ta[-1] - ta[0] < 2.0 or tb[-1] - tb[0] < 2.0:
        raise ParameterError("tracks must span at least 2 s")

    ma, sa = _speed_profile(ta, pa)
    mb, sb = _speed_profile(tb, pb)
    if sa.std() < 1e-9 or sb.std() < 1e-9:
        return TimeOffsetResult(0.0, ambiguous=True)

    step = 0.5 * min(np.median(np.diff(ta)), np.median(np.diff(tb)))
    lo = ma[0] - mb[-1] + min_overlap_s
    hi = ma[-1] - mb[0] - min_overlap_s
    if lo > hi:
        raise NoOverlapError("tracks cannot overlap by the minimum duration")
    # grid anchored at zero so an already-aligned pair recovers exactly 0
    ks = np.arange(np.ceil(lo / step), np.floor(hi / step) + 1)
    offsets = ks * step

    best_offset = None
    best_cost = np.inf
    for off in offsets:
        t0 = max(ma[0], mb[0] + off)
        t1 = min(ma[-1], mb[-1] + off)
        if t1 - t0 < min_overlap_s:
            continue
        grid = np.linspace(t0, t1, max(8, int((t1 - t0) / step)))
        ra = np.interp(grid, ma, sa)
        rb = np.interp(grid, mb + off, sb)
        cost = float(np.mean(np.abs(ra - rb)))
        if cost < best_cost:
            best_cost = cost
            best_offset = float(off)
    if best_offset is None:
        raise NoOverlapError("no candidate offset gave sufficient overlap")
    return TimeOffsetResult(best_offset, ambiguous=False)
