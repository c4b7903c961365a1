"""Rigid-geometry value types and optimal fitting primitives.

Conventions:
  - Points are float64 arrays of shape (3,) or (N, 3), in meters.
  - Quaternions are Hamilton convention, stored (w, x, y, z), unit norm.
  - ``RigidTransform`` maps points from ``from_frame`` into ``to_frame`` via
    ``p_to = R @ p_from + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateGeometryError, FrameMismatchError, InsufficientCorrespondencesError

_UNIT_TOL = 1e-9


# ---------------------------------------------------------------------------
# quaternion helpers

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero/non-finite quaternion")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w >= 0)."""
    m = np.asarray(m, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    return q


def quat_from_axis_angle(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle_rad
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_slerp(qa: np.ndarray, qb: np.ndarray, alpha: float) -> np.ndarray:
    """Spherical linear interpolation along the shorter arc."""
    qa = quat_normalize(qa)
    qb = quat_normalize(qb)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(qa + alpha * (qb - qa))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return quat_normalize((np.sin((1 - alpha) * theta) / s) * qa
                          + (np.sin(alpha * theta) / s) * qb)


def rotation_angle_deg(qa: np.ndarray, qb: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees."""
    d = quat_multiply(quat_conjugate(quat_normalize(qa)), quat_normalize(qb))
    w = min(1.0, abs(float(d[0])))
    return float(np.degrees(2.0 * np.arccos(w)))


# ---------------------------------------------------------------------------
# value types

def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain NaN/Inf")
    return pts


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: unit quaternion (w,x,y,z) plus translation in meters."""

    q: np.ndarray
    t: np.ndarray
    from_frame: str = "src"
    to_frame: str = "dst"

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.q, dtype=float))
        t = np.asarray(self.t, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite translation")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @property
    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.q)
        m[:3, 3] = self.t
        return m

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.t

    def with_frames(self, from_frame: str, to_frame: str) -> "RigidTransform":
        return replace(self, from_frame=from_frame, to_frame=to_frame)


def identity(frame: str = "world", to_frame: str | None = None) -> RigidTransform:
    return RigidTransform(np.array([1.0, 0, 0, 0]), np.zeros(3),
                          from_frame=frame, to_frame=frame if to_frame is None else to_frame)


def transform_from_matrix(rot: np.ndarray, t: np.ndarray,
                          from_frame: str = "src", to_frame: str = "dst") -> RigidTransform:
    return RigidTransform(matrix_to_quat(rot), np.asarray(t, dtype=float),
                          from_frame=from_frame, to_frame=to_frame)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a after b: maps b.from_frame into a.to_frame."""
    if a.from_frame != b.to_frame:
        raise FrameMismatchError(
            f"cannot compose: a maps {a.from_frame!r}->{a.to_frame!r}, "
            f"b maps {b.from_frame!r}->{b.to_frame!r}")
    q = quat_normalize(quat_multiply(a.q, b.q))
    t = quat_to_matrix(a.q) @ b.t + a.t
    return RigidTransform(q, t, from_frame=b.from_frame, to_frame=a.to_frame)


def invert(t: RigidTransform) -> RigidTransform:
    qi = quat_conjugate(t.q)
    ti = -(quat_to_matrix(qi) @ t.t)
    return RigidTransform(qi, ti, from_frame=t.to_frame, to_frame=t.from_frame)


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points in meters, with optional uint8 RGB colors."""

    points: np.ndarray
    colors: np.ndarray | None = None
    frame: str = "world"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        else:
            pts = _as_points(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            cols = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(cols) != len(pts):
                raise ValueError("colors length must match points length")
            cols.setflags(write=False)
            object.__setattr__(self, "colors", cols)

    def __len__(self) -> int:
        return len(self.points)


def apply(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Rigidly move a cloud from t.from_frame into t.to_frame."""
    if cloud.frame != t.from_frame:
        raise FrameMismatchError(
            f"cloud is in frame {cloud.frame!r} but transform maps from {t.from_frame!r}")
    return PointCloud(t.apply_points(cloud.points), colors=cloud.colors, frame=t.to_frame)


@dataclass(frozen=True)
class PlaneFrame:
    """Orthonormal right-handed frame attached to a fitted plane.

    ``axes`` rows are the x, y (in-plane) and z (normal) directions.
    """

    origin: np.ndarray
    axes: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        axes = np.asarray(self.axes, dtype=float).reshape(3, 3)
        if not np.allclose(axes @ axes.T, np.eye(3), atol=1e-8):
            raise ValueError("axes not orthonormal")
        if np.linalg.det(axes) < 0:
            raise ValueError("axes not right-handed")
        origin.setflags(write=False)
        axes.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "axes", axes)


# ---------------------------------------------------------------------------
# fitting

def kabsch(src, dst, from_frame: str = "src", to_frame: str = "dst") -> RigidTransform:
    """Least-squares rigid alignment of corresponding point sets.

    Returns the proper rigid transform T minimizing sum |T(src_i) - dst_i|^2.
    Reflections are excluded via the SVD determinant correction.
    """
    src = _as_points(src)
    dst = _as_points(dst)
    if src.shape != dst.shape:
        raise InsufficientCorrespondencesError(
            f"src/dst length mismatch: {len(src)} vs {len(dst)}")
    if len(src) < 3:
        raise InsufficientCorrespondencesError(
            f"need at least 3 correspondences, got {len(src)}")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    a = src - cs
    # collinearity check on the source configuration
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[1] <= max(1e-12, 1e-9 * sv[0]):
        raise DegenerateGeometryError("source points are (near-)collinear")
    h = a.T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    rot = v @ np.diag([1.0, 1.0, d]) @ u.T
    t = cd - rot @ cs
    return transform_from_matrix(rot, t, from_frame=from_frame, to_frame=to_frame)


def fit_plane_pca(points) -> PlaneFrame:
    """PCA plane fit: origin at the centroid, x/y along the first two
    principal directions (descending variance), z the plane normal."""
    pts = _as_points(points)
    if len(pts) < 3:
        raise DegenerateGeometryError("plane fit needs at least 3 points")
    centroid = pts.mean(axis=0)
    c = pts - centroid
    cov = c.T @ c / len(pts)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    if evals[1] <= max(1e-18, 1e-9 * evals[0]):
        raise DegenerateGeometryError("points are rank-deficient (collinear)")
    x = evecs[:, 0]
    y = evecs[:, 1]
    z = np.cross(x, y)
    z /= np.linalg.norm(z)
    # re-orthogonalize y for numerical cleanliness
    y = np.cross(z, x)
    return PlaneFrame(centroid, np.vstack([x, y, z]))


def build_floor_frame(floor_points, body_points=None,
                      from_frame: str = "fused", to_frame: str = "reference") -> RigidTransform:
    """Transform that re-expresses points in the floor-centered frame.

    Origin is the floor-point centroid, axes come from the PCA plane fit.
    Sign conventions: z points toward the body points (up, away from the
    floor); x is flipped so it has non-negative dot product with the in-plane
    projection of the body centroid direction. Without body points, z and x
    fall back to positive alignment with the input +z / +x axes.
    """
    plane = fit_plane_pca(floor_points)
    x, y, z = plane.axes
    if body_points is not None and len(body_points):
        body_c = _as_points(body_points).mean(axis=0)
        up_hint = body_c - plane.origin
        if np.dot(z, up_hint) < 0:
            z = -z
        horiz = up_hint - np.dot(up_hint, z) * z
        if np.linalg.norm(horiz) > 1e-9:
            if np.dot(x, horiz) < 0:
                x = -x
        elif _sign_key(x) < 0:
            x = -x
    else:
        if z[2] < 0 or (z[2] == 0 and _sign_key(z) < 0):
            z = -z
        if _sign_key(x) < 0:
            x = -x
    y = np.cross(z, x)
    axes = np.vstack([x, y, z])
    rot = axes  # rows map world coords into the floor frame
    t = -rot @ plane.origin
    return transform_from_matrix(rot, t, from_frame=from_frame, to_frame=to_frame)


def _sign_key(v: np.ndarray) -> float:
    for c in v:
        if abs(c) > 1e-12:
            return float(np.sign(c))
    return 1.0


def ransac_plane_inliers(points, threshold_m: float = 0.01,
                         iterations: int = 1000, seed: int = 0) -> np.ndarray:
    """Boolean inlier mask of the dominant plane (largest RANSAC consensus)."""
    pts = _as_points(points)
    n = len(pts)
    if n < 3:
        raise DegenerateGeometryError("plane RANSAC needs at least 3 points")
    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = -1
    for _ in range(iterations):
        idx = rng.choice(n, size=3, replace=False)
        p0, p1, p2 = pts[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        nn = np.linalg.norm(normal)
        if nn < 1e-12:
            continue
        normal /= nn
        dist = np.abs((pts - p0) @ normal)
        mask = dist <= threshold_m
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < 3:
        raise DegenerateGeometryError("no plane found by RANSAC")
    # refit on the consensus set; a tilted sample plane clips the true plane
    # asymmetrically, so iterate the least-squares refit to convergence
    for _ in range(5):
        plane = fit_plane_pca(pts[best_mask])
        dist = np.abs((pts - plane.origin) @ plane.axes[2])
        mask = dist <= threshold_m
        if np.array_equal(mask, best_mask):
            break
        best_mask = mask
    return best_mask
