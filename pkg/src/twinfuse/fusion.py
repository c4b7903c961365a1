"""Scan fusion: marker-based registration of scans into one reference cloud,
plus the qualitative post-processing steps (crop, voxelize, outlier removal)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (DegenerateGeometryError, InsufficientCorrespondencesError,
                     ParameterError, TwinfuseError)
from .geometry import (PointCloud, RigidTransform, apply, build_floor_frame,
                       identity, kabsch, ransac_plane_inliers)
from .metrics import _render_table, chamfer


@dataclass(frozen=True)
class MarkerSet:
    """Labeled fiducial positions (meters) in a named frame."""

    frame: str
    positions: dict  # id -> np.ndarray (3,)

    def __post_init__(self):
        pos = {}
        for mid, p in self.positions.items():
            arr = np.asarray(p, dtype=float).reshape(3)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"marker {mid!r} has non-finite position")
            arr.setflags(write=False)
            pos[str(mid)] = arr
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return len(self.positions)

    def transformed(self, t: RigidTransform) -> "MarkerSet":
        if self.frame != t.from_frame:
            raise TwinfuseError(
                f"marker set in frame {self.frame!r}, transform from {t.from_frame!r}")
        return MarkerSet(t.to_frame,
                         {k: t.apply_points(v) for k, v in self.positions.items()})

    def to_json(self) -> str:
        return json.dumps({
            "frame": self.frame,
            "markers": [{"id": k, "position_m": [float(x) for x in v]}
                        for k, v in sorted(self.positions.items())],
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MarkerSet":
        obj = json.loads(text)
        return cls(obj["frame"], {m["id"]: m["position_m"] for m in obj["markers"]})


@dataclass(frozen=True)
class ScanRecord:
    """One laser scan: its cloud plus the markers visible in it."""

    name: str
    cloud: PointCloud
    markers: MarkerSet

    def __post_init__(self):
        if self.cloud.frame != self.markers.frame:
            raise TwinfuseError(
                f"scan {self.name!r}: cloud frame {self.cloud.frame!r} != "
                f"marker frame {self.markers.frame!r}")


@dataclass
class FusionRow:
    name: str
    n_markers: int
    rmse_mm: float
    chamfer_mm: float
    transform: RigidTransform


@dataclass
class FusionReport:
    reference_name: str
    rows: list[FusionRow] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "reference": self.reference_name,
            "registrations": [{
                "name": r.name,
                "n_markers": r.n_markers,
                "rmse_mm": r.rmse_mm,
                "cd_mm": r.chamfer_mm,
                "transform": {"t_m": [float(x) for x in r.transform.t],
                              "q_wxyz": [float(x) for x in r.transform.q]},
            } for r in self.rows],
        }, indent=2)

    def render_table(self) -> str:
        """Text table of marker count, RMSE and CD per registered scan."""
        names = [r.name for r in self.rows]
        header = ["Scan"] + names + ["Mean"]
        if self.rows:
            mk = [r.n_markers for r in self.rows]
            rm = [r.rmse_mm for r in self.rows]
            cd = [r.chamfer_mm for r in self.rows]
            body = [
                ["# Markers"] + [str(m) for m in mk] + [f"{np.mean(mk):.1f}"],
                ["RMSE (mm)"] + [f"{v:.2f}" for v in rm] + [f"{np.mean(rm):.2f}"],
                ["CD (mm)"] + [f"{v:.2f}" for v in cd] + [f"{np.mean(cd):.2f}"],
            ]
        else:
            body = [["# Markers", "-"], ["RMSE (mm)", "-"], ["CD (mm)", "-"]]
            header = ["Scan", "Mean"]
        table = _render_table(header, body)
        return f"Reference scan: {self.reference_name}\n{table}"


def match_markers(src: MarkerSet, dst: MarkerSet) -> list[tuple[np.ndarray, np.ndarray]]:
    """Correspondence pairs for ids present in both sets, ordered by id."""
    common = sorted(set(src.positions) & set(dst.positions))
    if len(common) < 3:
        raise InsufficientCorrespondencesError(
            f"only {len(common)} common marker ids (need >= 3)")
    return [(src.positions[i], dst.positions[i]) for i in common]


def register_scan(src: ScanRecord, reference: MarkerSet) -> tuple[RigidTransform, float]:
    """Kabsch over matched markers; returns (src->reference transform, RMSE mm)."""
    pairs = match_markers(src.markers, reference)
    s = np.array([p[0] for p in pairs])
    d = np.array([p[1] for p in pairs])
    t = kabsch(s, d, from_frame=src.markers.frame, to_frame=reference.frame)
    residual = t.apply_points(s) - d
    rmse_mm = float(np.sqrt((residual ** 2).sum(axis=1).mean()) * 1000.0)
    return t, rmse_mm


def fuse_scans(scans: list[ScanRecord],
               chamfer_cutoff_m: float = 0.1) -> tuple[PointCloud, FusionReport]:
    """Register every scan to the one with most visible markers and
    concatenate the clouds in input order."""
    if not scans:
        raise ParameterError("fuse_scans needs at least one scan")
    ref_idx = int(np.argmax([len(s.markers) for s in scans]))  # tie -> first
    reference = scans[ref_idx]
    report = FusionReport(reference_name=reference.name)

    clouds = []
    all_have_colors = all(s.cloud.colors is not None for s in scans)
    for i, scan in enumerate(scans):
        if i == ref_idx:
            clouds.append(scan.cloud)
            continue
        try:
            t, rmse_mm = register_scan(scan, reference.markers)
        except TwinfuseError as exc:
            raise type(exc)(f"scan {scan.name!r}: {exc}") from exc
        moved = apply(t, scan.cloud)
        cd_mm, _, _ = chamfer(moved, reference.cloud, chamfer_cutoff_m)
        n_used = len(set(scan.markers.positions) & set(reference.markers.positions))
        report.rows.append(FusionRow(scan.name, n_used, rmse_mm, cd_mm, t))
        clouds.append(moved)

    points = np.concatenate([c.points for c in clouds]) if clouds else np.zeros((0, 3))
    colors = (np.concatenate([c.colors for c in clouds])
              if all_have_colors and clouds else None)
    fused = PointCloud(points, colors=colors, frame=reference.cloud.frame)
    return fused, report


def finalize_reference(fused: PointCloud,
                       ransac_threshold_m: float = 0.01,
                       ransac_iterations: int = 1000,
                       seed: int = 0) -> tuple[PointCloud, RigidTransform]:
    """Re-express the fused cloud in the floor-centered reference frame."""
    if len(fused) < 3:
        raise DegenerateGeometryError("fused cloud too small for floor detection")
    inliers = ransac_plane_inliers(fused.points, threshold_m=ransac_threshold_m,
                                   iterations=ransac_iterations, seed=seed)
    floor_pts = fused.points[inliers]
    body_pts = fused.points[~inliers]
    t = build_floor_frame(floor_pts, body_pts if len(body_pts) else None,
                          from_frame=fused.frame, to_frame="reference")
    return apply(t, fused), t


def crop_aabb(cloud: PointCloud, boxes) -> PointCloud:
    """Keep points inside the union of axis-aligned boxes (inclusive bounds)."""
    if not boxes:
        return PointCloud(np.zeros((0, 3)), frame=cloud.frame)
    keep = np.zeros(len(cloud), dtype=bool)
    for lo, hi in boxes:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if np.any(lo > hi):
            raise ParameterError(f"invalid box: min {lo} > max {hi}")
        keep |= np.all((cloud.points >= lo) & (cloud.points <= hi), axis=1)
    colors = cloud.colors[keep] if cloud.colors is not None else None
    return PointCloud(cloud.points[keep], colors=colors, frame=cloud.frame)


def voxel_downsample(cloud: PointCloud, voxel_m: float) -> PointCloud:
    """One centroid per occupied voxel; grid anchored at the frame origin.

    Output voxels are ordered by first occurrence in the input.
    """
    if voxel_m <= 0:
        raise ParameterError("voxel size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / voxel_m).astype(np.int64)
    _, first_idx, inverse = np.unique(keys, axis=0, return_index=True,
                                      return_inverse=True)
    order = np.argsort(first_idx, kind="stable")
    rank = np.empty(len(first_idx), dtype=np.int64)
    rank[order] = np.arange(len(first_idx))
    groups = rank[np.ravel(inverse)]  # voxel index in first-occurrence order
    n_vox = len(first_idx)
    counts = np.bincount(groups, minlength=n_vox).astype(float)
    pts = np.zeros((n_vox, 3))
    for axis in range(3):
        pts[:, axis] = np.bincount(groups, weights=cloud.points[:, axis],
                                   minlength=n_vox) / counts
    colors = None
    if cloud.colors is not None:
        colors = np.zeros((n_vox, 3))
        for axis in range(3):
            colors[:, axis] = np.bincount(
                groups, weights=cloud.colors[:, axis].astype(float),
                minlength=n_vox) / counts
        colors = np.clip(np.round(colors), 0, 255).astype(np.uint8)
    return PointCloud(pts, colors=colors, frame=cloud.frame)


def remove_statistical_outliers(cloud: PointCloud, k: int = 16,
                                std_ratio: float = 2.0) -> PointCloud:
    """Drop points whose mean k-NN distance exceeds mean + std_ratio * std."""
    if k < 1 or std_ratio <= 0:
        raise ParameterError("need k >= 1 and std_ratio > 0")
    if len(cloud) <= k:
        raise ParameterError(f"cloud of {len(cloud)} points too small for k={k}")
    tree = cKDTree(cloud.points)
    d, _ = tree.query(cloud.points, k=k + 1)  # first column is self (dist 0)
    mean_d = d[:, 1:].mean(axis=1)
    threshold = mean_d.mean() + std_ratio * mean_d.std()
    keep = mean_d <= threshold
    colors = cloud.colors[keep] if cloud.colors is not None else None
    return PointCloud(cloud.points[keep], colors=colors, frame=cloud.frame)
