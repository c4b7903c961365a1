"""Evaluation metrics: marker RMSE, Chamfer distances, reprojection stats."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.spatial import cKDTree

from .errors import (InsufficientCorrespondencesError, NoOverlapError,
                     ParameterError, UnknownEntityError)
from .geometry import PointCloud


@dataclass
class MetricsReport:
    """Scalar summary of a pipeline evaluation. All distances mm, errors px."""

    rmse_mm: float = 0.0
    cd_mm: float = 0.0
    cd_one_sided_mm: float = 0.0
    reproj_mean_px: float = 0.0
    reproj_std_px: float = 0.0
    samples_used: int = 0
    samples_filtered: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def marker_rmse(a, b) -> float:
    """RMS of Euclidean residuals over common marker ids, in millimeters.

    Accepts MarkerSet-like objects exposing ``positions`` keyed by id.
    """
    common = sorted(set(a.positions) & set(b.positions))
    if not common:
        raise InsufficientCorrespondencesError("marker sets share no ids")
    pa = np.array([a.positions[i] for i in common])
    pb = np.array([b.positions[i] for i in common])
    d2 = np.sum((pa - pb) ** 2, axis=1)
    return float(np.sqrt(d2.mean()) * 1000.0)


def _nn_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    tree = cKDTree(dst)
    d, _ = tree.query(src, k=1)
    return d


def _directional_mean(src: np.ndarray, dst: np.ndarray,
                      max_dist_m: float | None) -> tuple[float, int, int]:
    d = _nn_distances(src, dst)
    if max_dist_m is not None:
        keep = d <= max_dist_m
        n_filtered = int((~keep).sum())
        d = d[keep]
    else:
        n_filtered = 0
    if len(d) == 0:
        raise NoOverlapError("all nearest-neighbor correspondences filtered out")
    return float(d.mean()), len(d), n_filtered


def chamfer(a: PointCloud, b: PointCloud, max_dist_m: float) -> tuple[float, int, int]:
    """Symmetric Chamfer distance in millimeters.

    Each directional mean excludes nearest-neighbor pairs farther than
    ``max_dist_m``; the result averages the two directional means. Returns
    ``(cd_mm, samples_used, samples_filtered)``.
    """
    if len(a) == 0 or len(b) == 0:
        raise ParameterError("chamfer requires non-empty clouds")
    if max_dist_m <= 0:
        raise ParameterError("max_dist_m must be positive")
    m_ab, used_ab, filt_ab = _directional_mean(a.points, b.points, max_dist_m)
    m_ba, used_ba, filt_ba = _directional_mean(b.points, a.points, max_dist_m)
    cd_mm = 0.5 * (m_ab + m_ba) * 1000.0
    return cd_mm, used_ab + used_ba, filt_ab + filt_ba


def chamfer_one_sided(a: PointCloud, b: PointCloud,
                      max_dist_m: float | None = None) -> float:
    """Mean nearest-neighbor distance from ``a`` to ``b``, millimeters."""
    if len(a) == 0 or len(b) == 0:
        raise ParameterError("chamfer requires non-empty clouds")
    if max_dist_m is not None and max_dist_m <= 0:
        raise ParameterError("max_dist_m must be positive")
    mean_m, _, _ = _directional_mean(a.points, b.points, max_dist_m)
    return mean_m * 1000.0


def reprojection_stats(observations, cameras) -> tuple[float, float]:
    """Mean and population std of pixel residuals.

    ``observations`` is a sequence of ``(camera_id, (u, v), point_xyz)``;
    ``cameras`` a sequence of CameraModel. Each 3D point is projected into
    its camera and compared against the observed pixel.
    """
    from .cameras import project  # local import to avoid a module cycle

    by_id = {c.id: c for c in cameras}
    residuals = []
    for cam_id, pixel, point in observations:
        if cam_id not in by_id:
            raise UnknownEntityError(f"unknown camera id {cam_id!r}")
        uv = project(by_id[cam_id], np.asarray(point, dtype=float))
        residuals.append(np.linalg.norm(np.asarray(pixel, dtype=float) - uv))
    if not residuals:
        return 0.0, 0.0
    r = np.asarray(residuals)
    return float(r.mean()), float(r.std())


def render_reprojection_table(per_camera: dict[str, tuple[float, float]]) -> str:
    """Text table of per-camera reprojection stats with a mean column."""
    ids = list(per_camera)
    means = [per_camera[i][0] for i in ids]
    stds = [per_camera[i][1] for i in ids]
    header = ["Camera"] + ids + ["Mean"]
    rows = [
        ["Mean error (px)"] + [f"{m:.2f}" for m in means] + [f"{np.mean(means):.2f}"],
        ["Std of errors (px)"] + [f"{s:.2f}" for s in stds] + [f"{np.mean(stds):.2f}"],
    ]
    return _render_table(header, rows)


def _render_table(header: list[str], rows: list[list[str]]) -> str:
    cols = [header] + rows
    widths = [max(len(r[i]) for r in cols) for i in range(len(header))]
    lines = []
    for r in cols:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"
