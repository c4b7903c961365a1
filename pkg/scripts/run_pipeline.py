#!/usr/bin/env python3
"""Run the full synthetic pipeline end to end and report errors vs truth.

Generates a ground-truth bundle, fuses the scans, registers the cameras,
triangulates the surgeon skeleton, assembles a digital-twin scene on disk,
and prints per-entity pose errors.

Usage: python3 scripts/run_pipeline.py [--seed N] [--out DIR]
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from twinfuse import fusion, mocap, scene, synth
from twinfuse.cameras import solve_pnp
from twinfuse.geometry import PointCloud
from twinfuse.metrics import reprojection_stats, render_reprojection_table
from twinfuse.synth import pose_error, true_relative_scan_pose


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--duration", type=float, default=2.0)
    parser.add_argument("--out", default="pipeline_out")
    args = parser.parse_args()

    config = synth.SynthConfig(seed=args.seed, duration_s=args.duration)
    bundle = synth.generate(config)
    print(f"generated bundle: seed {config.seed}, {config.scan_count} scans, "
          f"{config.camera_count} cameras, {len(bundle.skeleton_true)} frames")

    # scan fusion
    fused, report = fusion.fuse_scans(bundle.scans)
    print()
    print(report.render_table())
    for row in report.rows:
        truth = true_relative_scan_pose(bundle, row.name, report.reference_name)
        t_mm, r_deg = pose_error(row.transform, truth)
        print(f"  {row.name}: pose error {t_mm:.2f} mm / {r_deg:.3f} deg")
    final, floor_t = fusion.finalize_reference(fused)

    # camera registration from noisy marker pixels
    per_camera = {}
    print()
    for cam in bundle.cameras:
        entries = bundle.marker_pixels[cam.id]
        points = np.array([bundle.markers.positions[mid] for mid, _, _ in entries])
        pixels = np.array([[u, v] for _, u, v in entries])
        pose, _ = solve_pnp(points, pixels, cam.intrinsics)
        t_mm, r_deg = pose_error(pose, cam.world_from_camera)
        print(f"  {cam.id}: PnP from {len(entries)} markers, "
              f"error {t_mm:.2f} mm / {r_deg:.3f} deg")
        est_cam = type(cam)(cam.id, cam.intrinsics,
                            pose.with_frames(f"camera:{cam.id}", "reference"))
        obs = [(cam.id, pixels[i], points[i]) for i in range(len(points))]
        per_camera[cam.id] = reprojection_stats(obs, [est_cam])
    print()
    print(render_reprojection_table(per_camera))

    # skeleton triangulation
    frames3d = []
    for per_cam in bundle.keypoint_frames:
        sel = mocap.select_surgeon(per_cam, bundle.cameras, bundle.table_center)
        frames3d.append(mocap.triangulate_skeleton(per_cam, sel, bundle.cameras))
    errs = []
    for est, truth in zip(frames3d, bundle.skeleton_true):
        mask = est.valid & truth.valid
        errs += list(np.linalg.norm(est.positions[mask] - truth.positions[mask],
                                    axis=1) * 1000.0)
    print(f"skeleton: median joint error {np.median(errs):.2f} mm "
          f"over {len(errs)} joint samples")

    # scene assembly
    room = scene.StaticNode("room", PointCloud(final.points, frame="reference"),
                            floor_t.with_frames("room", "reference"))
    drill = scene.DynamicNode("instrument", "instrument.ply",
                              bundle.instrument_track_noisy)
    surgeon = scene.SkeletonNode("surgeon", tuple(frames3d))
    twin = scene.assemble([room], [drill], [surgeon])
    scene.save(twin, args.out)
    violations = scene.validate(twin, base_dir=None)
    print(f"scene saved to {args.out}: nodes {twin.node_names()}, "
          f"{len(violations)} violations")


if __name__ == "__main__":
    main()
