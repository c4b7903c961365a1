"""Minimal PLY point-cloud reader/writer (ASCII and binary little-endian).

Vertices carry float32 x, y, z in meters and optional uchar red, green, blue.
"""

from __future__ import annotations

import numpy as np

from .errors import ManifestError
from .geometry import PointCloud


def save_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    n = len(cloud)
    has_color = cloud.colors is not None
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}",
              "property float x",
              "property float y",
              "property float z"]
    if has_color:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    pts = cloud.points.astype("<f4")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            if has_color:
                rec = np.empty(n, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                         ("r", "u1"), ("g", "u1"), ("b", "u1")])
                rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
                rec["r"], rec["g"], rec["b"] = (cloud.colors[:, 0], cloud.colors[:, 1],
                                                cloud.colors[:, 2])
                f.write(rec.tobytes())
            else:
                f.write(pts.tobytes())
        else:
            lines = []
            for i in range(n):
                line = f"{pts[i, 0]:.9g} {pts[i, 1]:.9g} {pts[i, 2]:.9g}"
                if has_color:
                    c = cloud.colors[i]
                    line += f" {c[0]} {c[1]} {c[2]}"
                lines.append(line)
            f.write(("\n".join(lines) + ("\n" if lines else "")).encode("ascii"))


def load_ply(path, frame: str = "world") -> PointCloud:
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header\n")
    if end < 0:
        raise ManifestError(f"{path}: not a PLY file (no end_header)")
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]
    if not header_lines or header_lines[0].strip() != "ply":
        raise ManifestError(f"{path}: missing 'ply' magic")

    fmt = None
    n_vertex = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in header_lines[1:]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append((tok[1], tok[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ManifestError(f"{path}: unsupported PLY format {fmt!r}")
    if n_vertex is None:
        raise ManifestError(f"{path}: no vertex element")

    names = [name for _, name in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ManifestError(f"{path}: vertex element lacks property {axis!r}")
    has_color = all(c in names for c in ("red", "green", "blue"))

    type_map = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
                "uchar": "u1", "uint8": "u1", "int": "<i4", "int32": "<i4",
                "ushort": "<u2", "uint16": "<u2", "short": "<i2", "int16": "<i2"}
    if fmt == "binary_little_endian":
        try:
            dtype = np.dtype([(name, type_map[t]) for t, name in props])
        except KeyError as exc:
            raise ManifestError(f"{path}: unsupported property type {exc}") from exc
        rec = np.frombuffer(body, dtype=dtype, count=n_vertex)
    else:
        rows = body.decode("ascii").split()
        ncol = len(props)
        arr = np.array(rows[:n_vertex * ncol], dtype=float).reshape(n_vertex, ncol)
        rec = {name: arr[:, i] for i, (_, name) in enumerate(props)}
    pts = np.column_stack([np.asarray(rec["x"], dtype=float),
                           np.asarray(rec["y"], dtype=float),
                           np.asarray(rec["z"], dtype=float)])
    colors = None
    if has_color:
        colors = np.column_stack([np.asarray(rec["red"]), np.asarray(rec["green"]),
                                  np.asarray(rec["blue"])]).astype(np.uint8)
    return PointCloud(pts, colors=colors, frame=frame)
