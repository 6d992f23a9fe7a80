"""Binary little-endian PLY for labeled clouds, and pose JSON helpers.

Vertex properties written: ``x y z`` (double), ``part_label`` (int), plus
optional ``nx ny nz``, ``ox oy oz`` (per-point sensor origin) and
``red green blue`` (uchar). The view pose and up vector travel as header
comments so a plain viewer still opens the file.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import LabeledCloud, RigidPose

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_ply(path, cloud: LabeledCloud, normals=None, colors=None) -> None:
    n = len(cloud)
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("part_label", "<i4")]
    ply_names = {"<f8": "double", "<i4": "int", "u1": "uchar"}
    if normals is not None:
        fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
    if cloud.origins is not None:
        fields += [("ox", "<f8"), ("oy", "<f8"), ("oz", "<f8")]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    data = np.empty(n, dtype=fields)
    for i, name in enumerate("xyz"):
        data[name] = cloud.points[:, i]
    data["part_label"] = cloud.labels
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64)
        for i, name in enumerate(("nx", "ny", "nz")):
            data[name] = normals[:, i]
    if cloud.origins is not None:
        for i, name in enumerate(("ox", "oy", "oz")):
            data[name] = cloud.origins[:, i]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8)
        for i, name in enumerate(("red", "green", "blue")):
            data[name] = colors[:, i]

    header = ["ply", "format binary_little_endian 1.0"]
    if cloud.view_pose is not None:
        header.append("comment view_pose " + _fmt(cloud.view_pose.to_list()))
    header.append("comment up " + _fmt(cloud.up))
    header.append(f"element vertex {n}")
    header += [f"property {ply_names[t]} {name}" for name, t in fields]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def read_ply(path) -> tuple[LabeledCloud, dict[str, np.ndarray]]:
    """Read a cloud written by :func:`write_ply` (or any binary LE vertex-only PLY).

    Returns the cloud and a dict with any extra per-vertex arrays
    (``normals``, ``colors``).
    """
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    lines = raw[:end].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n"):]
    view_pose, up, count, fields = None, (0.0, 0.0, 1.0), None, []
    for line in lines[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "binary_little_endian":
            raise ValueError(f"{path}: only binary_little_endian is supported")
        if parts[0] == "comment" and len(parts) > 1 and parts[1] == "view_pose":
            view_pose = RigidPose.from_list([float(v) for v in parts[2:14]])
        elif parts[0] == "comment" and len(parts) > 1 and parts[1] == "up":
            up = tuple(float(v) for v in parts[2:5])
        elif parts[0] == "element":
            if parts[1] != "vertex" or count is not None:
                raise ValueError(f"{path}: only a single vertex element is supported")
            count = int(parts[2])
        elif parts[0] == "property":
            if parts[1] == "list":
                raise ValueError(f"{path}: list properties are not supported")
            fields.append((parts[2], _PLY_TYPES[parts[1]]))
    data = np.frombuffer(body, dtype=np.dtype(fields), count=count or 0)
    names = data.dtype.names
    pts = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    labels = data["part_label"].astype(np.int64) if "part_label" in names else np.zeros(len(pts), np.int64)
    origins = None
    if "ox" in names:
        origins = np.stack([data["ox"], data["oy"], data["oz"]], axis=1).astype(np.float64)
    extras = {}
    if "nx" in names:
        extras["normals"] = np.stack([data["nx"], data["ny"], data["nz"]], axis=1).astype(np.float64)
    if "red" in names:
        extras["colors"] = np.stack([data["red"], data["green"], data["blue"]], axis=1)
    return LabeledCloud(pts, labels, view_pose, up, origins), extras


def pose_to_json(pose: RigidPose) -> str:
    return json.dumps(pose.to_list())


def pose_from_json(text: str) -> RigidPose:
    return RigidPose.from_list(json.loads(text))
