"""Rigid transforms, pinhole projection and extrinsic calibration.

Frame conventions: the radar frame is x right, y forward (boresight), z up;
camera frames are x right, y down, z forward.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DegenerateGeometryError, InputError, ParseError

ORTHONORMAL_TOL = 1e-9
COLLINEAR_RATIO = 1e-9

# radar (x right, y forward, z up) -> camera (x right, y down, z forward)
RADAR_TO_CAMERA_AXES = np.array([[1.0, 0.0, 0.0],
                                 [0.0, 0.0, -1.0],
                                 [0.0, 1.0, 0.0]])


@dataclasses.dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ContractError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ContractError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> CameraIntrinsics:
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclasses.dataclass(frozen=True)
class RigidTransform:
    """``p -> R @ p + T``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ContractError("transform entries must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHONORMAL_TOL:
            raise ContractError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise ContractError("rotation determinant is not +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    def to_dict(self) -> dict:
        return {"rotation": [float(x) for x in self.rotation.ravel()],
                "translation": [float(x) for x in self.translation]}

    @classmethod
    def from_dict(cls, d: dict) -> RigidTransform:
        return cls(np.array(d["rotation"], dtype=float).reshape(3, 3), np.array(d["translation"], dtype=float))


@dataclasses.dataclass(frozen=True)
class ViewExtrinsics:
    """World-to-camera poses of the RGB and IR cameras for one calibration board view."""

    rgb: RigidTransform
    ir: RigidTransform


@dataclasses.dataclass(frozen=True)
class CorrespondencePair:
    radar_point: np.ndarray
    ir_point: np.ndarray


def transform_point(t: RigidTransform, p) -> np.ndarray:
    return t.rotation @ np.asarray(p, dtype=float) + t.translation


def transform_points(t: RigidTransform, points) -> np.ndarray:
    return np.asarray(points, dtype=float) @ t.rotation.T + t.translation


def invert_transform(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Apply ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def project_to_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle (rad) of a rotation matrix."""
    c = (np.trace(r) - 1.0) / 2.0
    # arccos loses precision near 0; use the skew part for small angles
    s = np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    return math.atan2(s, c)


def rotation_distance(a: np.ndarray, b: np.ndarray) -> float:
    return rotation_angle(a.T @ b)


def joint_extrinsics(views: Sequence[ViewExtrinsics]) -> RigidTransform:
    """IR-to-RGB transform averaged over calibration views.

    Per view ``R = R_rgb R_ir^-1`` and ``T = T_rgb - R T_ir``; rotations are
    combined with the chordal mean and translations arithmetically.
    """
    if not views:
        raise InputError("joint_extrinsics needs at least one view")
    rotations, translations = [], []
    for v in views:
        r = v.rgb.rotation @ v.ir.rotation.T
        rotations.append(r)
        translations.append(v.rgb.translation - r @ v.ir.translation)
    r_mean = project_to_rotation(np.sum(rotations, axis=0))
    return RigidTransform(r_mean, np.mean(translations, axis=0))


def backproject_pixel(u: float, v: float, depth: float, intrinsics: CameraIntrinsics) -> np.ndarray:
    if not depth > 0:
        raise InputError(f"depth must be positive, got {depth}")
    return depth * np.array([(u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy, 1.0])


def project_point(p, intrinsics: CameraIntrinsics) -> tuple[float, float, float]:
    x, y, z = (float(c) for c in p)
    if not z > 0:
        raise InputError(f"point is behind the camera (z={z})")
    return intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy, z


def estimate_rigid_transform(pairs: Sequence[CorrespondencePair]) -> tuple[RigidTransform, float]:
    """Least-squares ``P_ir ~ R P_radar + T`` via the SVD closed form.

    Returns the transform and the RMS point residual in metres.
    """
    if len(pairs) < 3:
        raise DegenerateGeometryError(f"need at least 3 correspondences, got {len(pairs)}")
    src = np.array([p.radar_point for p in pairs], dtype=float)
    dst = np.array([p.ir_point for p in pairs], dtype=float)
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    a = src - src_c
    b = dst - dst_c
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0 or sv[1] < COLLINEAR_RATIO * sv[0]:
        raise DegenerateGeometryError("correspondences are collinear or coincident")
    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = dst_c - r @ src_c
    resid = dst - (src @ r.T + t)
    rms = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
    return RigidTransform(r, t), rms


def radar_to_sparse_depth(cloud, radar_to_ir: RigidTransform, intrinsics: CameraIntrinsics):
    """Rasterise radar detections into a sparse depth image in the IR camera.

    ``cloud`` holds objects with a ``point`` attribute or bare 3-vectors.
    Returns ``(DepthImage, dropped)``; on collisions the nearer depth wins.
    """
    from .depth import DepthImage

    values = np.zeros((intrinsics.height, intrinsics.width))
    dropped = 0
    for det in cloud:
        p = np.asarray(getattr(det, "point", det), dtype=float)
        x, y, z = transform_point(radar_to_ir, p)
        if not z > 0:
            dropped += 1
            continue
        u, v, d = project_point((x, y, z), intrinsics)
        col, row = int(round(u)), int(round(v))
        if not (0 <= col < intrinsics.width and 0 <= row < intrinsics.height):
            dropped += 1
            continue
        if values[row, col] == 0 or d < values[row, col]:
            values[row, col] = d
    return DepthImage(values, values > 0), dropped


def read_pairs(path) -> list[CorrespondencePair]:
    """Correspondences from ``xr,yr,zr,xi,yi,zi`` CSV; a header row with those names is optional."""
    path = Path(path)
    pairs = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip() == "xr":
                continue
            if len(row) != 6:
                raise ParseError(f"expected 6 columns, got {len(row)}", path=path, line=lineno)
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite coordinate", path=path, line=lineno)
            pairs.append(CorrespondencePair(np.array(vals[:3]), np.array(vals[3:])))
    return pairs


def write_pairs(path, pairs: Sequence[CorrespondencePair]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["xr", "yr", "zr", "xi", "yi", "zi"])
        for p in pairs:
            w.writerow([repr(float(x)) for x in (*p.radar_point, *p.ir_point)])


def save_extrinsics(path, **entries) -> None:
    """Write a calibration document; values may be transforms, intrinsics or plain JSON data."""
    doc = {}
    for key, value in entries.items():
        doc[key] = value.to_dict() if hasattr(value, "to_dict") else value
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_calibration_document(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from None


def transform_from_document(doc: dict, key: str) -> RigidTransform:
    try:
        return RigidTransform.from_dict(doc[key])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"missing or invalid transform {key!r}: {exc}") from None


def intrinsics_from_document(doc: dict, key: str | None = None) -> CameraIntrinsics:
    try:
        return CameraIntrinsics.from_dict(doc[key] if key else doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"missing or invalid intrinsics: {exc}") from None
