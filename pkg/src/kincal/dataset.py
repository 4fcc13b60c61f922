"""Grid-ordered scan data with per-point joint states.

A dataset keeps the raw sensor-frame points exactly as recorded, on a
rows x cols grid, together with one joint vector per cell.  Invalid
measurements are flagged rather than deleted so grid neighborhoods stay
intact for normal estimation.  Units are meters and radians throughout.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ExtrapolationError, ParseError
from .kincore import KinematicModel, forward_kinematics


class SensorKind(enum.Enum):
    SINGLE_BEAM_LIDAR = "single_beam_lidar"
    LINE_SCANNER = "line_scanner"
    DEPTH_CAMERA = "depth_camera"


@dataclass(frozen=True)
class ScanDataset:
    """Sensor-frame points and matching joint vectors on a fixed grid."""

    kind: SensorKind
    points: np.ndarray  # (rows, cols, 3), sensor frame, meters
    valid: np.ndarray   # (rows, cols) bool
    joints: np.ndarray  # (rows, cols, joint_count)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        valid = np.asarray(self.valid, dtype=bool)
        joints = np.asarray(self.joints, dtype=float)
        if points.ndim != 3 or points.shape[2] != 3:
            raise DimensionError(f"points must be (rows, cols, 3), got {points.shape}")
        if valid.shape != points.shape[:2]:
            raise DimensionError("validity grid does not match the point grid")
        if joints.ndim != 3 or joints.shape[:2] != points.shape[:2]:
            raise DimensionError("joint grid does not match the point grid")
        if np.any(valid) and not np.all(np.isfinite(joints[valid])):
            raise DimensionError("valid cells must carry finite joint vectors")
        if np.any(valid) and not np.all(np.isfinite(points[valid])):
            raise DimensionError("valid cells must carry finite points")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "joints", joints)

    @property
    def rows(self) -> int:
        return self.points.shape[0]

    @property
    def cols(self) -> int:
        return self.points.shape[1]

    @property
    def joint_count(self) -> int:
        return self.joints.shape[2]


@dataclass(frozen=True)
class ProjectedCloud:
    """Base-frame image of a ScanDataset; grid indices correspond 1:1."""

    points: np.ndarray        # (rows, cols, 3), base frame
    valid: np.ndarray         # (rows, cols) bool
    sensor_origins: np.ndarray  # (rows, cols, 3): chain origin per cell

    @property
    def rows(self) -> int:
        return self.points.shape[0]

    @property
    def cols(self) -> int:
        return self.points.shape[1]


def project_to_base(ds: ScanDataset, model: KinematicModel) -> ProjectedCloud:
    """Map every valid point through the chain at its own joint state.

    Cells sharing a joint vector (e.g. all pixels of one camera frame)
    share a single forward-kinematics evaluation.
    """
    if ds.joint_count != model.joint_count:
        raise DimensionError(
            f"dataset joint arity {ds.joint_count} != model joint count {model.joint_count}"
        )
    out = np.full_like(ds.points, np.nan)
    origins = np.full_like(ds.points, np.nan)
    if not np.any(ds.valid):
        return ProjectedCloud(out, ds.valid.copy(), origins)

    flat_points = ds.points.reshape(-1, 3)
    flat_valid = ds.valid.reshape(-1)
    flat_out = out.reshape(-1, 3)
    flat_org = origins.reshape(-1, 3)

    if ds.joint_count == 0:
        pose = forward_kinematics(model, np.zeros(0))
        flat_out[flat_valid] = pose.apply(flat_points[flat_valid])
        flat_org[flat_valid] = pose.translation
    else:
        flat_joints = ds.joints.reshape(-1, ds.joint_count)
        uniq, inverse = np.unique(flat_joints[flat_valid], axis=0, return_inverse=True)
        sel = np.flatnonzero(flat_valid)
        for u, joint_vec in enumerate(uniq):
            pose = forward_kinematics(model, joint_vec)
            cells = sel[inverse == u]
            flat_out[cells] = pose.apply(flat_points[cells])
            flat_org[cells] = pose.translation
    return ProjectedCloud(out, ds.valid.copy(), origins)


def interpolate_joints(samples, t: float) -> np.ndarray:
    """Per-joint linear interpolation of a timestamped joint-state stream.

    ``samples`` is a time-sorted sequence of (time, joint_vector).  Times
    outside the sampled range raise; there is no silent extrapolation.
    """
    if len(samples) < 2:
        raise DimensionError("need at least two joint samples to interpolate")
    times = np.array([s[0] for s in samples], dtype=float)
    values = np.array([np.asarray(s[1], dtype=float) for s in samples])
    if np.any(np.diff(times) < 0):
        raise DimensionError("joint samples must be sorted by time")
    if t < times[0] or t > times[-1]:
        raise ExtrapolationError(
            f"time {t} outside sampled range [{times[0]}, {times[-1]}]"
        )
    hi = int(np.searchsorted(times, t, side="left"))
    if times[hi] == t:
        return values[hi].copy()
    lo = hi - 1
    w = (t - times[lo]) / (times[hi] - times[lo])
    return values[lo] + w * (values[hi] - values[lo])


# --- on-disk format ---------------------------------------------------------
#
# A dataset is a directory of three text files:
#   meta    key/value lines: kind, rows, cols, joint_count
#   points  one record per cell: i j valid x y z
#   joints  one record per cell: i j q_1 ... q_n
# Decimal meters and radians; invalid cells may carry nan coordinates.

def save_dataset(ds: ScanDataset, path):
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "meta"), "w") as fh:
        fh.write(f"kind {ds.kind.value}\n")
        fh.write(f"rows {ds.rows}\n")
        fh.write(f"cols {ds.cols}\n")
        fh.write(f"joint_count {ds.joint_count}\n")
    with open(os.path.join(path, "points"), "w") as fh:
        for i in range(ds.rows):
            for j in range(ds.cols):
                x, y, z = (float(v) for v in ds.points[i, j])
                fh.write(f"{i} {j} {int(ds.valid[i, j])} {x!r} {y!r} {z!r}\n")
    with open(os.path.join(path, "joints"), "w") as fh:
        for i in range(ds.rows):
            for j in range(ds.cols):
                qs = " ".join(repr(float(q)) for q in ds.joints[i, j])
                fh.write(f"{i} {j} {qs}\n".rstrip() + "\n")


def _read_meta(path):
    meta = {}
    meta_path = os.path.join(path, "meta")
    with open(meta_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise ParseError(f"{meta_path}:{lineno}: expected 'key value'")
            meta[parts[0]] = parts[1]
    for key in ("kind", "rows", "cols", "joint_count"):
        if key not in meta:
            raise ParseError(f"{meta_path}: missing key {key!r}")
    try:
        kind = SensorKind(meta["kind"])
    except ValueError:
        raise ParseError(f"{meta_path}: unknown sensor kind {meta['kind']!r}") from None
    try:
        return kind, int(meta["rows"]), int(meta["cols"]), int(meta["joint_count"])
    except ValueError as exc:
        raise ParseError(f"{meta_path}: {exc}") from None


def load_dataset(path) -> ScanDataset:
    kind, rows, cols, joint_count = _read_meta(path)
    points = np.full((rows, cols, 3), np.nan)
    valid = np.zeros((rows, cols), dtype=bool)
    joints = np.full((rows, cols, joint_count), np.nan)

    points_path = os.path.join(path, "points")
    with open(points_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 6:
                raise ParseError(f"{points_path}:{lineno}: expected 6 fields, got {len(tokens)}")
            try:
                i, j, flag = int(tokens[0]), int(tokens[1]), int(tokens[2])
                xyz = [float(t) for t in tokens[3:6]]
            except ValueError as exc:
                raise ParseError(f"{points_path}:{lineno}: {exc}") from None
            if not (0 <= i < rows and 0 <= j < cols):
                raise ParseError(f"{points_path}:{lineno}: cell ({i}, {j}) outside grid")
            points[i, j] = xyz
            valid[i, j] = bool(flag)

    joints_path = os.path.join(path, "joints")
    with open(joints_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 2 + joint_count:
                raise ParseError(
                    f"{joints_path}:{lineno}: expected {2 + joint_count} fields, "
                    f"got {len(tokens)}"
                )
            try:
                i, j = int(tokens[0]), int(tokens[1])
                qs = [float(t) for t in tokens[2:]]
            except ValueError as exc:
                raise ParseError(f"{joints_path}:{lineno}: {exc}") from None
            if not (0 <= i < rows and 0 <= j < cols):
                raise ParseError(f"{joints_path}:{lineno}: cell ({i}, {j}) outside grid")
            joints[i, j] = qs

    return ScanDataset(kind, points, valid, joints)
