"""Pinhole camera model and camera trajectory utilities.

Conventions:
  - World-to-camera pose: x_cam = R @ x_world + t, camera looks down +z.
  - Pixel (u, v) has its center at integer coordinates; u grows right,
    v grows down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROTATION_TOL = 1e-6


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class CameraView:
    """Intrinsics + world-to-camera rigid pose for one view."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise CameraError(f"image size must be >= 1, got {self.width}x{self.height}")
        R = self.rotation
        if not np.allclose(R @ R.T, np.eye(3), atol=ROTATION_TOL):
            raise CameraError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise CameraError("rotation determinant is not +1")

    # -- transforms ---------------------------------------------------------

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return (pts - self.translation) @ self.rotation

    def project_camera(self, pts_cam: np.ndarray):
        """Camera-frame points -> (uv, depth). No culling; depth may be <= 0."""
        pts_cam = np.atleast_2d(pts_cam)
        z = pts_cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pts_cam[:, 0] / z + self.cx
            v = self.fy * pts_cam[:, 1] / z + self.cy
        return np.stack([u, v], axis=-1), z

    def project(self, points_world: np.ndarray):
        return self.project_camera(self.world_to_camera(points_world))

    def unproject_pixels(self, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
        """Pixel coordinates + depths -> world points."""
        uv = np.atleast_2d(uv)
        d = np.asarray(depth, dtype=np.float64).reshape(-1)
        x = (uv[:, 0] - self.cx) / self.fx * d
        y = (uv[:, 1] - self.cy) / self.fy * d
        return self.camera_to_world(np.stack([x, y, d], axis=-1))

    def in_frustum(self, uv: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Strictly in front of the camera and within pixel bounds (rounded)."""
        u = np.rint(uv[:, 0])
        v = np.rint(uv[:, 1])
        return (z > 0) & (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def offset_from(self, other: "CameraView"):
        """(translation distance, rotation angle in radians) between poses."""
        dt = float(np.linalg.norm(self.center - other.center))
        R_rel = self.rotation @ other.rotation.T
        c = (np.trace(R_rel) - 1.0) / 2.0
        ang = float(np.arccos(np.clip(c, -1.0, 1.0)))
        return dt, ang


# -- trajectory file format -------------------------------------------------
# One view per line: fx fy cx cy w h r00 r01 r02 r10 ... r22 t0 t1 t2

def save_trajectory(path, cams) -> None:
    lines = []
    for c in cams:
        vals = [c.fx, c.fy, c.cx, c.cy, c.width, c.height]
        vals += list(c.rotation.reshape(-1)) + list(c.translation)
        lines.append(" ".join(f"{int(v)}" if i in (4, 5) else repr(float(v))
                              for i, v in enumerate(vals)))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_trajectory(path):
    cams = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 18:
                raise CameraError(f"{path}:{ln}: expected 18 fields, got {len(parts)}")
            vals = [float(p) for p in parts]
            cams.append(CameraView(
                fx=vals[0], fy=vals[1], cx=vals[2], cy=vals[3],
                width=int(vals[4]), height=int(vals[5]),
                rotation=np.array(vals[6:15]).reshape(3, 3),
                translation=np.array(vals[15:18]),
            ))
    return cams


def look_at_pose(eye: np.ndarray, target: np.ndarray, up=(0.0, -1.0, 0.0)):
    """World-to-camera (R, t) for a camera at `eye` looking at `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(upv, fwd)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        upv = np.array([0.0, 0.0, 1.0])
        right = np.cross(upv, fwd)
        nr = np.linalg.norm(right)
    right = right / nr
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=0)
    t = -R @ eye
    return R, t


def arc_trajectory(ref_cam: CameraView, n_views: int, target: np.ndarray,
                   angle_span_deg: float = 30.0) -> list:
    """Look-at orbit around `target` through the reference camera position.

    View 0 is the reference pose itself; the remaining views sweep the arc
    symmetrically (alternating sides, growing offset) so that offsets from
    the reference increase with index.
    """
    target = np.asarray(target, dtype=np.float64)
    center = ref_cam.center
    radius_vec = center - target
    # orbit in the world x-z plane around the target
    angles = [0.0]
    step = np.deg2rad(angle_span_deg) / max(1, (n_views - 1) // 2) if n_views > 1 else 0.0
    k = 1
    while len(angles) < n_views:
        angles.append(step * k)
        if len(angles) < n_views:
            angles.append(-step * k)
        k += 1
    cams = [ref_cam]
    for a in angles[1:]:
        ca, sa = np.cos(a), np.sin(a)
        rot_y = np.array([[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]])
        eye = target + rot_y @ radius_vec
        R, t = look_at_pose(eye, target)
        cams.append(CameraView(fx=ref_cam.fx, fy=ref_cam.fy, cx=ref_cam.cx, cy=ref_cam.cy,
                               width=ref_cam.width, height=ref_cam.height,
                               rotation=R, translation=t))
    return cams
