"""Camera and rigid-motion geometry.

Conventions used throughout the package:

* Camera frame: right-handed, x right, y down, z forward (optical axis).
  A point in front of the camera has z > 0.
* Pixels: (u, v) = (column, row). The origin is the *center* of the
  top-left pixel, so a W x H image spans u in [0, W-1], v in [0, H-1].
* A relative pose between two frames is the camera motion from frame 1 to
  frame 2: the pose of camera 2 expressed in camera-1 coordinates, as the
  KITTI devkit computes it (inv(T_w1) @ T_w2). Its translation is the
  second camera's position seen from the first, so pure forward motion by
  d meters has t = (0, 0, +d), and chaining relative motions is plain
  composition. As a coordinate map it takes camera-2 coordinates to
  camera-1 coordinates (x_c1 = R @ x_c2 + t); transferring a frame-1 scene
  point into frame-2 coordinates therefore uses the inverse action,
  x_c2 = R.T @ (x_c1 - t).
* Absolute trajectories store world-from-camera poses; the world frame is
  the first camera frame unless stated otherwise.

All functions compute in float64; callers that feed networks cast down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Type-level orthonormality budget (Frobenius); compose() re-projects onto
# SO(3) whenever accumulated round-off exceeds it.
_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics for a W x H image (distortion-free)."""

    fu: float
    fv: float
    cu: float
    cv: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fu > 0 and self.fv > 0):
            raise ValueError(f"focal lengths must be positive, got ({self.fu}, {self.fv})")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 < self.cu < self.width and 0 < self.cv < self.height):
            raise ValueError(
                f"principal point ({self.cu}, {self.cv}) outside image "
                f"{self.width}x{self.height}"
            )

    @property
    def matrix(self) -> np.ndarray:
        """3x3 calibration matrix K."""
        return np.array(
            [[self.fu, 0.0, self.cu], [0.0, self.fv, self.cv], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def to_dict(self) -> dict:
        return {
            "fu": float(self.fu),
            "fv": float(self.fv),
            "cu": float(self.cu),
            "cv": float(self.cv),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            fu=float(d["fu"]),
            fv=float(d["fv"]),
            cu=float(d["cu"]),
            cv=float(d["cv"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


def rotation_drift(R: np.ndarray) -> float:
    """Frobenius norm of R^T R - I."""
    return float(np.linalg.norm(R.T @ R - np.eye(3)))


def _check_rotation(R: np.ndarray, tol: float = _ORTHO_TOL) -> None:
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    drift = rotation_drift(R)
    if drift > tol:
        raise ValueError(f"matrix is not orthonormal (drift {drift:.3e} > {tol:.0e})")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError(f"determinant {np.linalg.det(R):+.6f} != +1 (not a rotation)")


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform [R | t]; acts on points as x -> R @ x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        _check_rotation(R)
        if not np.all(np.isfinite(t)):
            raise ValueError(f"translation must be finite, got {t}")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "PoseSE3":
        T = np.asarray(T, dtype=np.float64)
        if T.shape != (4, 4):
            raise ValueError(f"homogeneous pose must be 4x4, got {T.shape}")
        return cls(T[:3, :3], T[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "PoseSE3":
        Rt = self.rotation.T
        return PoseSE3(Rt, -Rt @ self.translation)


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Composition a then b as coordinate maps: (a*b)(x) = a(b(x)).

    Re-projects the rotation onto SO(3) when accumulated round-off pushes
    orthonormality drift past the type budget, so long chains stay valid.
    """
    R = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    if rotation_drift(R) > _ORTHO_TOL:
        R = nearest_rotation(R)
    return PoseSE3(R, t)


def relative(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Pose of b expressed in a's frame: inv(a) * b."""
    return compose(a.inverse(), b)


def accumulate(relatives: list[PoseSE3], timestamps=None) -> "Trajectory":
    """Chain per-step relative motions into an absolute trajectory.

    ``relatives[i]`` is the pose of frame i+1 in frame i (the package's
    relative-pose convention), so pose[i+1] = compose(pose[i], relatives[i]).
    The result has len(relatives) + 1 poses anchored at the identity.
    Timestamps default to unit spacing when not given.
    """
    if len(relatives) == 0:
        raise ValueError("cannot accumulate an empty list of relative poses")
    pose = PoseSE3.identity()
    poses = [pose]
    for rel in relatives:
        pose = compose(pose, rel)
        poses.append(pose)
    if timestamps is None:
        timestamps = np.arange(len(poses), dtype=np.float64)
    return Trajectory(poses, timestamps)


@dataclass
class Trajectory:
    """Sequence of absolute (world-from-camera) poses with timestamps.

    Generated and accumulated trajectories are anchored so poses[0] is the
    identity (world frame = first camera frame); the constructor does not
    force this, because aligned or transformed copies are also trajectories.
    """

    poses: list[PoseSE3]
    timestamps: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.poses) < 1:
            raise ValueError("a trajectory needs at least one pose")
        if self.timestamps is None:
            self.timestamps = np.arange(len(self.poses), dtype=np.float64)
        ts = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        if len(ts) != len(self.poses):
            raise ValueError(f"{len(ts)} timestamps for {len(self.poses)} poses")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        self.timestamps = ts

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i) -> PoseSE3:
        return self.poses[i]

    def positions(self) -> np.ndarray:
        """(n, 3) array of camera centers in the world frame."""
        return np.stack([p.translation for p in self.poses])

    def relatives(self) -> list[PoseSE3]:
        """Per-step relative motions (pose of frame i+1 in frame i)."""
        return [
            relative(self.poses[i], self.poses[i + 1]) for i in range(len(self) - 1)
        ]


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Closest rotation to M in the Frobenius sense (SVD with det fix)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    R = U @ Vt
    if np.linalg.det(R) < 0:
        R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return R


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation, in radians."""
    c = (np.trace(R) - 1.0) * 0.5
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def geodesic_angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Angle of the relative rotation between Ra and Rb, in radians."""
    return rotation_angle(np.asarray(Ra).T @ np.asarray(Rb))


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform (Haar) random rotation via a normalized random quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def project(points: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame points (..., 3) to (..., 3) of (u, v, depth).

    Every point must be strictly in front of the camera.
    """
    p = np.asarray(points, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise ValueError("cannot project points at or behind the camera (z <= 0)")
    u = K.fu * p[..., 0] / z + K.cu
    v = K.fv * p[..., 1] / z + K.cv
    return np.stack([u, v, z], axis=-1)


def back_project(pixels: np.ndarray, depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Lift pixels (..., 2) at depth (...) to camera-frame points (..., 3).

    Depth is the z coordinate (not the ray length) and must be positive.
    """
    px = np.asarray(pixels, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("back-projection requires positive depth")
    x = (px[..., 0] - K.cu) / K.fu * d
    y = (px[..., 1] - K.cv) / K.fv * d
    return np.stack([x, y, d], axis=-1)


def pixel_grid(K: CameraIntrinsics) -> np.ndarray:
    """(H, W, 2) array of (u, v) pixel-center coordinates."""
    u = np.arange(K.width, dtype=np.float64)
    v = np.arange(K.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv], axis=-1)


def ray_field(K: CameraIntrinsics) -> np.ndarray:
    """(H, W, 3) field of unit-depth viewing rays [(u-cu)/fu, (v-cv)/fv, 1]."""
    grid = pixel_grid(K)
    rx = (grid[..., 0] - K.cu) / K.fu
    ry = (grid[..., 1] - K.cv) / K.fv
    return np.stack([rx, ry, np.ones_like(rx)], axis=-1)


def depth_to_points(depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Per-pixel 3D map M(u, v) = D(u, v) * ray(u, v), shape (H, W, 3).

    Identical (to float64 round-off) to back-projecting every positive-depth
    pixel; zero (invalid) depths produce zero points rather than errors.
    """
    d = np.asarray(depth, dtype=np.float64)
    if d.shape != (K.height, K.width):
        raise ValueError(f"depth shape {d.shape} does not match intrinsics {K.height}x{K.width}")
    return d[..., None] * ray_field(K)
