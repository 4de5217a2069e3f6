"""Dimension-generic geometric primitives: point clouds and rigid transforms.

Supports D in {2, 3}. Rotations are parametrised by a scalar angle in 2D and
an axis-angle 3-vector in 3D. All types are immutable after construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, EmptyInput

# Below this angle the Rodrigues formula is replaced by its second-order
# Taylor expansion (delta transforms start at identity every outer iteration).
SMALL_ANGLE = 1e-8


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PointCloud:
    """One template point set: coordinates, per-point masses, optional intensities."""

    points: np.ndarray
    masses: np.ndarray
    intensities: Optional[np.ndarray] = None
    label: int = 0

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if pts.size == 0:
            raise EmptyInput("point cloud has no points")
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise DimensionMismatch(f"points must be (N, 2) or (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("coordinates must be finite")
        masses = np.asarray(self.masses, dtype=np.float64).reshape(-1)
        if masses.shape[0] != pts.shape[0]:
            raise ValueError(f"|masses|={masses.shape[0]} != |points|={pts.shape[0]}")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise ValueError("masses must be finite and non-negative")
        if not np.any(masses > 0):
            raise ValueError("at least one mass must be positive")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "masses", _readonly(masses))
        if self.intensities is not None:
            inten = np.asarray(self.intensities, dtype=np.float64).reshape(-1)
            if inten.shape[0] != pts.shape[0]:
                raise ValueError("|intensities| != |points|")
            object.__setattr__(self, "intensities", _readonly(inten))

    @classmethod
    def from_points(cls, points, label: int = 0, intensities=None) -> "PointCloud":
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return cls(pts, np.ones(pts.shape[0]), intensities=intensities, label=label)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def diameter(self) -> float:
        """Diagonal of the axis-aligned bounding box."""
        ext = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.linalg.norm(ext))

    def with_masses(self, masses) -> "PointCloud":
        return PointCloud(self.points, masses, intensities=self.intensities,
                          label=self.label)

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.masses, intensities=self.intensities,
                          label=self.label)


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def axis_angle_to_matrix(omega: np.ndarray) -> np.ndarray:
    """Rodrigues formula with a Taylor fallback near zero angle."""
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    angle = np.linalg.norm(omega)
    K = skew(omega)
    if angle < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    K = K / angle
    s, c = np.sin(angle), np.cos(angle)
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Inverse of Rodrigues, robust near angle 0 and pi. Returns angle in [0, pi]."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(tr)
    if angle < SMALL_ANGLE:
        # first-order: R ~ I + [w]x
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.pi - angle < 1e-6:
        # near pi the antisymmetric part vanishes; recover axis from R + I
        B = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(B), 0.0))
        k = int(np.argmax(axis))
        if axis[k] > 0:
            axis = B[:, k] / axis[k]
        n = np.linalg.norm(axis)
        if n == 0:
            axis = np.array([1.0, 0.0, 0.0])
        else:
            axis = axis / n
        # fix the sign using the antisymmetric part when it is not exactly zero
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(w, axis) < 0:
            axis = -axis
        return angle * axis
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return angle / (2.0 * np.sin(angle)) * w


def rotation_matrix_2d(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def rotation_jacobians(omega: np.ndarray, dim: int) -> np.ndarray:
    """Derivatives of the rotation matrix w.r.t. the rotation parameters.

    Returns an array of shape (P_rot, dim, dim) where P_rot = 3 in 3D
    (d R / d omega_k, exact closed form) and 1 in 2D (d R / d angle).
    """
    if dim == 2:
        angle = float(np.asarray(omega).reshape(-1)[0])
        c, s = np.cos(angle), np.sin(angle)
        return np.array([[[-s, -c], [c, -s]]])
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    R = axis_angle_to_matrix(omega)
    theta2 = float(omega @ omega)
    out = np.empty((3, 3, 3))
    if theta2 < SMALL_ANGLE ** 2:
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            out[k] = skew(e)
        return out
    I = np.eye(3)
    for k in range(3):
        e = I[:, k]
        v = omega[k] * omega + np.cross(omega, (I - R) @ e)
        out[k] = (skew(v) / theta2) @ R
    return out


@dataclass(frozen=True)
class RigidTransform:
    """Rigid motion p -> R p + t.

    ``rotation`` is a length-3 axis-angle vector in 3D and a length-1 array
    (the angle) in 2D; ``translation`` has length D.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(-1)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if t.shape[0] not in (2, 3):
            raise DimensionMismatch(f"translation must have length 2 or 3, got {t.shape[0]}")
        expected_rot = 3 if t.shape[0] == 3 else 1
        if rot.shape[0] != expected_rot:
            raise DimensionMismatch(
                f"rotation must have length {expected_rot} for D={t.shape[0]}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(t))):
            raise ValueError("transform parameters must be finite")
        object.__setattr__(self, "rotation", _readonly(rot))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls, dim: int = 3) -> "RigidTransform":
        return cls(np.zeros(3 if dim == 3 else 1), np.zeros(dim))

    @classmethod
    def from_matrix(cls, R: np.ndarray, t: np.ndarray) -> "RigidTransform":
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        if t.shape[0] == 2:
            angle = np.arctan2(R[1, 0], R[0, 0])
            return cls(np.array([angle]), t)
        return cls(matrix_to_axis_angle(R), t)

    @property
    def dim(self) -> int:
        return self.translation.shape[0]

    def matrix(self) -> np.ndarray:
        if self.dim == 2:
            return rotation_matrix_2d(float(self.rotation[0]))
        return axis_angle_to_matrix(self.rotation)

    def inverse(self) -> "RigidTransform":
        R = self.matrix()
        return RigidTransform.from_matrix(R.T, -(R.T @ self.translation))


def apply_transform(T: RigidTransform, p):
    """Apply R p + t to a point, an (N, D) array, or a PointCloud."""
    if isinstance(p, PointCloud):
        return p.with_points(apply_transform(T, p.points))
    p = np.asarray(p, dtype=np.float64)
    R = T.matrix()
    if p.ndim == 1:
        return R @ p + T.translation
    return p @ R.T + T.translation


def compose(outer: RigidTransform, inner: RigidTransform) -> RigidTransform:
    """Composition: apply ``inner`` first, then ``outer``."""
    if outer.dim != inner.dim:
        raise DimensionMismatch("cannot compose transforms of different dimension")
    Ro, Ri = outer.matrix(), inner.matrix()
    t = Ro @ inner.translation + outer.translation
    return RigidTransform.from_matrix(Ro @ Ri, t)
