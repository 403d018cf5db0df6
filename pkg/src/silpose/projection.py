"""Ideal pinhole cameras, Plücker projection rays and the point-to-ray residual.

Pixel coordinates put the center of pixel (col, row) at (x, y) = (col, row),
x to the right and y down.  World points map to the camera frame by
``X_cam = R @ X + t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, InvalidArgumentError


@dataclass(frozen=True)
class Camera:
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float).reshape(3, 3)
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if np.any(np.tril(K, -1)) or abs(np.linalg.det(K)) < 1e-12:
            raise InvalidArgumentError("intrinsics must be invertible and upper triangular")
        if not (np.allclose(R.T @ R, np.eye(3), atol=1e-9) and abs(np.linalg.det(R) - 1.0) < 1e-9):
            raise InvalidArgumentError("camera rotation must be orthonormal with det +1")
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgumentError("image size must be positive")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "_K_inv", np.linalg.inv(K))

    @classmethod
    def look_at(cls, eye, target, up, focal: float, width: int, height: int) -> "Camera":
        """Camera at ``eye`` whose optical axis points at ``target``.

        The principal point sits at the image center; image y runs along
        the projection of ``-up``.
        """
        eye = np.asarray(eye, dtype=float)
        z = np.asarray(target, dtype=float) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        K = np.array([[focal, 0.0, (width - 1) / 2.0], [0.0, focal, (height - 1) / 2.0], [0.0, 0.0, 1.0]])
        return cls(K, R, -R @ eye, width, height)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.R.T + self.t


@dataclass(frozen=True)
class PluckerLine:
    d: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float).reshape(3))
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float).reshape(3))

    @classmethod
    def through(cls, point, direction) -> "PluckerLine":
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        return cls(d, np.cross(np.asarray(point, dtype=float), d))

    def is_valid(self) -> bool:
        return abs(np.linalg.norm(self.d) - 1.0) <= 1e-12 and abs(self.d @ self.m) <= 1e-9


@dataclass(frozen=True)
class PixelPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise InvalidArgumentError("pixel coordinates must be finite")

    def __array__(self, dtype=None, copy=None):
        return np.array([self.x, self.y], dtype=dtype)


def project_points(points, cam: Camera) -> np.ndarray:
    """Pinhole projection of (N, 3) points to (N, 2) pixels."""
    pc = cam.to_camera(points)
    if np.any(pc[..., 2] <= 0.0):
        raise BehindCameraError("point has non-positive depth in the camera frame")
    h = pc @ cam.K.T
    return h[..., :2] / h[..., 2:3]


def project(point, cam: Camera) -> PixelPoint:
    x, y = project_points(np.asarray(point, dtype=float).reshape(1, 3), cam)[0]
    return PixelPoint(float(x), float(y))


def backproject_many(pixels, cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Rays through (N, 2) pixels as ``(d, m)`` arrays of shape (N, 3)."""
    q = np.asarray(pixels, dtype=float).reshape(-1, 2)
    h = np.column_stack([q, np.ones(len(q))])
    d = (h @ cam._K_inv.T) @ cam.R
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    m = np.cross(cam.center, d)
    return d, m


def backproject(q, cam: Camera) -> PluckerLine:
    d, m = backproject_many(np.asarray(q, dtype=float), cam)
    return PluckerLine(d[0], m[0])


def ray_residual(v, line: PluckerLine) -> np.ndarray:
    """``v x d - m``; its norm is the distance from ``v`` to the line."""
    return np.cross(np.asarray(v, dtype=float), line.d) - line.m
