"""Twist kinematics, skeleton forward kinematics and linear blend skinning.

Conventions: twists are written in the rest (zero-pose) world frame as
``(omega, v)``; a bone's transform is the product of exponentials of every
twist on the path from its chain root, ``T_j = T_parent(j) @ exp(theta_j xi_j)``.
Root bones carry six global degrees of freedom: a translation triple followed
by rotations about the world x, y and z axes through the root joint center.
Lengths are millimeters and angles radians.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidArgumentError

_ORTHO_TOL = 1e-9


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix with ``hat(w) @ x == cross(w, x)``."""
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


@dataclass(frozen=True)
class Twist:
    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float).reshape(3)
        v = np.asarray(self.v, dtype=float).reshape(3)
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(v))):
            raise InvalidArgumentError("twist components must be finite")
        n = np.linalg.norm(omega)
        if n == 0.0:
            if abs(np.linalg.norm(v) - 1.0) > 1e-9:
                raise InvalidArgumentError("prismatic twist needs a unit translation direction")
        elif abs(n - 1.0) > 1e-9:
            raise InvalidArgumentError("revolute twist needs a unit rotation axis")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "v", v)

    @classmethod
    def revolute(cls, axis, point) -> "Twist":
        """Rotation about ``axis`` through ``point``."""
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        return cls(axis, -np.cross(axis, np.asarray(point, dtype=float)))

    @classmethod
    def prismatic(cls, direction) -> "Twist":
        d = np.asarray(direction, dtype=float)
        return cls(np.zeros(3), d / np.linalg.norm(d))

    @property
    def is_prismatic(self) -> bool:
        return not np.any(self.omega)

    def matrix(self) -> np.ndarray:
        """The 4x4 ``xi_hat`` element of se(3)."""
        m = np.zeros((4, 4))
        m[:3, :3] = hat(self.omega)
        m[:3, 3] = self.v
        return m


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Map a point (3,) or an array of points (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def is_valid(self, tol: float = _ORTHO_TOL) -> bool:
        r = self.rotation
        return bool(
            np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0.0)
            and abs(np.linalg.det(r) - 1.0) <= tol
        )


def _exp_matrix(omega: np.ndarray, v: np.ndarray, theta: float) -> np.ndarray:
    m = np.eye(4)
    if not np.any(omega):
        m[:3, 3] = v * theta
        return m
    w = hat(omega)
    s, c = np.sin(theta), np.cos(theta)
    rot = np.eye(3) + s * w + (1.0 - c) * (w @ w)
    m[:3, :3] = rot
    m[:3, 3] = (np.eye(3) - rot) @ np.cross(omega, v) + omega * (omega @ v) * theta
    return m


def exp_map(twist: Twist, theta: float) -> RigidTransform:
    """Closed-form ``exp(theta * xi_hat)`` for a unit revolute or prismatic twist."""
    theta = float(theta)
    if not np.isfinite(theta):
        raise InvalidArgumentError("theta must be finite")
    return RigidTransform.from_matrix(_exp_matrix(twist.omega, twist.v, theta))


def global_twists(center) -> tuple[Twist, ...]:
    """The six twists a root bone carries: x/y/z translation, then x/y/z rotation."""
    c = np.asarray(center, dtype=float)
    eye = np.eye(3)
    return tuple(Twist.prismatic(eye[i]) for i in range(3)) + tuple(
        Twist.revolute(eye[i], c) for i in range(3)
    )


@dataclass(frozen=True)
class Bone:
    bone_id: int
    parent: int | None
    twist: Twist | None
    center: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))


@dataclass(frozen=True)
class Skeleton:
    """Ordered bones; parents always precede children.

    Bone ids must equal their position in ``bones``.  A bone with
    ``parent=None`` starts a new chain and takes six pose entries; every
    other bone takes one entry for its own twist.
    """

    bones: tuple[Bone, ...]

    def __post_init__(self):
        bones = tuple(self.bones)
        object.__setattr__(self, "bones", bones)
        if not bones:
            raise InvalidArgumentError("skeleton needs at least one bone")
        for i, b in enumerate(bones):
            if b.bone_id != i:
                raise InvalidArgumentError(f"bone {b.bone_id} is stored at position {i}")
            if b.parent is None:
                continue
            if not 0 <= b.parent < i:
                raise InvalidArgumentError(f"bone {i} has parent {b.parent} that does not precede it")
            if b.twist is None:
                raise InvalidArgumentError(f"non-root bone {i} needs a twist")

    @property
    def bone_count(self) -> int:
        return len(self.bones)

    @cached_property
    def dof_twists(self) -> tuple[tuple[int, Twist], ...]:
        """(owning bone, twist) per pose entry, in pose order."""
        out = []
        for b in self.bones:
            if b.parent is None:
                out.extend((b.bone_id, t) for t in global_twists(b.center))
            else:
                out.append((b.bone_id, b.twist))
        return tuple(out)

    @property
    def dof_count(self) -> int:
        return len(self.dof_twists)

    @cached_property
    def roots(self) -> tuple[int, ...]:
        return tuple(b.bone_id for b in self.bones if b.parent is None)

    @cached_property
    def ancestry(self) -> np.ndarray:
        """Boolean (dof_count, bone_count): entry k moves bone j."""
        nb = self.bone_count
        anc = np.zeros((nb, nb), dtype=bool)
        for b in self.bones:
            if b.parent is not None:
                anc[b.bone_id] = anc[b.parent]
            anc[b.bone_id, b.bone_id] = True
        # anc[j, i]: i is j or an ancestor of j
        owner = np.array([bone for bone, _ in self.dof_twists])
        return anc[:, owner].T.copy()

    @property
    def centers(self) -> np.ndarray:
        return np.array([b.center for b in self.bones])

    def zero_pose(self) -> "PoseVector":
        return PoseVector(np.zeros(self.dof_count))


@dataclass(frozen=True)
class PoseVector:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(theta)):
            raise InvalidArgumentError("pose entries must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def __len__(self) -> int:
        return len(self.theta)

    def __add__(self, delta) -> "PoseVector":
        return PoseVector(self.theta + np.asarray(delta, dtype=float))

    def check(self, skel: Skeleton) -> None:
        if len(self.theta) != skel.dof_count:
            raise InvalidArgumentError(
                f"pose has {len(self.theta)} entries, skeleton needs {skel.dof_count}"
            )


def _as_pose(pose) -> PoseVector:
    return pose if isinstance(pose, PoseVector) else PoseVector(pose)


def forward_chain(skel: Skeleton, pose) -> tuple[np.ndarray, np.ndarray]:
    """Bone transforms and per-entry spatial twists.

    Returns ``(T, S)``: ``T`` is (bone_count, 4, 4) and ``S`` is
    (dof_count, 6) holding ``(omega', v')`` of each pose entry's twist
    carried into the current frame by the transforms that precede it, so
    that d/d(theta_k) of a point ``x`` moved by entry k is
    ``omega'_k x x + v'_k``.
    """
    pose = _as_pose(pose)
    pose.check(skel)
    theta = pose.theta
    nb = skel.bone_count
    T = np.empty((nb, 4, 4))
    S = np.empty((skel.dof_count, 6))
    dofs = skel.dof_twists
    k = 0
    for b in skel.bones:
        acc = np.eye(4) if b.parent is None else T[b.parent].copy()
        for _ in range(6 if b.parent is None else 1):
            tw = dofs[k][1]
            rot, pos = acc[:3, :3], acc[:3, 3]
            w = rot @ tw.omega
            S[k, :3] = w
            S[k, 3:] = rot @ tw.v + np.cross(pos, w)
            acc = acc @ _exp_matrix(tw.omega, tw.v, theta[k])
            k += 1
        T[b.bone_id] = acc
    return T, S


def bone_transforms(skel: Skeleton, pose) -> list[RigidTransform]:
    T, _ = forward_chain(skel, pose)
    return [RigidTransform.from_matrix(m) for m in T]


def _stack(transforms) -> np.ndarray:
    if isinstance(transforms, np.ndarray):
        return transforms
    return np.array([t.matrix() for t in transforms])


@dataclass(frozen=True)
class SkinnedMesh:
    """Rest-pose mesh with dense per-vertex skinning weights (V, bone_count)."""

    rest_vertices: np.ndarray
    rest_normals: np.ndarray
    faces: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.rest_vertices, dtype=float).reshape(-1, 3)
        normals = np.asarray(self.rest_normals, dtype=float).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 2 or weights.shape[0] != len(verts):
            raise InvalidArgumentError("weights must be (vertex_count, bone_count)")
        if normals.shape != verts.shape:
            raise InvalidArgumentError("one normal per vertex required")
        if np.any(weights < 0):
            raise InvalidArgumentError("skinning weights must be non-negative")
        if np.any(np.abs(weights.sum(axis=1) - 1.0) > 1e-9):
            raise InvalidArgumentError("skinning weights of each vertex must sum to 1")
        if np.any(np.abs(np.linalg.norm(normals, axis=1) - 1.0) > 1e-9):
            raise InvalidArgumentError("rest normals must be unit length")
        if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
            raise InvalidArgumentError("face index out of range")
        for name, arr in (("rest_vertices", verts), ("rest_normals", normals), ("faces", faces), ("weights", weights)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def vertex_count(self) -> int:
        return len(self.rest_vertices)

    @property
    def bone_count(self) -> int:
        return self.weights.shape[1]


def _check_bones(mesh: SkinnedMesh, T: np.ndarray) -> None:
    if len(T) != mesh.bone_count:
        raise InvalidArgumentError(
            f"{len(T)} transforms given for a mesh skinned to {mesh.bone_count} bones"
        )


def skin_points(points: np.ndarray, weights: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Blend ``points`` (V, 3) by ``weights`` (V, B) over transforms ``T`` (B, 4, 4)."""
    blended = np.einsum("vb,bij->vij", weights, T[:, :3, :])
    return np.einsum("vij,vj->vi", blended[:, :, :3], points) + blended[:, :, 3]


def skin(mesh: SkinnedMesh, transforms) -> np.ndarray:
    T = _stack(transforms)
    _check_bones(mesh, T)
    return skin_points(mesh.rest_vertices, mesh.weights, T)


def skin_normals(mesh: SkinnedMesh, transforms, eps: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Blend normals with rotation parts only and renormalize.

    Returns ``(normals, valid)``; vertices whose blended normal vanishes are
    flagged ``valid=False`` and their normal is left as zeros.
    """
    T = _stack(transforms)
    _check_bones(mesh, T)
    rot = np.einsum("vb,bij->vij", mesh.weights, T[:, :3, :3])
    n = np.einsum("vij,vj->vi", rot, mesh.rest_normals)
    length = np.linalg.norm(n, axis=1)
    valid = length > eps
    out = np.zeros_like(n)
    out[valid] = n[valid] / length[valid, None]
    return out, valid


def joint_positions(skel: Skeleton, pose) -> np.ndarray:
    """World position of every bone's joint center, (bone_count, 3)."""
    T, _ = forward_chain(skel, pose)
    c = skel.centers
    return np.einsum("bij,bj->bi", T[:, :3, :3], c) + T[:, :3, 3]

