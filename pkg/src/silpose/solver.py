"""Multi-view pose estimation from silhouette correspondences.

The objective is ``(1/2N) sum_i |v_i(theta) x d_i - m_i|^2`` over the
pooled correspondences of all cameras.  Each outer iteration re-extracts
rim vertices and correspondences; the inner iterations run damped
Gauss-Newton steps on that fixed correspondence set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .chamfer import ChamferConfig, Correspondences, TargetFields, select_correspondences
from .errors import (
    EmptyMaskError,
    EstimationFailedError,
    InvalidArgumentError,
    NoCorrespondenceError,
    RankDeficiencyError,
)
from .kinematics import PoseVector, SkinnedMesh, Skeleton, _as_pose, forward_chain, skin_normals, skin_points
from .projection import Camera
from .silhouette import BinaryMask, rim_from_posed


@dataclass(frozen=True)
class SolverConfig:
    max_outer_iterations: int = 10
    max_inner_iterations: int = 5
    convergence_tol: float = 1e-4
    relative_tol: float = 1e-6
    damping: float = 1e-3

    def __post_init__(self):
        if self.max_outer_iterations < 1 or self.max_inner_iterations < 1:
            raise InvalidArgumentError("iteration caps must be at least 1")
        if not (self.convergence_tol > 0 and self.relative_tol > 0):
            raise InvalidArgumentError("tolerances must be positive")
        if self.damping < 0:
            raise InvalidArgumentError("damping must be non-negative")

    def to_json(self) -> dict:
        return {
            "max_outer_iterations": self.max_outer_iterations,
            "max_inner_iterations": self.max_inner_iterations,
            "convergence_tol": self.convergence_tol,
            "relative_tol": self.relative_tol,
            "damping": self.damping,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SolverConfig":
        return cls(**{k: v for k, v in d.items() if v is not None})


@dataclass(frozen=True)
class PoseEstimate:
    pose: PoseVector
    residual_history: list[float]
    converged: bool
    outer_iterations: int = 0
    correspondence_counts: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class CameraTarget:
    """One camera's observation: the target silhouette and its precomputed fields."""

    camera: Camera
    camera_id: int
    mask: BinaryMask
    fields: TargetFields

    @property
    def contour(self):
        return self.fields.contour


def _posed_selected(skel, mesh, pose, ids):
    T, S = forward_chain(skel, pose)
    w = mesh.weights[ids]
    return T, S, w, skin_points(mesh.rest_vertices[ids], w, T)


def residuals(corr: Correspondences, skel: Skeleton, mesh: SkinnedMesh, pose) -> np.ndarray:
    """Stacked ``v x d - m`` per correspondence, shape (N, 3)."""
    _, _, _, v = _posed_selected(skel, mesh, pose, corr.vertex_ids)
    return np.cross(v, corr.d) - corr.m


def objective(corr: Correspondences, skel: Skeleton, mesh: SkinnedMesh, pose) -> float:
    r = residuals(corr, skel, mesh, pose)
    return float(np.sum(r * r) / (2 * len(r)))


def vertex_jacobian(skel: Skeleton, mesh: SkinnedMesh, pose, ids) -> tuple[np.ndarray, np.ndarray]:
    """Skinned positions (N, 3) and their derivatives (N, dof, 3) w.r.t. each pose entry."""
    T, S, w, v = _posed_selected(skel, mesh, pose, ids)
    rest = mesh.rest_vertices[ids]
    # per-bone transformed copies of each vertex, (N, B, 3)
    per_bone = np.einsum("bij,nj->nbi", T[:, :3, :3], rest) + T[None, :, :3, 3]
    anc = skel.ancestry.astype(float)  # (dof, B)
    wsum = w @ anc.T  # (N, dof)
    xk = np.einsum("nb,kb,nbi->nki", w, anc, per_bone)
    J = np.cross(S[None, :, :3], xk) + S[None, :, 3:] * wsum[:, :, None]
    return v, J


def linearize(corr: Correspondences, skel: Skeleton, mesh: SkinnedMesh, pose) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton system for the point-to-ray objective.

    Rows are scaled by ``1/sqrt(2N)`` so that ``|b|^2`` is the objective and
    ``|A dx - b|^2`` its linear model at ``pose + dx``.
    """
    n = len(corr)
    if n == 0:
        raise NoCorrespondenceError("cannot linearize an empty correspondence set")
    v, J = vertex_jacobian(skel, mesh, pose, corr.vertex_ids)
    r = np.cross(v, corr.d) - corr.m
    # d/dtheta (v x d) = (dv/dtheta) x d
    Jr = np.cross(J, corr.d[:, None, :])  # (N, dof, 3)
    scale = 1.0 / np.sqrt(2.0 * n)
    A = Jr.transpose(0, 2, 1).reshape(3 * n, -1) * scale
    b = -r.reshape(-1) * scale
    return A, b


def solve_step(A: np.ndarray, b: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """Minimize ``|A dx - b|^2 + damping |dx|^2`` through a Cholesky factorization."""
    ncol = A.shape[1]
    if damping == 0.0 and np.linalg.matrix_rank(A) < ncol:
        raise RankDeficiencyError("normal equations are singular and no damping was given")
    N = A.T @ A + damping * np.eye(ncol)
    try:
        c = linalg.cho_factor(N)
    except linalg.LinAlgError as exc:
        raise RankDeficiencyError(str(exc)) from exc
    return linalg.cho_solve(c, A.T @ b)


def extract_correspondences(
    pose, targets: list[CameraTarget], skel: Skeleton, mesh: SkinnedMesh, cfg: ChamferConfig
) -> tuple[Correspondences, bool]:
    """Pool correspondences from every usable camera.

    Also reports whether the posed mesh reproduces every target silhouette
    pixel for pixel.
    """
    T, _ = forward_chain(skel, pose)
    verts = skin_points(mesh.rest_vertices, mesh.weights, T)
    normals, valid = skin_normals(mesh, T)
    parts = []
    identical = True
    for tgt in targets:
        try:
            rim, rendered = rim_from_posed(verts, normals, valid, mesh.faces, tgt.camera, tgt.camera_id)
        except EmptyMaskError:
            identical = False
            continue
        identical &= bool(np.array_equal(rendered.bits, tgt.mask.bits))
        if len(rim) == 0:
            continue
        parts.append(select_correspondences(rim, tgt.contour, tgt.fields, cfg, tgt.camera))
    return Correspondences.concat(parts), identical


def estimate_pose(
    initial,
    targets: list[CameraTarget],
    skel: Skeleton,
    mesh: SkinnedMesh,
    cfg: ChamferConfig,
    scfg: SolverConfig | None = None,
) -> PoseEstimate:
    """Fit the pose to the target silhouettes of all cameras.

    Stops when a step is below ``convergence_tol`` (max-norm), the objective
    stalls, or the posed mesh already renders every target exactly.
    """
    scfg = scfg or SolverConfig()
    pose = _as_pose(initial)
    pose.check(skel)
    history: list[float] = []
    counts: list[int] = []
    converged = False
    outer = 0
    for outer in range(1, scfg.max_outer_iterations + 1):
        corr, identical = extract_correspondences(pose, targets, skel, mesh, cfg)
        if len(corr) == 0:
            if outer == 1:
                raise EstimationFailedError("no camera produced correspondences", pose)
            break
        counts.append(len(corr))
        obj = objective(corr, skel, mesh, pose)
        history.append(obj)
        if identical:
            converged = True
            break
        damping = scfg.damping
        first_step = None
        for _ in range(scfg.max_inner_iterations):
            A, b = linearize(corr, skel, mesh, pose)
            obj = float(b @ b)
            step = solve_step(A, b, damping)
            trial = pose + step
            new_obj = objective(corr, skel, mesh, trial)
            if first_step is None:
                first_step = float(np.max(np.abs(step)))
            if new_obj > obj:
                damping = max(damping, 1e-9) * 10.0
                continue
            pose = trial
            history.append(new_obj)
            damping /= 10.0
            if np.max(np.abs(step)) < scfg.convergence_tol or obj - new_obj <= scfg.relative_tol * obj:
                break
        if first_step is not None and first_step < scfg.convergence_tol:
            converged = True
            break
    return PoseEstimate(pose, history, converged, outer, counts)
