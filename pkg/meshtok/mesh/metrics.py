import logging
from dataclasses import dataclass, astuple

import numpy as np

from meshtok.errors import InvalidInputException, TopologyMismatchException
from meshtok.mesh.mesh_core import JointSet, RegisteredMesh

logger = logging.getLogger(__name__)

METRES_TO_MM = 1000.0


@dataclass
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    degenerate: bool = False

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation

    def as_tuple(self):
        return astuple(self)[:3]


def _mean_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(a - b, axis=-1)))


def pve(pred: RegisteredMesh, gt: RegisteredMesh) -> float:
    """Mean per-vertex Euclidean error in millimetres."""
    if pred.topology.vertex_count != gt.topology.vertex_count or pred.vertices.shape != gt.vertices.shape:
        raise TopologyMismatchException("PVE needs two meshes on the same topology.")
    return _mean_distance(pred.vertices, gt.vertices) * METRES_TO_MM


def mpjpe(pred_joints: JointSet, gt_joints: JointSet) -> float:
    """Mean per-joint position error in millimetres."""
    if pred_joints.joints.shape != gt_joints.joints.shape:
        raise InvalidInputException(
            f"Joint sets differ in shape: {pred_joints.joints.shape} vs {gt_joints.joints.shape}")
    return _mean_distance(pred_joints.joints, gt_joints.joints) * METRES_TO_MM


def procrustes_align(source: JointSet, target: JointSet) -> SimilarityTransform:
    """Closed-form similarity Procrustes: argmin over (s, R, t) of ||s R X + t - Y||_F^2.

    Points are rows. Rank-deficient configurations (fewer than two independent
    directions) fall back to a translation-only alignment and are flagged.
    """
    x = source.joints
    y = target.joints
    if x.shape != y.shape:
        raise InvalidInputException("Procrustes alignment needs joint sets of equal shape.")

    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    x0 = x - mu_x
    y0 = y - mu_y

    singular_values = np.linalg.svd(x0, compute_uv=False)
    rank = int(np.sum(singular_values > 1e-9 * max(1.0, singular_values[0] if singular_values.size else 0.0)))
    if rank < 2:
        logger.warning("Degenerate Procrustes configuration (rank %d), using translation only", rank)
        return SimilarityTransform(1.0, np.eye(3), mu_y - mu_x, degenerate=True)

    covariance = x0.T @ y0
    u, s, vt = np.linalg.svd(covariance)
    correction = np.eye(3)
    # Avoid improper rotations (reflections), i.e. rotations with det(R) = -1
    correction[2, 2] = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rotation = vt.T @ correction @ u.T
    scale = float(np.sum(s * np.diag(correction)) / np.sum(x0 ** 2))
    translation = mu_y - scale * rotation @ mu_x
    return SimilarityTransform(scale, rotation, translation)


def pa_mpjpe(pred_joints: JointSet, gt_joints: JointSet) -> float:
    """MPJPE after aligning the prediction onto the ground truth with Procrustes.

    The alignment minimises squared distances, not the mean distance, so the result is
    clamped to the unaligned MPJPE: the identity transform is one of the candidates.
    """
    transform = procrustes_align(pred_joints, gt_joints)
    aligned = mpjpe(JointSet(transform.apply(pred_joints.joints)), gt_joints)
    return min(aligned, mpjpe(pred_joints, gt_joints))
