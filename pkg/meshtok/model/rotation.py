import logging
from typing import Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from scipy.spatial.transform import Rotation

logger = logging.getLogger(__name__)

PARALLEL_EPSILON = 1e-6

# (1, 0, 0, 0, 1, 0): first two columns of the identity
IDENTITY_6D = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def rot6d_to_matrix(rot6d: torch.Tensor, return_degenerate: bool = False
                    ) -> Union[torch.Tensor, Tuple[torch.Tensor, torch.Tensor]]:
    """Gram-Schmidt on two 3-vectors; columns are b1, b2 and b1 x b2.

    Inputs whose vectors are (near-)parallel are re-orthogonalised against the coordinate
    axis least aligned with b1, and reported when ``return_degenerate`` is set. A (near-)zero
    first vector is replaced by the x axis and reported the same way.
    """
    a1 = rot6d[..., 0:3]
    a2 = rot6d[..., 3:6]
    vanishing = torch.linalg.norm(a1, dim=-1) < PARALLEL_EPSILON
    if torch.any(vanishing):
        logger.debug("Replacing %d vanishing first 6D columns by the x axis", int(vanishing.sum()))
        x_axis = torch.tensor([1.0, 0.0, 0.0], dtype=rot6d.dtype, device=rot6d.device)
        a1 = torch.where(vanishing.unsqueeze(-1), x_axis, a1)
    b1 = F.normalize(a1, dim=-1, eps=PARALLEL_EPSILON)
    residual = a2 - (b1 * a2).sum(-1, keepdim=True) * b1

    degenerate = torch.linalg.norm(residual, dim=-1) < PARALLEL_EPSILON * torch.linalg.norm(a2, dim=-1).clamp_min(1.0)
    if torch.any(degenerate):
        logger.debug("Re-orthogonalising %d near-parallel 6D rotations", int(degenerate.sum()))
        helper = torch.eye(3, dtype=rot6d.dtype, device=rot6d.device)[torch.argmin(b1.abs(), dim=-1)]
        fallback = helper - (b1 * helper).sum(-1, keepdim=True) * b1
        residual = torch.where(degenerate.unsqueeze(-1), fallback, residual)
    degenerate = degenerate | vanishing

    b2 = F.normalize(residual, dim=-1, eps=PARALLEL_EPSILON)
    b3 = torch.cross(b1, b2, dim=-1)
    matrix = torch.stack([b1, b2, b3], dim=-1)
    if return_degenerate:
        return matrix, degenerate
    return matrix


def matrix_to_rot6d(matrix: torch.Tensor) -> torch.Tensor:
    return torch.cat([matrix[..., :, 0], matrix[..., :, 1]], dim=-1)


def rotate_vertices(vertices: torch.Tensor, rotation: torch.Tensor) -> torch.Tensor:
    """Row-wise R v for (B, V, 3) vertices and (B, 3, 3) rotations."""
    return torch.matmul(vertices, rotation.transpose(-1, -2))


def random_rotations(count: int, seed: int = 0) -> np.ndarray:
    return Rotation.random(count, random_state=seed).as_matrix()


def rotation_about_axis(axis: str, degrees: float) -> np.ndarray:
    return Rotation.from_euler(axis, degrees, degrees=True).as_matrix()
