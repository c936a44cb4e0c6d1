import json
from dataclasses import dataclass, field
from typing import Dict, Optional

import torch
import torch.nn.functional as F

from meshtok.errors import InvalidInputException, TopologyMismatchException

# All losses are mean-reduced: per cell, per matrix entry, per coordinate or per vertex.


@dataclass
class LossReport:
    mesh_ce: Optional[float]
    rot_mse: float
    reproj_l1: Optional[float]
    weighted_total: float
    weights: Dict[str, float]
    recon_3d: Optional[float] = None
    step: int = 0
    epoch: int = 0
    extra: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_terms(cls, terms: Dict[str, torch.Tensor], weights: Dict[str, float],
                   step: int = 0, epoch: int = 0) -> "LossReport":
        values = {name: float(value.detach()) for name, value in terms.items()}
        total = float(weighted_sum(terms, weights).detach())
        return cls(mesh_ce=values.get("mesh_ce"), rot_mse=values.get("rot_mse", 0.0),
                   reproj_l1=values.get("reproj_l1"), recon_3d=values.get("recon_3d"),
                   weighted_total=total, weights={name: weights[name] for name in terms},
                   step=step, epoch=epoch)

    def to_dict(self) -> Dict:
        report = {"step": self.step, "epoch": self.epoch}
        for name in ("mesh_ce", "rot_mse", "reproj_l1", "recon_3d"):
            value = getattr(self, name)
            if value is not None:
                report[name] = value
        report["weighted_total"] = self.weighted_total
        report["weights"] = dict(self.weights)
        report.update(self.extra)
        return report

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)


def weighted_sum(terms: Dict[str, torch.Tensor], weights: Dict[str, float]) -> torch.Tensor:
    missing = [name for name in terms if name not in weights]
    if missing:
        raise InvalidInputException(f"No weight given for loss terms: {', '.join(missing)}")
    total = None
    for name, value in terms.items():
        contribution = weights[name] * value
        total = contribution if total is None else total + contribution
    if total is None:
        raise InvalidInputException("Cannot combine an empty set of loss terms.")
    return total


def cross_entropy_mesh(logits: torch.Tensor, gt_tokens: torch.Tensor) -> torch.Tensor:
    """Mean over cells of -log softmax(logits)[gt]."""
    gt_tokens = torch.as_tensor(gt_tokens, dtype=torch.long, device=logits.device)
    size = logits.shape[-1]
    if logits.shape[:-1] != gt_tokens.shape:
        raise InvalidInputException(
            f"Logits {tuple(logits.shape)} do not match ground-truth tokens {tuple(gt_tokens.shape)}")
    if gt_tokens.numel() and (gt_tokens.min() < 0 or gt_tokens.max() >= size):
        raise InvalidInputException(f"Ground-truth tokens must lie in [0, {size - 1}]")
    return F.cross_entropy(logits.reshape(-1, size), gt_tokens.reshape(-1))


def rotation_mse(pred_rotation: torch.Tensor, gt_rotation: torch.Tensor) -> torch.Tensor:
    gt_rotation = torch.as_tensor(gt_rotation, dtype=pred_rotation.dtype, device=pred_rotation.device)
    return F.mse_loss(pred_rotation, gt_rotation)


def project_weak_perspective(joints_3d: torch.Tensor, camera: torch.Tensor) -> torch.Tensor:
    """s * (x, y) + t for (..., J, 3) joints and (..., 3) cameras [s, tx, ty]."""
    scale = camera[..., 0:1].unsqueeze(-2)
    translation = camera[..., 1:3].unsqueeze(-2)
    return scale * joints_3d[..., :2] + translation


def reprojection_l1(joints_3d: torch.Tensor, camera: torch.Tensor, joints_2d: torch.Tensor) -> torch.Tensor:
    joints_2d = torch.as_tensor(joints_2d, dtype=joints_3d.dtype, device=joints_3d.device)
    if joints_3d.shape[-2] != joints_2d.shape[-2]:
        raise InvalidInputException(
            f"Predicted joints ({joints_3d.shape[-2]}) and 2D annotations ({joints_2d.shape[-2]}) differ in count")
    return F.l1_loss(project_weak_perspective(joints_3d, camera), joints_2d)


def recon_3d_loss(pred_vertices: torch.Tensor, gt_vertices: torch.Tensor) -> torch.Tensor:
    """Mean per-vertex Euclidean distance, in metres."""
    gt_vertices = torch.as_tensor(gt_vertices, dtype=pred_vertices.dtype, device=pred_vertices.device)
    if pred_vertices.shape != gt_vertices.shape:
        raise TopologyMismatchException(
            f"Vertex arrays differ in shape: {tuple(pred_vertices.shape)} vs {tuple(gt_vertices.shape)}")
    return torch.linalg.norm(pred_vertices - gt_vertices, dim=-1).mean()


def regress_joints_batch(vertices: torch.Tensor, regressor: torch.Tensor) -> torch.Tensor:
    """(B, V, 3) vertices to (B, J, 3) joints with a (J, V) regressor."""
    if regressor.shape[-1] != vertices.shape[-2]:
        raise InvalidInputException(
            f"Regressor has {regressor.shape[-1]} columns, mesh has {vertices.shape[-2]} vertices")
    return torch.einsum("jv,bvc->bjc", regressor.to(vertices.dtype), vertices)
