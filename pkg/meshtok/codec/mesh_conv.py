import math

import numpy as np
import torch
import torch.nn as nn

from meshtok.errors import ConfigurationException, InvalidInputException
from meshtok.mesh.topology import MeshTopology, PoolingMap


class MeshConvLayer(nn.Module):
    """Neighbourhood convolution with globally shared bases and per-vertex coefficients.

        y_i = sum_{j in N(i)} (sum_k alpha_{i,j,k} W_k) x_j + b
    """

    def __init__(self, in_channels: int, out_channels: int, neighbor_indices: np.ndarray,
                 neighbor_mask: np.ndarray, basis_count: int = 8) -> None:
        super().__init__()
        neighbor_indices = np.asarray(neighbor_indices, dtype=np.int64)
        neighbor_mask = np.asarray(neighbor_mask, dtype=bool)
        vertex_count, width = neighbor_indices.shape
        if neighbor_mask.shape != neighbor_indices.shape:
            raise ConfigurationException("Neighbour mask and indices differ in shape.")
        used = neighbor_indices[neighbor_mask]
        if used.size and (used.min() < 0 or used.max() >= vertex_count):
            raise ConfigurationException("Neighbourhood index out of range for the layer's level.")

        self.in_channels = in_channels
        self.out_channels = out_channels
        self.basis_count = basis_count
        self.vertex_count = vertex_count

        self.register_buffer("neighbor_indices", torch.from_numpy(neighbor_indices))
        self.register_buffer("neighbor_mask", torch.from_numpy(neighbor_mask.astype(np.float32)))

        self.bases = nn.Parameter(torch.randn(basis_count, in_channels, out_channels)
                                  / math.sqrt(in_channels * width))
        self.coefficients = nn.Parameter(torch.randn(vertex_count, width, basis_count) / math.sqrt(basis_count))
        self.bias = nn.Parameter(torch.zeros(out_channels))

    @classmethod
    def for_level(cls, topology: MeshTopology, level: int, in_channels: int, out_channels: int,
                  basis_count: int = 8) -> "MeshConvLayer":
        indices, mask = topology.padded_neighborhoods(level)
        return cls(in_channels, out_channels, indices, mask, basis_count)

    def local_weights(self) -> torch.Tensor:
        return self.coefficients * self.neighbor_mask.to(self.coefficients.dtype).unsqueeze(-1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-2] != self.vertex_count or features.shape[-1] != self.in_channels:
            raise InvalidInputException(
                f"Expected features (..., {self.vertex_count}, {self.in_channels}), got {tuple(features.shape)}")
        neighbours = features[:, self.neighbor_indices]  # (B, V, width, C_in)
        per_basis = torch.einsum("bvnc,vnk->bvkc", neighbours, self.local_weights())
        return torch.einsum("bvkc,kcd->bvd", per_basis, self.bases) + self.bias


def mesh_conv(features: torch.Tensor, layer: MeshConvLayer) -> torch.Tensor:
    """Apply ``layer`` to (V, C_in) or (B, V, C_in) features."""
    if features.dim() == 2:
        return layer(features.unsqueeze(0)).squeeze(0)
    return layer(features)


class MeshPool(nn.Module):
    """Weighted mean of fine vertices per coarse cell."""

    def __init__(self, level_map: PoolingMap) -> None:
        super().__init__()
        self.coarse_count = level_map.coarse_count
        self.register_buffer("assignment", torch.from_numpy(level_map.assignment))
        self.register_buffer("weights", torch.from_numpy(level_map.weights.astype(np.float32)))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        weighted = features * self.weights.to(features.dtype).view(1, -1, 1)
        pooled = features.new_zeros(features.shape[0], self.coarse_count, features.shape[2])
        return pooled.index_add(1, self.assignment, weighted)


class MeshUnpool(nn.Module):
    """Transpose of the pooling map, renormalised so each fine vertex copies its coarse cell."""

    def __init__(self, level_map: PoolingMap) -> None:
        super().__init__()
        self.register_buffer("assignment", torch.from_numpy(level_map.assignment))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return features[:, self.assignment]
