from dataclasses import dataclass, field, asdict
from typing import List, Tuple

import numpy as np
import torch
import torch.nn as nn

from meshtok.codec.mesh_conv import MeshConvLayer, MeshPool, MeshUnpool
from meshtok.codec.quantizer import Codebook, QuantizeOutput
from meshtok.errors import ConfigurationException, InvalidInputException, TopologyMismatchException
from meshtok.hashing import state_dict_fingerprint
from meshtok.mesh.mesh_core import CanonicalMesh, RegisteredMesh
from meshtok.mesh.topology import MeshTopology


@dataclass
class CodecConfig:
    # one channel width per topology level, finest first
    channels: List[int] = field(default_factory=lambda: [32, 64, 64])
    basis_count: int = 8
    latent_dim: int = 9
    codebook_size: int = 512
    commitment_weight: float = 0.25
    ema_decay: float = 0.99

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> "CodecConfig":
        return cls(**data)


class MeshVQVAE(nn.Module):
    """Fully convolutional mesh autoencoder with a vector-quantized latent grid.

    Canonical meshes (V x 3) are encoded to N x L latents, where N is the cell count of the
    coarsest topology level, quantized against the codebook, and decoded back to V x 3.
    """

    def __init__(self, topology: MeshTopology, config: CodecConfig = None) -> None:
        super().__init__()
        config = config or CodecConfig()
        topology.validate()
        if len(config.channels) != topology.num_levels:
            raise ConfigurationException(
                f"Codec needs {topology.num_levels} channel widths, got {len(config.channels)}")
        self.topology = topology
        self.config = config
        self.num_cells = topology.latent_count
        self.latent_dim = config.latent_dim
        self.activation = nn.ELU()

        channels = config.channels
        last = topology.num_levels - 1
        k = config.basis_count

        self.encoder_convs = nn.ModuleList()
        self.encoder_pools = nn.ModuleList()
        self.encoder_convs.append(MeshConvLayer.for_level(topology, 0, 3, channels[0], k))
        for level in range(1, topology.num_levels):
            self.encoder_pools.append(MeshPool(topology.level_maps[level - 1]))
            self.encoder_convs.append(MeshConvLayer.for_level(topology, level, channels[level - 1], channels[level], k))
        self.to_latent = MeshConvLayer.for_level(topology, last, channels[last], config.latent_dim, k)

        self.from_latent = MeshConvLayer.for_level(topology, last, config.latent_dim, channels[last], k)
        self.decoder_unpools = nn.ModuleList()
        self.decoder_convs = nn.ModuleList()
        for level in range(last - 1, -1, -1):
            self.decoder_unpools.append(MeshUnpool(topology.level_maps[level]))
            self.decoder_convs.append(MeshConvLayer.for_level(topology, level, channels[level + 1], channels[level], k))
        self.to_vertices = MeshConvLayer.for_level(topology, 0, channels[0], 3, k)

        self.codebook = Codebook(config.codebook_size, config.latent_dim, decay=config.ema_decay)

    @property
    def codebook_size(self) -> int:
        return self.codebook.size

    def encode(self, vertices: torch.Tensor) -> torch.Tensor:
        if vertices.dim() != 3 or vertices.shape[1:] != (self.topology.vertex_count, 3):
            raise TopologyMismatchException(
                f"Codec expects (B, {self.topology.vertex_count}, 3) vertices, got {tuple(vertices.shape)}")
        x = self.activation(self.encoder_convs[0](vertices))
        for pool, conv in zip(self.encoder_pools, self.encoder_convs[1:]):
            x = self.activation(conv(pool(x)))
        return self.to_latent(x)

    def quantize(self, latent: torch.Tensor) -> QuantizeOutput:
        return self.codebook.quantize(latent)

    def dequantize(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.codebook.dequantize(tokens)

    def decode(self, quantized: torch.Tensor) -> torch.Tensor:
        if quantized.dim() != 3 or quantized.shape[1:] != (self.num_cells, self.latent_dim):
            raise InvalidInputException(
                f"Codec decodes (B, {self.num_cells}, {self.latent_dim}) grids, got {tuple(quantized.shape)}")
        x = self.activation(self.from_latent(quantized))
        for unpool, conv in zip(self.decoder_unpools, self.decoder_convs):
            x = self.activation(conv(unpool(x)))
        vertices = self.to_vertices(x)
        # canonical output: centroid at the origin
        return vertices - vertices.mean(dim=1, keepdim=True)

    def decode_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.decode(self.dequantize(tokens))

    def forward(self, vertices: torch.Tensor) -> Tuple[torch.Tensor, QuantizeOutput]:
        quantized = self.quantize(self.encode(vertices))
        return self.decode(quantized.quantized), quantized

    def freeze(self) -> "MeshVQVAE":
        self.eval()
        self.requires_grad_(False)
        return self

    def fingerprint(self) -> str:
        return state_dict_fingerprint(self)

    @torch.no_grad()
    def encode_mesh(self, mesh: RegisteredMesh) -> np.ndarray:
        if mesh.topology.vertex_count != self.topology.vertex_count:
            raise TopologyMismatchException("Mesh topology does not match the codec topology.")
        mesh.validate()
        dtype = self.codebook.entries.dtype
        vertices = torch.as_tensor(mesh.vertices, dtype=dtype).unsqueeze(0)
        return self.encode(vertices)[0].cpu().numpy()

    @torch.no_grad()
    def tokenize_mesh(self, mesh: RegisteredMesh) -> np.ndarray:
        dtype = self.codebook.entries.dtype
        latent = torch.as_tensor(self.encode_mesh(mesh), dtype=dtype)
        return self.codebook.nearest(latent).cpu().numpy()

    @torch.no_grad()
    def decode_to_mesh(self, tokens) -> CanonicalMesh:
        tokens = torch.as_tensor(np.asarray(tokens), dtype=torch.long).reshape(1, -1)
        if tokens.shape[1] != self.num_cells:
            raise InvalidInputException(f"Expected {self.num_cells} tokens, got {tokens.shape[1]}")
        vertices = self.decode_tokens(tokens)[0].cpu().numpy()
        return CanonicalMesh(self.topology, vertices.astype(np.float64))
