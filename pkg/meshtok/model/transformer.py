from enum import Enum, unique

import torch
import torch.nn as nn
from einops import rearrange

from meshtok.errors import InvalidInputException
from meshtok.model.positional_encoding import sinusoidal_encoding_2d

# flattened rotation (9) + camera (s, tx, ty)
CONDITION_DIM = 12


@unique
class LogitHeadType(Enum):
    MLP = 1
    SELF_ATTENTION = 2

    @staticmethod
    def from_string(label: str) -> "LogitHeadType":
        for value in LogitHeadType:
            if str(value.name).lower() == label.lower():
                return value
        raise ValueError(f"Unknown logit head type: {label}")


class ImageTokenEncoder(nn.Module):
    """1x1 convolution to D channels, HW tokens with sinusoidal positions, self-attention."""

    def __init__(self, in_channels: int, dim: int, grid_height: int, grid_width: int,
                 num_layers: int = 2, num_heads: int = 4, feedforward_dim: int = 1024,
                 dropout: float = 0.1) -> None:
        super().__init__()
        self.grid_height = grid_height
        self.grid_width = grid_width
        self.projection = nn.Conv2d(in_channels, dim, kernel_size=1)
        self.register_buffer("positional_encoding", sinusoidal_encoding_2d(grid_height, grid_width, dim))
        layer = nn.TransformerEncoderLayer(dim, num_heads, feedforward_dim, dropout, batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, num_layers, enable_nested_tensor=False)

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        if grid.shape[-2:] != (self.grid_height, self.grid_width):
            raise InvalidInputException(
                f"Expected a {self.grid_height} x {self.grid_width} feature grid, got {tuple(grid.shape[-2:])}")
        tokens = rearrange(self.projection(grid), "b d h w -> b (h w) d")
        return self.encoder(tokens + self.positional_encoding.to(tokens.dtype))


class MeshTokenDecoder(nn.Module):
    """N learned mesh tokens; self-attention among them, cross-attention to image tokens."""

    def __init__(self, num_tokens: int, dim: int, num_layers: int = 2, num_heads: int = 4,
                 feedforward_dim: int = 1024, dropout: float = 0.1) -> None:
        super().__init__()
        self.mesh_tokens = nn.Parameter(torch.randn(num_tokens, dim) * 0.02)
        layer = nn.TransformerDecoderLayer(dim, num_heads, feedforward_dim, dropout, batch_first=True)
        self.decoder = nn.TransformerDecoder(layer, num_layers)

    def forward(self, image_tokens: torch.Tensor) -> torch.Tensor:
        queries = self.mesh_tokens.unsqueeze(0).expand(image_tokens.shape[0], -1, -1)
        return self.decoder(queries, image_tokens)


class LogitHead(nn.Module):
    """Per-token logits from latent mesh features concatenated with a rotation/camera embedding."""

    def __init__(self, dim: int, codebook_size: int, hidden_dim: int = 1024, condition_embed_dim: int = 64,
                 head_type: LogitHeadType = LogitHeadType.MLP, num_heads: int = 4, dropout: float = 0.1) -> None:
        super().__init__()
        self.head_type = head_type
        self.condition_embedding = nn.Sequential(nn.Linear(CONDITION_DIM, condition_embed_dim), nn.ReLU())
        fused = dim + condition_embed_dim
        if head_type == LogitHeadType.MLP:
            self.head = nn.Sequential(
                nn.Linear(fused, hidden_dim),
                nn.ReLU(),
                nn.Linear(hidden_dim, codebook_size),
            )
        else:
            layer = nn.TransformerEncoderLayer(dim, num_heads, hidden_dim, dropout, batch_first=True)
            self.head = nn.Sequential(
                nn.Linear(fused, dim),
                nn.TransformerEncoder(layer, 1, enable_nested_tensor=False),
                nn.Linear(dim, codebook_size),
            )

    def forward(self, mesh_features: torch.Tensor, rotation: torch.Tensor, camera: torch.Tensor) -> torch.Tensor:
        condition = torch.cat([rotation.flatten(1), camera], dim=-1)
        embedded = self.condition_embedding(condition)
        embedded = embedded.unsqueeze(1).expand(-1, mesh_features.shape[1], -1)
        return self.head(torch.cat([mesh_features, embedded], dim=-1))
