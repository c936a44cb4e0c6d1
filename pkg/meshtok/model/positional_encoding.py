import math

import torch

from meshtok.errors import ConfigurationException


def sinusoidal_encoding_1d(length: int, dim: int, temperature: float = 10000.0) -> torch.Tensor:
    positions = torch.arange(length, dtype=torch.float32).unsqueeze(1)
    frequencies = torch.exp(torch.arange(0, dim, 2, dtype=torch.float32) * (-math.log(temperature) / dim))
    encoding = torch.zeros(length, dim)
    encoding[:, 0::2] = torch.sin(positions * frequencies)
    encoding[:, 1::2] = torch.cos(positions * frequencies)
    return encoding


def sinusoidal_encoding_2d(height: int, width: int, dim: int) -> torch.Tensor:
    """(H * W, dim) encoding, row-major; half the channels encode rows, half columns."""
    if dim % 4 != 0:
        raise ConfigurationException(f"2D sinusoidal encoding needs a dimension divisible by 4, got {dim}")
    half = dim // 2
    rows = sinusoidal_encoding_1d(height, half)
    columns = sinusoidal_encoding_1d(width, half)
    grid_rows = rows.unsqueeze(1).expand(height, width, half)
    grid_columns = columns.unsqueeze(0).expand(height, width, half)
    return torch.cat([grid_rows, grid_columns], dim=-1).reshape(height * width, dim)
