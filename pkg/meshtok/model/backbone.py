from typing import List, Sequence, Tuple

import torch
import torch.nn as nn

from meshtok.errors import InvalidInputException


class FeatureExtractor(nn.Module):
    """Small strided convolutional backbone.

    Each stage halves the spatial size, so a 64 x 64 input with four stages gives a 4 x 4
    grid. Any module returning ``(grid (B, C, H, W), vector (B, C))`` can be dropped in.
    """

    def __init__(self, in_channels: int = 1, image_size: int = 64,
                 stage_channels: Sequence[int] = (32, 64, 128, 128)) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.image_size = image_size
        self.out_channels = stage_channels[-1]
        self.grid_size = image_size // (2 ** len(stage_channels))

        layers: List[nn.Module] = []
        previous = in_channels
        for channels in stage_channels:
            layers.extend([
                nn.Conv2d(previous, channels, kernel_size=3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(channels),
                nn.ReLU(inplace=True),
            ])
            previous = channels
        self.stages = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, image: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if image.dim() == 3:
            image = image.unsqueeze(1)
        if image.shape[1:] != (self.in_channels, self.image_size, self.image_size):
            raise InvalidInputException(
                f"Expected images of shape ({self.in_channels}, {self.image_size}, {self.image_size}), "
                f"got {tuple(image.shape[1:])}")
        grid = self.stages(image)
        return grid, self.pool(grid).flatten(1)
