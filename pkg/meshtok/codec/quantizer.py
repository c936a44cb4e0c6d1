import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.cluster.vq import kmeans2

from meshtok.errors import ConfigurationException, InvalidInputException

logger = logging.getLogger(__name__)


class _StraightThrough(torch.autograd.Function):
    """Returns the quantized grid unchanged; the gradient at it is copied to the encoder output."""

    @staticmethod
    def forward(ctx, latent, quantized):
        return quantized.clone()

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output, None


@dataclass
class QuantizeOutput:
    tokens: torch.Tensor
    quantized: torch.Tensor
    codebook_loss: torch.Tensor
    commitment_loss: torch.Tensor


class Codebook(nn.Module):
    """Dictionary of S latent codes of dimension L, learned by exponential moving averages."""

    def __init__(self, size: int = 512, dim: int = 9, decay: float = 0.99, epsilon: float = 1e-5) -> None:
        super().__init__()
        if size < 2:
            raise ConfigurationException(f"A codebook needs at least two entries, got {size}")
        self.size = size
        self.dim = dim
        self.decay = decay
        self.epsilon = epsilon

        entries = torch.empty(size, dim).uniform_(-1.0 / size, 1.0 / size)
        self.register_buffer("entries", entries)
        self.register_buffer("ema_cluster_size", torch.ones(size))
        self.register_buffer("ema_sum", entries.clone())
        self.register_buffer("usage_counts", torch.zeros(size, dtype=torch.long))
        self.register_buffer("epoch_usage", torch.zeros(size, dtype=torch.long))

    def set_entries(self, entries: torch.Tensor) -> None:
        entries = entries.to(self.entries.dtype).reshape(self.size, self.dim)
        self.entries.copy_(entries)
        self.ema_sum.copy_(entries)
        self.ema_cluster_size.fill_(1.0)

    def nearest(self, latent: torch.Tensor) -> torch.Tensor:
        """Index of the closest entry for each row, lowest index on ties."""
        if self.entries.shape[0] == 0:
            raise ConfigurationException("Cannot quantize against an empty codebook.")
        if latent.shape[-1] != self.dim:
            raise InvalidInputException(f"Latent rows have dimension {latent.shape[-1]}, codebook has {self.dim}")
        flat = latent.reshape(-1, self.dim)
        distances = torch.cdist(flat, self.entries.to(flat.dtype), compute_mode="donot_use_mm_for_euclid_dist")
        return torch.argmin(distances, dim=-1).reshape(latent.shape[:-1])

    def quantize(self, latent: torch.Tensor) -> QuantizeOutput:
        tokens = self.nearest(latent.detach())
        selected = self.entries.to(latent.dtype)[tokens]

        codebook_loss = F.mse_loss(selected, latent.detach())
        commitment_loss = F.mse_loss(latent, selected.detach())

        if self.training:
            self._ema_update(latent.detach(), tokens)
            selected = self.entries.to(latent.dtype)[tokens]

        quantized = _StraightThrough.apply(latent, selected)
        return QuantizeOutput(tokens, quantized, codebook_loss, commitment_loss)

    def dequantize(self, tokens: torch.Tensor) -> torch.Tensor:
        tokens = torch.as_tensor(tokens, dtype=torch.long, device=self.entries.device)
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.size):
            raise InvalidInputException(f"Token indices must lie in [0, {self.size - 1}]")
        return self.entries[tokens]

    def soft_dequantize(self, logits: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
        """Softmax-weighted mixture of entries; differentiable stand-in for argmax + lookup."""
        probabilities = torch.softmax(logits / temperature, dim=-1)
        return probabilities @ self.entries.to(logits.dtype)

    @torch.no_grad()
    def _ema_update(self, latent: torch.Tensor, tokens: torch.Tensor) -> None:
        flat = latent.reshape(-1, self.dim).to(self.entries.dtype)
        one_hot = F.one_hot(tokens.reshape(-1), self.size).to(flat.dtype)
        cluster_size = one_hot.sum(dim=0)
        self.ema_cluster_size.mul_(self.decay).add_(cluster_size, alpha=1 - self.decay)
        self.ema_sum.mul_(self.decay).add_(one_hot.t() @ flat, alpha=1 - self.decay)

        total = self.ema_cluster_size.sum()
        smoothed = (self.ema_cluster_size + self.epsilon) / (total + self.size * self.epsilon) * total
        self.entries.copy_(self.ema_sum / smoothed.unsqueeze(1))

        counts = cluster_size.long()
        self.usage_counts.add_(counts)
        self.epoch_usage.add_(counts)

    @torch.no_grad()
    def reseed_dead_codes(self, latents: torch.Tensor, generator: Optional[torch.Generator] = None) -> int:
        """Reset every entry unused since the last call to a random latent from ``latents``."""
        dead = torch.nonzero(self.epoch_usage == 0).flatten()
        flat = latents.reshape(-1, self.dim).to(self.entries.dtype)
        if dead.numel() and flat.shape[0]:
            picks = torch.randint(0, flat.shape[0], (dead.numel(),), generator=generator)
            replacement = flat[picks]
            self.entries[dead] = replacement
            self.ema_sum[dead] = replacement
            self.ema_cluster_size[dead] = 1.0
        self.epoch_usage.zero_()
        return int(dead.numel())

    @torch.no_grad()
    def init_from_latents(self, latents: np.ndarray, seed: int = 0) -> None:
        """k-means initialisation, falling back to uniform samples in the latents' range."""
        latents = np.asarray(latents, dtype=np.float64).reshape(-1, self.dim)
        rng = np.random.default_rng(seed)
        centroids = None
        if latents.shape[0] >= self.size:
            try:
                centroids, _ = kmeans2(latents, self.size, minit="++", seed=seed)
            except (ValueError, np.linalg.LinAlgError) as error:
                logger.warning("k-means codebook initialisation failed (%s), using uniform samples", error)
        if centroids is None or not np.all(np.isfinite(centroids)):
            low = latents.min(axis=0) if latents.size else -np.ones(self.dim)
            high = latents.max(axis=0) if latents.size else np.ones(self.dim)
            centroids = rng.uniform(low, high, size=(self.size, self.dim))
        self.set_entries(torch.from_numpy(centroids))

    def usage_fraction(self) -> float:
        return float((self.usage_counts > 0).float().mean())

    def has_duplicates(self) -> bool:
        unique = torch.unique(self.entries, dim=0)
        if unique.shape[0] < self.size:
            logger.warning("Codebook has %d duplicated entries", self.size - unique.shape[0])
            return True
        return False
