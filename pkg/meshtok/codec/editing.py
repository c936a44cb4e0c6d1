import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np
import torch

from meshtok.errors import InvalidInputException
from meshtok.mesh.mesh_core import CanonicalMesh
from meshtok.mesh.topology import MeshTopology

logger = logging.getLogger(__name__)


def swap_body_part(tokens_a, tokens_b, index_set: Iterable[int]) -> np.ndarray:
    """Take the cells in ``index_set`` from ``tokens_b`` and every other cell from ``tokens_a``."""
    tokens_a = np.asarray(tokens_a, dtype=np.int64)
    tokens_b = np.asarray(tokens_b, dtype=np.int64)
    if tokens_a.shape != tokens_b.shape or tokens_a.ndim != 1:
        raise InvalidInputException("Token sequences to swap must have the same length.")
    indices = np.asarray(sorted(set(int(i) for i in index_set)), dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= tokens_a.shape[0]):
        raise InvalidInputException(f"Swap indices must lie in [0, {tokens_a.shape[0] - 1}]")
    swapped = tokens_a.copy()
    swapped[indices] = tokens_b[indices]
    return swapped


@torch.no_grad()
def interpolate_latent(codec, latent_1, latent_2, t: float) -> CanonicalMesh:
    """Decode the quantized linear blend (1 - t) z1 + t z2 of two continuous latents."""
    if not 0.0 <= t <= 1.0:
        raise InvalidInputException(f"Interpolation weight must lie in [0, 1], got {t}")
    dtype = codec.codebook.entries.dtype
    latent_1 = torch.as_tensor(np.asarray(latent_1), dtype=dtype)
    latent_2 = torch.as_tensor(np.asarray(latent_2), dtype=dtype)
    if latent_1.shape != latent_2.shape:
        raise InvalidInputException("Latents to interpolate must have the same shape.")
    blended = (1.0 - t) * latent_1 + t * latent_2
    tokens = codec.codebook.nearest(blended)
    return codec.decode_to_mesh(tokens.cpu().numpy())


@dataclass
class PartAttribution:
    part_names: List[str]
    cell_to_part: List[str]
    # mean vertex displacement of each part (columns) when a cell (rows) is perturbed
    displacement: np.ndarray
    unattributable: List[int] = field(default_factory=list)

    @property
    def part_to_cells(self) -> Dict[str, List[int]]:
        cells = {name: [] for name in self.part_names}
        for cell, part in enumerate(self.cell_to_part):
            cells[part].append(cell)
        return cells

    def to_dict(self) -> Dict:
        return {
            "part_to_cells": self.part_to_cells,
            "cell_to_part": self.cell_to_part,
            "unattributable": self.unattributable,
        }


@torch.no_grad()
def identify_part_indices(codec, topology: MeshTopology, probe_count: int = 8,
                          reference_tokens: Optional[np.ndarray] = None, seed: int = 0,
                          min_displacement: float = 1e-6) -> PartAttribution:
    """Attribute every latent cell to the labelled vertex group it moves the most.

    Each cell is probed ``probe_count`` times by substituting a random codebook entry into a
    reference token sequence and decoding; the cell goes to the part with the largest mean
    vertex displacement. Cells whose probes barely move the mesh are flagged.
    """
    groups = topology.part_groups()
    part_names = list(groups.keys())
    num_cells = codec.num_cells
    size = codec.codebook_size
    generator = torch.Generator().manual_seed(seed)

    if reference_tokens is None:
        usage = codec.codebook.usage_counts
        reference = torch.full((num_cells,), int(torch.argmax(usage)) if usage.sum() > 0 else 0, dtype=torch.long)
    else:
        reference = torch.as_tensor(np.asarray(reference_tokens), dtype=torch.long)
    base = codec.decode_tokens(reference.unsqueeze(0))[0]

    displacement = np.zeros((num_cells, len(part_names)))
    for cell in range(num_cells):
        probes = reference.repeat(probe_count, 1)
        # random substitutes that differ from the reference entry
        offsets = torch.randint(1, size, (probe_count,), generator=generator)
        probes[:, cell] = (reference[cell] + offsets) % size
        moved = torch.linalg.norm(codec.decode_tokens(probes) - base, dim=-1).mean(dim=0).cpu().numpy()
        for p, name in enumerate(part_names):
            displacement[cell, p] = moved[groups[name]].mean()

    cell_to_part = [part_names[int(np.argmax(row))] for row in displacement]
    unattributable = [cell for cell in range(num_cells) if displacement[cell].max() < min_displacement]
    if unattributable:
        logger.warning("%d latent cells barely move the decoded mesh; attribution is unreliable",
                       len(unattributable))
    return PartAttribution(part_names, cell_to_part, displacement, unattributable)
