import copy
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch
from torch.utils.data import DataLoader, TensorDataset
from tqdm import tqdm

from meshtok.codec.mesh_vqvae import MeshVQVAE
from meshtok.errors import ConfigurationException, InvalidInputException, TrainingDivergedException
from meshtok.losses import recon_3d_loss
from meshtok.mesh.metrics import METRES_TO_MM
from meshtok.synthetic.dataset import DataSplit, SyntheticDataset
from meshtok.training.checkpoint import save_codec
from meshtok.training.config import Stage, TrainConfig
from meshtok.training.seeding import seed_everything
from meshtok.training.train_log import TrainLog

logger = logging.getLogger(__name__)

EVAL_BATCH = 256


@dataclass
class CodecTrainingResult:
    codec: MeshVQVAE
    validation_pve: float
    codebook_usage: float
    steps: int
    checkpoint_dir: Optional[str] = None
    artifacts: List[str] = field(default_factory=list)
    history: List[Dict[str, float]] = field(default_factory=list)


def canonical_vertices(dataset: SyntheticDataset, split: DataSplit, dtype=torch.float32) -> torch.Tensor:
    records = dataset.split(split)
    if not records:
        return torch.empty(0, dataset.topology.vertex_count, 3, dtype=dtype)
    return torch.as_tensor(np.stack([record.gt_canonical.vertices for record in records]), dtype=dtype)


@torch.no_grad()
def encode_all(codec: MeshVQVAE, vertices: torch.Tensor) -> torch.Tensor:
    return torch.cat([codec.encode(vertices[i:i + EVAL_BATCH]) for i in range(0, len(vertices), EVAL_BATCH)])


@torch.no_grad()
def reconstruction_pve(codec: MeshVQVAE, vertices: torch.Tensor) -> float:
    """Mean per-vertex error (mm) of decode(quantize(encode(v))) in eval mode."""
    was_training = codec.training
    codec.eval()
    errors = []
    for i in range(0, len(vertices), EVAL_BATCH):
        batch = vertices[i:i + EVAL_BATCH]
        reconstruction, _ = codec(batch)
        errors.append(torch.linalg.norm(reconstruction - batch, dim=-1).mean(dim=1))
    codec.train(was_training)
    return float(torch.cat(errors).mean()) * METRES_TO_MM


@torch.no_grad()
def token_usage(codec: MeshVQVAE, vertices: torch.Tensor) -> float:
    """Fraction of codebook entries selected by at least one cell of ``vertices``."""
    tokens = codec.codebook.nearest(encode_all(codec, vertices))
    return float(torch.unique(tokens).numel()) / codec.codebook_size


def train_codec(config: TrainConfig, dataset: SyntheticDataset, out_dir: Optional[str] = None,
                show_progress: bool = False) -> CodecTrainingResult:
    """Fit the mesh VQ-VAE on the canonical meshes of the train split.

    The codebook is initialised by k-means over the encoder's outputs before the first
    epoch, learned by EMA updates and reseeded at the end of every epoch. Early stopping
    tracks validation reconstruction PVE. A NaN loss aborts training with the path of the
    last good checkpoint.
    """
    config.validate()
    if config.stage != Stage.CODEC:
        raise ConfigurationException(f"train_codec needs a codec-stage config, got {config.stage.name.lower()}")
    generator = seed_everything(config.seed, config.deterministic)

    train_vertices = canonical_vertices(dataset, DataSplit.TRAIN)
    if len(train_vertices) == 0:
        raise InvalidInputException("Codec training needs at least one training mesh.")
    val_vertices = canonical_vertices(dataset, DataSplit.VAL)
    if len(val_vertices) == 0:
        logger.warning("Empty validation split; tracking reconstruction on the train split instead")
        val_vertices = train_vertices

    codec = MeshVQVAE(dataset.topology, config.codec)
    codec.codebook.init_from_latents(encode_all(codec, train_vertices).numpy(), seed=config.seed)

    loader = DataLoader(TensorDataset(train_vertices), batch_size=config.batch_size, shuffle=True,
                        generator=generator)
    total_steps = config.epochs * len(loader)
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)
    optimiser = torch.optim.Adam(codec.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimiser, T_max=max(total_steps, 1))

    best_pve = math.inf
    best_state = copy.deepcopy(codec.state_dict())
    last_good_dir = None
    epochs_without_improvement = 0
    step = 0
    history = []

    with TrainLog(out_dir) as train_log:
        for epoch in range(config.epochs):
            codec.train()
            epoch_latents = []
            progress = tqdm(loader, desc=f"codec epoch {epoch}", unit="batch", disable=not show_progress)
            for (batch,) in progress:
                reconstruction, quantized = codec(batch)
                recon = recon_3d_loss(reconstruction, batch)
                loss = recon + config.codec.commitment_weight * quantized.commitment_loss
                if not torch.isfinite(loss):
                    raise TrainingDivergedException(
                        f"Codec loss became {float(loss)} at step {step}", last_good_checkpoint=last_good_dir)

                optimiser.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(codec.parameters(), config.grad_clip)
                optimiser.step()
                scheduler.step()
                step += 1

                with torch.no_grad():
                    epoch_latents.append(codec.encode(batch))
                train_log.write({"step": step, "epoch": epoch, "recon_3d": float(recon),
                                 "commitment": float(quantized.commitment_loss),
                                 "codebook": float(quantized.codebook_loss), "weighted_total": float(loss)})
                if config.max_steps is not None and step >= config.max_steps:
                    break

            reseeded = codec.codebook.reseed_dead_codes(torch.cat(epoch_latents), generator)
            val_pve = reconstruction_pve(codec, val_vertices)
            summary = {"epoch": epoch, "val_pve_mm": val_pve, "reseeded": reseeded,
                       "codebook_usage": codec.codebook.usage_fraction()}
            history.append(summary)
            train_log.write(summary)
            logger.info("Codec epoch %d | val PVE %.2f mm | reseeded %d", epoch, val_pve, reseeded)

            if val_pve < best_pve:
                best_pve = val_pve
                best_state = copy.deepcopy(codec.state_dict())
                epochs_without_improvement = 0
                if out_dir is not None:
                    last_good_dir = os.path.join(out_dir, "last_good")
                    save_codec(codec, last_good_dir, dataset.fingerprint, val_pve)
            else:
                epochs_without_improvement += 1
                if epochs_without_improvement >= config.early_stop_patience:
                    logger.info("Early stopping after %d epochs without improvement", epochs_without_improvement)
                    break
            if config.max_steps is not None and step >= config.max_steps:
                break

    codec.load_state_dict(best_state)
    codec.freeze()
    if codec.codebook.has_duplicates():
        logger.warning("Trained codebook holds duplicated entries")
    usage = token_usage(codec, train_vertices)
    result = CodecTrainingResult(codec, best_pve, usage, step, out_dir, history=history)
    if out_dir is not None:
        result.artifacts = save_codec(codec, out_dir, dataset.fingerprint, best_pve,
                                      extra={"codebook_usage": usage, "epochs_run": len(history), "steps": step,
                                             "train_config": config.to_dict()})
        result.artifacts.append(os.path.join(out_dir, "train_log.jsonl"))
    return result
