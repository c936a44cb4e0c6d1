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
from meshtok.errors import (ConfigurationException, FingerprintMismatchException, InvalidInputException,
                            MeshtokException, NonFiniteLogitsException, TrainingDivergedException)
from meshtok.losses import (LossReport, cross_entropy_mesh, recon_3d_loss, regress_joints_batch, reprojection_l1,
                            rotation_mse, weighted_sum)
from meshtok.mesh.mesh_io import write_obj
from meshtok.model.rotation import rotate_vertices
from meshtok.model.vqhps import VQHPS, ModelConfig
from meshtok.synthetic.dataset import DataSplit, SampleRecord, SyntheticDataset
from meshtok.training.checkpoint import save_model
from meshtok.training.config import Stage, TrainConfig
from meshtok.training.evaluation import evaluate
from meshtok.training.seeding import seed_everything
from meshtok.training.train_log import TrainLog

logger = logging.getLogger(__name__)


@dataclass
class PredictorTrainingResult:
    model: VQHPS
    validation_pve: float
    steps: int
    codec_fingerprint: str
    freeze_verified: bool
    checkpoint_dir: Optional[str] = None
    artifacts: List[str] = field(default_factory=list)
    history: List[Dict[str, float]] = field(default_factory=list)


def prepare_tokens(dataset: SyntheticDataset, codec: MeshVQVAE) -> None:
    """Tokenise an untokenised dataset; refuse one tokenised by another codec."""
    if dataset.has_tokens:
        if dataset.codec_fingerprint != codec.fingerprint():
            raise FingerprintMismatchException(
                f"Dataset tokens come from codec {dataset.codec_fingerprint}, not {codec.fingerprint()}")
        return
    logger.info("Dataset carries no tokens; tokenising with codec %s", codec.fingerprint())
    dataset.attach_tokens(codec)


def record_tensors(records: List[SampleRecord]) -> TensorDataset:
    images = torch.as_tensor(np.stack([record.image for record in records]), dtype=torch.float32).unsqueeze(1)
    tokens = torch.as_tensor(np.stack([record.gt_tokens for record in records]), dtype=torch.long)
    rotations = torch.as_tensor(np.stack([record.gt_rotation for record in records]), dtype=torch.float32)
    joints_2d = torch.as_tensor(np.stack([record.gt_joints_2d for record in records]), dtype=torch.float32)
    canonical = torch.as_tensor(np.stack([record.gt_canonical.vertices for record in records]),
                                dtype=torch.float32)
    return TensorDataset(images, tokens, rotations, joints_2d, canonical)


def predictor_loss_terms(model: VQHPS, config: TrainConfig, regressor: torch.Tensor, images: torch.Tensor,
                         tokens: torch.Tensor, rotations: torch.Tensor, joints_2d: torch.Tensor,
                         canonical: torch.Tensor, last_good_checkpoint: Optional[str] = None
                         ) -> Dict[str, torch.Tensor]:
    """Loss terms routed per head.

    mesh_ce reaches only the token path (rotation and camera enter the logit head detached);
    rot_mse and reproj_l1 reach the rotation head; reproj_l1 alone reaches the camera head and
    sees the predicted canonical mesh as a constant. Under the 3D-loss ablation, recon_3d
    replaces mesh_ce and decodes a softmax mixture of codebook entries. NaN logits mean the
    weights have diverged and raise TrainingDivergedException pointing at ``last_good_checkpoint``.
    """
    try:
        output = model(images)
    except NonFiniteLogitsException as error:
        raise TrainingDivergedException(f"Predictor logits are no longer finite: {error}",
                                        last_good_checkpoint=last_good_checkpoint) from error
    terms = {}
    if config.ablation.loss_3d:
        soft = model.soft_canonical_vertices(output.logits, config.soft_temperature).to(rotations.dtype)
        oriented = rotate_vertices(soft, output.rotation.detach())
        terms["recon_3d"] = recon_3d_loss(oriented, rotate_vertices(canonical, rotations))
    else:
        terms["mesh_ce"] = cross_entropy_mesh(output.logits, tokens)
    terms["rot_mse"] = rotation_mse(output.rotation, rotations)
    if not config.ablation.no_reprojection:
        joints = regress_joints_batch(output.vertices, regressor)
        terms["reproj_l1"] = reprojection_l1(joints, output.camera, joints_2d)
    return terms


@torch.no_grad()
def export_visualisations(model: VQHPS, records: List[SampleRecord], out_dir: str, epoch: int) -> List[str]:
    """Decoded predicted meshes of a few validation records, one OBJ per record."""
    if not records:
        return []
    epoch_dir = os.path.join(out_dir, "visualisations", f"epoch_{epoch:03d}")
    if not os.path.exists(epoch_dir):
        os.makedirs(epoch_dir)
    images = torch.as_tensor(np.stack([record.image for record in records]), dtype=torch.float32).unsqueeze(1)
    output = model.predict(images)
    faces = model.codec.topology.faces
    paths = []
    for record, vertices in zip(records, output.vertices.double().cpu().numpy()):
        path = os.path.join(epoch_dir, f"{record.record_name}.obj")
        write_obj(path, vertices, faces)
        paths.append(path)
    return paths


def train_predictor(config: TrainConfig, dataset: SyntheticDataset, codec: MeshVQVAE,
                    out_dir: Optional[str] = None, show_progress: bool = False) -> PredictorTrainingResult:
    """Train the image-to-token predictor against a frozen codec.

    The codec checksum is taken before and after training and must not change. Early stopping
    tracks validation PVE.
    """
    config.validate()
    if config.stage != Stage.PREDICTOR:
        raise ConfigurationException(
            f"train_predictor needs a predictor-stage config, got {config.stage.name.lower()}")
    generator = seed_everything(config.seed, config.deterministic)

    codec.freeze()
    codec_fingerprint = codec.fingerprint()
    prepare_tokens(dataset, codec)

    train_records = dataset.split(DataSplit.TRAIN)
    if not train_records:
        raise InvalidInputException("Predictor training needs at least one training record.")
    val_records = dataset.split(DataSplit.VAL) or train_records

    model_config: ModelConfig = config.predictor_model_config(codec.num_cells, codec.codebook_size,
                                                             dataset.image_size)
    model = VQHPS(model_config).attach_codec(codec)
    regressor = torch.as_tensor(dataset.regressor.matrix, dtype=torch.float32)
    weights = config.loss_weights.as_dict()
    active = {name: weights[name] for name in config.active_terms()}

    loader = DataLoader(record_tensors(train_records), batch_size=config.batch_size, shuffle=True,
                        generator=generator)
    total_steps = config.epochs * len(loader)
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)
    optimiser = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimiser, T_max=max(total_steps, 1))

    best_pve = math.inf
    best_state = copy.deepcopy(model.state_dict())
    last_good_dir = None
    epochs_without_improvement = 0
    step = 0
    history = []
    artifacts = []

    with TrainLog(out_dir) as train_log:
        for epoch in range(config.epochs):
            model.train()
            progress = tqdm(loader, desc=f"predictor epoch {epoch}", unit="batch", disable=not show_progress)
            for images, tokens, rotations, joints_2d, canonical in progress:
                terms = predictor_loss_terms(model, config, regressor, images, tokens, rotations, joints_2d,
                                             canonical, last_good_dir)
                loss = weighted_sum(terms, active)
                if not torch.isfinite(loss):
                    raise TrainingDivergedException(
                        f"Predictor loss became {float(loss)} at step {step}", last_good_checkpoint=last_good_dir)

                optimiser.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimiser.step()
                scheduler.step()
                step += 1
                train_log.write_report(LossReport.from_terms(terms, active, step=step, epoch=epoch))
                if config.max_steps is not None and step >= config.max_steps:
                    break

            try:
                report = evaluate(model, codec, val_records, dataset.regressor)
            except NonFiniteLogitsException as error:
                raise TrainingDivergedException(f"Predictor logits became NaN in epoch {epoch}",
                                                last_good_checkpoint=last_good_dir) from error
            summary = report.summary()
            val_pve = summary["pve_mm"]
            history.append({"epoch": epoch, "val_pve_mm": val_pve, "val_token_accuracy": summary["token_accuracy"]})
            train_log.write(history[-1])
            logger.info("Predictor epoch %d | val PVE %.2f mm | token accuracy %.4f",
                        epoch, val_pve, summary["token_accuracy"] or 0.0)

            if out_dir is not None and config.visualise_every and (epoch + 1) % config.visualise_every == 0:
                artifacts.extend(export_visualisations(model, val_records[:config.visualise_count], out_dir, epoch))

            if val_pve < best_pve:
                best_pve = val_pve
                best_state = copy.deepcopy(model.state_dict())
                epochs_without_improvement = 0
                if out_dir is not None:
                    last_good_dir = os.path.join(out_dir, "last_good")
                    save_model(model, last_good_dir, extra={"val_pve_mm": val_pve})
            else:
                epochs_without_improvement += 1
                if epochs_without_improvement >= config.early_stop_patience:
                    logger.info("Early stopping after %d epochs without improvement", epochs_without_improvement)
                    break
            if config.max_steps is not None and step >= config.max_steps:
                break

    model.load_state_dict(best_state)
    model.eval()
    freeze_verified = codec.fingerprint() == codec_fingerprint
    if not freeze_verified:
        raise MeshtokException("Codec parameters changed during predictor training.")

    result = PredictorTrainingResult(model, best_pve, step, codec_fingerprint, freeze_verified, out_dir,
                                     history=history)
    if out_dir is not None:
        result.artifacts = save_model(model, out_dir, extra={
            "val_pve_mm": best_pve,
            "steps": step,
            "epochs_run": len(history),
            "active_losses": list(active),
            "data_fingerprint": dataset.fingerprint,
            "train_config": config.to_dict(),
        })
        result.artifacts.append(os.path.join(out_dir, "train_log.jsonl"))
        result.artifacts.extend(artifacts)
    return result
