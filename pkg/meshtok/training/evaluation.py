import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from meshtok.codec.mesh_vqvae import MeshVQVAE
from meshtok.mesh.mesh_core import JointRegressor, RegisteredMesh, regress_joints
from meshtok.mesh.metrics import mpjpe, pa_mpjpe, pve
from meshtok.synthetic.dataset import SampleRecord

logger = logging.getLogger(__name__)

EVAL_BATCH = 64
METRIC_COLUMNS = ["name", "pve_mm", "mpjpe_mm", "pa_mpjpe_mm", "token_accuracy"]


def images_tensor(records: Sequence[SampleRecord]) -> torch.Tensor:
    return torch.as_tensor(np.stack([record.image for record in records]), dtype=torch.float32).unsqueeze(1)


class ModelPredictor:
    name = "vqhps"

    def __init__(self, model) -> None:
        self.model = model

    def predict(self, records: Sequence[SampleRecord]) -> Tuple[np.ndarray, np.ndarray]:
        output = self.model.predict(images_tensor(records))
        return output.tokens.cpu().numpy(), output.rotation.double().cpu().numpy()


class OraclePredictor:
    """Ground-truth tokens and rotation: the codec's quantization floor."""
    name = "oracle"

    def predict(self, records: Sequence[SampleRecord]) -> Tuple[np.ndarray, np.ndarray]:
        return (np.stack([record.gt_tokens for record in records]),
                np.stack([record.gt_rotation for record in records]))


class MostFrequentTokenPredictor:
    """The most frequent training token of every cell, oriented by a model's predicted rotation."""
    name = "most_frequent_token"

    def __init__(self, train_records: Sequence[SampleRecord], codebook_size: int, model=None) -> None:
        tokens = np.stack([record.gt_tokens for record in train_records])
        counts = np.stack([np.bincount(column, minlength=codebook_size) for column in tokens.T])
        # argmax takes the lowest index on ties
        self.tokens = np.argmax(counts, axis=1)
        self.model = model

    def predict(self, records: Sequence[SampleRecord]) -> Tuple[np.ndarray, np.ndarray]:
        tokens = np.repeat(self.tokens[None, :], len(records), axis=0)
        if self.model is None:
            rotations = np.repeat(np.eye(3)[None], len(records), axis=0)
        else:
            rotations = self.model.predict(images_tensor(records)).rotation.double().cpu().numpy()
        return tokens, rotations


@dataclass
class SampleMetrics:
    name: str
    pve_mm: float
    mpjpe_mm: float
    pa_mpjpe_mm: float
    token_accuracy: Optional[float] = None

    def to_dict(self) -> Dict:
        return {column: getattr(self, column) for column in METRIC_COLUMNS}


@dataclass
class EvaluationReport:
    method: str
    samples: List[SampleMetrics] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.samples)

    def _mean(self, attribute: str) -> Optional[float]:
        values = [getattr(sample, attribute) for sample in self.samples if getattr(sample, attribute) is not None]
        return float(np.mean(values)) if values else None

    def summary(self) -> Dict:
        return {
            "method": self.method,
            "count": self.count,
            "pve_mm": self._mean("pve_mm"),
            "mpjpe_mm": self._mean("mpjpe_mm"),
            "pa_mpjpe_mm": self._mean("pa_mpjpe_mm"),
            "token_accuracy": self._mean("token_accuracy"),
            "median_pve_mm": float(np.median([s.pve_mm for s in self.samples])) if self.samples else None,
        }

    def pve_values(self) -> np.ndarray:
        return np.array([sample.pve_mm for sample in self.samples])

    def write_json(self, out_path: str) -> None:
        with open(out_path, "w") as out:
            json.dump({"summary": self.summary(), "samples": [s.to_dict() for s in self.samples]}, out, indent=2)

    def write_csv(self, out_path: str) -> None:
        with open(out_path, "w", newline="") as out:
            writer = csv.DictWriter(out, fieldnames=METRIC_COLUMNS)
            writer.writeheader()
            for sample in self.samples:
                writer.writerow(sample.to_dict())


@torch.no_grad()
def evaluate(predictor, codec: MeshVQVAE, records: Sequence[SampleRecord], regressor: JointRegressor,
             batch_size: int = EVAL_BATCH) -> EvaluationReport:
    """PVE, MPJPE, PA-MPJPE (mm) and token accuracy of a predictor on a list of records.

    ``predictor`` is any object with a ``name`` and a ``predict(records)`` method returning
    (tokens (B, N), rotations (B, 3, 3)); a model with a ``predict`` method is wrapped.
    """
    if not hasattr(predictor, "name"):
        predictor = ModelPredictor(predictor)
    report = EvaluationReport(predictor.name)
    if not records:
        logger.warning("Evaluating %s on an empty split", predictor.name)
        return report

    topology = codec.topology
    for start in range(0, len(records), batch_size):
        batch = list(records[start:start + batch_size])
        tokens, rotations = predictor.predict(batch)
        canonical = codec.decode_tokens(torch.as_tensor(tokens, dtype=torch.long)).double().cpu().numpy()
        for record, sample_tokens, rotation, vertices in zip(batch, tokens, rotations, canonical):
            predicted = RegisteredMesh(topology, vertices @ np.asarray(rotation).T)
            truth = RegisteredMesh(topology, record.gt_canonical.vertices @ record.gt_rotation.T)
            predicted_joints = regress_joints(predicted, regressor)
            true_joints = regress_joints(truth, regressor)
            accuracy = None
            if record.gt_tokens is not None:
                accuracy = float(np.mean(np.asarray(sample_tokens) == record.gt_tokens))
            report.samples.append(SampleMetrics(
                name=record.record_name,
                pve_mm=pve(predicted, truth),
                mpjpe_mm=mpjpe(predicted_joints, true_joints),
                pa_mpjpe_mm=pa_mpjpe(predicted_joints, true_joints),
                token_accuracy=accuracy,
            ))
    logger.info("Evaluated %s on %d samples: %s", predictor.name, report.count, report.summary())
    return report
