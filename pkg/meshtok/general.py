import json
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from meshtok.codec.editing import PartAttribution, identify_part_indices, interpolate_latent, swap_body_part
from meshtok.codec.mesh_vqvae import MeshVQVAE
from meshtok.drawing.error_plots import plot_pve_distribution
from meshtok.drawing.mesh_colouring import write_error_mesh, write_part_mesh
from meshtok.errors import InvalidInputException
from meshtok.mesh.mesh_core import CanonicalMesh, RegisteredMesh
from meshtok.mesh.mesh_io import read_obj, write_obj
from meshtok.mesh.metrics import pve
from meshtok.representations import CameraParams, PredictionRepresentation, TokenSequence
from meshtok.synthetic.dataset import DataSplit, SyntheticDataset, build_dataset
from meshtok.synthetic.template import build_desk_template
from meshtok.training.checkpoint import load_codec, load_model
from meshtok.training.codec_trainer import CodecTrainingResult, train_codec
from meshtok.training.config import TrainConfig
from meshtok.training.evaluation import EvaluationReport, MostFrequentTokenPredictor, OraclePredictor, evaluate
from meshtok.training.predictor_trainer import PredictorTrainingResult, train_predictor

logger = logging.getLogger(__name__)


def generate_dataset(count: int, seed: int, out_dir: str, image_size: int = 64,
                     show_progress: bool = False) -> Tuple[SyntheticDataset, List[str]]:
    dataset = build_dataset(build_desk_template(), count, seed, image_size=image_size, show_progress=show_progress)
    return dataset, dataset.write(out_dir)


def train_codec_on_directory(data_dir: str, config: TrainConfig, out_dir: str,
                             show_progress: bool = False) -> CodecTrainingResult:
    return train_codec(config, SyntheticDataset.from_directory(data_dir), out_dir, show_progress)


def train_predictor_on_directory(data_dir: str, codec_dir: str, config: TrainConfig, out_dir: str,
                                 show_progress: bool = False) -> PredictorTrainingResult:
    """Train against a saved codec; an untokenised dataset is tokenised and its annotations updated."""
    codec, _ = load_codec(codec_dir)
    dataset = SyntheticDataset.from_directory(data_dir)
    was_tokenised = dataset.has_tokens
    result = train_predictor(config, dataset, codec, out_dir, show_progress)
    if not was_tokenised:
        dataset.write_annotations(data_dir)
    return result


def evaluate_directories(model_dir: str, codec_dir: str, data_dir: str, report_prefix: str,
                         split: DataSplit = DataSplit.TEST, baselines: bool = True,
                         plot_path: Optional[str] = None) -> Tuple[Dict[str, EvaluationReport], List[str]]:
    """Evaluate a model (plus oracle and most-frequent-token baselines) and write JSON and CSV reports.

    Writes ``<prefix>.json``/``<prefix>.csv`` for the model and ``<prefix>_<method>.*`` for each
    baseline, plus an optional PVE-distribution figure.
    """
    codec, _ = load_codec(codec_dir)
    model, _ = load_model(model_dir, codec)
    dataset = SyntheticDataset.from_directory(data_dir)
    if not dataset.has_tokens or dataset.codec_fingerprint != codec.fingerprint():
        dataset.attach_tokens(codec)
    records = dataset.split(split)

    reports = {"vqhps": evaluate(model, codec, records, dataset.regressor)}
    if baselines and records:
        train_records = dataset.split(DataSplit.TRAIN) or records
        reports["most_frequent_token"] = evaluate(
            MostFrequentTokenPredictor(train_records, codec.codebook_size, model), codec, records, dataset.regressor)
        reports["oracle"] = evaluate(OraclePredictor(), codec, records, dataset.regressor)

    directory = os.path.dirname(os.path.abspath(report_prefix))
    if not os.path.exists(directory):
        os.makedirs(directory)
    artifacts = []
    for method, report in reports.items():
        stem = report_prefix if method == "vqhps" else f"{report_prefix}_{method}"
        report.write_json(f"{stem}.json")
        report.write_csv(f"{stem}.csv")
        artifacts.extend([f"{stem}.json", f"{stem}.csv"])
    if plot_path is not None and records:
        plot_pve_distribution({method: report.pve_values() for method, report in reports.items()}, plot_path)
        artifacts.append(plot_path)
    return reports, artifacts


def read_canonical_obj(mesh_path: str, codec: MeshVQVAE) -> CanonicalMesh:
    """Read a registered OBJ and move its centroid to the origin (no rotation is removed)."""
    vertices, _ = read_obj(mesh_path)
    if vertices.shape[0] != codec.topology.vertex_count:
        raise InvalidInputException(
            f"{mesh_path} has {vertices.shape[0]} vertices, codec topology has {codec.topology.vertex_count}")
    return CanonicalMesh(codec.topology, vertices - vertices.mean(axis=0))


def read_tokens(path: str, codec: MeshVQVAE) -> np.ndarray:
    """Tokens from a token file, or by encoding an OBJ."""
    if path.endswith(".obj"):
        return codec.tokenize_mesh(read_canonical_obj(path, codec))
    sequence = TokenSequence.from_file(path)
    sequence.check_codec(codec)
    return sequence.as_array()


def encode_mesh_file(mesh_path: str, codec_dir: str, out_path: str) -> TokenSequence:
    codec, _ = load_codec(codec_dir)
    tokens = codec.tokenize_mesh(read_canonical_obj(mesh_path, codec))
    sequence = TokenSequence(tokens, codec.codebook_size, codec.fingerprint())
    sequence.write_json(out_path)
    return sequence


def decode_token_file(token_path: str, codec_dir: str, out_path: str) -> CanonicalMesh:
    codec, _ = load_codec(codec_dir)
    mesh = codec.decode_to_mesh(read_tokens(token_path, codec))
    write_obj(out_path, mesh.vertices, codec.topology.faces)
    return mesh


def swap_parts(a_path: str, b_path: str, indices: Sequence[int], codec_dir: str, out_path: str,
               error_mesh_path: Optional[str] = None) -> np.ndarray:
    """Decode ``a`` with the cells in ``indices`` taken from ``b``; optionally colour the change."""
    codec, _ = load_codec(codec_dir)
    tokens_a = read_tokens(a_path, codec)
    swapped = swap_body_part(tokens_a, read_tokens(b_path, codec), indices)
    mesh = codec.decode_to_mesh(swapped)
    write_obj(out_path, mesh.vertices, codec.topology.faces)
    if error_mesh_path is not None:
        write_error_mesh(error_mesh_path, mesh, codec.decode_to_mesh(tokens_a))
    return swapped


def interpolate_mesh_files(a_path: str, b_path: str, codec_dir: str, out_dir: str,
                           frames: Optional[int] = None, t: Optional[float] = None) -> List[str]:
    """Decode quantized blends of two meshes' continuous latents.

    Either ``frames`` evenly spaced weights from 0 to 1 (endpoints included) or a single ``t``.
    """
    if (frames is None) == (t is None):
        raise InvalidInputException("Give exactly one of frames or t.")
    if frames is not None and frames < 1:
        raise InvalidInputException(f"Frame count must be positive, got {frames}")
    codec, _ = load_codec(codec_dir)
    latent_a = codec.encode_mesh(read_canonical_obj(a_path, codec))
    latent_b = codec.encode_mesh(read_canonical_obj(b_path, codec))
    weights = [t] if t is not None else (np.linspace(0.0, 1.0, frames).tolist() if frames > 1 else [0.0])

    if not os.path.exists(out_dir):
        os.makedirs(out_dir)
    paths = []
    for frame, weight in enumerate(weights):
        mesh = interpolate_latent(codec, latent_a, latent_b, float(weight))
        path = os.path.join(out_dir, f"frame_{frame:03d}.obj")
        write_obj(path, mesh.vertices, codec.topology.faces)
        paths.append(path)
    return paths


def attribute_parts(codec_dir: str, out_dir: str, probe_count: int = 8,
                    seed: int = 0) -> Tuple[PartAttribution, List[str]]:
    """Attribute latent cells to labelled body parts; write the map and a part-coloured mesh."""
    codec, _ = load_codec(codec_dir)
    attribution = identify_part_indices(codec, codec.topology, probe_count=probe_count, seed=seed)
    if not os.path.exists(out_dir):
        os.makedirs(out_dir)
    map_path = os.path.join(out_dir, "part_indices.json")
    with open(map_path, "w") as out:
        json.dump(attribution.to_dict(), out, indent=2)
    usage = codec.codebook.usage_counts
    reference = torch.full((codec.num_cells,), int(torch.argmax(usage)), dtype=torch.long)
    mesh_path = os.path.join(out_dir, "part_attribution.obj")
    write_part_mesh(mesh_path, codec.decode_to_mesh(reference.numpy()), attribution.cell_to_part)
    return attribution, [map_path, mesh_path]


def predict_image(model_dir: str, codec_dir: str, image_path: str, out_dir: str,
                  name: str = "prediction") -> Tuple[PredictionRepresentation, List[str]]:
    codec, _ = load_codec(codec_dir)
    model, _ = load_model(model_dir, codec)
    image = torch.as_tensor(np.load(image_path), dtype=torch.float32)
    if image.dim() == 2:
        image = image.unsqueeze(0)
    output = model.predict(image.unsqueeze(0))
    representation = PredictionRepresentation(
        tokens=output.tokens[0].tolist(),
        rotation=output.rotation[0].double().numpy(),
        camera=CameraParams.from_array(output.camera[0].tolist()),
        vertices=output.vertices[0].double().numpy(),
        faces=codec.topology.faces,
    )
    return representation, representation.write(out_dir, name)


def codec_round_trip_pve(mesh_path: str, codec_dir: str) -> float:
    """PVE (mm) between a canonicalised OBJ and its encode-quantize-decode reconstruction."""
    codec, _ = load_codec(codec_dir)
    mesh = read_canonical_obj(mesh_path, codec)
    reconstruction = codec.decode_to_mesh(codec.tokenize_mesh(mesh))
    return pve(RegisteredMesh(codec.topology, reconstruction.vertices), mesh)
