import json
import logging
import os
from typing import Any, Dict, List, Optional, Tuple

import torch

from meshtok.codec.mesh_vqvae import CodecConfig, MeshVQVAE
from meshtok.errors import ConfigurationException, FingerprintMismatchException, InvalidInputException
from meshtok.mesh.topology import MeshTopology
from meshtok.model.vqhps import VQHPS, ModelConfig

logger = logging.getLogger(__name__)

CODEC_WEIGHTS = "codec.pt"
CODEC_MANIFEST = "codec.json"
MODEL_WEIGHTS = "model.pt"
MODEL_MANIFEST = "model.json"
TOPOLOGY_FILE = "topology.json"


def _read_manifest(directory: str, name: str) -> Dict[str, Any]:
    path = os.path.join(directory, name)
    if not os.path.isfile(path):
        raise InvalidInputException(f"No checkpoint manifest {name} in {directory}")
    with open(path, "r") as manifest_file:
        return json.load(manifest_file)


def _load_state(directory: str, name: str) -> Dict[str, torch.Tensor]:
    path = os.path.join(directory, name)
    if not os.path.isfile(path):
        raise InvalidInputException(f"No checkpoint weights {name} in {directory}")
    return torch.load(path, map_location="cpu", weights_only=True)


def save_codec(codec: MeshVQVAE, out_dir: str, data_fingerprint: Optional[str] = None,
               reconstruction_pve: Optional[float] = None, extra: Optional[Dict[str, Any]] = None) -> List[str]:
    """Write weights, the topology hierarchy and a JSON manifest.

    Manifest keys: N, L, S, topology_hash, training_data_fingerprint, reconstruction_pve_mm,
    codec_fingerprint, config, plus anything in ``extra``.
    """
    if not os.path.exists(out_dir):
        os.makedirs(out_dir)
    weights_path = os.path.join(out_dir, CODEC_WEIGHTS)
    topology_path = os.path.join(out_dir, TOPOLOGY_FILE)
    manifest_path = os.path.join(out_dir, CODEC_MANIFEST)

    torch.save(codec.state_dict(), weights_path)
    codec.topology.write_json(topology_path)
    manifest = {
        "N": codec.num_cells,
        "L": codec.latent_dim,
        "S": codec.codebook_size,
        "topology_hash": codec.topology.topology_hash(),
        "training_data_fingerprint": data_fingerprint,
        "reconstruction_pve_mm": reconstruction_pve,
        "codec_fingerprint": codec.fingerprint(),
        "config": codec.config.to_dict(),
    }
    manifest.update(extra or {})
    with open(manifest_path, "w") as out:
        json.dump(manifest, out, indent=2)
    return [weights_path, topology_path, manifest_path]


def load_codec(directory: str) -> Tuple[MeshVQVAE, Dict[str, Any]]:
    manifest = _read_manifest(directory, CODEC_MANIFEST)
    topology = MeshTopology.from_file(os.path.join(directory, TOPOLOGY_FILE))
    if topology.topology_hash() != manifest["topology_hash"]:
        raise ConfigurationException(f"Topology file in {directory} does not match the codec manifest.")
    codec = MeshVQVAE(topology, CodecConfig.from_dict(manifest["config"]))
    codec.load_state_dict(_load_state(directory, CODEC_WEIGHTS))
    codec.freeze()
    if codec.fingerprint() != manifest["codec_fingerprint"]:
        raise FingerprintMismatchException(f"Codec weights in {directory} do not match their manifest.")
    return codec, manifest


def save_model(model: VQHPS, out_dir: str, extra: Optional[Dict[str, Any]] = None) -> List[str]:
    """Write model weights and a manifest {D, N, S, layer counts, codec fingerprint, logit head, image size}."""
    if not os.path.exists(out_dir):
        os.makedirs(out_dir)
    weights_path = os.path.join(out_dir, MODEL_WEIGHTS)
    manifest_path = os.path.join(out_dir, MODEL_MANIFEST)
    torch.save(model.state_dict(), weights_path)
    manifest = model.manifest()
    manifest["config"] = model.config.to_dict()
    manifest.update(extra or {})
    with open(manifest_path, "w") as out:
        json.dump(manifest, out, indent=2)
    return [weights_path, manifest_path]


def load_model(directory: str, codec: Optional[MeshVQVAE] = None) -> Tuple[VQHPS, Dict[str, Any]]:
    manifest = _read_manifest(directory, MODEL_MANIFEST)
    model = VQHPS(ModelConfig.from_dict(manifest["config"]))
    model.load_state_dict(_load_state(directory, MODEL_WEIGHTS))
    model.eval()
    if codec is not None:
        expected = manifest.get("codec_fingerprint")
        if expected is not None and expected != codec.fingerprint():
            raise FingerprintMismatchException(
                f"Model was trained against codec {expected}, got codec {codec.fingerprint()}")
        model.attach_codec(codec)
    return model, manifest
