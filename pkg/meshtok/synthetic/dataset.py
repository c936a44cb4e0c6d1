import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum, unique
from typing import Dict, List, Optional

import numpy as np
import torch
from scipy.spatial.transform import Rotation
from tqdm import tqdm

from meshtok.errors import InvalidInputException, TopologyMismatchException
from meshtok.hashing import array_fingerprint
from meshtok.mesh.mesh_core import CanonicalMesh, JointRegressor, JointSet, apply_orientation, regress_joints
from meshtok.mesh.mesh_io import read_obj, write_obj
from meshtok.mesh.topology import MeshTopology
from meshtok.representations import CameraParams
from meshtok.synthetic.rasterize import rasterize
from meshtok.synthetic.template import ArticulatedTemplate, sample_pose_angles, sample_shape

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TOPOLOGY_NAME = "topology.json"
REGRESSOR_NAME = "regressor.json"

TRAIN_FRACTION = 0.8
VAL_FRACTION = 0.1

YAW_LIMIT = 180.0
TILT_LIMIT = 15.0
SCALE_RANGE = (0.75, 0.95)
TRANSLATION_LIMIT = 0.1
TOKENIZE_BATCH = 256


@unique
class DataSplit(Enum):
    TRAIN = 1
    VAL = 2
    TEST = 3

    @staticmethod
    def from_string(label: str) -> "DataSplit":
        for value in DataSplit:
            if str(value.name).lower() == label.lower():
                return value
        raise ValueError(f"Unknown data split: {label}")


@dataclass
class SampleRecord:
    """One image with its ground truth. 3D joints are in the canonical frame; 2D joints in
    normalised image units ([-1, 1] per axis, +y up)."""
    index: int
    image: np.ndarray
    gt_canonical: CanonicalMesh
    gt_rotation: np.ndarray
    gt_camera: CameraParams
    gt_joints_3d: JointSet
    gt_joints_2d: np.ndarray
    split: DataSplit = DataSplit.TRAIN
    gt_tokens: Optional[np.ndarray] = None
    name: Optional[str] = None

    @property
    def joints_camera_frame(self) -> np.ndarray:
        return self.gt_joints_3d.joints @ self.gt_rotation.T

    @property
    def record_name(self) -> str:
        return self.name if self.name is not None else f"{self.index:06d}"

    def annotation(self) -> Dict:
        return {
            "index": self.index,
            "split": self.split.name.lower(),
            "rotation": self.gt_rotation.reshape(-1).tolist(),
            "camera": self.gt_camera.as_array().tolist(),
            "joints_3d": self.gt_joints_3d.joints.tolist(),
            "joints_2d": np.asarray(self.gt_joints_2d).tolist(),
            "tokens": None if self.gt_tokens is None else [int(t) for t in self.gt_tokens],
        }


def split_of(rank: int, count: int) -> DataSplit:
    """80/10/10 split by hash rank."""
    if rank < int(round(TRAIN_FRACTION * count)):
        return DataSplit.TRAIN
    if rank < int(round((TRAIN_FRACTION + VAL_FRACTION) * count)):
        return DataSplit.VAL
    return DataSplit.TEST


def hash_order(seed: int, indices: List[int]) -> Dict[int, int]:
    """Rank of each record index when sorted by sha1("<seed>:<index>")."""
    keyed = sorted(indices, key=lambda i: hashlib.sha1(f"{seed}:{i}".encode()).hexdigest())
    return {index: rank for rank, index in enumerate(keyed)}


def sample_global_rotation(rng: np.random.Generator) -> np.ndarray:
    yaw = rng.uniform(-YAW_LIMIT, YAW_LIMIT)
    pitch, roll = rng.uniform(-TILT_LIMIT, TILT_LIMIT, size=2)
    return Rotation.from_euler("yxz", [yaw, pitch, roll], degrees=True).as_matrix()


def sample_camera(rng: np.random.Generator) -> CameraParams:
    scale = rng.uniform(*SCALE_RANGE)
    tx, ty = rng.uniform(-TRANSLATION_LIMIT, TRANSLATION_LIMIT, size=2)
    return CameraParams(float(scale), float(tx), float(ty))


def make_record(template: ArticulatedTemplate, seed: int, index: int, image_size: int = 64,
                pose_scale: float = 1.0) -> SampleRecord:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    pose_seed, shape_seed = (int(value) for value in rng.integers(0, 2 ** 31 - 1, size=2))
    rotation = sample_global_rotation(rng)
    camera = sample_camera(rng)

    posed, _ = template.pose(sample_pose_angles(template, pose_seed, pose_scale), sample_shape(template, shape_seed))
    canonical = CanonicalMesh(template.topology, posed.vertices - posed.centroid)
    joints = regress_joints(canonical, template.regressor)
    oriented = apply_orientation(canonical, rotation)
    joints_2d = camera.scale * (joints.joints @ rotation.T)[:, :2] + np.array([camera.tx, camera.ty])
    image = rasterize(oriented, camera, image_size).pixels.astype(np.float32)
    return SampleRecord(index, image, canonical, rotation, camera, joints, joints_2d)


@dataclass
class SyntheticDataset:
    records: List[SampleRecord]
    topology: MeshTopology
    regressor: JointRegressor
    seed: Optional[int] = None
    image_size: int = 64
    template_hash: Optional[str] = None
    codec_fingerprint: Optional[str] = None
    fingerprint: Optional[str] = None
    source: str = "synthetic"
    extra: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.fingerprint is None:
            self.fingerprint = self.compute_fingerprint()

    def __len__(self) -> int:
        return len(self.records)

    @property
    def has_tokens(self) -> bool:
        return bool(self.records) and all(record.gt_tokens is not None for record in self.records)

    def split(self, split: DataSplit) -> List[SampleRecord]:
        return [record for record in self.records if record.split == split]

    def split_sizes(self) -> Dict[str, int]:
        return {split.name.lower(): len(self.split(split)) for split in DataSplit}

    def compute_fingerprint(self) -> str:
        arrays = []
        for record in self.records:
            arrays.extend([record.image, record.gt_canonical.vertices, record.gt_rotation,
                           record.gt_camera.as_array(), record.gt_joints_2d])
        return array_fingerprint(arrays, metadata={"count": len(self.records), "image_size": self.image_size})

    def manifest(self) -> Dict:
        return {
            "seed": self.seed,
            "count": len(self.records),
            "image_size": self.image_size,
            "template_hash": self.template_hash,
            "topology_hash": self.topology.topology_hash(),
            "codec_fingerprint": self.codec_fingerprint,
            "fingerprint": self.fingerprint,
            "source": self.source,
            "splits": self.split_sizes(),
        }

    @torch.no_grad()
    def attach_tokens(self, codec) -> "SyntheticDataset":
        """Fill every record's ground-truth tokens with the codec's quantized encoding."""
        if codec.topology.vertex_count != self.topology.vertex_count:
            raise TopologyMismatchException("Codec and dataset use different mesh topologies.")
        dtype = codec.codebook.entries.dtype
        for start in range(0, len(self.records), TOKENIZE_BATCH):
            batch = self.records[start:start + TOKENIZE_BATCH]
            vertices = torch.as_tensor(np.stack([record.gt_canonical.vertices for record in batch]), dtype=dtype)
            tokens = codec.codebook.nearest(codec.encode(vertices)).cpu().numpy()
            for record, record_tokens in zip(batch, tokens):
                record.gt_tokens = record_tokens.astype(np.int64)
        self.codec_fingerprint = codec.fingerprint()
        logger.info("Tokenised %d records with codec %s", len(self.records), self.codec_fingerprint)
        return self

    def write(self, out_dir: str) -> List[str]:
        """One directory per split with ``<name>.obj``, ``<name>.json`` and ``<name>.npy`` per record."""
        if not os.path.exists(out_dir):
            os.makedirs(out_dir)
        faces = self.topology.faces
        for split in DataSplit:
            split_dir = os.path.join(out_dir, split.name.lower())
            if not os.path.exists(split_dir):
                os.mkdir(split_dir)
        for record in self.records:
            stem = os.path.join(out_dir, record.split.name.lower(), record.record_name)
            write_obj(f"{stem}.obj", record.gt_canonical.vertices, faces)
            np.save(f"{stem}.npy", record.image)

        topology_path = os.path.join(out_dir, TOPOLOGY_NAME)
        regressor_path = os.path.join(out_dir, REGRESSOR_NAME)
        self.topology.write_json(topology_path)
        self.regressor.write_json(regressor_path)
        return self.write_annotations(out_dir) + [topology_path, regressor_path]

    def write_annotations(self, out_dir: str) -> List[str]:
        """Rewrite every record's JSON annotation and the manifest, e.g. after attaching tokens."""
        for record in self.records:
            stem = os.path.join(out_dir, record.split.name.lower(), record.record_name)
            with open(f"{stem}.json", "w") as out:
                json.dump(record.annotation(), out)
        manifest_path = os.path.join(out_dir, MANIFEST_NAME)
        with open(manifest_path, "w") as out:
            json.dump(self.manifest(), out, indent=2, sort_keys=True)
        return [manifest_path]

    @classmethod
    def from_directory(cls, in_dir: str) -> "SyntheticDataset":
        manifest_path = os.path.join(in_dir, MANIFEST_NAME)
        if not os.path.isfile(manifest_path):
            raise InvalidInputException(f"No dataset manifest found in {in_dir}")
        with open(manifest_path, "r") as manifest_file:
            manifest = json.load(manifest_file)
        topology = MeshTopology.from_file(os.path.join(in_dir, TOPOLOGY_NAME))
        regressor = JointRegressor.from_file(os.path.join(in_dir, REGRESSOR_NAME))

        records = []
        for split in DataSplit:
            split_dir = os.path.join(in_dir, split.name.lower())
            if not os.path.isdir(split_dir):
                continue
            for file_name in sorted(os.listdir(split_dir)):
                if not file_name.endswith(".json"):
                    continue
                stem = os.path.join(split_dir, file_name[:-len(".json")])
                records.append(_read_record(stem, topology, split))
        records.sort(key=lambda record: record.index)

        return cls(records, topology, regressor, seed=manifest.get("seed"), image_size=manifest["image_size"],
                   template_hash=manifest.get("template_hash"), codec_fingerprint=manifest.get("codec_fingerprint"),
                   fingerprint=manifest.get("fingerprint"), source=manifest.get("source", "synthetic"))


def _read_record(stem: str, topology: MeshTopology, split: DataSplit) -> SampleRecord:
    with open(f"{stem}.json", "r") as annotation_file:
        annotation = json.load(annotation_file)
    vertices, _ = read_obj(f"{stem}.obj")
    if vertices.shape[0] != topology.vertex_count:
        raise TopologyMismatchException(f"{stem}.obj has {vertices.shape[0]} vertices, expected {topology.vertex_count}")
    tokens = annotation.get("tokens")
    return SampleRecord(
        index=int(annotation["index"]),
        image=np.load(f"{stem}.npy"),
        gt_canonical=CanonicalMesh(topology, vertices),
        gt_rotation=np.asarray(annotation["rotation"], dtype=np.float64).reshape(3, 3),
        gt_camera=CameraParams.from_array(annotation["camera"]),
        gt_joints_3d=JointSet(annotation["joints_3d"]),
        gt_joints_2d=np.asarray(annotation["joints_2d"], dtype=np.float64),
        split=split,
        gt_tokens=None if tokens is None else np.asarray(tokens, dtype=np.int64),
        name=os.path.basename(stem),
    )


def build_dataset(template: ArticulatedTemplate, count: int, seed: int, codec=None, image_size: int = 64,
                  pose_scale: float = 1.0, show_progress: bool = False) -> SyntheticDataset:
    """Render ``count`` posed, rotated and projected template samples; reproducible in ``seed``."""
    if count < 1:
        raise InvalidInputException(f"Dataset needs at least one record, got count={count}")
    order = hash_order(seed, list(range(count)))
    records = []
    for index in tqdm(range(count), desc="records", unit="record", disable=not show_progress):
        record = make_record(template, seed, index, image_size, pose_scale)
        record.split = split_of(order[index], count)
        records.append(record)

    dataset = SyntheticDataset(records, template.topology, template.regressor, seed=seed, image_size=image_size,
                               template_hash=template.template_hash())
    logger.info("Built %d records (%s), fingerprint %s", count, dataset.split_sizes(), dataset.fingerprint)
    if codec is not None:
        dataset.attach_tokens(codec)
    return dataset
