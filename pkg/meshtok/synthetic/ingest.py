import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import timeout_decorator
from tqdm import tqdm

from meshtok.errors import InvalidInputException
from meshtok.mesh.mesh_core import JointRegressor, RegisteredMesh, canonicalize, regress_joints, validate_rotation
from meshtok.mesh.mesh_io import read_obj
from meshtok.mesh.topology import MeshTopology
from meshtok.representations import CameraParams
from meshtok.synthetic.dataset import SampleRecord, SyntheticDataset, hash_order, split_of
from meshtok.synthetic.rasterize import rasterize

logger = logging.getLogger(__name__)

PARSE_TIMEOUT = 30


@dataclass
class IngestionReport:
    accepted: List[str] = field(default_factory=list)
    # file name -> diagnostic
    rejected: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {"accepted": self.accepted, "rejected": self.rejected}


def fit_weak_perspective(joints_xy: np.ndarray, joints_2d: np.ndarray) -> CameraParams:
    """Least-squares (s, tx, ty) with s * xy + t ~ joints_2d."""
    count = joints_xy.shape[0]
    design = np.zeros((2 * count, 3))
    design[0::2, 0] = joints_xy[:, 0]
    design[1::2, 0] = joints_xy[:, 1]
    design[0::2, 1] = 1.0
    design[1::2, 2] = 1.0
    solution, *_ = np.linalg.lstsq(design, joints_2d.reshape(-1), rcond=None)
    camera = CameraParams(*(float(value) for value in solution))
    camera.validate()
    return camera


@timeout_decorator.timeout(PARSE_TIMEOUT)
def read_annotated_mesh(stem: str, topology: MeshTopology, regressor: JointRegressor, image_size: int
                        ) -> SampleRecord:
    """Parse ``<stem>.obj`` + ``<stem>.json`` (+ optional ``<stem>.npy`` image) into a record.

    The OBJ holds the oriented mesh; the annotation holds ``rotation`` (9 floats, row-major),
    ``joints_2d`` (J x 2 normalised image coordinates) and optionally ``camera`` [s, tx, ty].
    Inputs are assumed to be pre-cropped and normalised.
    """
    annotation_path = f"{stem}.json"
    if not os.path.isfile(annotation_path):
        raise InvalidInputException("missing annotation file")
    with open(annotation_path, "r") as annotation_file:
        annotation = json.load(annotation_file)
    for key in ("rotation", "joints_2d"):
        if key not in annotation:
            raise InvalidInputException(f"annotation lacks '{key}'")

    vertices, _ = read_obj(f"{stem}.obj")
    if vertices.shape[0] != topology.vertex_count:
        raise InvalidInputException(
            f"vertex count {vertices.shape[0]} does not match the topology's {topology.vertex_count}")
    mesh = RegisteredMesh(topology, vertices)
    rotation = validate_rotation(np.asarray(annotation["rotation"], dtype=np.float64).reshape(3, 3))
    canonical = canonicalize(mesh, rotation)
    joints = regress_joints(canonical, regressor)
    joints_2d = np.asarray(annotation["joints_2d"], dtype=np.float64)
    if joints_2d.shape != (joints.joint_count, 2):
        raise InvalidInputException(f"joints_2d has shape {joints_2d.shape}, expected ({joints.joint_count}, 2)")

    if "camera" in annotation:
        camera = CameraParams.from_array(annotation["camera"])
        camera.validate()
    else:
        camera = fit_weak_perspective((joints.joints @ rotation.T)[:, :2], joints_2d)

    image_path = f"{stem}.npy"
    if os.path.isfile(image_path):
        image = np.load(image_path).astype(np.float32)
    else:
        centred = RegisteredMesh(topology, mesh.vertices - mesh.centroid)
        image = rasterize(centred, camera, image_size).pixels.astype(np.float32)
    record = SampleRecord(0, image, canonical, rotation, camera, joints, joints_2d, name=os.path.basename(stem))
    return record


def ingest_smpl_meshes(directory: str, topology: MeshTopology, regressor: JointRegressor,
                       image_size: int = 64, show_progress: bool = False
                       ) -> Tuple[SyntheticDataset, IngestionReport]:
    """Load user-supplied registered meshes with annotations; bad files are rejected one by one."""
    topology.validate()
    report = IngestionReport()
    records = []
    stems = sorted(file_name[:-len(".obj")] for file_name in os.listdir(directory) if file_name.endswith(".obj"))
    if not stems:
        logger.warning("No OBJ meshes found in %s", directory)

    for stem in tqdm(stems, desc="ingest", unit="mesh", disable=not show_progress):
        try:
            record = read_annotated_mesh(os.path.join(directory, stem), topology, regressor, image_size)
        except timeout_decorator.TimeoutError:
            logger.error("TIMEOUT: %s (>%ss)", stem, PARSE_TIMEOUT)
            report.rejected[stem] = "timed out"
            continue
        except (InvalidInputException, ValueError, OSError) as error:
            logger.error("Rejected %s: %s", stem, error)
            report.rejected[stem] = str(error)
            continue
        record.index = len(records)
        records.append(record)
        report.accepted.append(stem)

    order = hash_order(0, list(range(len(records))))
    for record in records:
        record.split = split_of(order[record.index], len(records))

    dataset = SyntheticDataset(records, topology, regressor, image_size=image_size, source="ingested")
    logger.info("Ingested %d meshes, rejected %d", len(report.accepted), len(report.rejected))
    return dataset, report
