import json
from dataclasses import dataclass
from enum import Enum, unique
from typing import Optional

import numpy as np

from meshtok.data.skeleton import JointLayout
from meshtok.errors import InvalidInputException, TopologyMismatchException
from meshtok.mesh.topology import MeshTopology

ROTATION_TOLERANCE = 1e-5
CENTROID_TOLERANCE = 1e-6


@unique
class CanonicalCentre(Enum):
    CENTROID = 1
    ROOT_JOINT = 2

    @staticmethod
    def from_string(label: str) -> "CanonicalCentre":
        for value in CanonicalCentre:
            if str(value.name).lower() == label.lower():
                return value
        raise ValueError(f"Unknown canonical centre: {label}")


@dataclass
class RegisteredMesh:
    topology: MeshTopology
    vertices: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)

    def validate(self) -> None:
        if self.vertices.shape != (self.topology.vertex_count, 3):
            raise TopologyMismatchException(
                f"Mesh has {self.vertices.shape} vertices, topology expects ({self.topology.vertex_count}, 3)")
        if not np.all(np.isfinite(self.vertices)):
            raise InvalidInputException("Mesh vertices contain non-finite values.")

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


@dataclass
class CanonicalMesh(RegisteredMesh):
    """Registered mesh with the global rotation removed and its centroid at the origin."""

    def validate(self) -> None:
        super().validate()
        if np.linalg.norm(self.centroid) > CENTROID_TOLERANCE:
            raise InvalidInputException("Canonical mesh centroid is not at the origin.")


@dataclass
class JointSet:
    joints: np.ndarray

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)

    @property
    def joint_count(self) -> int:
        return int(self.joints.shape[0])


@dataclass
class JointRegressor:
    matrix: np.ndarray
    layout: JointLayout = JointLayout.CUSTOM

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)

    @property
    def joint_count(self) -> int:
        return int(self.matrix.shape[0])

    def validate(self) -> None:
        if self.matrix.ndim != 2:
            raise InvalidInputException("Joint regressor must be a J x V matrix.")
        if not np.allclose(self.matrix.sum(axis=1), 1.0, atol=1e-6):
            raise InvalidInputException("Every joint regressor row must sum to 1.")

    def write_json(self, out_path: str) -> None:
        with open(out_path, "w") as out:
            json.dump({"layout": self.layout.name.lower(), "matrix": self.matrix.tolist()}, out)

    def write_text(self, out_path: str) -> None:
        with open(out_path, "w") as out:
            out.write(f"# layout: {self.layout.name.lower()}\n")
            np.savetxt(out, self.matrix)

    @classmethod
    def from_file(cls, in_path: str) -> "JointRegressor":
        """Read a regressor from JSON or from a plain-text matrix with a ``# layout:`` header."""
        if in_path.endswith(".json"):
            with open(in_path, "r") as regressor_file:
                payload = json.load(regressor_file)
            regressor = cls(np.asarray(payload["matrix"]), JointLayout.from_string(payload["layout"]))
        else:
            with open(in_path, "r") as regressor_file:
                header = regressor_file.readline().strip()
                if not header.startswith("# layout:"):
                    raise InvalidInputException(f"Missing layout header in {in_path}")
                layout = JointLayout.from_string(header.split(":", 1)[1].strip())
                matrix = np.loadtxt(regressor_file, ndmin=2)
            regressor = cls(matrix, layout)
        regressor.validate()
        return regressor


def validate_rotation(rotation: np.ndarray, tolerance: float = ROTATION_TOLERANCE) -> np.ndarray:
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise InvalidInputException(f"Rotation must be 3x3, got {rotation.shape}")
    if not np.allclose(rotation.T @ rotation, np.eye(3), atol=tolerance):
        raise InvalidInputException("Rotation matrix is not orthonormal.")
    if abs(np.linalg.det(rotation) - 1.0) > tolerance:
        raise InvalidInputException("Rotation matrix must have determinant +1.")
    return rotation


def canonicalize(mesh: RegisteredMesh, root_rotation: np.ndarray,
                 centre: CanonicalCentre = CanonicalCentre.CENTROID,
                 regressor: Optional[JointRegressor] = None, root_joint: int = 0) -> CanonicalMesh:
    """Remove translation and the global rotation: R^-1 (v - c).

    With ``CanonicalCentre.ROOT_JOINT`` the root joint (regressed with ``regressor``) is moved
    to the origin instead of the centroid; the centroid invariant then does not apply.
    """
    mesh.validate()
    rotation = validate_rotation(root_rotation)
    if centre == CanonicalCentre.CENTROID:
        origin = mesh.centroid
    else:
        if regressor is None:
            raise InvalidInputException("Root-joint centring needs a joint regressor.")
        origin = regress_joints(mesh, regressor).joints[root_joint]
    # rows: (R^T x)^T = x^T R
    return CanonicalMesh(mesh.topology, (mesh.vertices - origin) @ rotation)


def apply_orientation(canonical: RegisteredMesh, rotation: np.ndarray) -> RegisteredMesh:
    rotation = validate_rotation(rotation)
    return RegisteredMesh(canonical.topology, canonical.vertices @ rotation.T)


def regress_joints(mesh: RegisteredMesh, regressor: JointRegressor) -> JointSet:
    if regressor.matrix.shape[1] != mesh.vertices.shape[0]:
        raise InvalidInputException(
            f"Regressor expects {regressor.matrix.shape[1]} vertices, mesh has {mesh.vertices.shape[0]}")
    return JointSet(regressor.matrix @ mesh.vertices)
