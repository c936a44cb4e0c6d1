import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from meshtok.errors import FingerprintMismatchException, InvalidInputException
from meshtok.mesh.mesh_io import write_obj

TOKEN_FORMAT = "meshtok-tokens/1"


@dataclass
class CameraParams:
    """Weak-perspective camera: scale s and 2D translation t, in normalised image units."""
    scale: float
    tx: float = 0.0
    ty: float = 0.0

    def validate(self) -> None:
        if not np.isfinite([self.scale, self.tx, self.ty]).all():
            raise InvalidInputException("Camera parameters must be finite.")
        if self.scale <= 0:
            raise InvalidInputException(f"Camera scale must be positive, got {self.scale}")

    def as_array(self) -> np.ndarray:
        return np.array([self.scale, self.tx, self.ty], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "CameraParams":
        s, tx, ty = (float(value) for value in values)
        return cls(s, tx, ty)


@dataclass
class TokenSequence:
    """N codebook indices, 0-based, with the codec they belong to."""
    indices: List[int]
    codebook_size: int
    codec_fingerprint: Optional[str] = None

    def __post_init__(self):
        self.indices = [int(index) for index in np.asarray(self.indices).reshape(-1)]

    @property
    def length(self) -> int:
        return len(self.indices)

    def validate(self) -> None:
        for index in self.indices:
            if index < 0 or index >= self.codebook_size:
                raise InvalidInputException(f"Token {index} outside [0, {self.codebook_size - 1}]")

    def check_codec(self, codec) -> None:
        if self.length != codec.num_cells or self.codebook_size != codec.codebook_size:
            raise InvalidInputException(
                f"Token file has N={self.length}, S={self.codebook_size}; "
                f"codec has N={codec.num_cells}, S={codec.codebook_size}")
        if self.codec_fingerprint is not None and self.codec_fingerprint != codec.fingerprint():
            raise FingerprintMismatchException(
                f"Tokens were produced by codec {self.codec_fingerprint}, not {codec.fingerprint()}")
        self.validate()

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)

    def write_json(self, out_path: str) -> None:
        header = {"N": self.length, "S": self.codebook_size, "codec_fingerprint": self.codec_fingerprint}
        with open(out_path, "w") as out:
            json.dump({"format": TOKEN_FORMAT, "header": header, "tokens": self.indices}, out)

    @classmethod
    def from_file(cls, in_path: str) -> "TokenSequence":
        with open(in_path, "r") as token_file:
            payload = json.load(token_file)
        try:
            header = payload["header"]
            sequence = cls(payload["tokens"], int(header["S"]), header.get("codec_fingerprint"))
            declared = int(header["N"])
        except (KeyError, TypeError) as error:
            raise InvalidInputException(f"Malformed token file {in_path}: {error}") from error
        if sequence.length != declared:
            raise InvalidInputException(f"Token file {in_path} declares N={declared}, holds {sequence.length}")
        sequence.validate()
        return sequence


@dataclass
class PredictionRepresentation:
    tokens: List[int]
    rotation: np.ndarray
    camera: CameraParams
    vertices: np.ndarray
    faces: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tokens": [int(token) for token in self.tokens],
            "rotation": [float(value) for value in np.asarray(self.rotation).reshape(-1)],
            "camera": [float(value) for value in self.camera.as_array()],
        }

    def write(self, out_dir: str, name: str) -> List[str]:
        """Write ``<name>.obj`` (oriented mesh) and ``<name>.json`` (tokens, rotation row-major, [s, tx, ty])."""
        if not os.path.exists(out_dir):
            os.makedirs(out_dir)
        mesh_path = os.path.join(out_dir, f"{name}.obj")
        json_path = os.path.join(out_dir, f"{name}.json")
        write_obj(mesh_path, self.vertices, self.faces)
        with open(json_path, "w") as out:
            json.dump(self.to_dict(), out, indent=2)
        return [mesh_path, json_path]


@dataclass
class CommandResult:
    exit_code: int
    artifacts: List[str] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.exit_code == 0

    def to_json(self) -> str:
        return json.dumps({"exit_code": self.exit_code, "artifacts": self.artifacts, "summary": self.summary})
