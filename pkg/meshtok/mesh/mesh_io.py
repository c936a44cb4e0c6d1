from typing import Optional, Tuple

import numpy as np
import trimesh

from meshtok.errors import InvalidInputException

OBJ_DIGITS = 10


def write_obj(out_path: str, vertices: np.ndarray, faces: np.ndarray,
              vertex_colours: Optional[np.ndarray] = None) -> None:
    """Write an ASCII Wavefront OBJ, keeping vertex order untouched."""
    mesh = trimesh.Trimesh(vertices=np.asarray(vertices, dtype=np.float64),
                           faces=np.asarray(faces, dtype=np.int64).reshape(-1, 3),
                           vertex_colors=vertex_colours, process=False)
    mesh.export(file_obj=out_path, file_type="obj", digits=OBJ_DIGITS,
                include_normals=False, include_texture=False)


def read_obj(in_path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Read vertices and triangular faces of an OBJ in file order."""
    loaded = trimesh.load(in_path, file_type="obj", process=False, maintain_order=True)
    if isinstance(loaded, trimesh.Scene):
        if len(loaded.geometry) != 1:
            raise InvalidInputException(f"Expected a single mesh in {in_path}, found {len(loaded.geometry)}")
        loaded = next(iter(loaded.geometry.values()))
    vertices = np.asarray(loaded.vertices, dtype=np.float64)
    faces = np.asarray(getattr(loaded, "faces", np.zeros((0, 3))), dtype=np.int64).reshape(-1, 3)
    return vertices, faces
