from typing import Dict, List, Optional, Sequence

import numpy as np
from matplotlib import colormaps
from matplotlib.colors import to_rgba

from meshtok.drawing.colours import ERROR_COLOUR_MAP, PART_COLOURS
from meshtok.errors import InvalidInputException
from meshtok.mesh.mesh_core import RegisteredMesh
from meshtok.mesh.mesh_io import write_obj


def error_colours(mesh: RegisteredMesh, reference: RegisteredMesh, max_error: Optional[float] = None) -> np.ndarray:
    """(V, 4) uint8 RGBA colours of the per-vertex distance to ``reference``."""
    if mesh.vertices.shape != reference.vertices.shape:
        raise InvalidInputException("Error colouring needs two meshes on the same topology.")
    distances = np.linalg.norm(mesh.vertices - reference.vertices, axis=1)
    scale = max_error if max_error is not None else distances.max()
    normalised = distances / scale if scale > 0 else np.zeros_like(distances)
    rgba = colormaps[ERROR_COLOUR_MAP](np.clip(normalised, 0.0, 1.0))
    return (rgba * 255).round().astype(np.uint8)


def part_colours(part_labels: Sequence[str]) -> np.ndarray:
    rgba = [to_rgba(PART_COLOURS.get(label, PART_COLOURS["UNKNOWN"])) for label in part_labels]
    return (np.asarray(rgba) * 255).round().astype(np.uint8)


def cell_part_colours(vertex_cells: np.ndarray, cell_to_part: List[str]) -> np.ndarray:
    """Colour each vertex by the part its latent cell was attributed to."""
    return part_colours([cell_to_part[int(cell)] for cell in vertex_cells])


def vertex_cells(topology) -> np.ndarray:
    """Coarsest-level cell of every full-resolution vertex."""
    cells = np.arange(topology.vertex_count)
    for level_map in topology.level_maps:
        cells = level_map.assignment[cells]
    return cells


def write_error_mesh(out_path: str, mesh: RegisteredMesh, reference: RegisteredMesh,
                     max_error: Optional[float] = None) -> None:
    write_obj(out_path, mesh.vertices, mesh.topology.faces, vertex_colours=error_colours(mesh, reference, max_error))


def write_part_mesh(out_path: str, mesh: RegisteredMesh, cell_to_part: Optional[List[str]] = None) -> Dict[str, str]:
    """Write a part-coloured OBJ; with ``cell_to_part`` parts come from latent-cell attribution,
    otherwise from the topology's vertex labels. Returns the colour legend."""
    if cell_to_part is not None:
        colours = cell_part_colours(vertex_cells(mesh.topology), cell_to_part)
        names = set(cell_to_part)
    else:
        if mesh.topology.part_labels is None:
            raise InvalidInputException("Mesh topology carries no part labels.")
        colours = part_colours(mesh.topology.part_labels)
        names = set(mesh.topology.part_labels)
    write_obj(out_path, mesh.vertices, mesh.topology.faces, vertex_colours=colours)
    return {name: PART_COLOURS.get(name, PART_COLOURS["UNKNOWN"]) for name in sorted(names)}
