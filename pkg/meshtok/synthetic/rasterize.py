import logging
from dataclasses import dataclass

import numpy as np

from meshtok.mesh.mesh_core import RegisteredMesh
from meshtok.representations import CameraParams

logger = logging.getLogger(__name__)

FACE_CHUNK = 256
# nearest surface maps to 1.0, farthest to the floor; background stays 0
FOREGROUND_FLOOR = 0.1
AREA_EPSILON = 1e-12


@dataclass
class RasterImage:
    pixels: np.ndarray
    # nothing of the mesh landed inside the frame
    empty: bool = False


def project_to_pixels(points: np.ndarray, camera: CameraParams, image_size: int) -> np.ndarray:
    """Weak-perspective projection to continuous pixel coordinates (column, row); +v is up."""
    u = camera.scale * points[:, 0] + camera.tx
    v = camera.scale * points[:, 1] + camera.ty
    return np.stack([(u + 1.0) / 2.0 * image_size, (1.0 - v) / 2.0 * image_size], axis=-1)


def rasterize(mesh: RegisteredMesh, camera: CameraParams, image_size: int = 64) -> RasterImage:
    """Orthographic z-buffer over pixel centres. Larger z is closer to the camera."""
    camera.validate()
    vertices = mesh.vertices
    faces = mesh.topology.faces
    screen = project_to_pixels(vertices, camera, image_size)
    depth = vertices[:, 2]

    centres = np.arange(image_size, dtype=np.float64) + 0.5
    px = np.tile(centres, image_size)
    py = np.repeat(centres, image_size)
    zbuffer = np.full(image_size * image_size, -np.inf)

    for start in range(0, len(faces), FACE_CHUNK):
        chunk = faces[start:start + FACE_CHUNK]
        x0, x1, x2 = (screen[chunk[:, k], 0][:, None] for k in range(3))
        y0, y1, y2 = (screen[chunk[:, k], 1][:, None] for k in range(3))
        z0, z1, z2 = (depth[chunk[:, k]][:, None] for k in range(3))

        area = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        valid = np.abs(area) > AREA_EPSILON
        safe_area = np.where(valid, area, 1.0)
        w0 = ((y1 - y2) * (px - x2) + (x2 - x1) * (py - y2)) / safe_area
        w1 = ((y2 - y0) * (px - x2) + (x0 - x2) * (py - y2)) / safe_area
        w2 = 1.0 - w0 - w1
        inside = valid & (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        z = np.where(inside, w0 * z0 + w1 * z1 + w2 * z2, -np.inf)
        zbuffer = np.maximum(zbuffer, z.max(axis=0))

    covered = np.isfinite(zbuffer)
    pixels = np.zeros(image_size * image_size)
    if not covered.any():
        logger.warning("Mesh projects entirely outside the %d x %d frame", image_size, image_size)
        return RasterImage(pixels.reshape(image_size, image_size), empty=True)

    near = zbuffer[covered].max()
    far = zbuffer[covered].min()
    span = near - far
    normalised = np.ones(int(covered.sum())) if span <= 0 else (zbuffer[covered] - far) / span
    pixels[covered] = FOREGROUND_FLOOR + (1.0 - FOREGROUND_FLOOR) * normalised
    return RasterImage(pixels.reshape(image_size, image_size))
