import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from meshtok.data.skeleton import DESK_ANGLE_LIMITS, DESK_BONE_TO_PART, DESK_BONES, JointLayout
from meshtok.errors import ConfigurationException, InvalidInputException
from meshtok.hashing import array_fingerprint
from meshtok.mesh.mesh_core import JointRegressor, RegisteredMesh
from meshtok.mesh.topology import MeshTopology, coarsen_neighborhoods, neighborhoods_from_faces, uniform_pooling_map

logger = logging.getLogger(__name__)

RINGS_PER_BONE = 8
VERTICES_PER_RING = 8
VERTICES_PER_BONE = RINGS_PER_BONE * VERTICES_PER_RING

GIRTH_SCALE = 0.25
STATURE_SCALE = 0.08


@dataclass
class ArticulatedTemplate:
    """Rest mesh with a kinematic tree, skinning weights and linear shape axes.

    parents: (B,) parent bone per bone, -1 for the root
    joints: (B, 3) rest joint positions
    skinning_weights: (V, B) convex weights
    shape_axes: (A, V, 3) per-vertex displacement bases
    joint_shape_axes: (A, B, 3) displacement of each joint along the same axes
    angle_limits: (B, 3, 2) xyz euler limits in degrees
    """
    rest_mesh: RegisteredMesh
    parents: np.ndarray
    joints: np.ndarray
    skinning_weights: np.ndarray
    shape_axes: np.ndarray
    joint_shape_axes: np.ndarray
    angle_limits: np.ndarray
    bone_names: List[str]
    regressor: Optional[JointRegressor] = None

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.joints = np.asarray(self.joints, dtype=np.float64)
        self.skinning_weights = np.asarray(self.skinning_weights, dtype=np.float64)
        self.shape_axes = np.asarray(self.shape_axes, dtype=np.float64)
        self.joint_shape_axes = np.asarray(self.joint_shape_axes, dtype=np.float64)
        self.angle_limits = np.asarray(self.angle_limits, dtype=np.float64)

    @property
    def topology(self) -> MeshTopology:
        return self.rest_mesh.topology

    @property
    def bone_count(self) -> int:
        return int(self.parents.shape[0])

    @property
    def shape_count(self) -> int:
        return int(self.shape_axes.shape[0])

    def validate(self) -> None:
        self.rest_mesh.validate()
        vertex_count = self.topology.vertex_count
        if self.skinning_weights.shape != (vertex_count, self.bone_count):
            raise ConfigurationException("Skinning weights must be a V x B matrix.")
        if not np.allclose(self.skinning_weights.sum(axis=1), 1.0, atol=1e-6):
            raise ConfigurationException("Skinning weights must sum to 1 for every vertex.")
        if np.any(self.skinning_weights < 0):
            raise ConfigurationException("Skinning weights must be non-negative.")

        roots = np.flatnonzero(self.parents < 0)
        if len(roots) != 1:
            raise ConfigurationException(f"Skeleton must have exactly one root, found {len(roots)}")
        # parents precede their children, so the B - 1 parent links form a tree
        for bone, parent in enumerate(self.parents):
            if bone != roots[0] and not 0 <= parent < bone:
                raise ConfigurationException(f"Bone {bone} has parent {parent}; parents must come first.")

        if self.shape_axes.shape[1:] != (vertex_count, 3):
            raise ConfigurationException("Shape axes must be A x V x 3.")
        if self.joint_shape_axes.shape != (self.shape_count, self.bone_count, 3):
            raise ConfigurationException("Joint shape axes must be A x B x 3.")
        if self.angle_limits.shape != (self.bone_count, 3, 2):
            raise ConfigurationException("Angle limits must be B x 3 x 2.")

    def clamp_angles(self, angles: np.ndarray) -> np.ndarray:
        angles = np.asarray(angles, dtype=np.float64).reshape(self.bone_count, 3)
        return np.clip(angles, self.angle_limits[..., 0], self.angle_limits[..., 1])

    def local_rotations(self, angles: np.ndarray) -> np.ndarray:
        """(B, 3, 3) rotations from clamped xyz euler angles in degrees."""
        return Rotation.from_euler("xyz", self.clamp_angles(angles), degrees=True).as_matrix()

    def world_rotations(self, local_rotations: np.ndarray) -> np.ndarray:
        world = np.empty_like(local_rotations)
        for bone, parent in enumerate(self.parents):
            world[bone] = local_rotations[bone] if parent < 0 else world[parent] @ local_rotations[bone]
        return world

    def shaped(self, shape: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        vertices = self.rest_mesh.vertices
        joints = self.joints
        if shape is None:
            return vertices, joints
        shape = np.asarray(shape, dtype=np.float64)
        if shape.shape != (self.shape_count,):
            raise InvalidInputException(f"Expected {self.shape_count} shape coefficients, got {shape.shape}")
        vertices = vertices + np.einsum("a,avc->vc", shape, self.shape_axes)
        joints = joints + np.einsum("a,abc->bc", shape, self.joint_shape_axes)
        return vertices, joints

    def pose(self, angles: Optional[np.ndarray] = None, shape: Optional[np.ndarray] = None,
             local_rotations: Optional[np.ndarray] = None) -> Tuple[RegisteredMesh, np.ndarray]:
        """Linear blend skinning in displacement form.

        Each vertex moves by sum_b w_b [(R_b - I)(v - J_b) + d_b], where R_b is the world
        rotation of bone b and d_b the displacement of its joint. Zero pose and zero shape give
        the rest mesh exactly. Returns the posed mesh and the posed joints.
        """
        vertices, joints = self.shaped(shape)
        if local_rotations is None:
            if angles is None:
                angles = np.zeros((self.bone_count, 3))
            local_rotations = self.local_rotations(angles)
        world = self.world_rotations(np.asarray(local_rotations, dtype=np.float64))
        offsets = world - np.eye(3)

        joint_shift = np.zeros_like(joints)
        for bone, parent in enumerate(self.parents):
            if parent >= 0:
                joint_shift[bone] = joint_shift[parent] + offsets[parent] @ (joints[bone] - joints[parent])

        relative = vertices[:, None, :] - joints[None, :, :]
        per_bone = np.einsum("bij,vbj->vbi", offsets, relative) + joint_shift[None, :, :]
        posed = vertices + np.einsum("vb,vbi->vi", self.skinning_weights, per_bone)
        return RegisteredMesh(self.topology, posed), joints + joint_shift

    def template_hash(self) -> str:
        return array_fingerprint([self.rest_mesh.vertices, self.topology.faces, self.parents, self.joints,
                                  self.skinning_weights, self.shape_axes, self.joint_shape_axes,
                                  self.angle_limits])


def _perpendicular_frame(direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.eye(3)[np.argmin(np.abs(direction))]
    u = np.cross(direction, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(direction, u)


def _capsule_faces(offset: int) -> List[Tuple[int, int, int]]:
    faces = []
    for ring in range(RINGS_PER_BONE - 1):
        for j in range(VERTICES_PER_RING):
            a = offset + ring * VERTICES_PER_RING + j
            b = offset + ring * VERTICES_PER_RING + (j + 1) % VERTICES_PER_RING
            c = b + VERTICES_PER_RING
            d = a + VERTICES_PER_RING
            faces.append((a, b, c))
            faces.append((a, c, d))
    last = offset + (RINGS_PER_BONE - 1) * VERTICES_PER_RING
    for j in range(1, VERTICES_PER_RING - 1):
        faces.append((offset, offset + j + 1, offset + j))
        faces.append((last, last + j, last + j + 1))
    return faces


def build_desk_template() -> ArticulatedTemplate:
    """16-bone capsule humanoid: 1024 vertices, 1984 faces, 2 shape axes.

    Its topology carries a three-level hierarchy (vertices, 128 rings, 16 bones) so every
    latent cell of a codec built on it covers exactly one bone.
    """
    bone_count = len(DESK_BONES)
    vertex_count = bone_count * VERTICES_PER_BONE
    vertices = np.zeros((vertex_count, 3))
    girth = np.zeros((vertex_count, 3))
    weights = np.zeros((vertex_count, bone_count))
    parents = np.array([bone[1] for bone in DESK_BONES], dtype=np.int64)
    joints = np.array([bone[2] for bone in DESK_BONES], dtype=np.float64)
    faces = []
    links = []
    part_labels = []

    angles = 2.0 * np.pi * np.arange(VERTICES_PER_RING) / VERTICES_PER_RING
    for b, (name, parent, start, end, radius) in enumerate(DESK_BONES):
        start = np.asarray(start, dtype=np.float64)
        end = np.asarray(end, dtype=np.float64)
        axis = end - start
        direction = axis / np.linalg.norm(axis)
        u, w = _perpendicular_frame(direction)
        offset = b * VERTICES_PER_BONE
        for ring in range(RINGS_PER_BONE):
            t = ring / (RINGS_PER_BONE - 1)
            ring_radius = radius * (0.75 + 0.25 * np.sin(np.pi * t))
            centre = start + t * axis
            radial = np.cos(angles)[:, None] * u + np.sin(angles)[:, None] * w
            rows = slice(offset + ring * VERTICES_PER_RING, offset + (ring + 1) * VERTICES_PER_RING)
            vertices[rows] = centre + ring_radius * radial
            girth[rows] = GIRTH_SCALE * ring_radius * radial
            if parent < 0 or ring >= 2:
                weights[rows, b] = 1.0
            else:
                own = 0.5 if ring == 0 else 0.75
                weights[rows, b] = own
                weights[rows, parent] = 1.0 - own
        faces.extend(_capsule_faces(offset))
        part_labels.extend([DESK_BONE_TO_PART[name]] * VERTICES_PER_BONE)
        if parent >= 0:
            parent_last = parent * VERTICES_PER_BONE + (RINGS_PER_BONE - 1) * VERTICES_PER_RING
            links.extend((parent_last + k, offset + k) for k in range(VERTICES_PER_RING))

    ring_map = uniform_pooling_map(np.arange(vertex_count) // VERTICES_PER_RING, vertex_count // VERTICES_PER_RING)
    bone_map = uniform_pooling_map(np.arange(ring_map.coarse_count) // RINGS_PER_BONE, bone_count)
    level_zero = neighborhoods_from_faces(vertex_count, np.asarray(faces), extra_edges=links)
    level_one = coarsen_neighborhoods(level_zero, ring_map)
    level_two = coarsen_neighborhoods(level_one, bone_map)
    topology = MeshTopology(vertex_count, np.asarray(faces), [ring_map, bone_map],
                            [level_zero, level_one, level_two], part_labels)
    topology.validate()

    stature = np.zeros((vertex_count, 3))
    stature[:, 1] = STATURE_SCALE * vertices[:, 1]
    joint_stature = np.zeros((bone_count, 3))
    joint_stature[:, 1] = STATURE_SCALE * joints[:, 1]

    regressor = np.zeros((bone_count, vertex_count))
    for b in range(bone_count):
        regressor[b, b * VERTICES_PER_BONE:b * VERTICES_PER_BONE + VERTICES_PER_RING] = 1.0 / VERTICES_PER_RING

    limits = np.array([DESK_ANGLE_LIMITS[name] for name in (bone[0] for bone in DESK_BONES)], dtype=np.float64)
    template = ArticulatedTemplate(
        rest_mesh=RegisteredMesh(topology, vertices),
        parents=parents,
        joints=joints,
        skinning_weights=weights,
        shape_axes=np.stack([girth, stature]),
        joint_shape_axes=np.stack([np.zeros((bone_count, 3)), joint_stature]),
        angle_limits=limits,
        bone_names=[bone[0] for bone in DESK_BONES],
        regressor=JointRegressor(regressor, JointLayout.DESK16),
    )
    template.validate()
    return template


def sample_pose_angles(template: ArticulatedTemplate, seed: int, pose_scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    low = template.angle_limits[..., 0]
    high = template.angle_limits[..., 1]
    return pose_scale * rng.uniform(low, high)


def sample_shape(template: ArticulatedTemplate, seed: int, shape_scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return shape_scale * rng.uniform(-1.0, 1.0, size=template.shape_count)


def sample_body(template: ArticulatedTemplate, pose_seed: int, shape_seed: int,
                pose_scale: float = 1.0, shape_scale: float = 1.0) -> RegisteredMesh:
    """Pose the template with angles drawn uniformly inside its limits and random shape coefficients."""
    angles = sample_pose_angles(template, pose_seed, pose_scale)
    shape = sample_shape(template, shape_seed, shape_scale)
    mesh, _ = template.pose(angles, shape)
    return mesh
