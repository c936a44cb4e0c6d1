import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.cluster.vq import kmeans2

from meshtok.errors import ConfigurationException, InvalidInputException
from meshtok.hashing import array_fingerprint

logger = logging.getLogger(__name__)

TOPOLOGY_FORMAT = "meshtok-topology/1"


@dataclass
class PoolingMap:
    """Maps the vertices of a fine level onto the cells of the next coarser level.

    Fine vertex i belongs to exactly one coarse cell ``assignment[i]`` and contributes
    with ``weights[i]``; the weights of every coarse cell sum to 1.
    """
    assignment: np.ndarray
    weights: np.ndarray
    coarse_count: int

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)

    @property
    def fine_count(self) -> int:
        return int(self.assignment.shape[0])

    def validate(self) -> None:
        if self.assignment.shape != self.weights.shape:
            raise ConfigurationException("Pooling map assignment and weights differ in length.")
        if self.fine_count and (self.assignment.min() < 0 or self.assignment.max() >= self.coarse_count):
            raise ConfigurationException("Pooling map assigns a vertex to a non-existent coarse cell.")
        sums = np.bincount(self.assignment, weights=self.weights, minlength=self.coarse_count)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise ConfigurationException("Pooling weights must sum to 1 for every coarse cell.")

    def pool(self, values: np.ndarray) -> np.ndarray:
        """Weighted mean of fine rows per coarse cell."""
        pooled = np.zeros((self.coarse_count,) + values.shape[1:], dtype=np.float64)
        np.add.at(pooled, self.assignment, values * self.weights.reshape((-1,) + (1,) * (values.ndim - 1)))
        return pooled

    def to_dict(self) -> Dict:
        return {
            "assignment": self.assignment.tolist(),
            "weights": self.weights.tolist(),
            "coarse_count": int(self.coarse_count),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "PoolingMap":
        return cls(data["assignment"], data["weights"], int(data["coarse_count"]))


@dataclass
class MeshTopology:
    vertex_count: int
    faces: np.ndarray
    level_maps: List[PoolingMap] = field(default_factory=list)
    neighborhoods: List[List[List[int]]] = field(default_factory=list)
    # Optional body-part name per level-0 vertex.
    part_labels: Optional[List[str]] = None

    def __post_init__(self):
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not self.neighborhoods:
            self.neighborhoods = [neighborhoods_from_faces(self.vertex_count, self.faces)]

    @property
    def level_vertex_counts(self) -> List[int]:
        counts = [self.vertex_count]
        for level_map in self.level_maps:
            counts.append(level_map.coarse_count)
        return counts

    @property
    def num_levels(self) -> int:
        return len(self.level_maps) + 1

    @property
    def latent_count(self) -> int:
        return self.level_vertex_counts[-1]

    def validate(self) -> None:
        if self.vertex_count <= 0:
            raise ConfigurationException("Topology needs a positive vertex count.")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= self.vertex_count):
            raise ConfigurationException("Face index out of range for the topology's vertex count.")
        if len(self.neighborhoods) != self.num_levels:
            raise ConfigurationException(
                f"Expected neighbourhoods for {self.num_levels} levels, got {len(self.neighborhoods)}")

        counts = self.level_vertex_counts
        for level, level_map in enumerate(self.level_maps):
            if level_map.fine_count != counts[level]:
                raise ConfigurationException(
                    f"Pooling map {level} covers {level_map.fine_count} vertices, level has {counts[level]}")
            level_map.validate()

        for level, neighborhood in enumerate(self.neighborhoods):
            if len(neighborhood) != counts[level]:
                raise ConfigurationException(f"Neighbourhood list of level {level} has the wrong length.")
            for neighbours in neighborhood:
                for j in neighbours:
                    if j < 0 or j >= counts[level]:
                        raise ConfigurationException(
                            f"Neighbourhood index {j} out of range at level {level}.")

        level_zero = [set(neighbours) for neighbours in self.neighborhoods[0]]
        for i, neighbours in enumerate(level_zero):
            for j in neighbours:
                if i not in level_zero[j]:
                    raise ConfigurationException(f"Level-0 neighbourhoods are not symmetric ({i}, {j}).")

        if self.part_labels is not None and len(self.part_labels) != self.vertex_count:
            raise ConfigurationException("Part labels must name every level-0 vertex.")

    def padded_neighborhoods(self, level: int) -> Tuple[np.ndarray, np.ndarray]:
        """Neighbour indices padded to the widest neighbourhood, with a validity mask."""
        neighborhood = self.neighborhoods[level]
        width = max(len(neighbours) for neighbours in neighborhood)
        indices = np.zeros((len(neighborhood), width), dtype=np.int64)
        mask = np.zeros((len(neighborhood), width), dtype=bool)
        for i, neighbours in enumerate(neighborhood):
            indices[i, :len(neighbours)] = neighbours
            mask[i, :len(neighbours)] = True
        return indices, mask

    def part_groups(self) -> Dict[str, np.ndarray]:
        if self.part_labels is None:
            raise ConfigurationException("Topology carries no vertex part labels.")
        groups = {}
        for name in dict.fromkeys(self.part_labels):
            groups[name] = np.array([i for i, label in enumerate(self.part_labels) if label == name])
        return groups

    def topology_hash(self) -> str:
        arrays = [self.faces]
        for level_map in self.level_maps:
            arrays.extend([level_map.assignment, level_map.weights])
        for neighborhood in self.neighborhoods:
            arrays.append(np.concatenate([np.asarray(n, dtype=np.int64) for n in neighborhood]))
            arrays.append(np.array([len(n) for n in neighborhood], dtype=np.int64))
        return array_fingerprint(arrays, metadata={"vertex_count": self.vertex_count})

    def write_json(self, out_path: str) -> None:
        """Write the topology hierarchy.

        Layout: ``format``, ``vertex_count``, ``faces`` (triangles), ``levels`` (one entry per
        level with ``vertex_count`` and ``neighborhoods``), ``pooling`` (one entry per
        fine-to-coarse step with integer ``assignment``, float ``weights`` and ``coarse_count``)
        and optional ``part_labels``.
        """
        counts = self.level_vertex_counts
        payload = {
            "format": TOPOLOGY_FORMAT,
            "vertex_count": int(self.vertex_count),
            "faces": self.faces.tolist(),
            "levels": [
                {"vertex_count": int(counts[level]), "neighborhoods": [list(map(int, n)) for n in neighborhood]}
                for level, neighborhood in enumerate(self.neighborhoods)
            ],
            "pooling": [level_map.to_dict() for level_map in self.level_maps],
            "part_labels": self.part_labels,
        }
        with open(out_path, "w") as out:
            json.dump(payload, out)

    @classmethod
    def from_file(cls, in_path: str) -> "MeshTopology":
        with open(in_path, "r") as topology_file:
            payload = json.load(topology_file)
        if payload.get("format") != TOPOLOGY_FORMAT:
            raise InvalidInputException(f"Not a meshtok topology file: {in_path}")
        topology = cls(
            vertex_count=int(payload["vertex_count"]),
            faces=np.asarray(payload["faces"], dtype=np.int64).reshape(-1, 3),
            level_maps=[PoolingMap.from_dict(entry) for entry in payload["pooling"]],
            neighborhoods=[level["neighborhoods"] for level in payload["levels"]],
            part_labels=payload.get("part_labels"),
        )
        topology.validate()
        return topology


def neighborhoods_from_faces(vertex_count: int, faces: np.ndarray,
                             extra_edges: Optional[Sequence[Tuple[int, int]]] = None) -> List[List[int]]:
    """Symmetric one-ring neighbourhoods, each vertex listed first in its own list."""
    adjacency = [set() for _ in range(vertex_count)]
    for a, b, c in np.asarray(faces, dtype=np.int64).reshape(-1, 3):
        for i, j in ((a, b), (b, c), (c, a)):
            adjacency[i].add(int(j))
            adjacency[j].add(int(i))
    for i, j in extra_edges or []:
        adjacency[i].add(int(j))
        adjacency[j].add(int(i))
    return [[i] + sorted(adjacency[i] - {i}) for i in range(vertex_count)]


def coarsen_neighborhoods(fine_neighborhoods: List[List[int]], level_map: PoolingMap) -> List[List[int]]:
    """Coarse cells are neighbours when any of their fine members are."""
    adjacency = [set() for _ in range(level_map.coarse_count)]
    for i, neighbours in enumerate(fine_neighborhoods):
        cell_i = int(level_map.assignment[i])
        for j in neighbours:
            cell_j = int(level_map.assignment[j])
            if cell_i != cell_j:
                adjacency[cell_i].add(cell_j)
                adjacency[cell_j].add(cell_i)
    return [[c] + sorted(adjacency[c]) for c in range(level_map.coarse_count)]


def uniform_pooling_map(assignment: Union[Sequence[int], np.ndarray], coarse_count: int) -> PoolingMap:
    assignment = np.asarray(assignment, dtype=np.int64)
    sizes = np.bincount(assignment, minlength=coarse_count)
    if np.any(sizes == 0):
        raise ConfigurationException("Every coarse cell needs at least one fine member.")
    return PoolingMap(assignment, 1.0 / sizes[assignment], coarse_count)


def _fill_empty_clusters(points: np.ndarray, labels: np.ndarray, count: int) -> np.ndarray:
    labels = labels.copy()
    for cluster in range(count):
        if np.any(labels == cluster):
            continue
        sizes = np.bincount(labels, minlength=count)
        donor = int(np.argmax(sizes))
        members = np.flatnonzero(labels == donor)
        centre = points[members].mean(axis=0)
        farthest = members[np.argmax(np.linalg.norm(points[members] - centre, axis=1))]
        labels[farthest] = cluster
    return labels


def build_clustered_hierarchy(vertices: np.ndarray, faces: np.ndarray, level_sizes: Sequence[int],
                              seed: int = 0, part_labels: Optional[List[str]] = None) -> MeshTopology:
    """Build a pooling hierarchy for an arbitrary registered mesh by k-means vertex clustering.

    ``level_sizes`` lists the coarse cell counts after the full-resolution level, e.g.
    ``[1724, 431, 54]`` for an SMPL-sized mesh.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    neighborhoods = [neighborhoods_from_faces(len(vertices), faces)]
    level_maps = []
    points = vertices
    for size in level_sizes:
        if size > len(points):
            raise ConfigurationException(f"Cannot cluster {len(points)} cells into {size}.")
        _, labels = kmeans2(points, size, minit="++", seed=seed)
        labels = _fill_empty_clusters(points, labels, size)
        level_map = uniform_pooling_map(labels, size)
        neighborhoods.append(coarsen_neighborhoods(neighborhoods[-1], level_map))
        level_maps.append(level_map)
        points = level_map.pool(points)

    topology = MeshTopology(len(vertices), faces, level_maps, neighborhoods, part_labels)
    topology.validate()
    logger.info("Built %d-level hierarchy with cell counts %s", topology.num_levels, topology.level_vertex_counts)
    return topology
