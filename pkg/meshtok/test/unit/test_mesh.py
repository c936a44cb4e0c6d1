import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from meshtok.errors import ConfigurationException, InvalidInputException, TopologyMismatchException
from meshtok.mesh.mesh_core import (CanonicalCentre, CanonicalMesh, JointRegressor, JointSet, RegisteredMesh,
                                    apply_orientation, canonicalize, regress_joints, validate_rotation)
from meshtok.mesh.mesh_io import read_obj, write_obj
from meshtok.mesh.metrics import mpjpe, pa_mpjpe, procrustes_align, pve
from meshtok.mesh.topology import (MeshTopology, PoolingMap, build_clustered_hierarchy, coarsen_neighborhoods,
                                   neighborhoods_from_faces, uniform_pooling_map)

STRIP_FACES = np.array([[0, 1, 4], [1, 5, 4], [1, 2, 5], [2, 6, 5], [2, 3, 6], [3, 7, 6]])


def _helper_strip_topology() -> MeshTopology:
    fine = neighborhoods_from_faces(8, STRIP_FACES)
    first = uniform_pooling_map([0, 1, 2, 3, 0, 1, 2, 3], 4)
    middle = coarsen_neighborhoods(fine, first)
    second = uniform_pooling_map([0, 0, 1, 1], 2)
    coarse = coarsen_neighborhoods(middle, second)
    return MeshTopology(8, STRIP_FACES, [first, second], [fine, middle, coarse])


def _helper_strip_vertices() -> np.ndarray:
    columns = np.arange(4, dtype=np.float64)
    bottom = np.stack([columns, np.zeros(4), np.zeros(4)], axis=1)
    top = np.stack([columns, np.ones(4), 0.1 * columns], axis=1)
    return np.concatenate([bottom, top])


def test_strip_topology_levels():
    topology = _helper_strip_topology()
    topology.validate()
    assert topology.level_vertex_counts == [8, 4, 2]
    assert topology.latent_count == 2
    assert topology.neighborhoods[2] == [[0, 1], [1, 0]]


def test_neighbourhoods_list_self_first_and_are_symmetric():
    neighborhoods = neighborhoods_from_faces(8, STRIP_FACES)
    for i, neighbours in enumerate(neighborhoods):
        assert neighbours[0] == i
        for j in neighbours[1:]:
            assert i in neighborhoods[j]


def test_asymmetric_neighbourhood_rejected():
    topology = _helper_strip_topology()
    topology.neighborhoods[0][0] = [0, 1, 7]
    with pytest.raises(ConfigurationException):
        topology.validate()


def test_out_of_range_neighbour_rejected():
    topology = _helper_strip_topology()
    topology.neighborhoods[1][0] = [0, 9]
    with pytest.raises(ConfigurationException):
        topology.validate()


def test_pooling_weights_must_sum_to_one():
    level_map = PoolingMap([0, 0, 1], [0.5, 0.25, 1.0], 2)
    with pytest.raises(ConfigurationException):
        level_map.validate()


def test_pool_is_weighted_mean():
    level_map = uniform_pooling_map([0, 0, 1, 1], 2)
    pooled = level_map.pool(np.array([[1.0], [3.0], [5.0], [9.0]]))
    assert np.allclose(pooled, [[2.0], [7.0]])


def test_empty_coarse_cell_rejected():
    with pytest.raises(ConfigurationException):
        uniform_pooling_map([0, 0, 2], 3)


def test_topology_file_keeps_hash(tmp_path):
    topology = _helper_strip_topology()
    path = str(tmp_path / "topology.json")
    topology.write_json(path)
    assert MeshTopology.from_file(path).topology_hash() == topology.topology_hash()


def test_clustered_hierarchy_has_requested_sizes():
    rng = np.random.default_rng(3)
    vertices = rng.normal(size=(60, 3))
    faces = np.array([[i, i + 1, i + 2] for i in range(58)])
    topology = build_clustered_hierarchy(vertices, faces, [12, 3], seed=1)
    assert topology.level_vertex_counts == [60, 12, 3]
    for level_map in topology.level_maps:
        assert len(set(level_map.assignment.tolist())) == level_map.coarse_count


def test_canonicalize_removes_rotation_and_centroid():
    topology = _helper_strip_topology()
    rotation = Rotation.from_euler("xyz", [20, -35, 70], degrees=True).as_matrix()
    rest = _helper_strip_vertices()
    rest = rest - rest.mean(axis=0)
    posed = RegisteredMesh(topology, rest @ rotation.T + np.array([0.3, -1.0, 2.0]))

    canonical = canonicalize(posed, rotation)
    canonical.validate()
    assert np.allclose(canonical.vertices, rest, atol=1e-12)
    assert np.allclose(apply_orientation(canonical, rotation).vertices, posed.vertices - posed.centroid)


def test_root_joint_centring_moves_root_to_origin():
    topology = _helper_strip_topology()
    regressor = JointRegressor(np.eye(8)[:2])
    mesh = RegisteredMesh(topology, _helper_strip_vertices() + 5.0)
    canonical = canonicalize(mesh, np.eye(3), CanonicalCentre.ROOT_JOINT, regressor)
    assert np.allclose(canonical.vertices[0], 0.0)


def test_non_finite_vertices_rejected():
    topology = _helper_strip_topology()
    vertices = _helper_strip_vertices()
    vertices[3, 1] = np.nan
    with pytest.raises(InvalidInputException):
        canonicalize(RegisteredMesh(topology, vertices), np.eye(3))


def test_reflection_is_not_a_rotation():
    with pytest.raises(InvalidInputException):
        validate_rotation(np.diag([1.0, 1.0, -1.0]))


def test_off_centre_canonical_mesh_rejected():
    mesh = CanonicalMesh(_helper_strip_topology(), _helper_strip_vertices())
    with pytest.raises(InvalidInputException):
        mesh.validate()


def test_regressor_vertex_count_mismatch():
    mesh = RegisteredMesh(_helper_strip_topology(), _helper_strip_vertices())
    with pytest.raises(InvalidInputException):
        regress_joints(mesh, JointRegressor(np.full((2, 6), 1 / 6)))


def test_regressor_rows_must_be_convex():
    with pytest.raises(InvalidInputException):
        JointRegressor(np.ones((2, 8))).validate()


def test_regressor_text_file(tmp_path):
    matrix = np.full((3, 8), 0.125)
    path = str(tmp_path / "regressor.txt")
    JointRegressor(matrix).write_text(path)
    assert np.allclose(JointRegressor.from_file(path).matrix, matrix)


def test_pve_of_a_translation():
    topology = _helper_strip_topology()
    vertices = _helper_strip_vertices()
    shifted = RegisteredMesh(topology, vertices + np.array([0.0, 0.003, 0.004]))
    assert pve(shifted, RegisteredMesh(topology, vertices)) == pytest.approx(5.0)


def test_pve_needs_same_topology():
    topology = _helper_strip_topology()
    other = MeshTopology(4, np.array([[0, 1, 2], [0, 2, 3]]))
    with pytest.raises(TopologyMismatchException):
        pve(RegisteredMesh(topology, _helper_strip_vertices()), RegisteredMesh(other, np.zeros((4, 3))))


def test_mpjpe_shape_mismatch():
    with pytest.raises(InvalidInputException):
        mpjpe(JointSet(np.zeros((17, 3))), JointSet(np.zeros((16, 3))))


def test_procrustes_recovers_planted_transforms():
    rng = np.random.default_rng(0)
    for trial in range(100):
        joints = rng.normal(size=(17, 3))
        scale = rng.uniform(0.5, 2.0)
        rotation = Rotation.random(random_state=trial).as_matrix()
        translation = rng.normal(size=3)
        target = scale * joints @ rotation.T + translation

        transform = procrustes_align(JointSet(joints), JointSet(target))
        assert not transform.degenerate
        assert transform.scale == pytest.approx(scale, abs=1e-5)
        assert np.allclose(transform.rotation, rotation, atol=1e-5)
        assert np.allclose(transform.translation, translation, atol=1e-5)
        assert pa_mpjpe(JointSet(joints), JointSet(target)) < 1e-6


def test_degenerate_procrustes_is_flagged():
    line = np.outer(np.linspace(0, 1, 5), [1.0, 2.0, 3.0])
    transform = procrustes_align(JointSet(line), JointSet(line + 1.0))
    assert transform.degenerate
    assert np.allclose(transform.apply(line), line + 1.0)


def test_pa_mpjpe_never_exceeds_mpjpe():
    rng = np.random.default_rng(7)
    for _ in range(50):
        prediction = JointSet(rng.normal(size=(16, 3)))
        truth = JointSet(rng.normal(size=(16, 3)))
        assert pa_mpjpe(prediction, truth) <= mpjpe(prediction, truth)


def test_obj_keeps_vertex_order(tmp_path):
    vertices = _helper_strip_vertices()[::-1].copy()
    path = str(tmp_path / "strip.obj")
    write_obj(path, vertices, STRIP_FACES)
    read_vertices, read_faces = read_obj(path)
    assert np.allclose(read_vertices, vertices, atol=1e-9)
    assert np.array_equal(read_faces, STRIP_FACES)


def test_one_hot_regressor_picks_vertices():
    mesh = RegisteredMesh(_helper_strip_topology(), _helper_strip_vertices())
    joints = regress_joints(mesh, JointRegressor(np.eye(8)[[6, 1, 3]]))
    assert np.array_equal(joints.joints, mesh.vertices[[6, 1, 3]])


def test_uniform_regressor_row_gives_centroid():
    mesh = RegisteredMesh(_helper_strip_topology(), _helper_strip_vertices())
    joints = regress_joints(mesh, JointRegressor(np.full((1, 8), 1 / 8)))
    assert np.allclose(joints.joints[0], mesh.centroid, atol=1e-12)


def test_joint_regression_is_linear():
    rng = np.random.default_rng(11)
    topology = _helper_strip_topology()
    weights = rng.uniform(size=(5, 8))
    regressor = JointRegressor(weights / weights.sum(axis=1, keepdims=True))
    first = rng.normal(size=(8, 3))
    second = rng.normal(size=(8, 3))
    alpha, beta = 0.7, -2.3
    combined = regress_joints(RegisteredMesh(topology, alpha * first + beta * second), regressor)
    expected = (alpha * regress_joints(RegisteredMesh(topology, first), regressor).joints
                + beta * regress_joints(RegisteredMesh(topology, second), regressor).joints)
    assert np.allclose(combined.joints, expected, atol=1e-6)
    assert np.allclose(combined.joints, regressor.matrix @ (alpha * first + beta * second), atol=1e-12)


def test_pve_and_mpjpe_are_symmetric():
    rng = np.random.default_rng(12)
    topology = _helper_strip_topology()
    for _ in range(20):
        a = rng.normal(size=(8, 3))
        b = rng.normal(size=(8, 3))
        first, second = RegisteredMesh(topology, a), RegisteredMesh(topology, b)
        assert pve(first, second) == pve(second, first) > 0
        assert mpjpe(JointSet(a), JointSet(b)) == mpjpe(JointSet(b), JointSet(a)) > 0
    assert pve(first, first) == 0.0


def test_procrustes_beats_random_similarity_transforms():
    rng = np.random.default_rng(13)
    source = rng.normal(size=(17, 3))
    target = rng.normal(size=(17, 3))
    transform = procrustes_align(JointSet(source), JointSet(target))
    best = np.sum((transform.apply(source) - target) ** 2)

    count = 10000
    scales = rng.uniform(0.1, 3.0, size=count)
    rotations = Rotation.random(count, random_state=14).as_matrix()
    translations = rng.normal(scale=0.5, size=(count, 3))
    moved = scales[:, None, None] * np.einsum("nij,vj->nvi", rotations, source) + translations[:, None, :]
    objectives = np.sum((moved - target[None]) ** 2, axis=(1, 2))
    assert best <= objectives.min() + 1e-9


def test_pa_mpjpe_is_below_any_similarity_of_the_prediction():
    rng = np.random.default_rng(15)
    truth = rng.normal(size=(17, 3))
    prediction = 1.3 * truth @ Rotation.random(random_state=16).as_matrix().T + 0.2 + \
        rng.normal(scale=0.01, size=(17, 3))
    floor = pa_mpjpe(JointSet(prediction), JointSet(truth))
    for trial in range(100):
        rotation = Rotation.random(random_state=100 + trial).as_matrix()
        moved = rng.uniform(0.5, 2.0) * prediction @ rotation.T + rng.normal(size=3)
        assert floor <= mpjpe(JointSet(moved), JointSet(truth))
