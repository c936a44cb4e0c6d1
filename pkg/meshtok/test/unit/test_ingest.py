import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from meshtok.errors import InvalidInputException
from meshtok.mesh.mesh_core import JointRegressor
from meshtok.mesh.mesh_io import write_obj
from meshtok.mesh.topology import MeshTopology
from meshtok.synthetic.ingest import fit_weak_perspective, ingest_smpl_meshes, read_annotated_mesh

STRIP_FACES = np.array([[0, 1, 4], [1, 5, 4], [1, 2, 5], [2, 6, 5], [2, 3, 6], [3, 7, 6]])
ROTATION = Rotation.from_euler("xyz", [10, 40, -5], degrees=True).as_matrix()


def _helper_strip_vertices() -> np.ndarray:
    columns = np.arange(4, dtype=np.float64) * 0.2
    bottom = np.stack([columns, np.zeros(4), np.zeros(4)], axis=1)
    top = np.stack([columns, 0.3 * np.ones(4), 0.05 * columns], axis=1)
    vertices = np.concatenate([bottom, top])
    return vertices - vertices.mean(axis=0)


def _helper_regressor() -> JointRegressor:
    matrix = np.zeros((3, 8))
    matrix[0, [0, 4]] = 0.5
    matrix[1, [1, 2, 5, 6]] = 0.25
    matrix[2, [3, 7]] = 0.5
    return JointRegressor(matrix)


def _helper_write_sample(directory, name, camera=(0.9, 0.05, -0.1), include_camera=True, drop=None):
    canonical = _helper_strip_vertices()
    write_obj(str(directory / f"{name}.obj"), canonical @ ROTATION.T + 2.0, STRIP_FACES)
    joints = _helper_regressor().matrix @ canonical
    joints_2d = camera[0] * (joints @ ROTATION.T)[:, :2] + np.array(camera[1:])
    annotation = {"rotation": ROTATION.reshape(-1).tolist(), "joints_2d": joints_2d.tolist()}
    if include_camera:
        annotation["camera"] = list(camera)
    if drop is not None:
        del annotation[drop]
    (directory / f"{name}.json").write_text(json.dumps(annotation))


def test_weak_perspective_fit_recovers_camera():
    rng = np.random.default_rng(0)
    xy = rng.normal(size=(17, 2))
    camera = fit_weak_perspective(xy, 1.3 * xy + np.array([0.2, -0.4]))
    assert camera.scale == pytest.approx(1.3)
    assert (camera.tx, camera.ty) == (pytest.approx(0.2), pytest.approx(-0.4))


def test_annotated_mesh_is_canonicalised(tmp_path):
    _helper_write_sample(tmp_path, "good")
    record = read_annotated_mesh(str(tmp_path / "good"), MeshTopology(8, STRIP_FACES), _helper_regressor(), 16)
    assert np.allclose(record.gt_canonical.vertices, _helper_strip_vertices(), atol=1e-6)
    assert np.allclose(record.gt_rotation, ROTATION)
    assert record.image.shape == (16, 16)
    assert record.name == "good"


def test_missing_camera_is_fitted(tmp_path):
    _helper_write_sample(tmp_path, "fitted", include_camera=False)
    record = read_annotated_mesh(str(tmp_path / "fitted"), MeshTopology(8, STRIP_FACES), _helper_regressor(), 16)
    assert np.allclose(record.gt_camera.as_array(), [0.9, 0.05, -0.1], atol=1e-5)


def test_wrong_vertex_count_is_rejected_with_a_diagnostic(tmp_path):
    vertices = np.random.default_rng(1).normal(size=(6889, 3))
    faces = np.array([[3 * k, 3 * k + 1, 3 * k + 2] for k in range(2296)] + [[6886, 6887, 6888]])
    write_obj(str(tmp_path / "short.obj"), vertices, faces)
    (tmp_path / "short.json").write_text(json.dumps({"rotation": np.eye(3).reshape(-1).tolist(),
                                                     "joints_2d": np.zeros((24, 2)).tolist()}))
    topology = MeshTopology(6890, np.zeros((0, 3), dtype=np.int64))
    regressor = JointRegressor(np.full((24, 6890), 1 / 6890))

    dataset, report = ingest_smpl_meshes(str(tmp_path), topology, regressor)
    assert len(dataset) == 0
    assert report.accepted == []
    assert "6889" in report.rejected["short"] and "6890" in report.rejected["short"]


def test_bad_files_are_rejected_one_by_one(tmp_path):
    _helper_write_sample(tmp_path, "a_good")
    _helper_write_sample(tmp_path, "b_no_rotation", drop="rotation")
    _helper_write_sample(tmp_path, "c_good", include_camera=False)
    write_obj(str(tmp_path / "d_orphan.obj"), _helper_strip_vertices(), STRIP_FACES)

    dataset, report = ingest_smpl_meshes(str(tmp_path), MeshTopology(8, STRIP_FACES), _helper_regressor(), 16)
    assert report.accepted == ["a_good", "c_good"]
    assert set(report.rejected) == {"b_no_rotation", "d_orphan"}
    assert "rotation" in report.rejected["b_no_rotation"]
    assert dataset.source == "ingested"
    assert [record.index for record in dataset.records] == [0, 1]
    assert json.loads(json.dumps(report.to_dict()))["accepted"] == ["a_good", "c_good"]


def test_empty_directory_gives_empty_dataset(tmp_path):
    dataset, report = ingest_smpl_meshes(str(tmp_path), MeshTopology(8, STRIP_FACES), _helper_regressor())
    assert len(dataset) == 0
    assert report.to_dict() == {"accepted": [], "rejected": {}}


def test_reflected_rotation_is_rejected(tmp_path):
    _helper_write_sample(tmp_path, "mirror")
    annotation = json.loads((tmp_path / "mirror.json").read_text())
    annotation["rotation"] = np.diag([1.0, 1.0, -1.0]).reshape(-1).tolist()
    (tmp_path / "mirror.json").write_text(json.dumps(annotation))
    with pytest.raises(InvalidInputException):
        read_annotated_mesh(str(tmp_path / "mirror"), MeshTopology(8, STRIP_FACES), _helper_regressor(), 16)
