import json
import math

import pytest
import torch

from meshtok.errors import InvalidInputException, TopologyMismatchException
from meshtok.losses import (LossReport, cross_entropy_mesh, project_weak_perspective, recon_3d_loss,
                            regress_joints_batch, reprojection_l1, rotation_mse, weighted_sum)
from meshtok.model.rotation import rot6d_to_matrix


def test_uniform_logits_give_log_codebook_size():
    logits = torch.zeros(4, 54, 512, dtype=torch.float64)
    tokens = torch.randint(0, 512, (4, 54), generator=torch.Generator().manual_seed(0))
    assert float(cross_entropy_mesh(logits, tokens)) == pytest.approx(math.log(512), abs=1e-6)


def test_cross_entropy_by_hand():
    logits = torch.tensor([[[2.0, 0.0, 0.0], [0.0, 0.0, 1.0]]], dtype=torch.float64)
    tokens = torch.tensor([[0, 1]])
    first = -2.0 + math.log(math.exp(2.0) + 2.0)
    second = math.log(2.0 + math.exp(1.0))
    assert float(cross_entropy_mesh(logits, tokens)) == pytest.approx((first + second) / 2)


def test_cross_entropy_rejects_bad_tokens():
    logits = torch.zeros(1, 2, 4)
    with pytest.raises(InvalidInputException):
        cross_entropy_mesh(logits, torch.tensor([[0, 4]]))
    with pytest.raises(InvalidInputException):
        cross_entropy_mesh(logits, torch.tensor([[0, 1, 2]]))


def test_rotation_mse_by_hand():
    prediction = torch.eye(3).unsqueeze(0)
    truth = torch.diag(torch.tensor([1.0, -1.0, -1.0])).unsqueeze(0)
    # two entries differ by 2 out of nine
    assert float(rotation_mse(prediction, truth)) == pytest.approx(8.0 / 9.0)


def test_weak_perspective_projection():
    joints = torch.tensor([[[1.0, 2.0, 9.0], [-1.0, 0.5, -3.0]]])
    camera = torch.tensor([[2.0, 0.1, -0.2]])
    expected = torch.tensor([[[2.1, 3.8], [-1.9, 0.8]]])
    assert torch.allclose(project_weak_perspective(joints, camera), expected)


def test_reprojection_zero_on_own_projection():
    joints = torch.randn(2, 17, 3, generator=torch.Generator().manual_seed(1))
    camera = torch.tensor([[0.9, 0.1, 0.0], [1.2, -0.3, 0.2]])
    assert float(reprojection_l1(joints, camera, project_weak_perspective(joints, camera))) == 0.0


def test_reprojection_joint_count_mismatch():
    with pytest.raises(InvalidInputException):
        reprojection_l1(torch.zeros(1, 17, 3), torch.ones(1, 3), torch.zeros(1, 16, 2))


def test_reprojection_gradcheck():
    generator = torch.Generator().manual_seed(2)
    joints = torch.randn(2, 5, 3, generator=generator, dtype=torch.float64, requires_grad=True)
    camera = torch.tensor([[0.8, 0.1, -0.1], [1.1, 0.0, 0.3]], dtype=torch.float64, requires_grad=True)
    target = torch.randn(2, 5, 2, generator=generator, dtype=torch.float64) + 4.0
    assert torch.autograd.gradcheck(lambda j, c: reprojection_l1(j, c, target), (joints, camera),
                                    eps=1e-6, atol=1e-8, rtol=1e-4)


def test_rotation_mse_gradcheck_through_6d():
    generator = torch.Generator().manual_seed(3)
    rot6d = torch.randn(3, 6, generator=generator, dtype=torch.float64, requires_grad=True)
    truth = rot6d_to_matrix(torch.randn(3, 6, generator=generator, dtype=torch.float64))
    assert torch.autograd.gradcheck(lambda r: rotation_mse(rot6d_to_matrix(r), truth), (rot6d,),
                                    eps=1e-6, atol=1e-8, rtol=1e-4)


def test_recon_3d_is_mean_vertex_distance():
    prediction = torch.zeros(1, 2, 3)
    truth = torch.tensor([[[0.0, 3.0, 4.0], [0.0, 0.0, 1.0]]])
    assert float(recon_3d_loss(prediction, truth)) == pytest.approx(3.0)
    with pytest.raises(TopologyMismatchException):
        recon_3d_loss(prediction, torch.zeros(1, 3, 3))


def test_batched_joint_regression():
    vertices = torch.arange(12, dtype=torch.float32).reshape(1, 4, 3)
    regressor = torch.tensor([[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    assert torch.allclose(regress_joints_batch(vertices, regressor), torch.tensor([[[1.5, 2.5, 3.5], [9.0, 10.0, 11.0]]]))
    with pytest.raises(InvalidInputException):
        regress_joints_batch(vertices, torch.ones(2, 5))


def test_weighted_sum_needs_weights_for_every_term():
    terms = {"mesh_ce": torch.tensor(2.0), "rot_mse": torch.tensor(0.5)}
    assert float(weighted_sum(terms, {"mesh_ce": 1.0, "rot_mse": 4.0})) == pytest.approx(4.0)
    with pytest.raises(InvalidInputException):
        weighted_sum(terms, {"mesh_ce": 1.0})
    with pytest.raises(InvalidInputException):
        weighted_sum({}, {})


def test_loss_report_keys_follow_active_terms():
    terms = {"recon_3d": torch.tensor(0.1), "rot_mse": torch.tensor(0.2)}
    report = LossReport.from_terms(terms, {"recon_3d": 2.0, "rot_mse": 1.0, "mesh_ce": 1.0}, step=4, epoch=1)
    payload = json.loads(report.to_json())
    assert "mesh_ce" not in payload and "reproj_l1" not in payload
    assert payload["weighted_total"] == pytest.approx(0.4)
    assert payload["weights"] == {"recon_3d": 2.0, "rot_mse": 1.0}
    assert (payload["step"], payload["epoch"]) == (4, 1)


def test_cross_entropy_matches_log_sum_exp_loop():
    generator = torch.Generator().manual_seed(4)
    logits = torch.randn(3, 5, 9, generator=generator, dtype=torch.float64) * 3.0
    tokens = torch.randint(0, 9, (3, 5), generator=generator)
    total = 0.0
    for b in range(3):
        for i in range(5):
            row = logits[b, i].tolist()
            peak = max(row)
            log_sum = peak + math.log(sum(math.exp(value - peak) for value in row))
            total += log_sum - row[int(tokens[b, i])]
    assert float(cross_entropy_mesh(logits, tokens)) == pytest.approx(total / 15, abs=1e-8)


def test_rotation_mse_matches_entry_loop():
    prediction = rot6d_to_matrix(torch.randn(4, 6, generator=torch.Generator().manual_seed(5), dtype=torch.float64))
    truth = rot6d_to_matrix(torch.randn(4, 6, generator=torch.Generator().manual_seed(6), dtype=torch.float64))
    total = 0.0
    for b in range(4):
        for i in range(3):
            for j in range(3):
                total += (float(prediction[b, i, j]) - float(truth[b, i, j])) ** 2
    assert float(rotation_mse(prediction, truth)) == pytest.approx(total / 36, abs=1e-10)


def test_reprojection_ignores_depth():
    generator = torch.Generator().manual_seed(7)
    joints = torch.randn(2, 6, 3, generator=generator, dtype=torch.float64)
    camera = torch.tensor([[0.9, 0.1, -0.2], [1.4, 0.0, 0.3]], dtype=torch.float64)
    target = torch.randn(2, 6, 2, generator=generator, dtype=torch.float64)
    moved = joints.clone()
    moved[..., 2] += torch.randn(2, 6, generator=generator, dtype=torch.float64) * 5.0 + 2.0
    assert float(reprojection_l1(moved, camera, target)) == float(reprojection_l1(joints, camera, target))
