import json
import os

import numpy as np
import pytest
import torch

import meshtok
from meshtok.codec.mesh_vqvae import CodecConfig, MeshVQVAE
from meshtok.errors import ConfigurationException, FingerprintMismatchException, InvalidInputException
from meshtok.losses import LossReport
from meshtok.mesh.topology import MeshTopology, coarsen_neighborhoods, neighborhoods_from_faces, uniform_pooling_map
from meshtok.model.vqhps import VQHPS, ModelConfig
from meshtok.training.checkpoint import load_codec, load_model, save_codec, save_model
from meshtok.training.config import AblationFlags, Stage, TrainConfig
from meshtok.training.seeding import DETERMINISTIC_ENV, deterministic_requested, seed_everything
from meshtok.training.train_log import TRAIN_LOG_NAME, TrainLog

STRIP_FACES = np.array([[0, 1, 4], [1, 5, 4], [1, 2, 5], [2, 6, 5], [2, 3, 6], [3, 7, 6]])


def _helper_codec(codebook_size: int = 6, seed: int = 0) -> MeshVQVAE:
    torch.manual_seed(seed)
    fine = neighborhoods_from_faces(8, STRIP_FACES)
    first = uniform_pooling_map([0, 1, 2, 3, 0, 1, 2, 3], 4)
    middle = coarsen_neighborhoods(fine, first)
    second = uniform_pooling_map([0, 0, 1, 1], 2)
    topology = MeshTopology(8, STRIP_FACES, [first, second], [fine, middle, coarsen_neighborhoods(middle, second)])
    return MeshVQVAE(topology, CodecConfig(channels=[4, 4, 4], basis_count=2, latent_dim=3,
                                           codebook_size=codebook_size))


def _helper_model_config() -> ModelConfig:
    return ModelConfig(image_size=16, stage_channels=[4, 8], hidden_dim=8, num_heads=2, encoder_layers=1,
                       decoder_layers=1, feedforward_dim=16, regressor_hidden=16, logit_hidden=16,
                       condition_embed_dim=4, dropout=0.0, num_cells=2, codebook_size=6)


def test_yaml_round_trip(tmp_path):
    config = TrainConfig(stage=Stage.PREDICTOR, epochs=3, batch_size=8, learning_rate=3e-4, seed=11,
                         ablation=AblationFlags(no_reprojection=True), logit_head="self_attention",
                         max_steps=5)
    path = str(tmp_path / "train.yaml")
    config.write_yaml(path)
    assert TrainConfig.from_yaml(path) == config


def test_partial_yaml_keeps_defaults(tmp_path):
    path = tmp_path / "train.yaml"
    path.write_text("stage: predictor\nloss_weights:\n  rot_mse: 2.0\nmodel:\n  hidden_dim: 64\n")
    config = TrainConfig.from_yaml(str(path))
    assert config.stage == Stage.PREDICTOR
    assert config.loss_weights.rot_mse == 2.0 and config.loss_weights.mesh_ce == 1.0
    assert config.model.hidden_dim == 64 and config.model.num_heads == ModelConfig.desk().num_heads


def test_unknown_keys_rejected():
    with pytest.raises(ConfigurationException):
        TrainConfig.from_dict({"epoch": 3})
    with pytest.raises(ConfigurationException):
        TrainConfig.from_dict({"loss_weights": {"mesh_loss": 1.0}})
    with pytest.raises(ConfigurationException):
        TrainConfig.from_dict({"stage": "distill"})


def test_malformed_yaml_rejected(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("epochs: [1, 2\n")
    with pytest.raises(ConfigurationException):
        TrainConfig.from_yaml(str(path))
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationException):
        TrainConfig.from_yaml(str(path))


def test_ablations_only_for_the_predictor():
    with pytest.raises(ConfigurationException):
        TrainConfig(stage=Stage.CODEC, ablation=AblationFlags(loss_3d=True)).validate()
    with pytest.raises(ConfigurationException):
        AblationFlags.from_names(["no_rotation"])
    assert AblationFlags.from_names(["no-reprojection"]).no_reprojection


def test_active_terms_follow_ablations():
    assert TrainConfig(stage=Stage.PREDICTOR).active_terms() == ["mesh_ce", "rot_mse", "reproj_l1"]
    loss_3d = TrainConfig(stage=Stage.PREDICTOR, ablation=AblationFlags(loss_3d=True))
    assert loss_3d.active_terms() == ["recon_3d", "rot_mse", "reproj_l1"]
    no_reprojection = TrainConfig(stage=Stage.PREDICTOR, ablation=AblationFlags(no_reprojection=True))
    assert no_reprojection.active_terms() == ["mesh_ce", "rot_mse"]


def test_invalid_numbers_rejected():
    for overrides in ({"epochs": 0}, {"learning_rate": 0.0}, {"max_steps": 0}, {"soft_temperature": -1.0},
                      {"logit_head": "conv"}):
        with pytest.raises(ConfigurationException):
            TrainConfig(**overrides).validate()


def test_predictor_model_config_takes_codec_sizes():
    config = TrainConfig(stage=Stage.PREDICTOR, logit_head="self_attention")
    model_config = config.predictor_model_config(num_cells=54, codebook_size=128, image_size=32)
    assert (model_config.num_cells, model_config.codebook_size, model_config.image_size) == (54, 128, 32)
    assert model_config.logit_head == "self_attention"


def test_deterministic_flag_from_environment(monkeypatch):
    monkeypatch.delenv(DETERMINISTIC_ENV, raising=False)
    assert not deterministic_requested()
    assert deterministic_requested(True)
    monkeypatch.setenv(DETERMINISTIC_ENV, "1")
    assert deterministic_requested()


def test_seeding_repeats_draws():
    first = torch.randperm(10, generator=seed_everything(4))
    np_first = np.random.rand()
    second = torch.randperm(10, generator=seed_everything(4))
    assert torch.equal(first, second)
    assert np.random.rand() == np_first


def test_codec_checkpoint_round_trip(tmp_path):
    codec = _helper_codec()
    save_codec(codec, str(tmp_path), data_fingerprint="abc", reconstruction_pve=1.5)
    loaded, manifest = load_codec(str(tmp_path))
    assert loaded.fingerprint() == codec.fingerprint()
    assert (manifest["N"], manifest["L"], manifest["S"]) == (2, 3, 6)
    assert manifest["training_data_fingerprint"] == "abc"
    assert not any(parameter.requires_grad for parameter in loaded.parameters())


def test_tampered_codec_weights_rejected(tmp_path):
    save_codec(_helper_codec(), str(tmp_path))
    manifest_path = tmp_path / "codec.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["codec_fingerprint"] = "0" * 16
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(FingerprintMismatchException):
        load_codec(str(tmp_path))


def test_missing_checkpoint_is_invalid_input(tmp_path):
    with pytest.raises(InvalidInputException):
        load_codec(str(tmp_path))
    with pytest.raises(InvalidInputException):
        load_model(str(tmp_path))


def test_model_checkpoint_checks_codec_fingerprint(tmp_path):
    codec = _helper_codec()
    torch.manual_seed(1)
    model = VQHPS(_helper_model_config()).attach_codec(codec)
    save_model(model, str(tmp_path))

    loaded, manifest = load_model(str(tmp_path), codec)
    assert manifest["codec_fingerprint"] == codec.fingerprint()
    for name, tensor in model.state_dict().items():
        assert torch.equal(tensor, loaded.state_dict()[name])
    with pytest.raises(FingerprintMismatchException):
        load_model(str(tmp_path), _helper_codec(seed=5))


def test_train_log_writes_json_lines(tmp_path):
    report = LossReport.from_terms({"mesh_ce": torch.tensor(1.0)}, {"mesh_ce": 1.0}, step=1, epoch=0)
    with TrainLog(str(tmp_path)) as train_log:
        train_log.write_report(report)
        train_log.write({"epoch": 0, "val_loss": 0.5})
    lines = (tmp_path / TRAIN_LOG_NAME).read_text().splitlines()
    assert [json.loads(line).get("epoch") for line in lines] == [0, 0]
    assert json.loads(lines[0])["mesh_ce"] == pytest.approx(1.0)


def test_bundled_desk_configs_load():
    directory = os.path.join(os.path.dirname(meshtok.__file__), "data")
    codec = TrainConfig.from_yaml(os.path.join(directory, "desk_codec.yaml"))
    predictor = TrainConfig.from_yaml(os.path.join(directory, "desk_predictor.yaml"))
    assert codec.stage == Stage.CODEC and codec.codec == CodecConfig()
    assert predictor.stage == Stage.PREDICTOR and predictor.model.hidden_dim == 128


def test_logit_head_is_set_only_at_the_top_level(tmp_path):
    config = TrainConfig(stage=Stage.PREDICTOR, logit_head="self_attention",
                         model=ModelConfig(logit_head="mlp"))
    assert config.model.logit_head == "self_attention"
    assert "logit_head" not in config.to_dict()["model"]
    assert config.to_dict()["logit_head"] == "self_attention"
    with pytest.raises(ConfigurationException):
        TrainConfig.from_dict({"model": {"logit_head": "self_attention"}})
    path = tmp_path / "head.yaml"
    path.write_text("stage: predictor\nlogit_head: self_attention\nmodel:\n  hidden_dim: 16\n")
    loaded = TrainConfig.from_yaml(str(path))
    assert loaded.model.logit_head == "self_attention"
    assert loaded.predictor_model_config(4, 8, 16).logit_head == "self_attention"
