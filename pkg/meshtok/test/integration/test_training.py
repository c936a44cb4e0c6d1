import json
import os

import numpy as np
import pytest
import torch

from meshtok.codec.mesh_vqvae import CodecConfig, MeshVQVAE
from meshtok.errors import (ConfigurationException, FingerprintMismatchException, InvalidInputException,
                            TrainingDivergedException)
from meshtok.losses import cross_entropy_mesh, weighted_sum
from meshtok.model.vqhps import VQHPS, ModelConfig
from meshtok.synthetic.dataset import DataSplit, build_dataset
from meshtok.synthetic.template import build_desk_template
from meshtok.training.checkpoint import load_codec, load_model
from meshtok.training.codec_trainer import reconstruction_pve, train_codec
from meshtok.training.config import AblationFlags, Stage, TrainConfig
from meshtok.training.evaluation import MostFrequentTokenPredictor, OraclePredictor, evaluate
from meshtok.training import predictor_trainer
from meshtok.training.predictor_trainer import predictor_loss_terms, record_tensors, train_predictor

SMALL_CODEC = CodecConfig(channels=[4, 4, 4], basis_count=2, latent_dim=3, codebook_size=8)
SMALL_MODEL = ModelConfig(stage_channels=[4, 8], hidden_dim=8, num_heads=2, encoder_layers=1, decoder_layers=1,
                          feedforward_dim=16, regressor_hidden=16, logit_hidden=16, condition_embed_dim=4,
                          dropout=0.0)


def _helper_dataset(count: int = 12, seed: int = 0):
    return build_dataset(build_desk_template(), count, seed, image_size=16)


def _helper_codec_config(**overrides) -> TrainConfig:
    values = dict(stage=Stage.CODEC, epochs=2, batch_size=4, learning_rate=1e-3, seed=0, max_steps=3,
                  codec=SMALL_CODEC)
    values.update(overrides)
    return TrainConfig(**values)


def _helper_predictor_config(**overrides) -> TrainConfig:
    values = dict(stage=Stage.PREDICTOR, epochs=2, batch_size=4, learning_rate=1e-3, seed=0, max_steps=3,
                  model=SMALL_MODEL)
    values.update(overrides)
    return TrainConfig(**values)


def _helper_codec(seed: int = 0) -> MeshVQVAE:
    torch.manual_seed(seed)
    return MeshVQVAE(build_desk_template().topology, SMALL_CODEC)


class _NanLogitVQHPS(VQHPS):
    def attach_codec(self, codec):
        with torch.no_grad():
            self.logit_head.head[0].weight.fill_(float("nan"))
        return super().attach_codec(codec)


def test_codec_training_smoke(tmp_path):
    dataset = _helper_dataset()
    result = train_codec(_helper_codec_config(), dataset, str(tmp_path))
    assert result.steps == 3
    assert np.isfinite(result.validation_pve)
    assert 0.0 < result.codebook_usage <= 1.0
    assert not any(parameter.requires_grad for parameter in result.codec.parameters())

    loaded, manifest = load_codec(str(tmp_path))
    assert loaded.fingerprint() == result.codec.fingerprint()
    assert manifest["training_data_fingerprint"] == dataset.fingerprint
    assert manifest["N"] == 16 and manifest["S"] == 8
    lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
    assert any("val_pve_mm" in json.loads(line) for line in lines)


def test_codec_training_is_reproducible():
    dataset = _helper_dataset()
    first = train_codec(_helper_codec_config(), dataset)
    second = train_codec(_helper_codec_config(), dataset)
    assert first.codec.fingerprint() == second.codec.fingerprint()
    assert first.validation_pve == second.validation_pve


def test_codec_stage_needs_codec_config():
    with pytest.raises(ConfigurationException):
        train_codec(_helper_predictor_config(), _helper_dataset(count=4))


def test_predictor_training_keeps_codec_frozen(tmp_path):
    dataset = _helper_dataset()
    codec = _helper_codec()
    fingerprint = codec.fingerprint()
    result = train_predictor(_helper_predictor_config(visualise_every=1, visualise_count=1), dataset, codec,
                             str(tmp_path))
    assert result.freeze_verified
    assert result.codec_fingerprint == fingerprint == codec.fingerprint()
    assert dataset.has_tokens and dataset.codec_fingerprint == fingerprint
    assert result.model.config.num_cells == 16 and result.model.config.image_size == 16

    model, manifest = load_model(str(tmp_path), codec)
    assert manifest["active_losses"] == ["mesh_ce", "rot_mse", "reproj_l1"]
    assert manifest["codec_fingerprint"] == fingerprint
    assert any(path.endswith(".obj") for path in result.artifacts)
    assert os.path.isdir(tmp_path / "last_good")


def test_predictor_refuses_tokens_from_another_codec():
    dataset = _helper_dataset(count=6)
    dataset.attach_tokens(_helper_codec(seed=0))
    with pytest.raises(FingerprintMismatchException):
        train_predictor(_helper_predictor_config(), dataset, _helper_codec(seed=3))


def test_no_reprojection_leaves_camera_rows_without_gradient():
    dataset = _helper_dataset(count=6)
    codec = _helper_codec()
    dataset.attach_tokens(codec)
    config = _helper_predictor_config(ablation=AblationFlags(no_reprojection=True))
    model = VQHPS(config.predictor_model_config(16, 8, 16)).attach_codec(codec).train()
    regressor = torch.as_tensor(dataset.regressor.matrix, dtype=torch.float32)
    terms = predictor_loss_terms(model, config, regressor, *record_tensors(dataset.records).tensors)
    assert set(terms) == {"mesh_ce", "rot_mse"}
    weighted_sum(terms, config.loss_weights.as_dict()).backward()

    output_layer = model.rotation_camera_head.output
    assert torch.count_nonzero(output_layer.weight.grad[6:]) == 0
    assert torch.count_nonzero(output_layer.bias.grad[6:]) == 0
    assert output_layer.weight.grad[:6].abs().sum() > 0


def test_full_loss_reaches_the_camera_rows():
    dataset = _helper_dataset(count=6)
    codec = _helper_codec()
    dataset.attach_tokens(codec)
    config = _helper_predictor_config()
    model = VQHPS(config.predictor_model_config(16, 8, 16)).attach_codec(codec).train()
    regressor = torch.as_tensor(dataset.regressor.matrix, dtype=torch.float32)
    terms = predictor_loss_terms(model, config, regressor, *record_tensors(dataset.records).tensors)
    weighted_sum(terms, config.loss_weights.as_dict()).backward()
    assert model.rotation_camera_head.output.bias.grad[6:].abs().sum() > 0


def test_loss_3d_ablation_trains_the_token_path_through_the_codebook_mixture():
    dataset = _helper_dataset(count=6)
    codec = _helper_codec()
    dataset.attach_tokens(codec)
    config = _helper_predictor_config(ablation=AblationFlags(loss_3d=True))
    model = VQHPS(config.predictor_model_config(16, 8, 16)).attach_codec(codec).train()
    regressor = torch.as_tensor(dataset.regressor.matrix, dtype=torch.float32)
    terms = predictor_loss_terms(model, config, regressor, *record_tensors(dataset.records).tensors)
    assert set(terms) == {"recon_3d", "rot_mse", "reproj_l1"}
    terms["recon_3d"].backward()
    assert model.logit_head.head[0].weight.grad.abs().sum() > 0
    assert all(p.grad is None for p in model.rotation_camera_head.parameters())
    assert all(p.grad is None for p in codec.parameters())


def test_diverged_training_reports_last_good_checkpoint(tmp_path):
    dataset = _helper_dataset(count=6)
    for record in dataset.records:
        record.gt_joints_2d = np.full_like(record.gt_joints_2d, np.nan)
    with pytest.raises(TrainingDivergedException) as caught:
        train_predictor(_helper_predictor_config(), dataset, _helper_codec(), str(tmp_path))
    assert caught.value.last_good_checkpoint is None


def test_oracle_is_the_codec_quantization_floor():
    dataset = _helper_dataset(count=6)
    codec = _helper_codec()
    dataset.attach_tokens(codec)
    report = evaluate(OraclePredictor(), codec, dataset.records, dataset.regressor)
    summary = report.summary()
    assert summary["count"] == 6
    assert summary["token_accuracy"] == 1.0
    vertices = torch.as_tensor(np.stack([record.gt_canonical.vertices for record in dataset.records]),
                               dtype=torch.float32)
    assert summary["pve_mm"] == pytest.approx(reconstruction_pve(codec, vertices), rel=1e-3)


def test_pa_mpjpe_never_exceeds_mpjpe_for_any_predictor():
    dataset = _helper_dataset(count=8)
    codec = _helper_codec()
    dataset.attach_tokens(codec)
    model = VQHPS(_helper_predictor_config().predictor_model_config(16, 8, 16)).attach_codec(codec)
    baseline = MostFrequentTokenPredictor(dataset.split(DataSplit.TRAIN), 8, model)
    for predictor in (model, baseline, OraclePredictor()):
        report = evaluate(predictor, codec, dataset.records, dataset.regressor)
        assert report.count == 8
        for sample in report.samples:
            assert sample.pa_mpjpe_mm <= sample.mpjpe_mm + 1e-9


def test_most_frequent_token_takes_lowest_index_on_ties():
    dataset = _helper_dataset(count=2)
    dataset.records[0].gt_tokens = np.full(16, 5)
    dataset.records[1].gt_tokens = np.full(16, 2)
    baseline = MostFrequentTokenPredictor(dataset.records, 8)
    tokens, rotations = baseline.predict(dataset.records)
    assert np.array_equal(tokens, np.full((2, 16), 2))
    assert np.array_equal(rotations, np.repeat(np.eye(3)[None], 2, axis=0))


def test_empty_split_gives_empty_report(tmp_path):
    report = evaluate(OraclePredictor(), _helper_codec(), [], build_desk_template().regressor)
    assert report.count == 0
    assert report.summary()["pve_mm"] is None
    report.write_csv(str(tmp_path / "empty.csv"))
    assert (tmp_path / "empty.csv").read_text().strip() == "name,pve_mm,mpjpe_mm,pa_mpjpe_mm,token_accuracy"


def test_predictor_needs_training_records():
    dataset = _helper_dataset(count=4)
    for record in dataset.records:
        record.split = DataSplit.TEST
    with pytest.raises(InvalidInputException):
        train_predictor(_helper_predictor_config(), dataset, _helper_codec())


def test_nan_logits_report_the_last_good_checkpoint():
    dataset = _helper_dataset(count=6)
    codec = _helper_codec()
    dataset.attach_tokens(codec)
    config = _helper_predictor_config()
    model = VQHPS(config.predictor_model_config(16, 8, 16)).attach_codec(codec).train()
    with torch.no_grad():
        model.logit_head.head[0].weight[0, 0] = float("nan")
    regressor = torch.as_tensor(dataset.regressor.matrix, dtype=torch.float32)
    with pytest.raises(TrainingDivergedException) as caught:
        predictor_loss_terms(model, config, regressor, *record_tensors(dataset.records).tensors,
                             last_good_checkpoint="run/last_good")
    assert caught.value.last_good_checkpoint == "run/last_good"


def test_nan_weights_diverge_instead_of_rejecting_input(monkeypatch, tmp_path):
    monkeypatch.setattr(predictor_trainer, "VQHPS", _NanLogitVQHPS)
    with pytest.raises(TrainingDivergedException) as caught:
        train_predictor(_helper_predictor_config(), _helper_dataset(count=6), _helper_codec(), str(tmp_path))
    assert caught.value.last_good_checkpoint is None


def test_codec_loss_decreases_over_fifty_steps(tmp_path):
    config = _helper_codec_config(epochs=50, max_steps=50, learning_rate=3e-3, early_stop_patience=100)
    result = train_codec(config, _helper_dataset(), str(tmp_path))
    assert result.steps == 50
    lines = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    losses = [line["recon_3d"] for line in lines if "step" in line]
    assert len(losses) == 50
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_token_accuracy_beats_chance_tenfold():
    dataset = _helper_dataset(count=8)
    torch.manual_seed(0)
    codec = MeshVQVAE(build_desk_template().topology,
                      CodecConfig(channels=[4, 4, 4], basis_count=2, latent_dim=3, codebook_size=64))
    dataset.attach_tokens(codec)
    config = _helper_predictor_config()
    model = VQHPS(config.predictor_model_config(16, 64, 16)).attach_codec(codec).train()
    images, tokens = record_tensors(dataset.records).tensors[:2]
    optimiser = torch.optim.Adam(model.parameters(), lr=3e-3)
    for _ in range(150):
        loss = cross_entropy_mesh(model(images).logits, tokens)
        optimiser.zero_grad()
        loss.backward()
        optimiser.step()
    accuracy = evaluate(model, codec, dataset.records, dataset.regressor).summary()["token_accuracy"]
    assert accuracy >= 10 / 64
