from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum, unique
from typing import Any, Dict, List, Optional

import yaml

from meshtok.codec.mesh_vqvae import CodecConfig
from meshtok.errors import ConfigurationException
from meshtok.model.transformer import LogitHeadType
from meshtok.model.vqhps import ModelConfig


@unique
class Stage(Enum):
    CODEC = 1
    PREDICTOR = 2

    @staticmethod
    def from_string(label: str) -> "Stage":
        for value in Stage:
            if str(value.name).lower() == label.lower():
                return value
        raise ValueError(f"Unknown training stage: {label}")


@dataclass
class LossWeights:
    mesh_ce: float = 1.0
    rot_mse: float = 1.0
    reproj_l1: float = 1.0
    recon_3d: float = 1.0

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class AblationFlags:
    # replace the token cross-entropy with a per-vertex 3D loss through a soft codebook mixture
    loss_3d: bool = False
    no_reprojection: bool = False

    @classmethod
    def from_names(cls, names: List[str]) -> "AblationFlags":
        flags = cls()
        for name in names:
            key = name.lower().replace("-", "_")
            if key not in {f.name for f in fields(cls)}:
                raise ConfigurationException(f"Unknown ablation: {name}")
            setattr(flags, key, True)
        return flags


def _build(cls, data: Optional[Dict[str, Any]], section: str):
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigurationException(f"Config section '{section}' must be a mapping.")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationException(f"Unknown keys in '{section}': {', '.join(sorted(unknown))}")
    return cls(**data)


@dataclass
class TrainConfig:
    stage: Stage = Stage.CODEC
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-4
    seed: int = 0
    grad_clip: float = 1.0
    early_stop_patience: int = 10
    loss_weights: LossWeights = field(default_factory=LossWeights)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    # the only place the head type is set; model.logit_head mirrors it
    logit_head: str = "mlp"
    soft_temperature: float = 1.0
    deterministic: bool = False
    # export decoded validation predictions every k epochs; 0 disables
    visualise_every: int = 0
    visualise_count: int = 4
    # stop after this many optimiser steps (smoke runs)
    max_steps: Optional[int] = None
    codec: CodecConfig = field(default_factory=CodecConfig)
    model: ModelConfig = field(default_factory=ModelConfig.desk)

    def __post_init__(self) -> None:
        self.model = replace(self.model, logit_head=self.logit_head)

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationException("Epochs and batch size must be positive.")
        if self.learning_rate <= 0:
            raise ConfigurationException("Learning rate must be positive.")
        if self.early_stop_patience < 1:
            raise ConfigurationException("Early-stopping patience must be at least one epoch.")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationException("max_steps must be positive when given.")
        if self.soft_temperature <= 0:
            raise ConfigurationException("Soft-mixture temperature must be positive.")
        try:
            LogitHeadType.from_string(self.logit_head)
        except ValueError as error:
            raise ConfigurationException(str(error)) from error
        if self.stage == Stage.CODEC and (self.ablation.loss_3d or self.ablation.no_reprojection):
            raise ConfigurationException("Ablation flags only apply to the predictor stage.")

    def active_terms(self) -> List[str]:
        """Loss terms of the predictor stage; the 3D-loss ablation replaces mesh_ce with recon_3d."""
        terms = ["recon_3d" if self.ablation.loss_3d else "mesh_ce", "rot_mse"]
        if not self.ablation.no_reprojection:
            terms.append("reproj_l1")
        return terms

    def predictor_model_config(self, num_cells: int, codebook_size: int, image_size: int) -> ModelConfig:
        data = self.model.to_dict()
        data.update(num_cells=num_cells, codebook_size=codebook_size, image_size=image_size,
                    logit_head=self.logit_head)
        return ModelConfig.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["stage"] = self.stage.name.lower()
        del data["model"]["logit_head"]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationException(f"Unknown config keys: {', '.join(sorted(unknown))}")
        if "stage" in data:
            try:
                data["stage"] = Stage.from_string(str(data["stage"]))
            except ValueError as error:
                raise ConfigurationException(str(error)) from error
        data["loss_weights"] = _build(LossWeights, data.get("loss_weights"), "loss_weights")
        data["ablation"] = _build(AblationFlags, data.get("ablation"), "ablation")
        data["codec"] = _build(CodecConfig, data.get("codec"), "codec")
        if isinstance(data.get("model"), dict) and "logit_head" in data["model"]:
            raise ConfigurationException("Set logit_head at the top level of the config, not under 'model'.")
        data["model"] = _build(ModelConfig, data.get("model"), "model")
        try:
            config = cls(**data)
        except TypeError as error:
            raise ConfigurationException(f"Invalid training config: {error}") from error
        config.validate()
        return config

    @classmethod
    def from_yaml(cls, in_path: str) -> "TrainConfig":
        with open(in_path, "r") as config_file:
            try:
                data = yaml.safe_load(config_file)
            except yaml.YAMLError as error:
                raise ConfigurationException(f"Could not parse {in_path}: {error}") from error
        if data is not None and not isinstance(data, dict):
            raise ConfigurationException(f"{in_path} must hold a mapping at the top level.")
        return cls.from_dict(data or {})

    def write_yaml(self, out_path: str) -> None:
        with open(out_path, "w") as out:
            yaml.safe_dump(self.to_dict(), out, sort_keys=False)
