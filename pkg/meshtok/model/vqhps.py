import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn as nn

from meshtok.data.skeleton import H36M_T_POSE
from meshtok.errors import ConfigurationException, InvalidInputException, NonFiniteLogitsException
from meshtok.model.backbone import FeatureExtractor
from meshtok.model.rotation import IDENTITY_6D, rot6d_to_matrix, rotate_vertices
from meshtok.model.transformer import ImageTokenEncoder, LogitHead, LogitHeadType, MeshTokenDecoder

logger = logging.getLogger(__name__)

LOG_SCALE_LIMIT = 10.0


@dataclass
class ModelConfig:
    image_size: int = 64
    in_channels: int = 1
    stage_channels: List[int] = field(default_factory=lambda: [32, 64, 128, 128])
    hidden_dim: int = 128
    num_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    feedforward_dim: int = 512
    regressor_hidden: int = 1024
    logit_hidden: int = 1024
    condition_embed_dim: int = 32
    dropout: float = 0.1
    logit_head: str = "mlp"
    num_cells: int = 16
    codebook_size: int = 512

    @classmethod
    def desk(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def full_scale(cls) -> "ModelConfig":
        return cls(image_size=224, in_channels=3, stage_channels=[64, 128, 256, 512, 2048], hidden_dim=512,
                   num_heads=8, encoder_layers=3, decoder_layers=3, feedforward_dim=1024,
                   condition_embed_dim=64, num_cells=54)

    @property
    def head_type(self) -> LogitHeadType:
        return LogitHeadType.from_string(self.logit_head)

    @property
    def grid_size(self) -> int:
        return self.image_size // (2 ** len(self.stage_channels))

    def validate(self) -> None:
        if self.grid_size < 1:
            raise ConfigurationException(
                f"{len(self.stage_channels)} stride-2 stages leave no spatial grid for {self.image_size} px images")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigurationException("Hidden dimension must be divisible by the number of attention heads.")
        if self.codebook_size < 2 or self.num_cells < 1:
            raise ConfigurationException("Model needs at least one latent cell and two codebook entries.")
        try:
            self.head_type
        except ValueError as error:
            raise ConfigurationException(str(error)) from error

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class ImageFeatureMap:
    grid: torch.Tensor
    vector: torch.Tensor


@dataclass
class PredictionOutput:
    canonical_vertices: torch.Tensor
    rotation: torch.Tensor
    camera: torch.Tensor
    vertices: torch.Tensor
    logits: torch.Tensor
    tokens: torch.Tensor


class RotationCameraHead(nn.Module):
    """Two 1024-wide fully connected layers on [X_rot, flattened initial pose].

    Outputs a 6D rotation and (log s, tx, ty). The output layer starts near zero on top of
    a fixed offset, so an untrained head predicts the identity rotation and s = 1.
    """

    def __init__(self, feature_dim: int, hidden_dim: int = 1024, dropout: float = 0.1,
                 initial_pose: Optional[torch.Tensor] = None) -> None:
        super().__init__()
        if initial_pose is None:
            initial_pose = torch.tensor(H36M_T_POSE, dtype=torch.float32)
        self.register_buffer("initial_pose", initial_pose.reshape(-1))
        self.input_dim = feature_dim + self.initial_pose.numel()
        self.mlp = nn.Sequential(
            nn.Linear(self.input_dim, hidden_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden_dim, hidden_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
        )
        self.output = nn.Linear(hidden_dim, 9)
        nn.init.xavier_uniform_(self.output.weight, gain=0.01)
        nn.init.zeros_(self.output.bias)
        self.register_buffer("output_offset", torch.tensor(IDENTITY_6D + (0.0, 0.0, 0.0)))

    def forward(self, vector: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if vector.shape[-1] + self.initial_pose.numel() != self.input_dim:
            raise InvalidInputException(
                f"Expected {self.input_dim - self.initial_pose.numel()} features, got {vector.shape[-1]}")
        pose = self.initial_pose.to(vector.dtype).unsqueeze(0).expand(vector.shape[0], -1)
        raw = self.output(self.mlp(torch.cat([vector, pose], dim=-1))) + self.output_offset.to(vector.dtype)
        rotation = rot6d_to_matrix(raw[:, :6])
        scale = torch.exp(raw[:, 6:7].clamp(-LOG_SCALE_LIMIT, LOG_SCALE_LIMIT))
        camera = torch.cat([scale, raw[:, 7:9]], dim=-1)
        return rotation, camera


class VQHPS(nn.Module):
    """Image to mesh tokens, global rotation and weak-perspective camera.

    The pipeline predicts the camera and rotation first, classifies the N latent cells of
    the canonical mesh conditioned on them, decodes the argmax tokens with a frozen codec
    and finally rotates the canonical mesh.
    """

    def __init__(self, config: ModelConfig = None) -> None:
        super().__init__()
        config = config or ModelConfig.desk()
        config.validate()
        self.config = config

        self.rotation_extractor = FeatureExtractor(config.in_channels, config.image_size, config.stage_channels)
        self.mesh_extractor = FeatureExtractor(config.in_channels, config.image_size, config.stage_channels)
        feature_dim = self.mesh_extractor.out_channels
        grid = self.mesh_extractor.grid_size

        self.rotation_camera_head = RotationCameraHead(feature_dim, config.regressor_hidden, config.dropout)
        self.image_encoder = ImageTokenEncoder(feature_dim, config.hidden_dim, grid, grid, config.encoder_layers,
                                               config.num_heads, config.feedforward_dim, config.dropout)
        self.mesh_decoder = MeshTokenDecoder(config.num_cells, config.hidden_dim, config.decoder_layers,
                                             config.num_heads, config.feedforward_dim, config.dropout)
        self.logit_head = LogitHead(config.hidden_dim, config.codebook_size, config.logit_hidden,
                                    config.condition_embed_dim, config.head_type, config.num_heads, config.dropout)
        # kept out of the module tree: the model state dict and optimiser never see codec parameters
        object.__setattr__(self, "_codec", None)

    @property
    def codec(self):
        if self._codec is None:
            raise ConfigurationException("No codec attached to the model; call attach_codec first.")
        return self._codec

    @property
    def has_codec(self) -> bool:
        return self._codec is not None

    def attach_codec(self, codec) -> "VQHPS":
        if codec.num_cells != self.config.num_cells or codec.codebook_size != self.config.codebook_size:
            raise ConfigurationException(
                f"Codec has N={codec.num_cells}, S={codec.codebook_size}; "
                f"model expects N={self.config.num_cells}, S={self.config.codebook_size}")
        object.__setattr__(self, "_codec", codec.freeze())
        logger.debug("Attached frozen codec %s", codec.fingerprint())
        return self

    def extract_features(self, image: torch.Tensor) -> Tuple[ImageFeatureMap, ImageFeatureMap]:
        """Features of the rotation/camera extractor and of the mesh extractor, in that order."""
        rotation_grid, rotation_vector = self.rotation_extractor(image)
        mesh_grid, mesh_vector = self.mesh_extractor(image)
        return ImageFeatureMap(rotation_grid, rotation_vector), ImageFeatureMap(mesh_grid, mesh_vector)

    def predict_rotation_camera(self, vector: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.rotation_camera_head(vector)

    def encode_image_tokens(self, grid: torch.Tensor) -> torch.Tensor:
        return self.image_encoder(grid)

    def decode_mesh_logits(self, image_tokens: torch.Tensor, rotation: torch.Tensor,
                           camera: torch.Tensor) -> torch.Tensor:
        # conditioning only: the token loss never reaches the rotation/camera head
        mesh_features = self.mesh_decoder(image_tokens)
        return self.logit_head(mesh_features, rotation.detach(), camera.detach())

    @staticmethod
    def predict_tokens(logits: torch.Tensor) -> torch.Tensor:
        if torch.isnan(logits).any():
            raise NonFiniteLogitsException("Cannot predict tokens from NaN logits.")
        return torch.argmax(logits, dim=-1)

    def soft_canonical_vertices(self, logits: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
        """Canonical vertices decoded from the softmax mixture of codebook entries."""
        mixture = self.codec.codebook.soft_dequantize(logits, temperature)
        return self.codec.decode(mixture.to(self.codec.codebook.entries.dtype))

    def forward(self, image: torch.Tensor) -> PredictionOutput:
        codec = self.codec
        rotation_features, mesh_features = self.extract_features(image)
        rotation, camera = self.predict_rotation_camera(rotation_features.vector)
        image_tokens = self.encode_image_tokens(mesh_features.grid)
        logits = self.decode_mesh_logits(image_tokens, rotation, camera)
        tokens = self.predict_tokens(logits.detach())
        with torch.no_grad():
            canonical = codec.decode_tokens(tokens).to(rotation.dtype)
        vertices = rotate_vertices(canonical, rotation)
        return PredictionOutput(canonical, rotation, camera, vertices, logits, tokens)

    @torch.no_grad()
    def predict(self, image: torch.Tensor) -> PredictionOutput:
        was_training = self.training
        self.eval()
        try:
            return self(image)
        finally:
            self.train(was_training)

    def manifest(self) -> Dict:
        config = self.config
        return {
            "D": config.hidden_dim,
            "N": config.num_cells,
            "S": config.codebook_size,
            "encoder_layers": config.encoder_layers,
            "decoder_layers": config.decoder_layers,
            "num_heads": config.num_heads,
            "logit_head": config.head_type.name.lower(),
            "image_size": config.image_size,
            "codec_fingerprint": self._codec.fingerprint() if self._codec is not None else None,
        }
