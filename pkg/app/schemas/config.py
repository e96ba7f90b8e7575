from pathlib import Path
from typing import Literal, Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Variant = Literal["dave", "dave-adv", "dave-aae"]
DatasetFormat = Literal["movielens-tab", "movielens-double-colon", "csv"]

# Published per-dataset settings; explicit config keys win over these
DATASET_PRESETS = {
    "ml-100k": {"batch_size": 256, "negative_ratio": 4, "embedding_dim": 64, "split_policy": "latest",
                "dataset_format": "movielens-tab"},
    "ml-1m": {"batch_size": 256, "negative_ratio": 3, "embedding_dim": 64, "split_policy": "latest",
              "dataset_format": "movielens-double-colon"},
    "yelp": {"batch_size": 128, "negative_ratio": 4, "embedding_dim": 32, "split_policy": "latest",
             "min_user_interactions": 10},
    "digital-music": {"batch_size": 128, "negative_ratio": 2, "embedding_dim": 64, "split_policy": "random",
                      "min_user_interactions": 5, "min_item_interactions": 5},
    "pinterest": {"batch_size": 256, "negative_ratio": 2, "embedding_dim": 64, "split_policy": "random"},
}


def _parse_widths(value):
    if value is None or isinstance(value, (tuple, list)):
        return value
    text = str(value).strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


def _check_widths(value):
    if value is not None and any(width <= 0 for width in value):
        raise ValueError(f"layer widths must be positive, got {value}")
    return value


class ModelConfig(BaseModel):
    """Shapes of the six networks plus the predictor. Hidden widths default to one 2d-wide layer."""

    model_config = ConfigDict(frozen=True)

    num_users: int = Field(..., gt=0)
    num_items: int = Field(..., gt=0)
    embedding_dim: int = Field(64, ge=1)
    encoder_hidden: Optional[Tuple[int, ...]] = None
    decoder_hidden: Optional[Tuple[int, ...]] = None
    discriminator_hidden: Tuple[int, ...] = (50, 100)
    predictor_hidden: Tuple[int, ...] = (32, 32, 32)
    variant: Variant = "dave"

    @model_validator(mode="before")
    @classmethod
    def default_trunks(cls, data):
        if isinstance(data, dict):
            data = dict(data)
            width = 2 * int(data.get("embedding_dim", 64))
            for key in ("encoder_hidden", "decoder_hidden"):
                if data.get(key) is None:
                    data[key] = (width,)
        return data

    @field_validator("encoder_hidden", "decoder_hidden", "discriminator_hidden", "predictor_hidden", mode="before")
    @classmethod
    def parse_widths(cls, value):
        return _check_widths(_parse_widths(value))

    @property
    def uses_discriminators(self) -> bool:
        return self.variant != "dave-adv"

    def input_width(self, side: str) -> int:
        # A user vector is a row of R (one entry per item) and vice versa
        return self.num_items if side == "user" else self.num_users


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    variant: Variant = "dave"
    seed: int = Field(0, ge=0)
    batch_size: int = Field(256, ge=1)
    negative_ratio: int = Field(4, ge=1)
    embedding_dim: int = Field(64, ge=1)
    learning_rate: float = Field(1e-4, gt=0)
    disc_learning_rate: Optional[float] = Field(None, gt=0)
    max_epochs: int = Field(200, ge=1)
    patience: int = Field(10, ge=0)
    validation_k: int = Field(10, ge=1)
    encoder_hidden: Optional[Tuple[int, ...]] = None
    decoder_hidden: Optional[Tuple[int, ...]] = None
    discriminator_hidden: Tuple[int, ...] = (50, 100)
    predictor_hidden: Tuple[int, ...] = (32, 32, 32)
    weight_vae_user: float = Field(1.0, ge=0)
    weight_vae_item: float = Field(1.0, ge=0)
    weight_prediction: float = Field(1.0, ge=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_epsilon: float = Field(1e-8, gt=0)
    rmsprop_decay: float = Field(0.9, ge=0, lt=1)
    rmsprop_epsilon: float = Field(1e-8, gt=0)
    prefetch_workers: int = Field(2, ge=0)
    show_progress: bool = False

    @field_validator("encoder_hidden", "decoder_hidden", "discriminator_hidden", "predictor_hidden", mode="before")
    @classmethod
    def parse_widths(cls, value):
        return _check_widths(_parse_widths(value))

    def to_model_config(self, num_users: int, num_items: int) -> ModelConfig:
        return ModelConfig(
            num_users=num_users,
            num_items=num_items,
            embedding_dim=self.embedding_dim,
            encoder_hidden=self.encoder_hidden,
            decoder_hidden=self.decoder_hidden,
            discriminator_hidden=self.discriminator_hidden,
            predictor_hidden=self.predictor_hidden,
            variant=self.variant,
        )

    @property
    def discriminator_learning_rate(self) -> float:
        return self.disc_learning_rate or self.learning_rate

    @property
    def objective_weights(self) -> dict:
        return {"user": self.weight_vae_user, "item": self.weight_vae_item, "prediction": self.weight_prediction}


class RunConfig(TrainConfig):
    """Everything one CLI invocation needs. Only `dataset_path` lacks a default."""

    dataset_path: str
    dataset_format: DatasetFormat = "movielens-tab"
    dataset_name: Optional[str] = None
    preset: Optional[str] = None
    min_user_interactions: int = Field(1, ge=1)
    min_item_interactions: int = Field(1, ge=1)
    split_policy: Literal["latest", "random"] = "latest"
    num_eval_negatives: int = Field(99, ge=1)
    drop_short_users: bool = True
    output_dir: str = "runs/default"
    split_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    noise_levels: Tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    robustness_mode: Literal["fixed", "per-entity"] = "fixed"
    export_side: Literal["user", "item"] = "user"

    @field_validator("noise_levels", mode="before")
    @classmethod
    def parse_levels(cls, value):
        if isinstance(value, str):
            value = tuple(float(part) for part in value.split(",") if part.strip())
        if any(not 0.0 <= level <= 1.0 for level in value):
            raise ValueError(f"noise levels must lie in [0, 1], got {value}")
        return value

    @field_validator("preset")
    @classmethod
    def known_preset(cls, value):
        if value is not None and value not in DATASET_PRESETS:
            raise ValueError(f"unknown preset '{value}', expected one of {sorted(DATASET_PRESETS)}")
        return value

    @property
    def resolved_dataset_name(self) -> str:
        return self.dataset_name or self.preset or Path(self.dataset_path).stem

    @property
    def resolved_split_dir(self) -> Path:
        return Path(self.split_dir) if self.split_dir else Path(self.output_dir) / "split"

    @property
    def resolved_checkpoint(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.output_dir) / "checkpoint.dave"

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.model_dump(include=set(TrainConfig.model_fields)))
