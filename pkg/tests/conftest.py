import numpy as np
import pytest

from app.models.params import ModelParams, init_params, layer_shapes
from app.schemas.config import ModelConfig, TrainConfig
from app.services.manage_data.interactions import InteractionMatrix
from app.services.manage_data.splitter import leave_one_out_split
from app.utils.diffcore import frozen
from app.utils.rng import make_rng

NUM_USERS, NUM_ITEMS = 6, 8


def block_pairs():
    """Users 0-2 watch items 0-3, users 3-5 watch items 4-7, with increasing timestamps."""
    users, items, stamps = [], [], []
    for user in range(NUM_USERS):
        block = range(0, 4) if user < 3 else range(4, 8)
        for offset, item in enumerate(block):
            users.append(user)
            items.append(item)
            stamps.append(100 * user + offset)
    return users, items, stamps


def write_block_dataset(path, with_timestamps: bool = True):
    users, items, stamps = block_pairs()
    lines = []
    for user, item, stamp in zip(users, items, stamps):
        fields = [str(user + 1), str(item + 1)] + ([str(4), str(stamp)] if with_timestamps else [])
        lines.append("\t".join(fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def signed_uniform(rng, shape, low=0.3, high=1.0):
    """Values bounded away from zero, so relu inputs and gradients stay clear of kinks."""
    return rng.uniform(low, high, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def jittered_params(config: ModelConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors = {name: frozen(signed_uniform(rng, shape)) for name, shape in layer_shapes(config)}
    return ModelParams(config=config, tensors=tensors)


def tiny_model_config(variant: str = "dave", num_users: int = 3, num_items: int = 4, d: int = 2) -> ModelConfig:
    return ModelConfig(
        num_users=num_users,
        num_items=num_items,
        embedding_dim=d,
        encoder_hidden=(3,),
        decoder_hidden=(3,),
        discriminator_hidden=(3,),
        predictor_hidden=(3,),
        variant=variant,
    )


@pytest.fixture
def block_matrix() -> InteractionMatrix:
    users, items, stamps = block_pairs()
    return InteractionMatrix.from_pairs(users, items, stamps, num_users=NUM_USERS, num_items=NUM_ITEMS)


@pytest.fixture
def block_split(block_matrix):
    return leave_one_out_split(block_matrix, policy="latest", seed=0, num_negatives=3)


@pytest.fixture
def small_config() -> TrainConfig:
    return TrainConfig(
        seed=0,
        batch_size=16,
        negative_ratio=3,
        embedding_dim=4,
        learning_rate=1e-2,
        max_epochs=3,
        patience=100,
        encoder_hidden=(8,),
        decoder_hidden=(8,),
        discriminator_hidden=(8,),
        predictor_hidden=(8,),
        prefetch_workers=0,
    )


@pytest.fixture
def small_params(small_config, block_split) -> ModelParams:
    config = small_config.to_model_config(block_split.num_users, block_split.num_items)
    return init_params(config, make_rng(small_config.seed, "init"))
