from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

from app.schemas.config import ModelConfig
from app.utils.diffcore import frozen
from app.utils.exceptions import ShapeError

SIDES = ("user", "item")
GENERATOR_PREFIXES = ("encoder_", "decoder_", "predictor")
DISCRIMINATOR_PREFIX = "discriminator_"


def group_of(name: str) -> str:
    return name.split(".", 1)[0]


def is_discriminator(name: str) -> bool:
    return name.startswith(DISCRIMINATOR_PREFIX)


def _dense_layers(prefix: str, widths: List[int]) -> List[Tuple[str, Tuple[int, ...]]]:
    shapes = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        shapes.append((f"{prefix}.{i}.weight", (fan_in, fan_out)))
        shapes.append((f"{prefix}.{i}.bias", (fan_out,)))
    return shapes


def layer_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """
    Every parameter tensor of a model, in declaration order.

    Weights are stored (fan_in, fan_out) so a layer computes `x @ W + b` on row
    batches. Order: encoders, decoders, discriminators (absent for dave-adv),
    predictor; user side before item side.
    """
    d = config.embedding_dim
    shapes = []
    for side in SIDES:
        trunk = [config.input_width(side), *config.encoder_hidden]
        shapes += _dense_layers(f"encoder_{side}", trunk)
        heads = ("mean",) if config.variant == "dave-aae" else ("mean", "logvar")
        for head in heads:
            shapes += [(f"encoder_{side}.{head}.weight", (trunk[-1], d)), (f"encoder_{side}.{head}.bias", (d,))]
    for side in SIDES:
        shapes += _dense_layers(f"decoder_{side}", [d, *config.decoder_hidden, config.input_width(side)])
    if config.uses_discriminators:
        for side in SIDES:
            shapes += _dense_layers(f"discriminator_{side}", [d, *config.discriminator_hidden, 1])
    shapes += _dense_layers("predictor", [d, *config.predictor_hidden, 1])
    return shapes


@dataclass(frozen=True, eq=False)
class ModelParams:
    """
    All learnable tensors of one model, keyed by name in declaration order.

    Instances are snapshots: updates go through `replace`, which returns a new
    object, so a published snapshot can be read by any number of evaluators.
    """

    config: ModelConfig
    tensors: Dict[str, np.ndarray]

    def __post_init__(self):
        expected = layer_shapes(self.config)
        if [name for name, _ in expected] != list(self.tensors):
            raise ShapeError(f"parameter names do not match the {self.config.variant} layout")
        for name, shape in expected:
            if self.tensors[name].shape != shape:
                raise ShapeError(f"parameter '{name}' has shape {self.tensors[name].shape}, expected {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_dim

    @property
    def num_parameters(self) -> int:
        return sum(tensor.size for tensor in self.tensors.values())

    def names(self, prefixes: Tuple[str, ...] = None) -> List[str]:
        if prefixes is None:
            return list(self.tensors)
        return [name for name in self.tensors if name.startswith(prefixes)]

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ModelParams":
        tensors = {name: frozen(np.array(updates[name], dtype=np.float64)) if name in updates else tensor
                   for name, tensor in self.tensors.items()}
        return ModelParams(config=self.config, tensors=tensors)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        return cls(config=config, tensors={name: frozen(np.zeros(shape)) for name, shape in layer_shapes(config)})


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """
    Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)) and zero biases.

    A zero log-variance bias makes every posterior start near unit variance.
    Tensors are drawn in declaration order, so one seed gives one model.
    """
    tensors = {}
    for name, shape in layer_shapes(config):
        if name.endswith(".weight"):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = frozen(rng.uniform(-limit, limit, size=shape))
        else:
            tensors[name] = frozen(np.zeros(shape))
    return ModelParams(config=config, tensors=tensors)
