from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from app.models.params import ModelParams
from app.schemas.config import ModelConfig
from app.utils.diffcore import Tape, forward
from app.utils.exceptions import NonFiniteError, ShapeError

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
# Probabilities leaving the model stay inside [PROB_FLOOR, 1 - PROB_FLOOR]
PROB_FLOOR = 1e-7

# Maps a parameter name to its node on a tape
ParamNode = Callable[[str], int]


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    """Diagonal Gaussian q(x | entity). Arrays are (d,) for one entity or (n, d) for a batch."""

    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        log_variance = np.clip(np.asarray(self.log_variance, dtype=np.float64), LOGVAR_MIN, LOGVAR_MAX)
        if mean.shape != log_variance.shape:
            raise ShapeError(f"mean {mean.shape} and log-variance {log_variance.shape} differ")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_variance))):
            raise NonFiniteError("posterior parameters must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_variance", log_variance)

    @classmethod
    def from_std(cls, mean, std) -> "GaussianPosterior":
        return cls(mean=mean, log_variance=2.0 * np.log(np.asarray(std, dtype=np.float64)))

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_variance)

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_variance)


# Graph builders shared by inference and the training objectives

def param_binder(tape: Tape, trainable: Callable[[str], bool]) -> ParamNode:
    return lambda name: tape.input(name, differentiable=trainable(name))


def dense(tape: Tape, p: ParamNode, x: int, prefix: str) -> int:
    return tape.add(tape.matmul(x, p(f"{prefix}.weight")), p(f"{prefix}.bias"))


def relu_stack(tape: Tape, p: ParamNode, x: int, group: str, count: int) -> int:
    h = x
    for i in range(count):
        h = tape.relu(dense(tape, p, h, f"{group}.{i}"))
    return h


def encoder_nodes(tape: Tape, p: ParamNode, config: ModelConfig, side: str, x: int) -> Tuple[int, Optional[int]]:
    """(mean, clamped log-variance) nodes; the point-estimate encoder has no log-variance head."""
    group = f"encoder_{side}"
    h = relu_stack(tape, p, x, group, len(config.encoder_hidden))
    mean = dense(tape, p, h, f"{group}.mean")
    if config.variant == "dave-aae":
        return mean, None
    return mean, tape.clamp(dense(tape, p, h, f"{group}.logvar"), LOGVAR_MIN, LOGVAR_MAX)


def reparameterize_node(tape: Tape, mean: int, log_variance: int, epsilon: int) -> int:
    std = tape.exp(tape.scale(log_variance, 0.5))
    return tape.add(mean, tape.mul(std, epsilon))


def decoder_logits(tape: Tape, p: ParamNode, config: ModelConfig, side: str, z: int) -> int:
    group = f"decoder_{side}"
    h = relu_stack(tape, p, z, group, len(config.decoder_hidden))
    return dense(tape, p, h, f"{group}.{len(config.decoder_hidden)}")


def discriminator_logit(tape: Tape, p: ParamNode, config: ModelConfig, side: str, z: int) -> int:
    group = f"discriminator_{side}"
    h = relu_stack(tape, p, z, group, len(config.discriminator_hidden))
    return dense(tape, p, h, f"{group}.{len(config.discriminator_hidden)}")


def predictor_logit(tape: Tape, p: ParamNode, config: ModelConfig, x_u: int, y_v: int) -> int:
    h = relu_stack(tape, p, tape.mul(x_u, y_v), "predictor", len(config.predictor_hidden))
    return dense(tape, p, h, f"predictor.{len(config.predictor_hidden)}")


def bounded_probability(tape: Tape, logit: int) -> int:
    return tape.clamp(tape.sigmoid(logit), PROB_FLOOR, 1.0 - PROB_FLOOR)


# Inference on parameter snapshots

def _as_rows(values, width: int, label: str) -> Tuple[np.ndarray, bool]:
    array = np.asarray(values, dtype=np.float64)
    single = array.ndim == 1
    rows = array.reshape(1, -1) if single else array
    if rows.ndim != 2 or rows.shape[1] != width:
        raise ShapeError(f"{label} has shape {array.shape}, expected length {width}")
    return rows, single


def _run(params: ModelParams, data: dict, build: Callable[[Tape, ParamNode], dict]) -> dict:
    tape = Tape()
    p = param_binder(tape, lambda name: False)
    for name, node in build(tape, p).items():
        if node is not None:
            tape.output(name, node)
    return forward(tape, {**params.tensors, **data})


def _check_side(side: str) -> None:
    if side not in ("user", "item"):
        raise ValueError(f"side must be 'user' or 'item', got {side!r}")


def encode(params: ModelParams, side: str, vector) -> GaussianPosterior:
    """
    Posterior of one interaction vector, or of each row of a 2-D batch.

    Raises:
        ShapeError: If the vector length is not M (user side) or N (item side).
    """
    _check_side(side)
    config = params.config
    rows, single = _as_rows(vector, config.input_width(side), f"{side} interaction vector")

    def build(tape, p):
        mean, log_variance = encoder_nodes(tape, p, config, side, tape.constant("x"))
        return {"mean": mean, "log_variance": log_variance}

    out = _run(params, {"x": rows}, build)
    mean = out["mean"]
    # A point estimate is reported as the narrowest Gaussian the clamp allows
    log_variance = out.get("log_variance", np.full_like(mean, LOGVAR_MIN))
    if single:
        mean, log_variance = mean[0], log_variance[0]
    return GaussianPosterior(mean=mean, log_variance=log_variance)


def reparameterize(posterior: GaussianPosterior, epsilon) -> np.ndarray:
    """mu + sigma * epsilon."""
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if epsilon.shape != posterior.mean.shape:
        raise ShapeError(f"epsilon has shape {epsilon.shape}, posterior has {posterior.mean.shape}")
    return posterior.mean + posterior.std * epsilon


def decode(params: ModelParams, side: str, embedding) -> np.ndarray:
    """Per-entry reconstruction probabilities, length M (user side) or N (item side)."""
    _check_side(side)
    config = params.config
    rows, single = _as_rows(embedding, config.embedding_dim, "embedding")
    out = _run(params, {"z": rows},
               lambda tape, p: {"probs": bounded_probability(tape, decoder_logits(tape, p, config, side, tape.constant("z")))})
    return out["probs"][0] if single else out["probs"]


def discriminate(params: ModelParams, side: str, embedding):
    """Raw logit; its sigmoid is the probability that the embedding came from the prior."""
    _check_side(side)
    config = params.config
    if not config.uses_discriminators:
        raise ShapeError(f"variant {config.variant} has no discriminators")
    rows, single = _as_rows(embedding, config.embedding_dim, "embedding")
    out = _run(params, {"z": rows},
               lambda tape, p: {"logit": discriminator_logit(tape, p, config, side, tape.constant("z"))})
    logits = out["logit"][:, 0]
    return float(logits[0]) if single else logits


def predict(params: ModelParams, x_u, y_v):
    """Interaction probability sigmoid(MLP(x_u * y_v)); accepts one pair or row-aligned batches."""
    config = params.config
    users, single = _as_rows(x_u, config.embedding_dim, "user embedding")
    items, _ = _as_rows(y_v, config.embedding_dim, "item embedding")
    if users.shape != items.shape:
        raise ShapeError(f"user embeddings {users.shape} and item embeddings {items.shape} differ")

    def build(tape, p):
        logit = predictor_logit(tape, p, config, tape.constant("x_u"), tape.constant("y_v"))
        return {"score": bounded_probability(tape, logit)}

    scores = _run(params, {"x_u": users, "y_v": items}, build)["score"][:, 0]
    return float(scores[0]) if single else scores


def sample_prior(d: int, rng: np.random.Generator, size: int = None) -> np.ndarray:
    """Standard-normal draws: shape (d,), or (size, d) when `size` is given."""
    if d < 1:
        raise ValueError(f"embedding dimension must be positive, got {d}")
    return rng.standard_normal(d if size is None else (size, d))


def mean_embeddings(params: ModelParams, split, side: str, vectors=None, chunk_size: int = 2048) -> np.ndarray:
    """
    Posterior means of every user or item.

    Args:
        params (ModelParams): Parameter snapshot.
        split: Anything with a `train` InteractionMatrix; its train vectors are encoded.
        side (str): "user" or "item".
        vectors (optional): Dense or sparse replacement vectors, one row per entity.
        chunk_size (int): Rows densified and encoded at a time.

    Returns:
        np.ndarray: (num_entities, d) means.
    """
    source = vectors if vectors is not None else split.train.side_matrix(side)
    chunks = []
    for start in range(0, source.shape[0], chunk_size):
        rows = source[start:start + chunk_size]
        rows = rows.toarray() if sp.issparse(rows) else np.asarray(rows, dtype=np.float64)
        chunks.append(encode(params, side, rows).mean)
    return np.vstack(chunks)
