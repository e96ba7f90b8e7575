from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np

from app.models.batch import InteractionBatch
from app.models.networks import (
    GaussianPosterior,
    bounded_probability,
    decoder_logits,
    discriminator_logit,
    encode,
    encoder_nodes,
    param_binder,
    predictor_logit,
    reparameterize,
    reparameterize_node,
    sample_prior,
)
from app.models.params import GENERATOR_PREFIXES, ModelParams
from app.schemas.training import BatchLosses
from app.utils.diffcore import Tape, backward, forward
from app.utils.exceptions import NonFiniteError, ShapeError

REGULARIZERS = {"dave": "adversarial", "dave-adv": "kl", "dave-aae": "point"}
DEFAULT_WEIGHTS = {"user": 1.0, "item": 1.0, "prediction": 1.0}


@dataclass
class GraphSpec:
    """
    An objective laid out on a tape, ready for `forward`/`backward` or `grad_check`.

    `loss` is the node that gets minimized (the negated objective); `components`
    are reported in the maximize convention.
    """

    tape: Tape
    inputs: Dict[str, np.ndarray]
    loss: int
    components: Dict[str, int]

    @property
    def wrt(self) -> List[str]:
        return [name for name, node in self.tape.inputs.items() if self.tape.nodes[node].requires_grad]


@dataclass(frozen=True, eq=False)
class ObjectiveResult:
    """Objective value to maximize, its gradient for every parameter tensor (zero where frozen), and its parts."""

    value: float
    grads: Dict[str, np.ndarray]
    components: Dict[str, float]


def _as_objective(graph: GraphSpec, params: ModelParams) -> ObjectiveResult:
    # The only place where the minimized loss turns back into the maximized objective
    forward(graph.tape, graph.inputs)
    loss_grads = backward(graph.tape, graph.loss)
    grads = {}
    for name, tensor in params.tensors.items():
        grad = -loss_grads[name] if name in loss_grads else np.zeros_like(tensor)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"gradient of '{name}' is not finite")
        grads[name] = grad
    values = graph.tape.values
    return ObjectiveResult(
        value=-float(values[graph.loss]),
        grads=grads,
        components={name: float(values[node]) for name, node in graph.components.items()},
    )


def _trainable(*prefixes: str) -> Callable[[str], bool]:
    return lambda name: name.startswith(prefixes)


def _regularizer_for(params: ModelParams, regularizer: Optional[str]) -> str:
    regularizer = regularizer or REGULARIZERS[params.config.variant]
    if regularizer not in ("adversarial", "kl", "point"):
        raise ValueError(f"unknown regularizer '{regularizer}'")
    if regularizer != "kl" and not params.config.uses_discriminators:
        raise ShapeError(f"regularizer '{regularizer}' needs discriminators, variant {params.config.variant} has none")
    if regularizer != "point" and params.config.variant == "dave-aae":
        raise ShapeError("the point-estimate encoder has no log-variance head to sample from")
    return regularizer


def _side_terms(tape: Tape, p, params: ModelParams, side: str, count: int, regularizer: str) -> Dict[str, int]:
    """
    VAE nodes for one side: embedding `z`, mean reconstruction log-likelihood
    `recon`, mean regularizer `reg` and their sum `vae`.

    Reads constants `x_{side}`, `xc_{side}` (1 - x) and, unless the encoder is
    a point estimate, `eps_{side}`.
    """
    config = params.config
    mean, log_variance = encoder_nodes(tape, p, config, side, tape.constant(f"x_{side}"))
    if regularizer == "point":
        z = mean
    else:
        z = reparameterize_node(tape, mean, log_variance, tape.constant(f"eps_{side}"))

    # Bernoulli log-likelihood summed over entries, averaged over vectors
    logits = decoder_logits(tape, p, config, side, z)
    hits = tape.mul(tape.constant(f"x_{side}"), tape.log_sigmoid(logits))
    misses = tape.mul(tape.constant(f"xc_{side}"), tape.log_sigmoid(tape.neg(logits)))
    recon = tape.scale(tape.sum(tape.add(hits, misses)), 1.0 / count)

    if regularizer == "adversarial":
        reg = tape.mean(discriminator_logit(tape, p, config, side, z))
    elif regularizer == "point":
        reg = tape.mean(tape.log_sigmoid(discriminator_logit(tape, p, config, side, z)))
    else:
        # -KL(q || N(0, I)) = -0.5 * sum(mu^2 + sigma^2 - log sigma^2) + d/2 per vector
        spread = tape.sub(tape.add(tape.mul(mean, mean), tape.exp(log_variance)), log_variance)
        reg = tape.shift(tape.scale(tape.sum(spread), -0.5 / count), 0.5 * config.embedding_dim)

    return {"z": z, "recon": recon, "reg": reg, "vae": tape.add(recon, reg)}


def _side_inputs(side: str, vectors: np.ndarray, regularizer: str, d: int, rng: np.random.Generator) -> dict:
    inputs = {f"x_{side}": vectors, f"xc_{side}": 1.0 - vectors}
    if regularizer != "point":
        inputs[f"eps_{side}"] = rng.standard_normal((vectors.shape[0], d))
    return inputs


def _prediction_term(tape: Tape, p, params: ModelParams, z_user: int, z_item: int) -> int:
    """Mean of R log R_hat + (1 - R) log(1 - R_hat) over the batch triples, with clamped scores."""
    x_u = tape.matmul(tape.constant("user_select"), z_user)
    y_v = tape.matmul(tape.constant("item_select"), z_item)
    score = bounded_probability(tape, predictor_logit(tape, p, params.config, x_u, y_v))
    hits = tape.mul(tape.constant("labels"), tape.log(score))
    misses = tape.mul(tape.constant("labels_c"), tape.log(tape.shift(tape.neg(score), 1.0)))
    return tape.mean(tape.add(hits, misses))


def _batch_inputs(batch: InteractionBatch) -> dict:
    labels = batch.labels.reshape(-1, 1)
    return {
        "user_select": batch.user_select,
        "item_select": batch.item_select,
        "labels": labels,
        "labels_c": 1.0 - labels,
    }


def _rows(data_vectors) -> np.ndarray:
    vectors = np.asarray(data_vectors, dtype=np.float64)
    vectors = vectors.reshape(1, -1) if vectors.ndim == 1 else vectors
    if vectors.shape[0] == 0:
        raise ShapeError("objective needs a non-empty batch")
    return vectors


# Graph builders

def build_disc_graph(params: ModelParams, side: str, data_vectors, rng: np.random.Generator,
                     point_estimate: bool = None) -> GraphSpec:
    config = params.config
    if not config.uses_discriminators:
        raise ShapeError(f"variant {config.variant} has no discriminators")
    if point_estimate is None:
        point_estimate = config.variant == "dave-aae"
    vectors = _rows(data_vectors)
    count = vectors.shape[0]

    # Step 1: fakes from the encoder, computed outside the graph so no gradient reaches it
    posterior = encode(params, side, vectors)
    if point_estimate:
        fakes = posterior.mean
    else:
        fakes = reparameterize(posterior, rng.standard_normal((count, config.embedding_dim)))
    priors = sample_prior(config.embedding_dim, rng, size=count)

    # Step 2: mean log sigma(D(prior)) + mean log(1 - sigma(D(fake)))
    tape = Tape()
    p = param_binder(tape, _trainable(f"discriminator_{side}"))
    prior_term = tape.mean(tape.log_sigmoid(discriminator_logit(tape, p, config, side, tape.constant("prior"))))
    fake_term = tape.mean(tape.log_sigmoid(tape.neg(discriminator_logit(tape, p, config, side, tape.constant("fake")))))
    objective = tape.add(prior_term, fake_term)
    return GraphSpec(
        tape=tape,
        inputs={**params.tensors, "prior": priors, "fake": fakes},
        loss=tape.neg(objective),
        components={"prior": prior_term, "posterior": fake_term},
    )


def build_vae_graph(params: ModelParams, side: str, data_vectors, rng: np.random.Generator,
                    regularizer: str = None) -> GraphSpec:
    regularizer = _regularizer_for(params, regularizer)
    vectors = _rows(data_vectors)
    tape = Tape()
    p = param_binder(tape, _trainable(f"encoder_{side}", f"decoder_{side}"))
    terms = _side_terms(tape, p, params, side, vectors.shape[0], regularizer)
    return GraphSpec(
        tape=tape,
        inputs={**params.tensors, **_side_inputs(side, vectors, regularizer, params.embedding_dim, rng)},
        loss=tape.neg(terms["vae"]),
        components={"recon": terms["recon"], "reg": terms["reg"]},
    )


def build_prediction_graph(params: ModelParams, batch: InteractionBatch, rng: np.random.Generator,
                           point_estimate: bool = None) -> GraphSpec:
    if point_estimate is None:
        point_estimate = params.config.variant == "dave-aae"
    d = params.embedding_dim
    tape = Tape()
    p = param_binder(tape, _trainable("encoder_", "predictor"))
    inputs = {**params.tensors, **_batch_inputs(batch)}
    embeddings = {}
    for side in ("user", "item"):
        mean, log_variance = encoder_nodes(tape, p, params.config, side, tape.constant(f"x_{side}"))
        inputs[f"x_{side}"] = batch.vectors(side)
        if point_estimate:
            embeddings[side] = mean
        else:
            embeddings[side] = reparameterize_node(tape, mean, log_variance, tape.constant(f"eps_{side}"))
            inputs[f"eps_{side}"] = rng.standard_normal((batch.vectors(side).shape[0], d))
    prediction = _prediction_term(tape, p, params, embeddings["user"], embeddings["item"])
    return GraphSpec(tape=tape, inputs=inputs, loss=tape.neg(prediction), components={"prediction": prediction})


def build_generator_graph(params: ModelParams, batch: InteractionBatch, rng: np.random.Generator,
                          variant: str = None, weights: Mapping[str, float] = None) -> GraphSpec:
    """
    Joint objective of the generator phase on one graph: weighted user and item
    VAE terms plus the prediction log-likelihood. The VAE terms use each
    distinct entity of the batch once, and the prediction term reuses the same
    embeddings, so one epsilon is drawn per distinct entity (users first).
    """
    regularizer = _regularizer_for(params, REGULARIZERS[variant] if variant else None)
    weights = {**DEFAULT_WEIGHTS, **(weights or {})}
    tape = Tape()
    p = param_binder(tape, _trainable(*GENERATOR_PREFIXES))
    inputs = {**params.tensors, **_batch_inputs(batch)}
    terms = {}
    for side in ("user", "item"):
        vectors = batch.vectors(side)
        terms[side] = _side_terms(tape, p, params, side, vectors.shape[0], regularizer)
        inputs.update(_side_inputs(side, vectors, regularizer, params.embedding_dim, rng))
    prediction = _prediction_term(tape, p, params, terms["user"]["z"], terms["item"]["z"])

    objective = tape.add(
        tape.add(tape.scale(terms["user"]["vae"], weights["user"]), tape.scale(terms["item"]["vae"], weights["item"])),
        tape.scale(prediction, weights["prediction"]),
    )
    components = {"prediction": prediction}
    for side in ("user", "item"):
        components[f"vae_{side}"] = terms[side]["vae"]
        components[f"recon_{side}"] = terms[side]["recon"]
        components[f"reg_{side}"] = terms[side]["reg"]
    return GraphSpec(tape=tape, inputs=inputs, loss=tape.neg(objective), components=components)


def build_kl_graph(posterior: GaussianPosterior) -> GraphSpec:
    """-KL(q || N(0, I)) summed over rows, with mean and log-variance as differentiable inputs."""
    tape = Tape()
    mean, log_variance = tape.input("mean"), tape.input("log_variance")
    spread = tape.sub(tape.add(tape.mul(mean, mean), tape.exp(log_variance)), log_variance)
    objective = tape.shift(tape.scale(tape.sum(spread), -0.5), 0.5 * posterior.mean.size)
    return GraphSpec(
        tape=tape,
        inputs={"mean": posterior.mean, "log_variance": posterior.log_variance},
        loss=tape.neg(objective),
        components={"neg_kl": objective},
    )


# Objectives in the maximize convention

def disc_objective(params: ModelParams, side: str, data_vectors, rng: np.random.Generator,
                   point_estimate: bool = None) -> ObjectiveResult:
    """
    Discriminator objective of one side: mean over the batch of
    log sigma(D(prior sample)) + log(1 - sigma(D(fake))).

    Fakes are reparameterized posterior samples of the data vectors (or the
    posterior means when `point_estimate`). Only that side's discriminator
    receives gradient.
    """
    return _as_objective(build_disc_graph(params, side, data_vectors, rng, point_estimate), params)


def vae_objective(params: ModelParams, side: str, data_vectors, rng: np.random.Generator,
                  regularizer: str = None) -> ObjectiveResult:
    """
    Regularized VAE objective of one side.

    Args:
        params (ModelParams): Parameter snapshot.
        side (str): "user" or "item".
        data_vectors: Binary interaction vectors, one per row.
        rng (np.random.Generator): One epsilon draw per vector.
        regularizer (str, optional): "adversarial" (current discriminator logit at
            the sampled embedding), "kl" (negative closed-form KL) or "point"
            (point embedding with the fooling term log sigma(D(z))). Defaults to the
            variant's own.

    Returns:
        ObjectiveResult: Components "recon" and "reg". Gradients reach the side's
        encoder and decoder; the discriminator only passes gradient to its input.
    """
    return _as_objective(build_vae_graph(params, side, data_vectors, rng, regularizer), params)


def aae_objective(params: ModelParams, side: str, data_vectors, rng: np.random.Generator) -> ObjectiveResult:
    """Generator side of the aggregated-posterior variant: reconstruction from the point embedding plus the fooling term."""
    return vae_objective(params, side, data_vectors, rng, regularizer="point")


def prediction_objective(params: ModelParams, batch: InteractionBatch, rng: np.random.Generator,
                         point_estimate: bool = None) -> ObjectiveResult:
    return _as_objective(build_prediction_graph(params, batch, rng, point_estimate), params)


def generator_objective(params: ModelParams, batch: InteractionBatch, rng: np.random.Generator,
                        variant: str = None, weights: Mapping[str, float] = None) -> ObjectiveResult:
    return _as_objective(build_generator_graph(params, batch, rng, variant, weights), params)


def closed_form_kl(posterior: GaussianPosterior):
    """KL(q || N(0, I)) = 0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1); one value per row for batches."""
    terms = posterior.mean ** 2 + posterior.variance - posterior.log_variance - 1.0
    kl = 0.5 * terms.sum(axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


def optimal_disc_value(prior_density: Callable, posterior_density: Callable, x):
    """
    Logit of the best possible discriminator: log p(x) - log q(x).

    Raises:
        ValueError: If either density is zero at x.
    """
    p, q = np.asarray(prior_density(x), dtype=np.float64), np.asarray(posterior_density(x), dtype=np.float64)
    if np.any(p <= 0.0) or np.any(q <= 0.0):
        raise ValueError("densities must be positive where the optimal discriminator is evaluated")
    value = np.log(p) - np.log(q)
    return float(value) if value.ndim == 0 else value


def total_objective(batch_losses: BatchLosses) -> float:
    return (batch_losses.disc_user + batch_losses.disc_item + batch_losses.vae_user
            + batch_losses.vae_item + batch_losses.prediction)
