import logging
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from app.database.checkpoint_store import save_checkpoint
from app.models.batch import InteractionBatch
from app.models.objectives import disc_objective, generator_objective, total_objective
from app.models.params import GENERATOR_PREFIXES, SIDES, ModelParams, init_params
from app.schemas.config import TrainConfig
from app.schemas.training import BatchLosses, EpochRecord, StepRecord
from app.services.manage_data.batching import assemble_batch
from app.services.manage_data.interactions import Split
from app.services.manage_data.sampling import epoch_triples
from app.services.manage_evaluation.ranking import evaluate
from app.services.manage_training.optimizers import OptimizerState, adam_state, adam_step, rmsprop_state, rmsprop_step
from app.services.worker import prefetch
from app.utils.common import log_execution_time
from app.utils.exceptions import NonFiniteError, TrainingAbort
from app.utils.rng import make_rng

logger = logging.getLogger(__name__)

MAX_CONSECUTIVE_SKIPS = 3


@dataclass(frozen=True, eq=False)
class Optimizers:
    generator: OptimizerState
    discriminator: Optional[OptimizerState] = None


@dataclass(frozen=True, eq=False)
class StepResult:
    params: ModelParams
    optimizers: Optimizers
    losses: BatchLosses
    skipped: bool = False


@dataclass
class FitResult:
    params: ModelParams
    best_epoch: int
    best_ndcg: float
    records: List[Union[StepRecord, EpochRecord]] = field(default_factory=list)


def init_optimizers(params: ModelParams, config: TrainConfig) -> Optimizers:
    """Adam over encoders, decoders and predictor; RMSprop over the discriminators."""
    generator = adam_state(
        [(name, params[name].shape) for name in params.names(GENERATOR_PREFIXES)],
        learning_rate=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        epsilon=config.adam_epsilon,
    )
    discriminator = None
    if params.config.uses_discriminators:
        discriminator = rmsprop_state(
            [(name, params[name].shape) for name in params.names(("discriminator_",))],
            learning_rate=config.discriminator_learning_rate,
            decay=config.rmsprop_decay,
            epsilon=config.rmsprop_epsilon,
        )
    return Optimizers(generator=generator, discriminator=discriminator)


def discriminator_phase(params: ModelParams, state: Optional[OptimizerState], batch: InteractionBatch,
                        rng: np.random.Generator) -> Tuple[ModelParams, Optional[OptimizerState], dict]:
    """
    Ascent on each side's discriminator objective with the generators held fixed.

    Both objectives are computed from the same (pre-update) generator, user
    side first; then the user discriminator is updated, then the item one.

    Returns:
        (params, state, {"disc_user", "disc_item"}); unchanged for variants without discriminators.
    """
    if state is None:
        return params, state, {"disc_user": 0.0, "disc_item": 0.0}
    results = {side: disc_objective(params, side, batch.vectors(side), rng) for side in SIDES}
    for side in SIDES:
        group = f"discriminator_{side}."
        grads = {name: grad for name, grad in results[side].grads.items() if name.startswith(group)}
        updated, state = rmsprop_step(state, params.tensors, grads)
        params = params.replace(updated)
    return params, state, {f"disc_{side}": results[side].value for side in SIDES}


def generator_phase(params: ModelParams, state: OptimizerState, batch: InteractionBatch,
                    rng: np.random.Generator, config: TrainConfig):
    """Joint Adam ascent of encoders, decoders and predictor with the discriminators held fixed."""
    result = generator_objective(params, batch, rng, variant=params.config.variant, weights=config.objective_weights)
    updated, state = adam_step(state, params.tensors, result.grads)
    return params.replace(updated), state, result


def train_step(params: ModelParams, optimizers: Optimizers, batch: InteractionBatch,
               rng: np.random.Generator, config: TrainConfig) -> StepResult:
    """
    One alternating step: discriminators first, then the generators.

    A non-finite value or gradient anywhere in the step discards the whole step:
    the returned params and optimizer states are the ones passed in and
    `skipped` is set.
    """
    try:
        stepped, disc_state, disc = discriminator_phase(params, optimizers.discriminator, batch, rng)
        stepped, gen_state, result = generator_phase(stepped, optimizers.generator, batch, rng, config)
    except NonFiniteError as e:
        logger.warning(f"[Trainer] Skipping step: {e}")
        return StepResult(params=params, optimizers=optimizers, losses=BatchLosses(), skipped=True)

    parts = result.components
    losses = BatchLosses(
        disc_user=disc["disc_user"],
        disc_item=disc["disc_item"],
        vae_user=parts["vae_user"],
        vae_item=parts["vae_item"],
        prediction=parts["prediction"],
        recon_user=parts["recon_user"],
        reg_user=parts["reg_user"],
        recon_item=parts["recon_item"],
        reg_item=parts["reg_item"],
    )
    return StepResult(params=stepped, optimizers=Optimizers(generator=gen_state, discriminator=disc_state), losses=losses)


def _step_record(epoch: int, step: int, outcome: StepResult) -> StepRecord:
    losses = outcome.losses
    return StepRecord(
        epoch=epoch,
        step=step,
        disc_user=losses.disc_user,
        disc_item=losses.disc_item,
        vae_user=losses.vae_user,
        vae_item=losses.vae_item,
        prediction=losses.prediction,
        total=losses.total,
        objective=total_objective(losses),
        skipped=outcome.skipped,
    )


def fit(config: TrainConfig, split: Split, output_dir=None, params: ModelParams = None,
        checkpoint_path=None) -> FitResult:
    """
    Train until validation NDCG@k stops improving.

    Each epoch pairs every train positive with `negative_ratio` fresh negatives,
    shuffles, and runs `train_step` over mini-batches that a thread pool
    densifies ahead of time. After each epoch the validation pair of every
    evaluated user is ranked with mean embeddings. Training stops once more than
    `patience` consecutive epochs fail to improve, or at `max_epochs`.

    Args:
        config (TrainConfig): Hyperparameters and seed.
        split (Split): Train partition and validation pairs.
        output_dir (optional): Where `train_log.jsonl` and the best checkpoint go.
        params (ModelParams, optional): Starting point; initialized from the seed when omitted.
        checkpoint_path (optional): Checkpoint file; `output_dir/checkpoint.dave` by default.

    Returns:
        FitResult: The best parameters seen, with the log records.

    Raises:
        TrainingAbort: After three consecutive skipped steps. The last improving
            checkpoint stays on disk.
    """
    if params is None:
        params = init_params(config.to_model_config(split.num_users, split.num_items), make_rng(config.seed, "init"))
    optimizers = init_optimizers(params, config)

    log_file = None
    if output_dir is not None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = Path(checkpoint_path) if checkpoint_path else output_dir / "checkpoint.dave"
        log_file = open(output_dir / "train_log.jsonl", "w", encoding="utf-8")

    records: List[Union[StepRecord, EpochRecord]] = []

    def emit(record):
        records.append(record)
        if log_file is not None:
            log_file.write(record.model_dump_json() + "\n")
            log_file.flush()

    best = FitResult(params=params, best_epoch=0, best_ndcg=-np.inf, records=records)
    stale, consecutive_skips = 0, 0
    logger.info(f"[Trainer] variant={params.config.variant} d={params.embedding_dim} "
                f"parameters={params.num_parameters} seed={config.seed}")
    try:
        for epoch in range(1, config.max_epochs + 1):
            start_time = time.time()

            # Step 1: fresh negatives and order for this epoch
            users, items, labels = epoch_triples(split, config.negative_ratio, make_rng(config.seed, "negatives", epoch),
                                                 make_rng(config.seed, "shuffle", epoch))
            starts = range(0, labels.size, config.batch_size)
            jobs = [partial(assemble_batch, split, users[s:s + config.batch_size], items[s:s + config.batch_size],
                            labels[s:s + config.batch_size]) for s in starts]

            # Step 2: alternating updates over the mini-batches
            predictions, skipped = [], 0
            batches = prefetch(jobs, max_workers=config.prefetch_workers)
            for step, batch in enumerate(tqdm(batches, total=len(jobs), desc=f"Epoch {epoch}",
                                              disable=not config.show_progress, leave=False)):
                outcome = train_step(params, optimizers, batch, make_rng(config.seed, "step", epoch, step), config)
                emit(_step_record(epoch, step, outcome))
                if outcome.skipped:
                    skipped += 1
                    consecutive_skips += 1
                    if consecutive_skips >= MAX_CONSECUTIVE_SKIPS:
                        raise TrainingAbort(f"{consecutive_skips} consecutive steps skipped at epoch {epoch}, step {step}")
                    continue
                consecutive_skips = 0
                params, optimizers = outcome.params, outcome.optimizers
                predictions.append(outcome.losses.prediction)

            # Step 3: early stopping on validation NDCG
            metrics = evaluate(params, split, ks=(config.validation_k,), target="validation",
                               max_workers=config.prefetch_workers)
            ndcg = metrics.ndcg[config.validation_k]
            improved = ndcg > best.best_ndcg
            if improved:
                best.params, best.best_epoch, best.best_ndcg = params, epoch, ndcg
                stale = 0
                if checkpoint_path is not None:
                    save_checkpoint(params, checkpoint_path)
            else:
                stale += 1
            emit(EpochRecord(
                epoch=epoch,
                validation_hr=metrics.hr[config.validation_k],
                validation_ndcg=ndcg,
                k=config.validation_k,
                mean_prediction=float(np.mean(predictions)) if predictions else 0.0,
                skipped_steps=skipped,
                improved=improved,
                wall_time=log_execution_time(start_time, f"[Trainer] Epoch {epoch}"),
            ))
            logger.info(f"[Trainer] Epoch {epoch}: validation HR@{config.validation_k}="
                        f"{metrics.hr[config.validation_k]:.4f} NDCG@{config.validation_k}={ndcg:.4f}"
                        f"{' (best)' if improved else ''}")
            if stale > config.patience:
                logger.info(f"[Trainer] No improvement for {stale} epochs, stopping; best epoch {best.best_epoch}")
                break
    finally:
        if log_file is not None:
            log_file.close()
    return best
