import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np

from app.models.params import ModelParams
from app.schemas.metrics import Metrics
from app.services.manage_data.interactions import Split
from app.services.manage_data.sampling import inject_noise
from app.services.manage_evaluation.ranking import DEFAULT_KS, evaluate
from app.utils.rng import make_rng

logger = logging.getLogger(__name__)

DEFAULT_LEVELS = (0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class RobustnessResult:
    noise_level: Optional[float]  # None for per-entity levels
    metrics: Metrics


def noisy_vectors(split: Split, side: str, levels, rng: np.random.Generator) -> np.ndarray:
    """
    Every train interaction vector of one side with noise injected row by row.

    Args:
        levels: One level for all rows, or an array with one level per row.
    """
    clean = split.train.side_matrix(side).toarray()
    per_row = np.broadcast_to(np.asarray(levels, dtype=np.float64), (clean.shape[0],))
    return np.vstack([inject_noise(row, level, rng) for row, level in zip(clean, per_row)])


def robustness_run(params: ModelParams, split: Split, levels: Iterable[float] = DEFAULT_LEVELS, seed: int = 0,
                   ks: Iterable[int] = DEFAULT_KS, mode: str = "fixed", max_workers: int = 2) -> List[RobustnessResult]:
    """
    Re-evaluate a trained model on noisy interaction vectors.

    In "fixed" mode each level is swept on its own: every user vector and every
    item vector is flipped at that level (one draw per entity, shared by all
    rankings), then the test protocol runs again. Each level starts from the
    clean train vectors and draws from its own ("noise", index) stream. In
    "per-entity" mode every user and item draws its level uniformly from
    `levels` and a single result is returned.

    Returns:
        List[RobustnessResult]: One per level in "fixed" mode, in input order.
    """
    levels = tuple(float(level) for level in levels)
    if mode not in ("fixed", "per-entity"):
        raise ValueError(f"robustness mode must be 'fixed' or 'per-entity', got {mode!r}")
    if not levels:
        raise ValueError("at least one noise level is required")

    results = []
    if mode == "per-entity":
        rng = make_rng(seed, "noise", "per-entity")
        user_levels = rng.choice(levels, size=split.num_users)
        item_levels = rng.choice(levels, size=split.num_items)
        metrics = evaluate(params, split, ks, user_vectors=noisy_vectors(split, "user", user_levels, rng),
                           item_vectors=noisy_vectors(split, "item", item_levels, rng), max_workers=max_workers)
        logger.info(f"[Robustness] per-entity levels {levels}: {metrics.as_table()}")
        return [RobustnessResult(noise_level=None, metrics=metrics)]

    for index, level in enumerate(levels):
        rng = make_rng(seed, "noise", index)
        metrics = evaluate(params, split, ks, user_vectors=noisy_vectors(split, "user", level, rng),
                           item_vectors=noisy_vectors(split, "item", level, rng), max_workers=max_workers)
        logger.info(f"[Robustness] level {level}: {metrics.as_table()}")
        results.append(RobustnessResult(noise_level=level, metrics=metrics))
    return results
