import logging
from typing import Optional, Tuple

import numpy as np

from app.services.manage_data.interactions import Split
from app.utils.diffcore import is_binary
from app.utils.exceptions import DataError

logger = logging.getLogger(__name__)


def interaction_vector(split: Split, side: str, entity: int) -> np.ndarray:
    """
    Dense train interaction vector of one user (length M) or one item (length N).

    Raises:
        DataError: If the id is out of range.
    """
    matrix = split.train.side_matrix(side)
    if not 0 <= entity < matrix.shape[0]:
        raise DataError(f"{side} id {entity} out of range [0, {matrix.shape[0]})")
    return matrix[entity].toarray().ravel()


def interaction_rows(split: Split, side: str, entities: np.ndarray) -> np.ndarray:
    """Dense train interaction vectors for several entities, one per row."""
    return split.train.side_matrix(side)[np.asarray(entities, dtype=np.int64)].toarray()


def _draw_negatives(split: Split, user: int, ratio: int, rng: np.random.Generator) -> Tuple[np.ndarray, bool]:
    if ratio < 1:
        raise ValueError(f"negative ratio must be at least 1, got {ratio}")
    positives = split.train.items_of(user)
    if positives.size == 0:
        raise DataError(f"user {user} has no train positives to pair negatives with")
    candidates = np.setdiff1d(np.arange(split.num_items), positives, assume_unique=True)
    if candidates.size == 0:
        raise DataError(f"user {user} interacted with every item; no negatives available")
    wanted = ratio * positives.size
    with_replacement = candidates.size < wanted
    return rng.choice(candidates, size=wanted, replace=with_replacement), with_replacement


def sample_train_negatives(split: Split, user: int, ratio: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draw `ratio` negatives per train positive of a user, uniformly among the
    items the user has no train interaction with.

    Draws are without replacement while the candidate pool allows it; otherwise
    they fall back to sampling with replacement and log a warning.
    """
    negatives, with_replacement = _draw_negatives(split, user, ratio, rng)
    if with_replacement:
        logger.warning(f"[Sampling] User {user}: candidate pool smaller than {negatives.size}, sampled with replacement")
    return negatives


def epoch_triples(
    split: Split,
    ratio: int,
    rng: np.random.Generator,
    shuffle_rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    All train positives plus freshly drawn negatives, shuffled.

    Args:
        split (Split): Source of train positives.
        ratio (int): Negatives per positive.
        rng (np.random.Generator): Stream for the negatives.
        shuffle_rng (np.random.Generator, optional): Stream for the permutation; `rng` when omitted.

    Returns:
        (users, items, labels): Parallel arrays; labels are 1.0 for positives and 0.0 for negatives.
    """
    train = split.train
    users, items, labels = [train.users], [train.items], [np.ones(train.nnz)]
    replaced = 0
    for user in np.flatnonzero(train.user_counts()):
        negatives, with_replacement = _draw_negatives(split, int(user), ratio, rng)
        replaced += with_replacement
        users.append(np.full(negatives.size, user, dtype=np.int64))
        items.append(negatives)
        labels.append(np.zeros(negatives.size))
    if replaced:
        logger.warning(f"[Sampling] {replaced} users had fewer candidate negatives than requested; sampled with replacement")

    users, items, labels = np.concatenate(users), np.concatenate(items), np.concatenate(labels)
    order = (rng if shuffle_rng is None else shuffle_rng).permutation(users.size)
    return users[order], items[order], labels[order]


def flip_positions(length: int, level: float, rng: np.random.Generator) -> np.ndarray:
    """Positions flipped by `inject_noise`: round(level * length) distinct indices, uniformly chosen."""
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"noise level must lie in [0, 1], got {level}")
    count = int(np.floor(level * length + 0.5))
    return rng.choice(length, size=count, replace=False)


def inject_noise(vector: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """
    Flip an exact share of a binary vector's entries (1 -> 0, 0 -> 1).

    Args:
        vector (np.ndarray): Binary interaction vector; not modified.
        level (float): Share of entries to flip, in [0, 1].
        rng (np.random.Generator): Stream that picks the positions.

    Returns:
        np.ndarray: A noisy copy at Hamming distance round(level * length).

    Raises:
        ValueError: If the level is outside [0, 1] or the vector is not binary.
    """
    vector = np.asarray(vector, dtype=np.float64)
    if not is_binary(vector):
        raise ValueError("inject_noise expects a binary vector")
    noisy = vector.copy()
    positions = flip_positions(vector.size, level, rng)
    noisy[positions] = 1.0 - noisy[positions]
    return noisy
