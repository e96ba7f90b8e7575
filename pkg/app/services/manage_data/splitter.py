import logging

import numpy as np

from app.services.manage_data.interactions import InteractionMatrix, Split
from app.utils.exceptions import DataError
from app.utils.rng import make_rng

logger = logging.getLogger(__name__)

MIN_SPLIT_INTERACTIONS = 3


def leave_one_out_split(
    matrix: InteractionMatrix,
    policy: str = "latest",
    seed: int = 0,
    num_negatives: int = 99,
    drop_short_users: bool = True,
) -> Split:
    """
    Hold out one test and one validation interaction per user.

    The test pair is the user's latest interaction (`policy="latest"`, ties
    broken at random) or a random one (`policy="random"`). The validation pair
    is drawn at random from the rest; everything else stays in train. Each
    evaluated user also gets `num_negatives` distinct items, sorted, that the
    user never interacted with. All draws come from the ("split",) stream.

    Args:
        matrix (InteractionMatrix): Full interaction matrix.
        policy (str): "latest" or "random".
        seed (int): Run seed.
        num_negatives (int): Evaluation negatives per user.
        drop_short_users (bool): Keep users with fewer than 3 interactions in
            train only (with a warning) instead of failing.

    Returns:
        Split: The partition, with short users listed in `dropped_users`.

    Raises:
        DataError: On a latest policy without timestamps, on short users when
            `drop_short_users` is False, or when a user has too few unseen items.
    """
    if policy not in ("latest", "random"):
        raise DataError(f"unknown split policy '{policy}'")
    if policy == "latest" and not matrix.has_timestamps:
        raise DataError("split policy 'latest' requires timestamps; use policy=random for this dataset")

    counts = matrix.user_counts()
    short = np.flatnonzero(counts < MIN_SPLIT_INTERACTIONS)
    if short.size:
        listed = ", ".join(str(u) for u in short[:20]) + (" ..." if short.size > 20 else "")
        if not drop_short_users:
            raise DataError(f"{short.size} users have fewer than {MIN_SPLIT_INTERACTIONS} interactions: {listed}")
        logger.warning(f"[Split] Excluding {short.size} users with fewer than {MIN_SPLIT_INTERACTIONS} interactions from evaluation: {listed}")

    eval_users = np.flatnonzero(counts >= MIN_SPLIT_INTERACTIONS)
    if eval_users.size == 0:
        raise DataError("no user has enough interactions to split")

    rng = make_rng(seed, "split")
    all_items = np.arange(matrix.num_items)
    keep = np.ones(matrix.nnz, dtype=bool)
    validation_items = np.empty(eval_users.size, dtype=np.int64)
    test_items = np.empty(eval_users.size, dtype=np.int64)
    negatives = np.empty((eval_users.size, num_negatives), dtype=np.int64)

    for j, user in enumerate(eval_users):
        span = matrix.row_span(user)
        items = matrix.items[span]

        # Step 1: test pair
        if policy == "latest":
            stamps = matrix.timestamps[span]
            latest = np.flatnonzero(stamps == stamps.max())
            test_pos = int(latest[rng.integers(latest.size)]) if latest.size > 1 else int(latest[0])
        else:
            test_pos = int(rng.integers(items.size))

        # Step 2: validation pair from the remainder
        remaining = np.delete(np.arange(items.size), test_pos)
        val_pos = int(remaining[rng.integers(remaining.size)])

        # Step 3: negatives among items the user never touched
        candidates = np.setdiff1d(all_items, items, assume_unique=True)
        if candidates.size < num_negatives:
            raise DataError(
                f"user {user} has only {candidates.size} unseen items, {num_negatives} evaluation negatives requested"
            )
        negatives[j] = np.sort(rng.choice(candidates, size=num_negatives, replace=False))

        test_items[j] = items[test_pos]
        validation_items[j] = items[val_pos]
        keep[span.start + test_pos] = False
        keep[span.start + val_pos] = False

    split = Split(
        train=matrix.subset(keep),
        eval_users=eval_users.astype(np.int64),
        validation_items=validation_items,
        test_items=test_items,
        negatives=negatives,
        dropped_users=tuple(int(u) for u in short),
    )
    logger.info(
        f"[Split] policy={policy} seed={seed}: {split.train.nnz} train interactions, "
        f"{eval_users.size} evaluated users, {num_negatives} negatives each"
    )
    return split
