import logging
from functools import partial
from typing import Iterable, List, Sequence, Union

import numpy as np

from app.models.networks import mean_embeddings, predict
from app.models.params import ModelParams
from app.schemas.metrics import Metrics, RankResult
from app.services.manage_data.interactions import Split
from app.services.worker import prefetch
from app.utils.exceptions import DataError

logger = logging.getLogger(__name__)

DEFAULT_KS = (5, 10, 20)
USERS_PER_CHUNK = 256

Ranks = Union[Sequence[RankResult], Sequence[int], np.ndarray]


def rank_from_scores(test_score: float, negative_scores: np.ndarray) -> int:
    # Ties go to the test item
    return 1 + int(np.sum(np.asarray(negative_scores) > test_score))


def rank_test_item(params: ModelParams, user: int, test_item: int, negatives: Sequence[int], split: Split,
                   user_embeddings: np.ndarray = None, item_embeddings: np.ndarray = None) -> RankResult:
    """
    Rank a held-out item among its negatives by predicted score, using mean embeddings.

    Args:
        params (ModelParams): Parameter snapshot.
        user (int): Evaluated user.
        test_item (int): Held-out item.
        negatives (Sequence[int]): Items the user never interacted with.
        split (Split): Provides train vectors and the user's history.
        user_embeddings, item_embeddings (np.ndarray, optional): Precomputed mean embeddings.

    Returns:
        RankResult: 1 + number of negatives scored strictly higher.

    Raises:
        DataError: If a negative is in the user's history.
    """
    negatives = np.asarray(negatives, dtype=np.int64)
    overlap = np.intersect1d(negatives, split.history(user))
    if overlap.size:
        raise DataError(f"negatives of user {user} overlap the user's history: {overlap.tolist()}")
    if user_embeddings is None:
        user_embeddings = mean_embeddings(params, split, "user")
    if item_embeddings is None:
        item_embeddings = mean_embeddings(params, split, "item")

    candidates = np.concatenate([[test_item], negatives])
    x_u = np.repeat(user_embeddings[user][None, :], candidates.size, axis=0)
    scores = predict(params, x_u, item_embeddings[candidates])
    return RankResult(user=int(user), rank=rank_from_scores(scores[0], scores[1:]))


def _as_rank_array(ranks: Ranks) -> np.ndarray:
    values = np.asarray([r.rank if isinstance(r, RankResult) else r for r in ranks], dtype=np.int64)
    if values.size == 0:
        raise ValueError("cannot aggregate an empty rank list")
    return values


def hr_at_k(ranks: Ranks, k: int) -> float:
    """Share of users whose held-out item ranks within the top k."""
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    return float(np.mean(_as_rank_array(ranks) <= k))


def ndcg_at_k(ranks: Ranks, k: int) -> float:
    """Mean of 1 / log2(rank + 1) over users with rank <= k (zero otherwise)."""
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    values = _as_rank_array(ranks)
    gains = np.where(values <= k, 1.0 / np.log2(values + 1.0), 0.0)
    return float(np.mean(gains))


def metrics_from_ranks(ranks: Ranks, ks: Iterable[int] = DEFAULT_KS) -> Metrics:
    ks = sorted(set(ks))
    return Metrics(
        hr={k: hr_at_k(ranks, k) for k in ks},
        ndcg={k: ndcg_at_k(ranks, k) for k in ks},
        num_users=len(ranks),
    )


def _rank_chunk(params: ModelParams, users: np.ndarray, targets: np.ndarray, negatives: np.ndarray,
                user_embeddings: np.ndarray, item_embeddings: np.ndarray) -> List[RankResult]:
    candidates = np.column_stack([targets, negatives])
    x_u = np.repeat(user_embeddings[users], candidates.shape[1], axis=0)
    scores = predict(params, x_u, item_embeddings[candidates.ravel()]).reshape(candidates.shape)
    ranks = 1 + np.sum(scores[:, 1:] > scores[:, :1], axis=1)
    return [RankResult(user=int(u), rank=int(r)) for u, r in zip(users, ranks)]


def rank_users(params: ModelParams, split: Split, target: str = "test", user_vectors=None, item_vectors=None,
               max_workers: int = 2) -> List[RankResult]:
    """
    Rank the held-out item of every evaluated user, in `split.eval_users` order.

    Users are scored in chunks on a thread pool against one parameter snapshot.
    `user_vectors`/`item_vectors` replace the train vectors (used for noise).
    """
    if target not in ("test", "validation"):
        raise ValueError(f"target must be 'test' or 'validation', got {target!r}")
    if split.eval_users.size == 0:
        raise DataError("split has no evaluated users")
    targets = split.test_items if target == "test" else split.validation_items
    user_embeddings = mean_embeddings(params, split, "user", vectors=user_vectors)
    item_embeddings = mean_embeddings(params, split, "item", vectors=item_vectors)

    jobs = [
        partial(_rank_chunk, params, split.eval_users[s:s + USERS_PER_CHUNK], targets[s:s + USERS_PER_CHUNK],
                split.negatives[s:s + USERS_PER_CHUNK], user_embeddings, item_embeddings)
        for s in range(0, split.eval_users.size, USERS_PER_CHUNK)
    ]
    results = []
    for chunk in prefetch(jobs, max_workers=max_workers):
        results.extend(chunk)
    return results


def evaluate(params: ModelParams, split: Split, ks: Iterable[int] = DEFAULT_KS, target: str = "test",
             user_vectors=None, item_vectors=None, max_workers: int = 2) -> Metrics:
    """
    Leave-one-out HR@k and NDCG@k with posterior-mean embeddings.

    Args:
        params (ModelParams): Parameter snapshot.
        split (Split): Evaluated users, held-out items and negatives.
        ks (Iterable[int]): Cutoffs.
        target (str): "test" or "validation".
        user_vectors, item_vectors (optional): Replacement interaction vectors.
        max_workers (int): Threads scoring user chunks; 0 scores in the caller.

    Returns:
        Metrics: Deterministic for a fixed snapshot and split.
    """
    ranks = rank_users(params, split, target, user_vectors, item_vectors, max_workers)
    metrics = metrics_from_ranks(ranks, ks)
    logger.debug(f"[Evaluation] {target}: {metrics.as_table()}")
    return metrics
