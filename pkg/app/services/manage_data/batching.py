import numpy as np

from app.models.batch import InteractionBatch
from app.services.manage_data.interactions import Split
from app.services.manage_data.sampling import interaction_rows
from app.utils.exceptions import DataError


def assemble_batch(split: Split, users: np.ndarray, items: np.ndarray, labels: np.ndarray) -> InteractionBatch:
    """
    Densify one mini-batch.

    Args:
        split (Split): Provides the train interaction vectors.
        users, items (np.ndarray): Ids of each triple.
        labels (np.ndarray): 1.0 for observed pairs, 0.0 for sampled negatives.

    Returns:
        InteractionBatch: Distinct users/items with their vectors and per-triple row indices.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.float64)
    if users.size == 0 or not users.size == items.size == labels.size:
        raise DataError(f"batch needs matching non-empty users/items/labels, got {users.size}/{items.size}/{labels.size}")

    user_ids, user_index = np.unique(users, return_inverse=True)
    item_ids, item_index = np.unique(items, return_inverse=True)
    return InteractionBatch(
        user_ids=user_ids,
        item_ids=item_ids,
        user_vectors=interaction_rows(split, "user", user_ids),
        item_vectors=interaction_rows(split, "item", item_ids),
        user_index=user_index.ravel(),
        item_index=item_index.ravel(),
        labels=labels,
    )
