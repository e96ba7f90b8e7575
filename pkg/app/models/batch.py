from dataclasses import dataclass

import numpy as np


def selection_matrix(index: np.ndarray, width: int) -> np.ndarray:
    """One-hot rows: `selection_matrix(index, n) @ table` gathers `table[index]` as a matmul."""
    select = np.zeros((index.size, width))
    select[np.arange(index.size), index] = 1.0
    return select


@dataclass(frozen=True, eq=False)
class InteractionBatch:
    """
    One mini-batch of (user, item, label) triples with densified inputs.

    Each distinct user and item appears once in `user_ids`/`item_ids` with its
    train interaction vector; `user_index[b]` and `item_index[b]` point triple
    b at those rows.
    """

    user_ids: np.ndarray
    item_ids: np.ndarray
    user_vectors: np.ndarray
    item_vectors: np.ndarray
    user_index: np.ndarray
    item_index: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return int(self.labels.size)

    @property
    def user_select(self) -> np.ndarray:
        return selection_matrix(self.user_index, self.user_ids.size)

    @property
    def item_select(self) -> np.ndarray:
        return selection_matrix(self.item_index, self.item_ids.size)

    def vectors(self, side: str) -> np.ndarray:
        return self.user_vectors if side == "user" else self.item_vectors
